#pragma once

#include <dlfcn.h>

#include <cstdlib>
#include <stdexcept>

namespace ooolab {
namespace detail {

// OpenBLAS selects its kernels in a load-time constructor, and on this
// machine's unreported CPU model it falls back to a generic kernel at ~1/4
// speed. Loading the library lazily via dlopen lets us force the SKYLAKEX
// target (when AVX-512 is present) and a single BLAS thread before that
// constructor runs. Determinism of a run must not depend on a thread pool;
// parallelism lives at the sweep level.
struct BlasHandle {
  using dgemm_fn = void (*)(int order, int ta, int tb, int m, int n, int k,
                            double alpha, const double* a, int lda, const double* b,
                            int ldb, double beta, double* c, int ldc);
  dgemm_fn dgemm = nullptr;

  BlasHandle() {
    if (__builtin_cpu_supports("avx512f"))
      setenv("OPENBLAS_CORETYPE", "SKYLAKEX", /*overwrite=*/0);
    setenv("OPENBLAS_NUM_THREADS", "1", /*overwrite=*/1);
    void* h = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
    if (!h) h = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
    if (!h) throw std::runtime_error("failed to dlopen libopenblas");
    dgemm = reinterpret_cast<dgemm_fn>(dlsym(h, "cblas_dgemm"));
    if (!dgemm) throw std::runtime_error("cblas_dgemm not found in libopenblas");
    if (auto set_threads = reinterpret_cast<void (*)(int)>(
            dlsym(h, "openblas_set_num_threads")))
      set_threads(1);
  }
};

inline BlasHandle& blas() {
  static BlasHandle handle;
  return handle;
}

}  // namespace detail

// c = alpha * op(a) op(b) + beta * c, row-major.
inline void dgemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                  const double* a, int lda, const double* b, int ldb, double beta,
                  double* c, int ldc) {
  constexpr int kRowMajor = 101, kNoTrans = 111, kTrans = 112;
  detail::blas().dgemm(kRowMajor, trans_a ? kTrans : kNoTrans,
                       trans_b ? kTrans : kNoTrans, m, n, k, alpha, a, lda, b, ldb,
                       beta, c, ldc);
}

}  // namespace ooolab
