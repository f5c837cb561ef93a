#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ooolab/blas.hpp"
#include "ooolab/errors.hpp"
#include "ooolab/special.hpp"
#include "ooolab/tensor.hpp"

namespace ooolab {

using NodeId = int;

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Reverse-mode tape over dense f64 tensors. Ops execute eagerly; each records
// a closure that scatters the output gradient back to its inputs. Node order
// is creation order, so the tape is topological by construction and one
// backward sweep visits nodes exactly once, in a fixed order — gradients are
// bit-reproducible for identical tapes.
class Tape {
 public:
  NodeId input(Tensor t) {
    bool rg = t.requires_grad;
    return emplace(std::move(t), rg, nullptr, "input");
  }

  NodeId constant(Tensor t) {
    t.requires_grad = false;
    return emplace(std::move(t), false, nullptr, "constant");
  }

  const Tensor& val(NodeId id) const { return nodes_.at(id).value; }
  std::size_t size() const { return nodes_.size(); }

  NodeId add(NodeId a, NodeId b) {
    check_same_shape(a, b, "add");
    Tensor out = nodes_[a].value;
    const auto& bv = nodes_[b].value.values;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += bv[i];
    return emplace(std::move(out), needs(a) || needs(b),
                   [a, b](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     t.accumulate(a, g.data(), g.size());
                     t.accumulate(b, g.data(), g.size());
                   },
                   "add");
  }

  NodeId sub(NodeId a, NodeId b) {
    check_same_shape(a, b, "sub");
    Tensor out = nodes_[a].value;
    const auto& bv = nodes_[b].value.values;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= bv[i];
    return emplace(std::move(out), needs(a) || needs(b),
                   [a, b](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     t.accumulate(a, g.data(), g.size());
                     if (t.needs(b)) {
                       auto& gb = t.grad_buf(b).values;
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                     }
                   },
                   "sub");
  }

  NodeId mul(NodeId a, NodeId b) {
    check_same_shape(a, b, "mul");
    Tensor out = nodes_[a].value;
    const auto& bv = nodes_[b].value.values;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= bv[i];
    return emplace(std::move(out), needs(a) || needs(b),
                   [a, b](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     const auto& av = t.nodes_[a].value.values;
                     const auto& bv2 = t.nodes_[b].value.values;
                     if (t.needs(a)) {
                       auto& ga = t.grad_buf(a).values;
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
                     }
                     if (t.needs(b)) {
                       auto& gb = t.grad_buf(b).values;
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                     }
                   },
                   "mul");
  }

  NodeId scale(NodeId a, double c) {
    Tensor out = nodes_[a].value;
    for (double& v : out.values) v *= c;
    return emplace(std::move(out), needs(a),
                   [a, c](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     auto& ga = t.grad_buf(a).values;
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
                   },
                   "scale");
  }

  NodeId add_scalar(NodeId a, double c) {
    Tensor out = nodes_[a].value;
    for (double& v : out.values) v += c;
    return emplace(std::move(out), needs(a),
                   [a](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     t.accumulate(a, g.data(), g.size());
                   },
                   "add_scalar");
  }

  // [m,n] + [n], broadcast over rows.
  NodeId add_rowvec(NodeId a, NodeId b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    if (bv.numel() != av.cols())
      throw contract_violation("add_rowvec: vector length " + bv.shape_str() +
                               " vs columns of " + av.shape_str());
    Tensor out = av;
    std::size_t m = av.rows(), n = av.cols();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) out.values[r * n + c] += bv.values[c];
    return emplace(std::move(out), needs(a) || needs(b),
                   [a, b, m, n](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     t.accumulate(a, g.data(), g.size());
                     if (t.needs(b)) {
                       auto& gb = t.grad_buf(b).values;
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
                     }
                   },
                   "add_rowvec");
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    if (av.shape.size() != 2 || bv.shape.size() != 2 || av.cols() != bv.rows())
      throw contract_violation("matmul: incompatible shapes " + av.shape_str() +
                               " x " + bv.shape_str());
    std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor out = Tensor::zeros({m, n});
    dgemm(false, false, (int)m, (int)n, (int)k, 1.0, av.values.data(), (int)k,
          bv.values.data(), (int)n, 0.0, out.values.data(), (int)n);
    return emplace(std::move(out), needs(a) || needs(b),
                   [a, b, m, k, n](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     if (t.needs(a)) {  // dA += G B^T
                       auto& ga = t.grad_buf(a).values;
                       dgemm(false, true, (int)m, (int)k, (int)n, 1.0, g.data(),
                             (int)n, t.nodes_[b].value.values.data(), (int)n, 1.0,
                             ga.data(), (int)k);
                     }
                     if (t.needs(b)) {  // dB += A^T G
                       auto& gb = t.grad_buf(b).values;
                       dgemm(true, false, (int)k, (int)n, (int)m, 1.0,
                             t.nodes_[a].value.values.data(), (int)k, g.data(),
                             (int)n, 1.0, gb.data(), (int)n);
                     }
                   },
                   "matmul");
  }

  NodeId relu(NodeId a) {
    Tensor out = nodes_[a].value;
    for (double& v : out.values) v = v > 0.0 ? v : 0.0;
    return emplace(std::move(out), needs(a),
                   [a](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     const auto& x = t.nodes_[a].value.values;
                     auto& ga = t.grad_buf(a).values;
                     for (std::size_t i = 0; i < g.size(); ++i)
                       if (x[i] > 0.0) ga[i] += g[i];
                   },
                   "relu");
  }

  NodeId exp(NodeId a) {
    Tensor out = nodes_[a].value;
    for (double& v : out.values) v = std::exp(v);
    return emplace(std::move(out), needs(a),
                   [a](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     const auto& y = t.nodes_[o].value.values;
                     auto& ga = t.grad_buf(a).values;
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                   },
                   "exp");
  }

  NodeId log(NodeId a) {
    Tensor out = nodes_[a].value;
    for (double& v : out.values) v = std::log(v);
    return emplace(std::move(out), needs(a),
                   [a](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     const auto& x = t.nodes_[a].value.values;
                     auto& ga = t.grad_buf(a).values;
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
                   },
                   "log");
  }

  NodeId sum(NodeId a) {
    double s = 0.0;
    for (double v : nodes_[a].value.values) s += v;
    return emplace(Tensor::scalar(s), needs(a),
                   [a](Tape& t, NodeId o) {
                     double g = t.nodes_[o].grad.values[0];
                     auto& ga = t.grad_buf(a).values;
                     for (double& v : ga) v += g;
                   },
                   "sum");
  }

  NodeId mean(NodeId a) { return scale(sum(a), 1.0 / (double)nodes_[a].value.numel()); }

  NodeId reshape(NodeId a, std::vector<std::size_t> shape) {
    if (Tensor::numel_of(shape) != nodes_[a].value.numel())
      throw contract_violation("reshape: element count mismatch");
    Tensor out(std::move(shape), nodes_[a].value.values);
    return emplace(std::move(out), needs(a),
                   [a](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     t.accumulate(a, g.data(), g.size());
                   },
                   "reshape");
  }

  NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
    const Tensor& av = nodes_[a].value;
    std::size_t m = av.rows(), n = av.cols();
    if (c0 >= c1 || c1 > n) throw contract_violation("slice_cols: bad range");
    std::size_t w = c1 - c0;
    Tensor out = Tensor::zeros({m, w});
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c)
        out.values[r * w + c] = av.values[r * n + c0 + c];
    return emplace(std::move(out), needs(a),
                   [a, c0, w, m, n](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     auto& ga = t.grad_buf(a).values;
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t c = 0; c < w; ++c)
                         ga[r * n + c0 + c] += g[r * w + c];
                   },
                   "slice_cols");
  }

  NodeId concat_cols(NodeId a, NodeId b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    if (av.rows() != bv.rows())
      throw contract_violation("concat_cols: row mismatch");
    std::size_t m = av.rows(), na = av.cols(), nb = bv.cols(), n = na + nb;
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < na; ++c) out.values[r * n + c] = av.values[r * na + c];
      for (std::size_t c = 0; c < nb; ++c)
        out.values[r * n + na + c] = bv.values[r * nb + c];
    }
    return emplace(std::move(out), needs(a) || needs(b),
                   [a, b, m, na, nb, n](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     if (t.needs(a)) {
                       auto& ga = t.grad_buf(a).values;
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t c = 0; c < na; ++c)
                           ga[r * na + c] += g[r * n + c];
                     }
                     if (t.needs(b)) {
                       auto& gb = t.grad_buf(b).values;
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t c = 0; c < nb; ++c)
                           gb[r * nb + c] += g[r * n + na + c];
                     }
                   },
                   "concat_cols");
  }

  NodeId gather_rows(NodeId a, std::vector<std::size_t> idx) {
    const Tensor& av = nodes_[a].value;
    std::size_t n = av.cols();
    for (std::size_t i : idx)
      if (i >= av.rows()) throw contract_violation("gather_rows: index out of range");
    Tensor out = Tensor::zeros({idx.size(), n});
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy_n(&av.values[idx[r] * n], n, &out.values[r * n]);
    return emplace(std::move(out), needs(a),
                   [a, idx = std::move(idx), n](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     auto& ga = t.grad_buf(a).values;
                     for (std::size_t r = 0; r < idx.size(); ++r)
                       for (std::size_t c = 0; c < n; ++c)
                         ga[idx[r] * n + c] += g[r * n + c];
                   },
                   "gather_rows");
  }

  // Sum rows of a into n_seg buckets given per-row segment ids.
  NodeId segment_sum(NodeId a, std::vector<std::size_t> seg, std::size_t n_seg) {
    const Tensor& av = nodes_[a].value;
    if (seg.size() != av.rows())
      throw contract_violation("segment_sum: segment list size mismatch");
    std::size_t n = av.cols();
    for (std::size_t s : seg)
      if (s >= n_seg) throw contract_violation("segment_sum: segment id out of range");
    Tensor out = Tensor::zeros({n_seg, n});
    for (std::size_t r = 0; r < seg.size(); ++r)
      for (std::size_t c = 0; c < n; ++c)
        out.values[seg[r] * n + c] += av.values[r * n + c];
    return emplace(std::move(out), needs(a),
                   [a, seg = std::move(seg), n](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     auto& ga = t.grad_buf(a).values;
                     for (std::size_t r = 0; r < seg.size(); ++r)
                       for (std::size_t c = 0; c < n; ++c)
                         ga[r * n + c] += g[seg[r] * n + c];
                   },
                   "segment_sum");
  }

  // Row-wise squared Euclidean distance: [m,n],[m,n] -> [m,1].
  NodeId sq_dist_rows(NodeId a, NodeId b) {
    check_same_shape(a, b, "sq_dist_rows");
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    std::size_t m = av.rows(), n = av.cols();
    Tensor out = Tensor::zeros({m, 1});
    for (std::size_t r = 0; r < m; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        double d = av.values[r * n + c] - bv.values[r * n + c];
        s += d * d;
      }
      out.values[r] = s;
    }
    return emplace(std::move(out), needs(a) || needs(b),
                   [a, b, m, n](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     const auto& av2 = t.nodes_[a].value.values;
                     const auto& bv2 = t.nodes_[b].value.values;
                     for (std::size_t r = 0; r < m; ++r) {
                       double gr = g[r];
                       for (std::size_t c = 0; c < n; ++c) {
                         double d = 2.0 * (av2[r * n + c] - bv2[r * n + c]) * gr;
                         if (t.needs(a)) t.grad_buf(a).values[r * n + c] += d;
                         if (t.needs(b)) t.grad_buf(b).values[r * n + c] -= d;
                       }
                     }
                   },
                   "sq_dist_rows");
  }

  // Elementwise log Phi.
  NodeId log_ndtr(NodeId a) {
    Tensor out = nodes_[a].value;
    for (double& v : out.values) v = log_std_normal_cdf(v);
    return emplace(std::move(out), needs(a),
                   [a](Tape& t, NodeId o) {
                     const auto& g = t.nodes_[o].grad.values;
                     const auto& x = t.nodes_[a].value.values;
                     auto& ga = t.grad_buf(a).values;
                     for (std::size_t i = 0; i < g.size(); ++i)
                       ga[i] += g[i] * log_std_normal_cdf_grad(x[i]);
                   },
                   "log_ndtr");
  }

  // Summed Bernoulli NLL of targets under logits:
  // sum softplus(l) - t*l, stable for large |l|.
  NodeId bernoulli_logit_nll(NodeId logits, const Tensor& targets) {
    const Tensor& lv = nodes_[logits].value;
    if (!lv.same_shape(targets))
      throw contract_violation("bernoulli_logit_nll: target shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < lv.values.size(); ++i) {
      double l = lv.values[i];
      s += (l > 0.0 ? l : 0.0) - targets.values[i] * l +
           std::log1p(std::exp(-std::fabs(l)));
    }
    return emplace(Tensor::scalar(s), needs(logits),
                   [logits, tv = targets.values](Tape& t, NodeId o) {
                     double g = t.nodes_[o].grad.values[0];
                     const auto& l = t.nodes_[logits].value.values;
                     auto& gl = t.grad_buf(logits).values;
                     for (std::size_t i = 0; i < l.size(); ++i)
                       gl[i] += g * (sigmoid(l[i]) - tv[i]);
                   },
                   "bernoulli_logit_nll");
  }

  // Summed KL(N(mu, e^lv) || N(0,1)) = sum 0.5 (mu^2 + e^lv - 1 - lv).
  NodeId gaussian_kl(NodeId mu, NodeId logvar) {
    check_same_shape(mu, logvar, "gaussian_kl");
    const auto& m = nodes_[mu].value.values;
    const auto& lv = nodes_[logvar].value.values;
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i)
      s += 0.5 * (m[i] * m[i] + std::exp(lv[i]) - 1.0 - lv[i]);
    return emplace(Tensor::scalar(s), needs(mu) || needs(logvar),
                   [mu, logvar](Tape& t, NodeId o) {
                     double g = t.nodes_[o].grad.values[0];
                     const auto& m2 = t.nodes_[mu].value.values;
                     const auto& lv2 = t.nodes_[logvar].value.values;
                     if (t.needs(mu)) {
                       auto& gm = t.grad_buf(mu).values;
                       for (std::size_t i = 0; i < m2.size(); ++i) gm[i] += g * m2[i];
                     }
                     if (t.needs(logvar)) {
                       auto& gl = t.grad_buf(logvar).values;
                       for (std::size_t i = 0; i < lv2.size(); ++i)
                         gl[i] += g * 0.5 * (std::exp(lv2[i]) - 1.0);
                     }
                   },
                   "gaussian_kl");
  }

  // Summed softmax cross-entropy against integer labels.
  NodeId softmax_xent(NodeId logits, const std::vector<int>& labels) {
    const Tensor& lv = nodes_[logits].value;
    std::size_t m = lv.rows(), c = lv.cols();
    if (labels.size() != m)
      throw contract_violation("softmax_xent: label count mismatch");
    for (int l : labels)
      if (l < 0 || (std::size_t)l >= c)
        throw contract_violation("softmax_xent: label out of range");
    double s = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      const double* row = &lv.values[r * c];
      double mx = row[0];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
      s += mx + std::log(z) - row[labels[r]];
    }
    return emplace(Tensor::scalar(s), needs(logits),
                   [logits, labels, m, c](Tape& t, NodeId o) {
                     double g = t.nodes_[o].grad.values[0];
                     const auto& l = t.nodes_[logits].value.values;
                     auto& gl = t.grad_buf(logits).values;
                     for (std::size_t r = 0; r < m; ++r) {
                       const double* row = &l[r * c];
                       double mx = row[0];
                       for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                       double z = 0.0;
                       for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
                       for (std::size_t j = 0; j < c; ++j) {
                         double p = std::exp(row[j] - mx) / z;
                         gl[r * c + j] +=
                             g * (p - ((std::size_t)labels[r] == j ? 1.0 : 0.0));
                       }
                     }
                   },
                   "softmax_xent");
  }

  NodeId l1_norm(NodeId a) {
    double s = 0.0;
    for (double v : nodes_[a].value.values) s += std::fabs(v);
    return emplace(Tensor::scalar(s), needs(a),
                   [a](Tape& t, NodeId o) {
                     double g = t.nodes_[o].grad.values[0];
                     const auto& x = t.nodes_[a].value.values;
                     auto& ga = t.grad_buf(a).values;
                     for (std::size_t i = 0; i < x.size(); ++i)
                       ga[i] += g * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
                   },
                   "l1_norm");
  }

  // Minibatch total-correlation estimate (batch-mixture normalization):
  //   TC = mean_i [ (lse_j A_ij - log B) - sum_d (lse_j L_ijd - log B) ]
  // with L_ijd = log N(z_id; mu_jd, sigma_jd) and A_ij = sum_d L_ijd.
  // The batch itself is the mixture; with this normalization a batch of
  // identical isotropic standard-normal posteriors scores exactly zero.
  NodeId tc_mws(NodeId mu, NodeId logvar, NodeId z) {
    check_same_shape(mu, logvar, "tc_mws");
    check_same_shape(mu, z, "tc_mws");
    const Tensor& mv = nodes_[mu].value;
    std::size_t B = mv.rows(), L = mv.cols();
    if (B < 2) throw contract_violation("tc_mws: batch of 1");
    const auto& mus = mv.values;
    const auto& lvs = nodes_[logvar].value.values;
    const auto& zs = nodes_[z].value.values;
    constexpr double log_2pi = 1.8378770664093454836;
    // Pairwise per-dim log densities.
    std::vector<double> ld(B * B * L);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < B; ++j)
        for (std::size_t d = 0; d < L; ++d) {
          double diff = zs[i * L + d] - mus[j * L + d];
          double lv = lvs[j * L + d];
          ld[(i * B + j) * L + d] =
              -0.5 * (lv + log_2pi + diff * diff * std::exp(-lv));
        }
    auto lse = [](const double* v, std::size_t n, std::size_t stride) {
      double mx = v[0];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, v[k * stride]);
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += std::exp(v[k * stride] - mx);
      return mx + std::log(s);
    };
    double log_b = std::log((double)B);
    std::vector<double> joint(B * B);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < B; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < L; ++d) s += ld[(i * B + j) * L + d];
        joint[i * B + j] = s;
      }
    double tc = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      double term = lse(&joint[i * B], B, 1) - log_b;
      for (std::size_t d = 0; d < L; ++d)
        term -= lse(&ld[i * B * L + d], B, L) - log_b;
      tc += term;
    }
    tc /= (double)B;
    return emplace(
        Tensor::scalar(tc), needs(mu) || needs(logvar) || needs(z),
        [mu, logvar, z, ld = std::move(ld), joint = std::move(joint), B,
         L](Tape& t, NodeId o) {
          double g = t.nodes_[o].grad.values[0] / (double)B;
          const auto& mus2 = t.nodes_[mu].value.values;
          const auto& lvs2 = t.nodes_[logvar].value.values;
          const auto& zs2 = t.nodes_[z].value.values;
          // Softmax weights over j for the joint and per-dim terms.
          std::vector<double> w(B);
          for (std::size_t i = 0; i < B; ++i) {
            double mx = joint[i * B];
            for (std::size_t j = 1; j < B; ++j) mx = std::max(mx, joint[i * B + j]);
            double zsum = 0.0;
            for (std::size_t j = 0; j < B; ++j) {
              w[j] = std::exp(joint[i * B + j] - mx);
              zsum += w[j];
            }
            for (std::size_t j = 0; j < B; ++j) w[j] /= zsum;
            for (std::size_t d = 0; d < L; ++d) {
              double mxd = ld[(i * B) * L + d];
              for (std::size_t j = 1; j < B; ++j)
                mxd = std::max(mxd, ld[(i * B + j) * L + d]);
              double zd = 0.0;
              for (std::size_t j = 0; j < B; ++j)
                zd += std::exp(ld[(i * B + j) * L + d] - mxd);
              for (std::size_t j = 0; j < B; ++j) {
                double v = std::exp(ld[(i * B + j) * L + d] - mxd) / zd;
                double coeff = g * (w[j] - v);  // dTC/dL_ijd
                double diff = zs2[i * L + d] - mus2[j * L + d];
                double e = std::exp(-lvs2[j * L + d]);
                if (t.needs(z)) t.grad_buf(z).values[i * L + d] += coeff * (-diff * e);
                if (t.needs(mu))
                  t.grad_buf(mu).values[j * L + d] += coeff * (diff * e);
                if (t.needs(logvar))
                  t.grad_buf(logvar).values[j * L + d] +=
                      coeff * (-0.5) * (1.0 - diff * diff * e);
              }
            }
          }
        },
        "tc_mws");
  }

  // Runs one backward sweep from a scalar loss. Returns the gradient for
  // every requires_grad leaf (zeros when the loss does not depend on it).
  // The tape itself is unchanged and can be swept again.
  std::unordered_map<NodeId, Tensor> forward_backward(NodeId loss) {
    if (loss < 0 || (std::size_t)loss >= nodes_.size())
      throw contract_violation("forward_backward: bad loss node");
    if (nodes_[loss].value.numel() != 1)
      throw contract_violation("forward_backward: loss is not scalar, shape " +
                               nodes_[loss].value.shape_str());
    for (auto& n : nodes_) n.grad = Tensor();
    grad_buf(loss).values[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.values.empty()) continue;
      check_grads_finite(id);
      if (n.needs_grad && n.backward) n.backward(*this, id);
    }
    std::unordered_map<NodeId, Tensor> grads;
    for (NodeId id = 0; id < (NodeId)nodes_.size(); ++id) {
      Node& n = nodes_[id];
      if (n.backward == nullptr && n.value.requires_grad) {
        if (n.grad.values.empty()) n.grad = Tensor::zeros(n.value.shape);
        grads.emplace(id, n.grad);
      }
    }
    return grads;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&, NodeId)> backward;  // null for leaves
    const char* op = "";
  };

  std::vector<Node> nodes_;

  bool needs(NodeId id) const { return nodes_[id].needs_grad; }

  Tensor& grad_buf(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.values.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
  }

  void accumulate(NodeId id, const double* g, std::size_t n) {
    if (!needs(id)) return;
    auto& buf = grad_buf(id).values;
    for (std::size_t i = 0; i < n; ++i) buf[i] += g[i];
  }

  void check_same_shape(NodeId a, NodeId b, const char* op) const {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
      throw contract_violation(std::string(op) + ": shape mismatch " +
                               nodes_[a].value.shape_str() + " vs " +
                               nodes_[b].value.shape_str());
  }

  NodeId emplace(Tensor value, bool needs_grad, std::function<void(Tape&, NodeId)> bw,
                 const char* op) {
    NodeId id = (NodeId)nodes_.size();
    for (double v : value.values)
      if (!std::isfinite(v))
        throw numeric_failure(std::string("non-finite value in op '") + op +
                                  "' at node " + std::to_string(id),
                              id);
    nodes_.push_back(Node{std::move(value), Tensor(), needs_grad, std::move(bw), op});
    return id;
  }

  void check_grads_finite(NodeId id) {
    // Inputs of node `id` just received contributions; a cheap scan of this
    // node's own grad catches the usual 0*inf cases one step late at worst.
    for (double v : nodes_[id].grad.values)
      if (!std::isfinite(v))
        throw numeric_failure("non-finite gradient at node " + std::to_string(id) +
                                  " (op '" + nodes_[id].op + "')",
                              id);
  }
};

}  // namespace ooolab
