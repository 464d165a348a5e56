#pragma once

// Over-smoothing diagnostics and the path-decomposition oracles.
//
// A path through an L-layer skip-connected stack is a bitmask over layers
// 1..L: bit j set means layer j takes the convolution branch, clear means it
// takes the shortcut. In linear mode the stack output is exactly
//   H^L = sum over admissible paths of  P_path H^0 W_path
// with P_path = P^{popcount} and W_path the ordered product of the selected
// W^j (times alpha_j for DRIVE gates). Residual and DRIVE admit all 2^L
// masks, the initial connection admits only suffix masks {L-l+1..L}, and a
// plain stack admits only the full mask. The functions below evaluate these
// sums by brute-force enumeration so they can be checked against the model's
// own forward and backward passes.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "udgnn/format.hpp"
#include "udgnn/graph.hpp"
#include "udgnn/model.hpp"
#include "udgnn/tensor.hpp"
#include "udgnn/trainer.hpp"

namespace udgnn {

// ---------------------------------------------------------------------------
// Path-length distributions

struct PathWeights {
  std::vector<double> weights;     // index = path length 0..L
  std::vector<double> normalized;  // weights / sum (all zero when the sum is 0)
};

namespace detail {
inline PathWeights finish(std::vector<double> w) {
  PathWeights out;
  double total = 0.0;
  for (double x : w) total += x;
  out.normalized.resize(w.size(), 0.0);
  if (total != 0.0)
    for (std::size_t i = 0; i < w.size(); ++i) out.normalized[i] = w[i] / total;
  out.weights = std::move(w);
  return out;
}

// Elementary symmetric polynomials e_0..e_L of the gates, by the product
// recurrence prod_i (1 + alpha_i x).
inline std::vector<double> elementary_symmetric(const std::vector<double>& a) {
  std::vector<double> e(a.size() + 1, 0.0);
  e[0] = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = i + 1; k >= 1; --k) e[k] += a[i] * e[k - 1];
  return e;
}
}  // namespace detail

inline constexpr std::size_t kExhaustiveMaskLimit = 20;

/// Total path weight per length. Residual: C(L,l). Initial: 1 each. NoSkip:
/// all weight on length L. JK: 1 for each length 1..L (one readout slot per
/// layer). Drive: sum over masks of popcount l of the product of their gates,
/// enumerated exactly for L <= 20 and via the elementary-symmetric recurrence
/// above that.
inline PathWeights path_weight_distribution(SkipKind skip, std::size_t depth,
                                            const std::optional<std::vector<double>>& alphas = std::nullopt) {
  std::vector<double> w(depth + 1, 0.0);
  switch (skip) {
    case SkipKind::Residual: {
      w[0] = 1.0;
      for (std::size_t i = 1; i <= depth; ++i)
        for (std::size_t k = i; k >= 1; --k) w[k] += w[k - 1];
      break;
    }
    case SkipKind::Initial:
      std::fill(w.begin(), w.end(), 1.0);
      break;
    case SkipKind::NoSkip:
      w[depth] = 1.0;
      break;
    case SkipKind::JK:
      for (std::size_t l = 1; l <= depth; ++l) w[l] = 1.0;
      if (depth == 0) w[0] = 1.0;
      break;
    case SkipKind::Drive: {
      if (!alphas) throw std::invalid_argument("path_weight_distribution: drive needs per-layer gates");
      if (alphas->size() != depth)
        throw std::invalid_argument("path_weight_distribution: expected " + std::to_string(depth) + " gates");
      if (depth <= kExhaustiveMaskLimit) {
        for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << depth); ++mask) {
          double prod = 1.0;
          for (std::size_t j = 0; j < depth; ++j)
            if (mask >> j & 1U) prod *= (*alphas)[j];
          w[static_cast<std::size_t>(std::popcount(mask))] += prod;
        }
      } else {
        w = detail::elementary_symmetric(*alphas);
      }
      break;
    }
  }
  return detail::finish(std::move(w));
}

inline PathWeights path_weight_distribution(SkipKind skip, std::size_t depth, double uniform_alpha) {
  return path_weight_distribution(skip, depth, std::vector<double>(depth, uniform_alpha));
}

// ---------------------------------------------------------------------------
// Theorem oracles

/// The linear stack between H^0 and H^L, pulled out of a model.
struct LinearStack {
  ConvKind conv = ConvKind::GCN;
  SkipKind skip = SkipKind::Residual;
  std::vector<Tensor> weights;  // W^1..W^L, empty for SGC
  std::vector<double> gates;    // alpha_1..alpha_L for Drive, else 1
  std::size_t depth() const { return gates.size(); }
};

inline constexpr std::size_t kMaxEnumerationDepth = 12;

inline LinearStack linear_stack(const UdgnnModel& m) {
  const ModelSpec& s = m.spec();
  if (!s.linear_mode) throw std::invalid_argument("path decomposition requires a linear_mode model");
  if (s.conv_kind != ConvKind::GCN && s.conv_kind != ConvKind::SGC)
    throw std::invalid_argument("path decomposition covers gcn and sgc convolutions only");
  if (s.skip_kind == SkipKind::JK || s.with_ffn)
    throw std::invalid_argument("path decomposition covers none/residual/initial/drive stacks without FFN");
  if (s.depth > kMaxEnumerationDepth)
    throw std::invalid_argument("path enumeration is limited to depth " + std::to_string(kMaxEnumerationDepth));
  LinearStack st;
  st.conv = s.conv_kind;
  st.skip = s.skip_kind;
  for (std::size_t l = 0; l < s.depth; ++l) {
    if (s.conv_kind == ConvKind::GCN) st.weights.push_back(m.conv_weight(l)->value);
    st.gates.push_back(s.skip_kind == SkipKind::Drive ? m.alpha(l)->value[0] : 1.0);
  }
  return st;
}

namespace detail {
// Admissible masks over `len` consecutive layers (bit 0 = first layer).
inline std::vector<std::uint64_t> admissible_masks(SkipKind skip, std::size_t len) {
  std::vector<std::uint64_t> out;
  const std::uint64_t full = len ? (~std::uint64_t{0} >> (64 - len)) : 0;
  switch (skip) {
    case SkipKind::NoSkip:
      out.push_back(full);
      break;
    case SkipKind::Initial:
      // conv branch on a suffix {len-l+1..len}, l = 0..len
      for (std::size_t l = 0; l <= len; ++l) out.push_back(l ? (full >> (len - l)) << (len - l) : 0);
      break;
    default:
      for (std::uint64_t m = 0; m <= full; ++m) out.push_back(m);
      break;
  }
  return out;
}
}  // namespace detail

/// Explicit sum over paths of P_path H^0 W_path (gates folded in).
inline Tensor enumerate_paths_forward(const PropagationMatrix& p, const Tensor& h0, const LinearStack& st) {
  const std::size_t depth = st.depth();
  if (depth > kMaxEnumerationDepth) throw std::invalid_argument("enumerate_paths_forward: depth too large");
  Tensor total(h0.rows(), h0.cols());
  for (std::uint64_t mask : detail::admissible_masks(st.skip, depth)) {
    Tensor x = h0;
    for (std::size_t j = 0; j < depth; ++j) {
      if (!(mask >> j & 1U)) continue;
      x = spmm(p, x);
      if (st.conv == ConvKind::GCN) x = matmul(x, st.weights[j]);
      if (st.gates[j] != 1.0) x *= st.gates[j];
    }
    total += x;
  }
  return total;
}

/// dL/dW^l (l is 1-based) from the backward path sum
///   gate_l (P H^{l-1})^T  sum_{paths l+1..L} P_path^T G W_path^T,
/// with G = dL/dH^L. Along NoSkip and Initial stacks only the all-conv
/// downstream path carries gradient. For SGC the result is the gradient with
/// respect to an identity weight inserted at layer l.
inline Tensor analytic_grad(const PropagationMatrix& p, const Tensor& h_prev, const Tensor& upstream,
                            const LinearStack& st, std::size_t layer) {
  const std::size_t depth = st.depth();
  if (layer < 1 || layer > depth) throw std::invalid_argument("analytic_grad: layer out of range");
  const PropagationMatrix pt = p.symmetric() ? p : p.transposed();
  const std::size_t len = depth - layer;
  const SkipKind downstream = st.skip == SkipKind::Initial ? SkipKind::NoSkip : st.skip;
  Tensor acc(upstream.rows(), upstream.cols());
  for (std::uint64_t mask : detail::admissible_masks(downstream, len)) {
    Tensor x = upstream;
    for (std::size_t k = len; k-- > 0;) {
      if (!(mask >> k & 1U)) continue;
      const std::size_t j = layer + k;  // zero-based index of layer (layer + k + 1)
      x = spmm(pt, x);
      if (st.conv == ConvKind::GCN) x = matmul_nt(x, st.weights[j]);
      if (st.gates[j] != 1.0) x *= st.gates[j];
    }
    acc += x;
  }
  Tensor g = matmul_tn(spmm(p, h_prev), acc);
  if (st.gates[layer - 1] != 1.0) g *= st.gates[layer - 1];
  return g;
}

// ---------------------------------------------------------------------------
// Metrics

inline constexpr double kConvRatioCap = 1e6;
inline constexpr double kConvRatioTiny = 1e-12;

struct ConvRatio {
  double value = 0.0;
  std::size_t capped_rows = 0;
};

/// Mean over nodes of ||h_next_i - h_prev_i|| / ||h_next_i||. A row with
/// ||h_next_i|| < 1e-12 counts 0 when its change is also < 1e-12, else the
/// cap 1e6 (and is counted in capped_rows).
inline ConvRatio conv_ratio(const Tensor& h_prev, const Tensor& h_next) {
  Tensor::require_same_shape(h_prev, h_next, "conv_ratio");
  if (h_prev.rows() == 0) throw std::invalid_argument("conv_ratio: needs at least one node");
  ConvRatio r;
  double sum = 0.0;
  for (std::size_t i = 0; i < h_prev.rows(); ++i) {
    double diff2 = 0.0, norm2 = 0.0;
    for (std::size_t j = 0; j < h_prev.cols(); ++j) {
      const double d = h_next(i, j) - h_prev(i, j);
      diff2 += d * d;
      norm2 += h_next(i, j) * h_next(i, j);
    }
    const double diff = std::sqrt(diff2), norm = std::sqrt(norm2);
    if (norm < kConvRatioTiny) {
      if (diff >= kConvRatioTiny) {
        sum += kConvRatioCap;
        ++r.capped_rows;
      }
    } else {
      sum += diff / norm;
    }
  }
  r.value = sum / static_cast<double>(h_prev.rows());
  return r;
}

/// Singular values by one-sided Jacobi (Hestenes), descending. Sweeps stop
/// when every column pair is orthogonal to `tol` relative, or after
/// `max_sweeps`.
inline std::vector<double> singular_values(const Tensor& m, double tol = 1e-10, int max_sweeps = 100) {
  Tensor a = m.rows() >= m.cols() ? m : transpose(m);
  const std::size_t rows = a.rows(), n = a.cols();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += a(i, p) * a(i, p);
          beta += a(i, q) * a(i, q);
          gamma += a(i, p) * a(i, q);
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
      }
    if (!rotated) break;
  }
  std::vector<double> sv(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += a(i, j) * a(i, j);
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

struct Entropy {
  double value = 0.0;
  bool zero_matrix = false;
};

/// -sum s_i ln s_i / ln d over the singular values normalized to sum 1,
/// d = min(rows, cols). 0 ln 0 := 0; the all-zero matrix maps to 0 (flagged).
inline Entropy von_neumann_entropy(const Tensor& m) {
  const std::size_t d = std::min(m.rows(), m.cols());
  if (d < 2) throw std::invalid_argument("von_neumann_entropy: needs a matrix with both dimensions >= 2");
  const auto sv = singular_values(m);
  double total = 0.0;
  for (double s : sv) total += s;
  if (total == 0.0) return {0.0, true};
  double h = 0.0;
  for (double s : sv) {
    const double q = s / total;
    if (q > 0.0) h -= q * std::log(q);
  }
  return {std::clamp(h / std::log(static_cast<double>(d)), 0.0, 1.0), false};
}

/// Mean Euclidean distance over all row pairs i < j.
inline double mean_pairwise_distance(const Tensor& h) {
  const std::size_t n = h.rows();
  if (n < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < h.cols(); ++k) {
        const double d = h(i, k) - h(j, k);
        d2 += d * d;
      }
      sum += std::sqrt(d2);
    }
  return sum / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

/// Dispersion of ((P + I)/2)^L H0 for each requested L (results follow the
/// order of `steps`).
inline std::vector<double> lazy_walk_convergence(const PropagationMatrix& p, const std::vector<std::size_t>& steps,
                                                 const Tensor& h0) {
  std::vector<std::size_t> order(steps.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return steps[a] < steps[b]; });
  std::vector<double> out(steps.size());
  Tensor x = h0;
  std::size_t done = 0;
  for (std::size_t idx : order) {
    for (; done < steps[idx]; ++done) {
      Tensor px = spmm(p, x);
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = 0.5 * (px[k] + x[k]);
    }
    out[idx] = mean_pairwise_distance(x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training diagnostics

struct DiagnosticsRecord {
  std::size_t epoch = 0;
  std::vector<double> conv_ratio;    // per layer
  std::vector<double> grad_entropy;  // per layer; NaN when the layer has no weight
  std::vector<double> abs_alpha;     // per layer; NaN when absent
  std::vector<double> abs_beta;
  double loss = 0.0;
  double val_acc = 0.0;
  std::size_t capped_rows = 0;
  std::size_t zero_gradient_layers = 0;
};

/// Gradient whose spectrum is tracked for layer l: the conv weight, or the
/// first FFN weight when the conv has none.
inline const Parameter* tracked_weight(const UdgnnModel& m, std::size_t l) {
  if (const Parameter* w = m.conv_weight(l)) return w;
  return m.ffn_w1(l);
}

/// Measures the model's current parameters: an eval-mode forward/backward of
/// the training loss provides the cached H^l for ConvRatio and the raw
/// dL/dW^l for the entropy.
inline DiagnosticsRecord measure(UdgnnModel& model, const GraphOperators& ops, const NodeDataset& ds,
                                 std::size_t epoch) {
  DiagnosticsRecord rec;
  rec.epoch = epoch;
  Tape t;
  ForwardResult fr;
  rec.loss = loss_and_gradients(model, ops, ds, &fr, &t);
  rec.val_acc = accuracy(t.value(fr.logits), ds.labels, ds.val_mask);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t l = 0; l < model.depth(); ++l) {
    const ConvRatio cr = conv_ratio(t.value(fr.hidden[l]), t.value(fr.hidden[l + 1]));
    rec.conv_ratio.push_back(cr.value);
    rec.capped_rows += cr.capped_rows;
    const Parameter* w = tracked_weight(model, l);
    if (w) {
      const Entropy e = von_neumann_entropy(w->grad);
      rec.grad_entropy.push_back(e.value);
      rec.zero_gradient_layers += e.zero_matrix ? 1 : 0;
    } else {
      rec.grad_entropy.push_back(nan);
    }
    rec.abs_alpha.push_back(model.alpha(l) ? std::abs(model.alpha(l)->value[0]) : nan);
    rec.abs_beta.push_back(model.beta(l) ? std::abs(model.beta(l)->value[0]) : nan);
  }
  model.zero_grad();
  return rec;
}

struct DiagnosticsRun {
  TrainReport report;
  std::vector<DiagnosticsRecord> records;
};

/// Trains like train() and measures every `log_every` epochs, epoch 0
/// (initialization) included.
inline DiagnosticsRun record_training_diagnostics(UdgnnModel& model, const GraphOperators& ops,
                                                  const NodeDataset& ds, const TrainConfig& cfg,
                                                  std::size_t log_every) {
  if (log_every == 0) throw std::invalid_argument("record_training_diagnostics: log_every must be positive");
  DiagnosticsRun run;
  run.report = train(model, ops, ds, cfg, [&](std::size_t epoch, UdgnnModel& m) {
    if (epoch % log_every == 0) run.records.push_back(measure(m, ops, ds, epoch));
  });
  return run;
}

inline constexpr const char* kDiagnosticsCsvHeader = "epoch,layer,conv_ratio,grad_entropy,abs_alpha,abs_beta,loss,val_acc";

inline std::string diagnostics_csv(const std::vector<DiagnosticsRecord>& recs) {
  std::string s = std::string(kDiagnosticsCsvHeader) + "\n";
  for (const auto& r : recs)
    for (std::size_t l = 0; l < r.conv_ratio.size(); ++l)
      s += csv_line({std::to_string(r.epoch), std::to_string(l + 1), fmt17(r.conv_ratio[l]), fmt17(r.grad_entropy[l]),
                     fmt17(r.abs_alpha[l]), fmt17(r.abs_beta[l]), fmt17(r.loss), fmt17(r.val_acc)});
  return s;
}

inline nlohmann::ordered_json to_json(const DiagnosticsRecord& r) {
  // JSON has no NaN; absent values become null.
  auto arr = [](const std::vector<double>& v) {
    auto a = nlohmann::ordered_json::array();
    for (double x : v) a.push_back(std::isfinite(x) ? nlohmann::ordered_json(x) : nlohmann::ordered_json());
    return a;
  };
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["conv_ratio"] = arr(r.conv_ratio);
  j["grad_entropy"] = arr(r.grad_entropy);
  j["abs_alpha"] = arr(r.abs_alpha);
  j["abs_beta"] = arr(r.abs_beta);
  j["loss"] = r.loss;
  j["val_acc"] = r.val_acc;
  j["capped_rows"] = r.capped_rows;
  j["zero_gradient_layers"] = r.zero_gradient_layers;
  return j;
}

}  // namespace udgnn
