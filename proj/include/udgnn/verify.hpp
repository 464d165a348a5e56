#pragma once

// Randomized equivalence checks between the path-decomposition oracles and
// the model's forward/backward passes.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "udgnn/diagnostics.hpp"
#include "udgnn/model.hpp"
#include "udgnn/rng.hpp"

namespace udgnn {

inline constexpr double kForwardTolerance = 1e-10;
inline constexpr double kBackwardTolerance = 1e-8;

struct RandomInstance {
  SparseGraph graph;
  GraphOperators ops;
  NodeDataset data;
  UdgnnModel model;
};

/// Random graph (5..16 nodes, edge probability 0.3), random propagation
/// kind, random features, linear_mode model with hidden width 2..8. DRIVE
/// gates are drawn from U(0.2, 1.2) so no path is switched off.
inline RandomInstance make_random_instance(std::uint64_t seed, SkipKind skip, ConvKind conv, std::size_t depth) {
  Rng rng(seed);
  RandomInstance ri;
  const std::size_t n = 5 + rng.below(12);
  const std::size_t h = 2 + rng.below(7);
  const std::size_t d = 2 + rng.below(5);
  const int c = 2 + static_cast<int>(rng.below(3));
  std::vector<std::pair<Index, Index>> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.bernoulli(0.3)) edges.emplace_back(static_cast<Index>(i), static_cast<Index>(j));
  ri.graph = SparseGraph::from_edges(n, edges);
  const auto kind = static_cast<PropagationKind>(rng.below(3));
  ri.ops = make_operators(ri.graph, kind);
  ri.data.features = random_normal(n, d, rng);
  ri.data.n_classes = c;
  ri.data.labels.resize(n);
  for (int& y : ri.data.labels) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
  ri.data.train_mask.assign(n, 1);
  ri.data.val_mask.assign(n, 0);
  ri.data.test_mask.assign(n, 0);

  ModelSpec spec;
  spec.conv_kind = conv;
  spec.skip_kind = skip;
  spec.with_ffn = false;
  spec.depth = depth;
  spec.hidden_dim = h;
  spec.linear_mode = true;
  spec.propagation_kind = kind;
  ri.model = UdgnnModel(spec, d, static_cast<std::size_t>(c), rng.next_u64());
  if (skip == SkipKind::Drive)
    for (std::size_t l = 0; l < depth; ++l) ri.model.alpha(l)->value[0] = rng.uniform(0.2, 1.2);
  return ri;
}

struct VerifyResult {
  double max_deviation = 0.0;
  std::uint64_t worst_seed = 0;
  std::string worst_case;
  std::size_t instances = 0;
  std::size_t failures = 0;
  std::uint64_t first_failing_seed = 0;
  std::string first_failing_case;
};

inline const std::vector<SkipKind>& theorem_skip_kinds() {
  static const std::vector<SkipKind> k{SkipKind::NoSkip, SkipKind::Residual, SkipKind::Initial, SkipKind::Drive};
  return k;
}
inline const std::vector<ConvKind>& theorem_conv_kinds() {
  static const std::vector<ConvKind> k{ConvKind::SGC, ConvKind::GCN};
  return k;
}

namespace detail {
inline std::string case_name(SkipKind s, ConvKind c, std::size_t depth) {
  return std::string(to_string(c)) + "/" + std::string(to_string(s)) + "/L=" + std::to_string(depth);
}

template <class Check>
VerifyResult run_grid(std::size_t trials, std::uint64_t seed, std::size_t max_depth, double tol, Check&& check) {
  VerifyResult res;
  for (std::size_t t = 0; t < trials; ++t)
    for (SkipKind s : theorem_skip_kinds())
      for (ConvKind c : theorem_conv_kinds())
        for (std::size_t depth = 1; depth <= max_depth; ++depth) {
          const std::uint64_t inst_seed =
              mix_seed({seed, t, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(c), depth});
          RandomInstance ri = make_random_instance(inst_seed, s, c, depth);
          const double dev = check(ri);
          ++res.instances;
          if (res.instances == 1 || std::isnan(dev) || dev > res.max_deviation) {
            res.max_deviation = dev;
            res.worst_seed = inst_seed;
            res.worst_case = case_name(s, c, depth);
          }
          if (!(dev < tol)) {
            if (res.failures == 0) {
              res.first_failing_seed = inst_seed;
              res.first_failing_case = case_name(s, c, depth);
            }
            ++res.failures;
          }
        }
  return res;
}
}  // namespace detail

/// Path enumeration vs. model forward: max elementwise |difference| of H^L.
inline double forward_oracle_deviation(RandomInstance& ri) {
  Tape t;
  const ForwardResult fr = ri.model.forward(t, ri.ops, ri.data.features);
  const LinearStack st = linear_stack(ri.model);
  const Tensor expect = enumerate_paths_forward(ri.ops.p, t.value(fr.hidden.front()), st);
  return max_abs_diff(expect, t.value(fr.hidden.back()));
}

/// Backward path sum vs. autodiff, max over layers of the max-norm relative
/// error. `corrupt` perturbs the analytic side (negative control).
inline double backward_oracle_deviation(RandomInstance& ri, bool corrupt = false) {
  Tape t;
  ri.model.zero_grad();
  const ForwardResult fr = ri.model.forward(t, ri.ops, ri.data.features);
  const Var loss = t.softmax_cross_entropy(fr.logits, ri.data.labels, ri.data.train_mask);
  t.backward(loss);
  const LinearStack st = linear_stack(ri.model);
  const Tensor upstream = t.grad(fr.hidden.back());
  double worst = 0.0;
  for (std::size_t l = 1; l <= st.depth(); ++l) {
    Tensor analytic = analytic_grad(ri.ops.p, t.value(fr.hidden[l - 1]), upstream, st, l);
    if (corrupt && l == 1) analytic[0] += 1e-3 * std::max(1e-3, max_abs(analytic));
    Tensor autodiff = st.conv == ConvKind::GCN
                          ? ri.model.conv_weight(l - 1)->grad
                          : matmul_tn(t.value(fr.conv_out[l - 1]), t.grad(fr.conv_out[l - 1]));
    worst = std::max(worst, max_rel_diff(analytic, autodiff));
  }
  return worst;
}

inline VerifyResult verify_forward_decomposition(std::size_t trials, std::uint64_t seed, std::size_t max_depth = 6) {
  return detail::run_grid(trials, seed, max_depth, kForwardTolerance,
                          [](RandomInstance& ri) { return forward_oracle_deviation(ri); });
}

inline VerifyResult verify_backward_decomposition(std::size_t trials, std::uint64_t seed, std::size_t max_depth = 6,
                                                  bool corrupt = false) {
  return detail::run_grid(trials, seed, max_depth, kBackwardTolerance,
                          [corrupt](RandomInstance& ri) { return backward_oracle_deviation(ri, corrupt); });
}

}  // namespace udgnn
