#include <gtest/gtest.h>

#include <cmath>

#include "udgnn/autodiff.hpp"
#include "udgnn/diagnostics.hpp"
#include "udgnn/model.hpp"

using namespace udgnn;

namespace {

Parameter make_param(std::string name, Tensor v) {
  Parameter p;
  p.name = std::move(name);
  p.value = std::move(v);
  p.grad = Tensor(p.value.rows(), p.value.cols());
  p.adam_m = p.grad;
  p.adam_v = p.grad;
  return p;
}

double central_difference(const std::function<double()>& f, double& x, double eps = 1e-6) {
  const double orig = x;
  x = orig + eps;
  const double up = f();
  x = orig - eps;
  const double down = f();
  x = orig;
  return (up - down) / (2 * eps);
}

}  // namespace

TEST(Tape, CrossEntropyOfZeroLogitsIsLogC) {
  Tape t;
  const Var logits = t.constant(Tensor(5, 7));
  const Var loss = t.softmax_cross_entropy(logits, {0, 1, 2, 3, 6}, {1, 0, 1, 1, 0});
  EXPECT_NEAR(t.value(loss).item(), std::log(7.0), 1e-15);
  EXPECT_NEAR(t.value(loss).item(), 1.945910, 1e-6);
}

TEST(Tape, CrossEntropyErrors) {
  Tape t;
  const Var logits = t.constant(Tensor(2, 3));
  EXPECT_THROW(t.softmax_cross_entropy(logits, {0, 1}, {0, 0}), std::invalid_argument);
  EXPECT_THROW(t.softmax_cross_entropy(logits, {0, 1, 2}, {1, 1, 1}), std::invalid_argument);
  Tensor bad(2, 3);
  bad(0, 0) = NAN;
  const Var nl = t.constant(bad);
  EXPECT_THROW(t.softmax_cross_entropy(nl, {0, 1}, {1, 1}), std::runtime_error);
}

TEST(TapeProperty, CrossEntropyShiftInvariant) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor l = random_normal(6, 4, rng, 3.0);
    Tensor shifted = l;
    for (std::size_t i = 0; i < 6; ++i) {
      const double c = rng.uniform(-50, 50);
      for (double& v : shifted.row(i)) v += c;
    }
    const std::vector<int> y{0, 1, 2, 3, 0, 1};
    const Mask m{1, 1, 0, 1, 1, 1};
    Tape t;
    const double a = t.value(t.softmax_cross_entropy(t.constant(l), y, m)).item();
    const double b = t.value(t.softmax_cross_entropy(t.constant(shifted), y, m)).item();
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(Tape, CrossEntropyGradientMatchesSoftmaxMinusOneHot) {
  Rng rng(8);
  Parameter w = make_param("logits", random_normal(4, 3, rng));
  const std::vector<int> y{2, 0, 1, 1};
  const Mask m{1, 0, 1, 1};
  Tape t;
  t.backward(t.softmax_cross_entropy(t.param(w), y, m));
  for (std::size_t i = 0; i < 4; ++i) {
    double mx = -INFINITY, z = 0;
    for (double v : w.value.row(i)) mx = std::max(mx, v);
    for (double v : w.value.row(i)) z += std::exp(v - mx);
    for (std::size_t c = 0; c < 3; ++c) {
      const double p = std::exp(w.value(i, c) - mx) / z;
      const double expect = m[i] ? (p - (y[i] == static_cast<int>(c) ? 1.0 : 0.0)) / 3.0 : 0.0;
      EXPECT_NEAR(w.grad(i, c), expect, 1e-15);
    }
  }
}

TEST(Tape, ReluForwardAndBackward) {
  Parameter h = make_param("h", Tensor{{-1.0, 2.0}});
  Parameter up = make_param("u", Tensor{{3.0, 5.0}});
  Tape t;
  const Var r = t.relu(t.param(h));
  EXPECT_EQ(t.value(r), (Tensor{{0.0, 2.0}}));
  // loss = <relu(h), u> so dloss/dh = u * [0, 1]
  t.backward(t.sum(t.matmul(r, t.constant(transpose(up.value)))));
  EXPECT_EQ(h.grad, (Tensor{{0.0, 5.0}}));
}

TEST(Tape, ScaleByZeroGateIsZero) {
  Rng rng(2);
  Parameter alpha = make_param("alpha", Tensor::scalar(0.0));
  const Tensor h = random_normal(3, 4, rng);
  Tape t;
  const Var s = t.scale_by_param(t.param(alpha), t.constant(h));
  EXPECT_EQ(max_abs(t.value(s)), 0.0);
  // upstream of sum() is all ones, so dL/dalpha = <ones, H>
  t.backward(t.sum(s));
  double expect = 0;
  for (double v : h.data()) expect += v;
  EXPECT_NEAR(alpha.grad.item(), expect, 1e-13);
  auto f = [&]() {
    Tape tt;
    return tt.value(tt.sum(tt.scale_by_param(tt.param(alpha), tt.constant(h)))).item();
  };
  EXPECT_NEAR(central_difference(f, alpha.value[0]), alpha.grad.item(), 1e-8);
}

TEST(Tape, ScaleByGateGradientIsFrobeniusInner) {
  Rng rng(12);
  Parameter alpha = make_param("alpha", Tensor::scalar(0.0));
  Parameter w = make_param("w", random_normal(4, 2, rng));
  const Tensor h = random_normal(3, 4, rng);
  const Tensor target = random_normal(3, 2, rng);
  // loss = ||alpha * H W - target||^2
  auto build = [&](Tape& t) {
    const Var s = t.scale_by_param(t.param(alpha), t.matmul(t.constant(h), t.param(w)));
    return t.sum_squares(t.add(s, t.constant(-1.0 * target)));
  };
  Tape t;
  t.backward(build(t));
  // upstream at alpha=0 is 2(0 - target); grad = <upstream, HW>
  const double expect = frobenius_dot(-2.0 * target, matmul(h, w.value));
  EXPECT_NEAR(alpha.grad.item(), expect, 1e-12);
  std::vector<Parameter*> ps{&alpha, &w};
  EXPECT_LT(grad_check(build, ps, 1e-6).max_rel_error, 1e-8);
}

TEST(Tape, SumOfLinearMapGradient) {
  Rng rng(1);
  const Tensor x = random_normal(5, 3, rng);
  Parameter w = make_param("W", random_normal(3, 2, rng));
  Tape t;
  t.backward(t.sum(t.matmul(t.constant(x), t.param(w))));
  EXPECT_LT(max_abs_diff(w.grad, matmul_tn(x, Tensor(5, 2, 1.0))), 1e-14);
}

TEST(Tape, BackwardTwiceThrows) {
  Parameter w = make_param("w", Tensor::scalar(1.0));
  Tape t;
  const Var l = t.sum(t.param(w));
  t.backward(l);
  EXPECT_THROW(t.backward(l), std::logic_error);
}

TEST(Tape, UnusedParametersGetZeroGradient) {
  Parameter used = make_param("a", Tensor::scalar(2.0));
  Parameter unused = make_param("b", Tensor{{1.0, 2.0}});
  unused.grad.fill(7.0);
  Tape t;
  t.param(unused);
  t.backward(t.sum_squares(t.param(used)));
  EXPECT_EQ(used.grad.item(), 4.0);
  EXPECT_EQ(max_abs(unused.grad), 0.0);
}

TEST(Tape, ShapeMismatchThrows) {
  Tape t;
  const Var a = t.constant(Tensor(2, 3)), b = t.constant(Tensor(2, 3));
  EXPECT_THROW(t.matmul(a, b), std::invalid_argument);
  EXPECT_THROW(t.add(a, t.constant(Tensor(3, 2))), std::invalid_argument);
}

TEST(Tape, SpmmBackwardUsesTranspose) {
  Rng rng(31);
  std::vector<std::pair<Index, Index>> e{{0, 1}, {1, 2}, {2, 3}, {0, 3}, {1, 3}, {3, 4}};
  const auto g = SparseGraph::from_edges(6, e);  // node 5 isolated
  for (auto kind : {PropagationKind::SymNorm, PropagationKind::RowNorm}) {
    const auto p = build_propagation(g, kind);
    Parameter h = make_param("h", random_normal(6, 3, rng));
    Tape t;
    t.backward(t.sum(t.spmm_const(p, t.param(h))));
    // d sum(P H) / dH = P^T ones
    const Tensor expect = matmul_tn(p.to_dense(), Tensor(6, 3, 1.0));
    EXPECT_LT(max_abs_diff(h.grad, expect), 1e-14);
  }
}

TEST(Tape, DropoutRateZeroIsIdentity) {
  Rng rng(3), drng(4);
  const Tensor h = random_normal(4, 5, rng);
  Tape t;
  const Var x = t.constant(h);
  EXPECT_EQ(t.value(t.dropout(x, 0.0, true, drng)), h);
  EXPECT_EQ(t.value(t.dropout(x, 0.0, false, drng)), h);
  EXPECT_EQ(t.value(t.dropout(x, 0.5, false, drng)), h);
  EXPECT_THROW(t.dropout(x, 1.0, true, drng), std::invalid_argument);
}

TEST(TapeProperty, DropoutIsUnbiased) {
  Rng rng(17);
  Tensor acc(2, 3);
  const int reps = 10000;
  for (int r = 0; r < reps; ++r) {
    Tape t;
    acc += t.value(t.dropout(t.constant(Tensor(2, 3, 1.0)), 0.5, true, rng));
  }
  for (double v : acc.data()) EXPECT_NEAR(v / reps, 1.0, 0.02);
}

TEST(Tape, DropoutBackwardMatchesMask) {
  Rng rng(5);
  Parameter h = make_param("h", Tensor(3, 4, 1.0));
  Tape t;
  const Var d = t.dropout(t.param(h), 0.25, true, rng);
  const Tensor out = t.value(d);
  t.backward(t.sum(d));
  for (std::size_t k = 0; k < out.size(); ++k) EXPECT_EQ(h.grad[k], out[k]);
}

TEST(Tape, ConcatColsForwardAndBackward) {
  Rng rng(6);
  Parameter a = make_param("a", random_normal(3, 2, rng));
  Parameter b = make_param("b", random_normal(3, 1, rng));
  Tape t;
  const Var c = t.concat_cols(std::vector<Var>{t.param(a), t.param(b)});
  const Tensor v = t.value(c);
  ASSERT_EQ(v.cols(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(v(i, 0), a.value(i, 0));
    EXPECT_EQ(v(i, 1), a.value(i, 1));
    EXPECT_EQ(v(i, 2), b.value(i, 0));
  }
  t.backward(t.sum_squares(c));
  EXPECT_EQ(a.grad, 2.0 * a.value);
  EXPECT_EQ(b.grad, 2.0 * b.value);
}

TEST(GradCheck, QuadraticAtIdentity) {
  Parameter w = make_param("W", Tensor::identity(2));
  std::vector<Parameter*> ps{&w};
  const auto r = grad_check([&](Tape& t) { return t.sum_squares(t.param(w)); }, ps, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.coordinates_checked, 4u);
  Tape t;
  t.backward(t.sum_squares(t.param(w)));
  EXPECT_EQ(w.grad, 2.0 * w.value);
}

TEST(GradCheck, EpsilonRange) {
  Parameter w = make_param("W", Tensor::identity(2));
  std::vector<Parameter*> ps{&w};
  auto f = [&](Tape& t) { return t.sum_squares(t.param(w)); };
  EXPECT_THROW(grad_check(f, ps, 1e-9), std::invalid_argument);
  EXPECT_THROW(grad_check(f, ps, 1e-3), std::invalid_argument);
}

TEST(GradCheck, NonFiniteLossThrows) {
  Parameter w = make_param("W", Tensor::scalar(1.0));
  std::vector<Parameter*> ps{&w};
  int calls = 0;
  auto f = [&](Tape& t) {
    Tensor logits(1, 2);
    logits(0, 0) = ++calls > 1 ? NAN : 0.0;
    return t.add(t.sum(t.param(w)), t.softmax_cross_entropy(t.constant(logits), {0}, {1}));
  };
  EXPECT_THROW(grad_check(f, ps, 1e-6), std::runtime_error);
}

TEST(TapeProperty, ReplayIsBitwiseDeterministic) {
  SparseGraph g = SparseGraph::from_edges(8, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {6, 7}, {0, 7}});
  const auto ops = make_operators(g, PropagationKind::SymNorm);
  Rng rng(3);
  const Tensor x = random_normal(8, 4, rng);
  const std::vector<int> y{0, 1, 0, 1, 2, 2, 1, 0};
  const Mask m(8, 1);
  ModelSpec spec;
  spec.depth = 3;
  spec.hidden_dim = 5;
  spec.alpha_init = 0.3;
  spec.beta_init = 0.2;
  auto run = [&]() {
    UdgnnModel model(spec, 4, 3, 11);
    Rng drng(99);
    Tape t;
    const ForwardResult fr = model.forward(t, ops, x, {true, 0.3, &drng});
    const Var loss = t.softmax_cross_entropy(fr.logits, y, m);
    t.backward(loss);
    std::vector<Tensor> grads;
    for (const auto& p : model.parameters()) grads.push_back(p.grad);
    return std::make_pair(t.value(loss).item(), grads);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

// Every skip variant, depth 4, n = 16: tape gradients against central
// differences. ReLU kinks are avoided by reseeding until every ReLU input is
// at least 10 eps away from zero.
TEST(GradCheckProperty, AllSkipVariantsDepthFour) {
  const double eps = 1e-6;
  struct Case {
    ConvKind conv;
    SkipKind skip;
    bool ffn;
  };
  const std::vector<Case> cases{{ConvKind::GCN, SkipKind::NoSkip, false},  {ConvKind::GCN, SkipKind::Residual, false},
                                {ConvKind::GCN, SkipKind::Initial, false}, {ConvKind::GCN, SkipKind::JK, false},
                                {ConvKind::GCN, SkipKind::Drive, false},   {ConvKind::GCN, SkipKind::Drive, true},
                                {ConvKind::SageMean, SkipKind::Drive, true}, {ConvKind::SGC, SkipKind::Drive, true},
                                {ConvKind::Dense, SkipKind::Residual, false}};
  for (const auto& c : cases) {
    bool checked = false;
    for (std::uint64_t seed = 0; seed < 50 && !checked; ++seed) {
      Rng rng(mix_seed({seed, static_cast<std::uint64_t>(c.skip), static_cast<std::uint64_t>(c.conv)}));
      std::vector<std::pair<Index, Index>> e;
      for (Index i = 0; i < 16; ++i)
        for (Index j = i + 1; j < 16; ++j)
          if (rng.bernoulli(0.25)) e.emplace_back(i, j);
      const auto g = SparseGraph::from_edges(16, e);
      const auto ops = make_operators(g, PropagationKind::SymNorm);
      const Tensor x = random_normal(16, 5, rng);
      std::vector<int> y(16);
      for (int& v : y) v = static_cast<int>(rng.below(3));
      const Mask m(16, 1);
      ModelSpec spec;
      spec.conv_kind = c.conv;
      spec.skip_kind = c.skip;
      spec.with_ffn = c.ffn;
      spec.depth = 4;
      spec.hidden_dim = 6;
      UdgnnModel model(spec, 5, 3, rng.next_u64());
      for (std::size_t l = 0; l < 4; ++l) {
        if (model.alpha(l)) model.alpha(l)->value[0] = rng.uniform(0.3, 1.0);
        if (model.beta(l)) model.beta(l)->value[0] = rng.uniform(0.3, 1.0);
      }
      for (auto& p : model.parameters())
        if (p.weight_decay_exempt && p.value.size() > 1) p.value = random_normal(p.value.rows(), p.value.cols(), rng, 0.1);
      auto build = [&](Tape& t) { return t.softmax_cross_entropy(model.forward(t, ops, x).logits, y, m); };
      {
        Tape probe;
        build(probe);
        if (probe.relu_margin() < 10 * eps) continue;
      }
      std::vector<Parameter*> ps;
      for (auto& p : model.parameters()) ps.push_back(&p);
      const auto r = grad_check(build, ps, eps);
      EXPECT_LT(r.max_rel_error, 1e-5) << to_string(c.conv) << "/" << to_string(c.skip) << (c.ffn ? "+ffn" : "")
                                       << " worst " << model.parameters()[r.worst_parameter].name;
      checked = true;
    }
    EXPECT_TRUE(checked) << "no kink-free instance found for " << to_string(c.skip);
  }
}

TEST(GradCheck, SingleLinearGcnLayerMatchesPathFormula) {
  Rng rng(45);
  const auto g = SparseGraph::from_edges(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 2}});
  const auto ops = make_operators(g, PropagationKind::SymNorm);
  ModelSpec spec;
  spec.skip_kind = SkipKind::NoSkip;
  spec.with_ffn = false;
  spec.depth = 1;
  spec.hidden_dim = 3;
  spec.linear_mode = true;
  UdgnnModel model(spec, 4, 2, 5);
  const Tensor x = random_normal(5, 4, rng);
  Tape t;
  const ForwardResult fr = model.forward(t, ops, x);
  t.backward(t.softmax_cross_entropy(fr.logits, {0, 1, 1, 0, 1}, Mask(5, 1)));
  const Tensor& h0 = t.value(fr.hidden[0]);
  const Tensor upstream = t.grad(fr.hidden[1]);
  // dL/dW = (P H0)^T dL/dH1
  const Tensor expect = matmul_tn(spmm(ops.p, h0), upstream);
  EXPECT_LT(max_rel_diff(model.conv_weight(0)->grad, expect), 1e-12);
  EXPECT_LT(max_rel_diff(analytic_grad(ops.p, h0, upstream, linear_stack(model), 1), expect), 1e-12);
}
