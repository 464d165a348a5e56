#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "udgnn/trainer.hpp"

using namespace udgnn;

namespace {

Parameter scalar_param(double v, bool exempt = false) {
  Parameter p;
  p.name = "w";
  p.value = Tensor::scalar(v);
  p.grad = Tensor(1, 1);
  p.adam_m = Tensor(1, 1);
  p.adam_v = Tensor(1, 1);
  p.weight_decay_exempt = exempt;
  return p;
}

GeneratedData easy_data(std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.n_nodes = 200;
  s.n_classes = 3;
  s.feature_dim = 6;
  s.homophily = 0.8;
  s.mean_degree = 6;
  s.feature_signal = 6.0;
  s.noise_std = 1.0;
  s.seed = seed;
  return generate(s);
}

ModelSpec mlp_spec() {
  ModelSpec s;
  s.depth = 0;
  s.hidden_dim = 8;
  return s;
}

TrainConfig quick_cfg(std::size_t epochs = 60) {
  TrainConfig c;
  c.max_epochs = epochs;
  c.patience = epochs;
  c.learning_rate = 0.05;
  c.seed = 1;
  return c;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Parameter> ps{scalar_param(1.0)};
  ps[0].grad[0] = 1.0;
  adam_step(ps, 0.1, 0.0);
  EXPECT_NEAR(ps[0].value.item(), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ZeroGradientZeroDecayIsFixedPoint) {
  std::vector<Parameter> ps{scalar_param(0.37)};
  for (int i = 0; i < 10; ++i) adam_step(ps, 0.1, 0.0);
  EXPECT_EQ(ps[0].value.item(), 0.37);
}

TEST(Adam, ExemptParametersIgnoreDecay) {
  std::vector<Parameter> ps{scalar_param(0.5, true), scalar_param(0.5, false)};
  for (int i = 0; i < 10; ++i) adam_step(ps, 0.1, 0.1);
  EXPECT_EQ(ps[0].value.item(), 0.5);
  EXPECT_LT(ps[1].value.item(), 0.5);
}

TEST(Adam, QuadraticConvergesLikeScalarRecurrence) {
  std::vector<Parameter> ps{scalar_param(1.0)};
  // Independent scalar recurrence.
  double w = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    ps[0].grad[0] = 2.0 * ps[0].value.item();
    adam_step(ps, 0.05, 0.0);
    const double g = 2.0 * w;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(ps[0].value.item(), w, 1e-12);
  EXPECT_LT(std::abs(w), 0.05);
}

TEST(Accuracy, OneHotLogitsArePerfect) {
  const std::vector<int> y{0, 2, 1, 1};
  Tensor logits(4, 3);
  for (std::size_t i = 0; i < 4; ++i) logits(i, static_cast<std::size_t>(y[i])) = 1.0;
  EXPECT_EQ(accuracy(logits, y, Mask(4, 1)), 1.0);
}

TEST(Accuracy, ZeroLogitsPickClassZero) {
  const std::vector<int> y{0, 2, 0, 1, 0};
  const Mask m{1, 1, 0, 1, 1};
  EXPECT_DOUBLE_EQ(accuracy(Tensor(5, 3), y, m), 2.0 / 4.0);
}

TEST(Accuracy, RandomLogitsNearChance) {
  Rng rng(12);
  const Tensor logits = random_normal(1000, 5, rng);
  std::vector<int> y(1000);
  for (int& v : y) v = static_cast<int>(rng.below(5));
  // binomial(1000, 0.2): sd ~ 0.0126, so 0.05 is ~4 sd
  EXPECT_NEAR(accuracy(logits, y, Mask(1000, 1)), 0.2, 0.05);
}

TEST(Accuracy, EmptyMaskThrows) { EXPECT_THROW(accuracy(Tensor(2, 2), {0, 1}, Mask(2, 0)), std::invalid_argument); }

TEST(TrainConfigJson, RoundTripAndValidation) {
  TrainConfig c = quick_cfg();
  c.weight_decay = 5e-5;
  c.dropout_rate = 0.5;
  c.seed = 123456789012345ull;
  const TrainConfig back = train_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(back, c);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"max_epochs":5,"patience":6})")),
               std::invalid_argument);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"learning_rate":0})")), std::invalid_argument);
}

TEST(Train, MlpOnSeparableFeatures) {
  const auto gd = easy_data();
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  UdgnnModel m(mlp_spec(), 6, 3, 1);
  const auto rep = train(m, ops, gd.dataset, quick_cfg());
  EXPECT_GE(rep.test_acc, 0.95);
}

TEST(Train, PatienceZeroRunsOneEpoch) {
  const auto gd = easy_data();
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  UdgnnModel m(mlp_spec(), 6, 3, 1);
  TrainConfig c = quick_cfg();
  c.patience = 0;
  EXPECT_EQ(train(m, ops, gd.dataset, c).epochs.size(), 1u);
}

TEST(Train, ZeroEpochsEvaluatesInitialModel) {
  const auto gd = easy_data();
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  UdgnnModel m(mlp_spec(), 6, 3, 1);
  TrainConfig c = quick_cfg(0);
  const auto rep = train(m, ops, gd.dataset, c);
  EXPECT_TRUE(rep.epochs.empty());
  EXPECT_EQ(rep.test_acc, evaluate(m, ops, gd.dataset, gd.dataset.test_mask));
}

TEST(TrainProperty, DeterministicReport) {
  const auto gd = easy_data(4);
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  ModelSpec s;
  s.depth = 3;
  s.hidden_dim = 8;
  TrainConfig c = quick_cfg(25);
  c.dropout_rate = 0.5;
  UdgnnModel a(s, 6, 3, 9), b(s, 6, 3, 9);
  const auto ra = train(a, ops, gd.dataset, c), rb = train(b, ops, gd.dataset, c);
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(to_json(ra).dump(), to_json(rb).dump());
  EXPECT_EQ(metrics_csv(ra), metrics_csv(rb));
}

TEST(TrainProperty, ReportedTestAccuracyIsFromFirstBestValidationSnapshot) {
  const auto gd = easy_data(5);
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  ModelSpec s;
  s.depth = 2;
  s.hidden_dim = 8;
  TrainConfig c = quick_cfg(40);
  c.learning_rate = 0.01;
  std::vector<std::vector<Tensor>> snaps;
  UdgnnModel m(s, 6, 3, 2);
  const auto rep = train(m, ops, gd.dataset, c, [&](std::size_t, UdgnnModel& mm) { snaps.push_back(mm.snapshot()); });
  ASSERT_EQ(snaps.size(), rep.epochs.size() + 1);
  double best = -1;
  std::size_t first_best = 0;
  for (const auto& e : rep.epochs)
    if (e.val_acc > best) best = e.val_acc, first_best = e.epoch;
  EXPECT_EQ(rep.best_epoch, first_best);
  EXPECT_EQ(rep.best_val_acc, best);
  UdgnnModel probe(s, 6, 3, 2);
  probe.restore(snaps[first_best]);
  EXPECT_EQ(rep.test_acc, evaluate(probe, ops, gd.dataset, gd.dataset.test_mask));
  EXPECT_EQ(m.snapshot(), snaps[first_best]);
}

TEST(TrainProperty, LossDecreasesWithSmallLearningRate) {
  const auto gd = easy_data(6);
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  ModelSpec s;
  s.depth = 4;
  s.hidden_dim = 8;
  TrainConfig c = quick_cfg(50);
  c.learning_rate = 1e-3;
  UdgnnModel m(s, 6, 3, 3);
  const auto rep = train(m, ops, gd.dataset, c);
  ASSERT_EQ(rep.epochs.size(), 50u);
  EXPECT_LT(rep.epochs[49].train_loss, rep.epochs[0].train_loss);
}

TEST(Train, GatesExemptFromDecayUnderZeroGradient) {
  // A gate with zero gradient keeps its value even under heavy decay.
  std::vector<Parameter> ps{scalar_param(0.8, true)};
  for (int i = 0; i < 20; ++i) adam_step(ps, 0.05, 0.5);
  EXPECT_EQ(ps[0].value.item(), 0.8);
}

TEST(Train, GateMagnitudesLogged) {
  const auto gd = easy_data();
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  ModelSpec s;
  s.depth = 3;
  s.hidden_dim = 6;
  UdgnnModel m(s, 6, 3, 1);
  const auto rep = train(m, ops, gd.dataset, quick_cfg(5));
  for (const auto& e : rep.epochs) {
    EXPECT_EQ(e.abs_alpha.size(), 3u);
    EXPECT_EQ(e.abs_beta.size(), 3u);
  }
  // alpha wakes up from 0 after one step
  EXPECT_GT(rep.epochs.front().abs_alpha[0], 0.0);
}

TEST(Train, EmptyMaskRejected) {
  auto gd = easy_data();
  gd.dataset.val_mask.assign(gd.dataset.n_nodes(), 0);
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  UdgnnModel m(mlp_spec(), 6, 3, 1);
  EXPECT_THROW(train(m, ops, gd.dataset, quick_cfg()), std::invalid_argument);
}

TEST(Train, NonFiniteLossNamesEpoch) {
  const auto gd = easy_data();
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  UdgnnModel m(mlp_spec(), 6, 3, 1);
  m.encoder_weight().value[0] = NAN;
  try {
    train(m, ops, gd.dataset, quick_cfg());
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(TrainReportJson, RoundTrip) {
  const auto gd = easy_data();
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  ModelSpec s;
  s.depth = 2;
  s.hidden_dim = 5;
  UdgnnModel m(s, 6, 3, 1);
  const auto rep = train(m, ops, gd.dataset, quick_cfg(8));
  const auto back = train_report_from_json(nlohmann::json::parse(to_json(rep).dump()));
  EXPECT_EQ(back, rep);
}

TEST(Sweep, SingleCellGivesOneRow) {
  const auto gd = easy_data();
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  ModelSpec base;
  base.hidden_dim = 4;
  const auto cells = depth_sweep(ops, gd.dataset, {make_variant("none", ConvKind::GCN, base)}, {2}, 1, quick_cfg(3));
  const std::string csv = sweep_csv(cells);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,conv,depth,repeat,seed,val_acc,test_acc,best_epoch,wall_ms");
}

TEST(Sweep, DriveAtInitIsDepthInvariant) {
  const auto gd = easy_data();
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  ModelSpec base;
  base.hidden_dim = 4;
  TrainConfig c = quick_cfg(0);
  // One model seed for every cell, so only depth differs.
  std::set<double> accs;
  for (std::size_t d : {0u, 2u, 8u, 32u}) {
    ModelSpec s = make_variant("drive_ffn", ConvKind::GCN, base).spec;
    s.depth = d;
    UdgnnModel m(s, 6, 3, 77);
    accs.insert(train(m, ops, gd.dataset, c).test_acc);
  }
  EXPECT_EQ(accs.size(), 1u);
}

TEST(SweepProperty, OrderStableAndThreadIndependent) {
  const auto gd = easy_data();
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  ModelSpec base;
  base.hidden_dim = 4;
  const std::vector<SweepVariant> vs{make_variant("residual", ConvKind::GCN, base),
                                     make_variant("drive", ConvKind::SGC, base)};
  const auto a = depth_sweep(ops, gd.dataset, vs, {1, 3, 2}, 2, quick_cfg(4), 1);
  const auto b = depth_sweep(ops, gd.dataset, vs, {1, 3, 2}, 2, quick_cfg(4), 3);
  EXPECT_EQ(a.size(), 12u);
  EXPECT_EQ(sweep_csv(a), sweep_csv(b));
  EXPECT_EQ(a[0].variant, "residual");
  EXPECT_EQ(a[0].depth, 1u);
  EXPECT_EQ(a[2].depth, 3u);
  EXPECT_EQ(a[11].variant, "drive");
  EXPECT_EQ(a[11].conv, "sgc");
  EXPECT_NE(a[0].seed, a[1].seed);
  EXPECT_EQ(a[0].seed, sweep_seed(1, "residual", 1, 0));
}

TEST(Sweep, UnknownVariantListsNames) {
  try {
    make_variant("gat", ConvKind::GCN);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("drive_ffn"), std::string::npos);
  }
  EXPECT_THROW(depth_sweep(GraphOperators{}, NodeDataset{}, {}, {}, 1, quick_cfg()), std::invalid_argument);
}

TEST(Train, NoisyCompleteFeaturesAloneBeatChance) {
  SyntheticSpec s;
  s.generator = GeneratorKind::NoisyComplete;
  s.n_nodes = 300;
  s.n_classes = 7;
  s.feature_dim = 16;
  s.feature_signal = 3.0;
  s.seed = 7;
  const auto gd = generate(s);
  const auto ops = make_operators(gd.graph, PropagationKind::SymNorm);
  ModelSpec ms = mlp_spec();
  ms.hidden_dim = 16;
  UdgnnModel m(ms, 16, 7, 1);
  TrainConfig c = quick_cfg(200);
  c.learning_rate = 0.01;
  EXPECT_GT(train(m, ops, gd.dataset, c).test_acc, 2.0 / 7.0);
}
