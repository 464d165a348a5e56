#pragma once

// Full-batch training with Adam and validation-based early stopping, plus
// depth sweeps over skip-connection variants.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "udgnn/autodiff.hpp"
#include "udgnn/dataset.hpp"
#include "udgnn/format.hpp"
#include "udgnn/model.hpp"

namespace udgnn {

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  std::size_t max_epochs = 1000;
  std::size_t patience = 100;
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;
  // Wall-clock is non-deterministic, so it is only recorded on request.
  bool record_timing = false;

  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("TrainConfig.learning_rate: must be positive");
  if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig.weight_decay: must be non-negative");
  if (c.patience > c.max_epochs) throw std::invalid_argument("TrainConfig.patience: must not exceed max_epochs");
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0))
    throw std::invalid_argument("TrainConfig.dropout_rate: must lie in [0, 1)");
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["dropout_rate"] = c.dropout_rate;
  j["seed"] = c.seed;
  j["record_timing"] = c.record_timing;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("TrainConfig: expected a JSON object");
  TrainConfig c;
  try {
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<std::size_t>();
    if (j.contains("patience")) c.patience = j.at("patience").get<std::size_t>();
    if (j.contains("dropout_rate")) c.dropout_rate = j.at("dropout_rate").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("record_timing")) c.record_timing = j.at("record_timing").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("TrainConfig: ") + e.what());
  }
  validate(c);
  return c;
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Weight decay is coupled (added to the gradient) and
/// skipped for parameters flagged weight_decay_exempt.
inline void adam_step(std::span<Parameter> params, double lr, double weight_decay, const AdamOptions& o = {}) {
  for (Parameter& p : params) {
    ++p.step_count;
    const double t = static_cast<double>(p.step_count);
    const double c1 = 1.0 - std::pow(o.beta1, t);
    const double c2 = 1.0 - std::pow(o.beta2, t);
    const double wd = p.weight_decay_exempt ? 0.0 : weight_decay;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k] + wd * p.value[k];
      p.adam_m[k] = o.beta1 * p.adam_m[k] + (1.0 - o.beta1) * g;
      p.adam_v[k] = o.beta2 * p.adam_v[k] + (1.0 - o.beta2) * g * g;
      const double m_hat = p.adam_m[k] / c1;
      const double v_hat = p.adam_v[k] / c2;
      p.value[k] -= lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

/// Argmax per row (ties go to the smallest class index), scored over the mask.
inline double accuracy(const Tensor& logits, const std::vector<int>& labels, const Mask& mask) {
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    const auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    correct += static_cast<int>(best) == labels[i] ? 1 : 0;
    ++total;
  }
  if (total == 0) throw std::invalid_argument("accuracy: empty mask");
  return static_cast<double>(correct) / static_cast<double>(total);
}

inline double evaluate(UdgnnModel& model, const GraphOperators& ops, const NodeDataset& ds, const Mask& mask) {
  return accuracy(model.predict(ops, ds.features), ds.labels, mask);
}

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  std::vector<double> abs_alpha;
  std::vector<double> abs_beta;
  bool operator==(const EpochLog&) const = default;
};

struct TrainReport {
  ModelSpec model;
  TrainConfig config;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  double test_acc = 0.0;
  double wall_ms = 0.0;
  bool operator==(const TrainReport&) const = default;
};

inline nlohmann::ordered_json to_json(const TrainReport& r) {
  nlohmann::ordered_json j;
  j["model"] = to_json(r.model);
  j["config"] = to_json(r.config);
  j["weight_decay_mode"] = "coupled_l2";
  j["model_selection"] = "best_val_acc_first_on_ties";
  j["best_epoch"] = r.best_epoch;
  j["best_val_acc"] = r.best_val_acc;
  j["test_acc"] = r.test_acc;
  j["epochs_run"] = r.epochs.size();
  j["wall_ms"] = r.wall_ms;
  auto ep = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs) {
    nlohmann::ordered_json x;
    x["epoch"] = e.epoch;
    x["train_loss"] = e.train_loss;
    x["val_acc"] = e.val_acc;
    x["abs_alpha"] = e.abs_alpha;
    x["abs_beta"] = e.abs_beta;
    ep.push_back(std::move(x));
  }
  j["epochs"] = std::move(ep);
  return j;
}

inline TrainReport train_report_from_json(const nlohmann::json& j) {
  TrainReport r;
  r.model = model_spec_from_json(j.at("model"));
  r.config = train_config_from_json(j.at("config"));
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.best_val_acc = j.at("best_val_acc").get<double>();
  r.test_acc = j.at("test_acc").get<double>();
  r.wall_ms = j.at("wall_ms").get<double>();
  for (const auto& x : j.at("epochs")) {
    EpochLog e;
    e.epoch = x.at("epoch").get<std::size_t>();
    e.train_loss = x.at("train_loss").get<double>();
    e.val_acc = x.at("val_acc").get<double>();
    e.abs_alpha = x.at("abs_alpha").get<std::vector<double>>();
    e.abs_beta = x.at("abs_beta").get<std::vector<double>>();
    r.epochs.push_back(std::move(e));
  }
  return r;
}

/// Per-epoch metrics as CSV (epoch,train_loss,val_acc).
inline std::string metrics_csv(const TrainReport& r) {
  std::string s = "epoch,train_loss,val_acc\n";
  for (const auto& e : r.epochs) s += csv_line({std::to_string(e.epoch), fmt17(e.train_loss), fmt17(e.val_acc)});
  return s;
}

/// Called with epoch 0 before the first update and with epoch k after the
/// k-th update.
using EpochObserver = std::function<void(std::size_t epoch, UdgnnModel& model)>;

inline std::vector<double> gate_magnitudes(const UdgnnModel& m, bool beta) {
  std::vector<double> v;
  for (std::size_t l = 0; l < m.depth(); ++l) {
    const Parameter* p = beta ? m.beta(l) : m.alpha(l);
    if (p) v.push_back(std::abs(p->value[0]));
  }
  return v;
}

/// Masked cross-entropy of the current parameters, eval mode, with gradients
/// left in Parameter::grad. Returns the loss.
inline double loss_and_gradients(UdgnnModel& model, const GraphOperators& ops, const NodeDataset& ds,
                                 ForwardResult* out = nullptr, Tape* tape = nullptr) {
  Tape local;
  Tape& t = tape ? *tape : local;
  model.zero_grad();
  ForwardResult fr = model.forward(t, ops, ds.features);
  const Var loss = t.softmax_cross_entropy(fr.logits, ds.labels, ds.train_mask);
  t.backward(loss);
  if (out) *out = fr;
  return t.value(loss).item();
}

/// Trains in place and leaves the best-validation snapshot loaded.
inline TrainReport train(UdgnnModel& model, const GraphOperators& ops, const NodeDataset& ds, const TrainConfig& cfg,
                         const EpochObserver& observer = {}) {
  validate(cfg);
  if (!mask_count(ds.train_mask) || !mask_count(ds.val_mask) || !mask_count(ds.test_mask))
    throw std::invalid_argument("train: train, val and test masks must be nonempty");
  const auto t0 = std::chrono::steady_clock::now();

  TrainReport rep;
  rep.model = model.spec();
  rep.config = cfg;
  Rng dropout_rng = Rng(cfg.seed).split(0xd40f);
  ForwardOptions fo{true, cfg.dropout_rate, &dropout_rng};

  if (observer) observer(0, model);
  std::vector<Tensor> best = model.snapshot();
  double best_val = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    {
      Tape t;
      model.zero_grad();
      try {
        ForwardResult fr = model.forward(t, ops, ds.features, fo);
        const Var loss = t.softmax_cross_entropy(fr.logits, ds.labels, ds.train_mask);
        log.train_loss = t.value(loss).item();
        t.backward(loss);
      } catch (const std::runtime_error& e) {
        throw TrainingError("training aborted at epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    adam_step(model.parameters(), cfg.learning_rate, cfg.weight_decay);
    log.val_acc = evaluate(model, ops, ds, ds.val_mask);
    log.abs_alpha = gate_magnitudes(model, false);
    log.abs_beta = gate_magnitudes(model, true);
    if (log.val_acc > best_val) {
      best_val = log.val_acc;
      rep.best_epoch = epoch;
      best = model.snapshot();
      since_best = 0;
    } else {
      ++since_best;
    }
    rep.epochs.push_back(std::move(log));
    if (observer) observer(epoch, model);
    if (since_best >= cfg.patience) break;
  }
  model.restore(best);
  rep.best_val_acc = cfg.max_epochs == 0 ? evaluate(model, ops, ds, ds.val_mask) : best_val;
  rep.test_acc = evaluate(model, ops, ds, ds.test_mask);
  if (cfg.record_timing)
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Depth sweeps

struct SweepVariant {
  std::string name;
  ModelSpec spec;  // depth is overwritten per cell
};

/// Named skip variants: none, residual, initial, jk, drive, drive_ffn.
inline SweepVariant make_variant(const std::string& name, ConvKind conv, const ModelSpec& base = {}) {
  ModelSpec s = base;
  s.conv_kind = conv;
  s.with_ffn = false;
  if (name == "none") s.skip_kind = SkipKind::NoSkip;
  else if (name == "residual") s.skip_kind = SkipKind::Residual;
  else if (name == "initial") s.skip_kind = SkipKind::Initial;
  else if (name == "jk") s.skip_kind = SkipKind::JK;
  else if (name == "drive") s.skip_kind = SkipKind::Drive;
  else if (name == "drive_ffn") {
    s.skip_kind = SkipKind::Drive;
    s.with_ffn = true;
  } else
    throw std::invalid_argument("unknown variant '" + name + "' (valid: none, residual, initial, jk, drive, drive_ffn)");
  return {name, s};
}

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"none", "residual", "initial", "jk", "drive", "drive_ffn"};
  return names;
}

struct SweepCell {
  std::string variant;
  std::string conv;
  std::size_t depth = 0;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  std::size_t best_epoch = 0;
  double wall_ms = 0.0;
};

inline std::uint64_t sweep_seed(std::uint64_t base, const std::string& variant, std::size_t depth, std::size_t repeat) {
  return mix_seed({base, fnv1a(variant), depth, repeat});
}

/// Worker count from UDGNN_THREADS, else the machine's core count.
inline unsigned sweep_threads() {
  if (const char* env = std::getenv("UDGNN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Trains every (variant, depth, repeat) cell. Output order is variant-major,
/// then depth, then repeat, independent of thread scheduling.
inline std::vector<SweepCell> depth_sweep(const GraphOperators& ops, const NodeDataset& ds,
                                          const std::vector<SweepVariant>& variants,
                                          const std::vector<std::size_t>& depths, std::size_t repeats,
                                          const TrainConfig& base, unsigned threads = 1) {
  if (depths.empty()) throw std::invalid_argument("depth_sweep: depths must be nonempty");
  std::vector<SweepCell> cells;
  std::vector<const SweepVariant*> cell_variant;
  for (const auto& v : variants)
    for (std::size_t d : depths)
      for (std::size_t r = 0; r < repeats; ++r) {
        SweepCell c;
        c.variant = v.name;
        c.conv = std::string(to_string(v.spec.conv_kind));
        c.depth = d;
        c.repeat = r;
        c.seed = sweep_seed(base.seed, v.name, d, r);
        cells.push_back(c);
        cell_variant.push_back(&v);
      }

  auto run = [&](std::size_t i) {
    SweepCell& c = cells[i];
    ModelSpec spec = cell_variant[i]->spec;
    spec.depth = c.depth;
    TrainConfig cfg = base;
    cfg.seed = c.seed;
    UdgnnModel model(spec, ds.features.cols(), static_cast<std::size_t>(ds.n_classes), c.seed);
    const TrainReport rep = train(model, ops, ds, cfg);
    c.val_acc = rep.best_val_acc;
    c.test_acc = rep.test_acc;
    c.best_epoch = rep.best_epoch;
    c.wall_ms = rep.wall_ms;
  };

  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(cells.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run(i);
    return cells;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) run(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = cells.size();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return cells;
}

inline constexpr const char* kSweepCsvHeader = "variant,conv,depth,repeat,seed,val_acc,test_acc,best_epoch,wall_ms";

inline std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::string s = std::string(kSweepCsvHeader) + "\n";
  for (const auto& c : cells)
    s += csv_line({c.variant, c.conv, std::to_string(c.depth), std::to_string(c.repeat), std::to_string(c.seed),
                   fmt17(c.val_acc), fmt17(c.test_acc), std::to_string(c.best_epoch), fmt17(c.wall_ms)});
  return s;
}

}  // namespace udgnn
