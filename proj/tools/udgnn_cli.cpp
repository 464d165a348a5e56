// udgnn: generate datasets, train, sweep depths, verify the path
// decompositions, and plot sweep results.
//
// Exit codes: 0 success, 1 verification/tolerance failure, 2 usage or input
// error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "udgnn/dataset.hpp"
#include "udgnn/diagnostics.hpp"
#include "udgnn/format.hpp"
#include "udgnn/model.hpp"
#include "udgnn/svg.hpp"
#include "udgnn/trainer.hpp"
#include "udgnn/verify.hpp"

namespace fs = std::filesystem;
using namespace udgnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write '" + path.string() + "'");
  f << text;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory '" + dir + "'");
}

template <class T>
std::vector<T> split_list(const std::string& s, T (*conv)(const std::string&)) {
  std::vector<T> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ','))
    if (!cur.empty()) out.push_back(conv(cur));
  return out;
}

std::size_t to_size(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw UsageError("expected a non-negative integer, got '" + s + "'");
  }
}
std::string ident(const std::string& s) { return s; }

int cmd_gen(const std::string& spec_path, const std::string& out) {
  const SyntheticSpec spec = synthetic_spec_from_json(read_json(spec_path));
  const GeneratedData gd = generate(spec);
  save_dataset(gd.graph, gd.dataset, out);
  std::printf("nodes=%zu edges=%zu homophily=%s\n", gd.graph.n_nodes(), gd.graph.n_edges(),
              fmt17(edge_homophily(gd.graph, gd.dataset.labels)).c_str());
  return kExitOk;
}

int cmd_train(const std::string& data, const std::string& model_path, const std::string& train_path,
              const std::string& out, std::size_t log_every) {
  const GeneratedData gd = load_dataset(data);
  const ModelSpec spec = model_spec_from_json(read_json(model_path));
  const nlohmann::json tj = read_json(train_path);
  TrainConfig cfg = train_config_from_json(tj);
  if (!tj.contains("dropout_rate")) cfg.dropout_rate = spec.dropout_rate;
  ensure_dir(out);

  const GraphOperators ops = make_operators(gd.graph, spec.propagation_kind);
  UdgnnModel model(spec, gd.dataset.features.cols(), static_cast<std::size_t>(gd.dataset.n_classes), cfg.seed);
  const DiagnosticsRun run = record_training_diagnostics(model, ops, gd.dataset, cfg, log_every);

  write_file(fs::path(out) / "report.json", to_json(run.report).dump(2) + "\n");
  write_file(fs::path(out) / "metrics.csv", metrics_csv(run.report));
  write_file(fs::path(out) / "diagnostics.csv", diagnostics_csv(run.records));
  std::printf("test_acc=%s best_epoch=%zu epochs=%zu\n", fmt17(run.report.test_acc).c_str(), run.report.best_epoch,
              run.report.epochs.size());
  return kExitOk;
}

int cmd_sweep(const std::string& data, const std::string& variants, const std::string& depths, std::size_t repeats,
              const std::string& out, const std::string& conv, const std::string& model_path,
              const std::string& train_path) {
  const GeneratedData gd = load_dataset(data);
  ModelSpec base;
  if (!model_path.empty()) base = model_spec_from_json(read_json(model_path));
  TrainConfig cfg;
  if (!train_path.empty()) {
    const nlohmann::json tj = read_json(train_path);
    cfg = train_config_from_json(tj);
    if (!tj.contains("dropout_rate")) cfg.dropout_rate = base.dropout_rate;
  }
  const ConvKind ck = conv_kind_from_string(conv);
  std::vector<SweepVariant> vs;
  for (const auto& name : split_list<std::string>(variants, ident)) {
    try {
      vs.push_back(make_variant(name, ck, base));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (vs.empty()) throw UsageError("--variants is empty");
  const auto ds = split_list<std::size_t>(depths, to_size);
  if (ds.empty()) throw UsageError("--depths is empty");
  ensure_dir(out);
  const GraphOperators ops = make_operators(gd.graph, base.propagation_kind);
  const auto cells = depth_sweep(ops, gd.dataset, vs, ds, repeats, cfg, sweep_threads());
  write_file(fs::path(out) / "sweep.csv", sweep_csv(cells));
  std::printf("cells=%zu\n", cells.size());
  return kExitOk;
}

int cmd_verify(int theorem, std::size_t trials, std::uint64_t seed, bool corrupt) {
  if (theorem != 1 && theorem != 2) throw UsageError("--theorem must be 1 or 2");
  const VerifyResult r = theorem == 1 ? verify_forward_decomposition(trials, seed)
                                      : verify_backward_decomposition(trials, seed, 6, corrupt);
  const double tol = theorem == 1 ? kForwardTolerance : kBackwardTolerance;
  std::printf("theorem=%d instances=%zu max_%s=%s tolerance=%s worst_case=%s worst_seed=%llu\n", theorem, r.instances,
              theorem == 1 ? "abs_diff" : "rel_err", fmt17(r.max_deviation).c_str(), fmt17(tol).c_str(),
              r.worst_case.c_str(), static_cast<unsigned long long>(r.worst_seed));
  if (r.failures) {
    std::printf("FAIL: %zu instance(s) over tolerance; first offending seed=%llu case=%s\n", r.failures,
                static_cast<unsigned long long>(r.first_failing_seed), r.first_failing_case.c_str());
    return kExitVerifyFailed;
  }
  std::printf("PASS\n");
  return kExitOk;
}

int cmd_plot(const std::string& csv, const std::string& x, const std::string& y, const std::string& group,
             const std::string& out) {
  CsvTable t;
  std::vector<LineSeries> series;
  try {
    t = parse_csv(read_file(csv));
    series = series_from_csv(t, x, y, group);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  write_file(out, render_line_chart(series, x, y));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep GNN laboratory: DRIVE-gated graph networks and over-smoothing diagnostics"};
  app.require_subcommand(1);

  std::string spec_path, out, data, model_path, train_path, variants, depths, conv = "gcn", csv, x = "depth",
                                                                            y = "test_acc", group = "variant";
  std::size_t log_every = 1, repeats = 1, trials = 100;
  std::uint64_t seed = 0;
  int theorem = 1;
  bool corrupt = false;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset file");
  gen->add_option("--spec", spec_path, "SyntheticSpec JSON")->required();
  gen->add_option("--out", out, "dataset file to write")->required();

  auto* train = app.add_subcommand("train", "train one model and write report.json, metrics.csv, diagnostics.csv");
  train->add_option("--data", data, "dataset file")->required();
  train->add_option("--model", model_path, "ModelSpec JSON")->required();
  train->add_option("--train", train_path, "TrainConfig JSON")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--log-every", log_every, "diagnostics interval in epochs");

  auto* sweep = app.add_subcommand("sweep", "train every (variant, depth, repeat) cell and write sweep.csv");
  sweep->add_option("--data", data, "dataset file")->required();
  sweep->add_option("--variants", variants, "comma list: none,residual,initial,jk,drive,drive_ffn")->required();
  sweep->add_option("--depths", depths, "comma list of depths")->required();
  sweep->add_option("--repeats", repeats, "repeats per cell");
  sweep->add_option("--out", out, "output directory")->required();
  sweep->add_option("--conv", conv, "gcn, sgc, sage_mean or dense");
  sweep->add_option("--model", model_path, "ModelSpec JSON template (hidden_dim, propagation_kind, ...)");
  sweep->add_option("--train", train_path, "TrainConfig JSON");

  auto* verify = app.add_subcommand("verify", "check a path-decomposition oracle on random instances");
  verify->add_option("--theorem", theorem, "1 = forward decomposition, 2 = backward gradient decomposition")
      ->required();
  verify->add_option("--trials", trials, "random instances per (skip, conv, depth) cell");
  verify->add_option("--seed", seed, "base seed");
  verify->add_flag("--corrupt-gradient", corrupt, "test hook: perturb the analytic gradient")->group("");

  auto* plot = app.add_subcommand("plot", "render a CSV as an SVG line chart");
  plot->add_option("--csv", csv, "input CSV")->required();
  plot->add_option("--x", x, "x column");
  plot->add_option("--y", y, "y column");
  plot->add_option("--group", group, "column naming each line");
  plot->add_option("--out", out, "SVG file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(spec_path, out);
    if (*train) return cmd_train(data, model_path, train_path, out, log_every);
    if (*sweep) return cmd_sweep(data, variants, depths, repeats, out, conv, model_path, train_path);
    if (*verify) return cmd_verify(theorem, trials, seed, corrupt);
    if (*plot) return cmd_plot(csv, x, y, group, out);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const DatasetError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitVerifyFailed;
  }
  return kExitUsage;
}
