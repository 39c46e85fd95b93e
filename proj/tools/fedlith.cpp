// fedlith command-line entry point.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedlith/core/binary_io.hpp"
#include "fedlith/core/error.hpp"
#include "fedlith/core/version.hpp"
#include "fedlith/data/dataset.hpp"
#include "fedlith/data/dataset_io.hpp"
#include "fedlith/harness/compare.hpp"
#include "fedlith/harness/config.hpp"
#include "fedlith/harness/run.hpp"
#include "fedlith/select/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fedlith;

namespace {

/// Config-key flags shared by gen-data, train and select-features. Each set
/// flag overwrites the key of the same (snake_case) name in the config JSON.
struct ConfigFlags {
  std::string config_file;
  std::string preset;
  std::optional<std::string> algorithm, mode, selection, optimizer, model, dataset_dir, feature_mask;
  std::optional<int> n_clients, k_responders, rounds, e_local, e_global, batch, threads, probe_batches;
  std::optional<double> eta, skew, mu_prox, l2, lambda_gl, latency_mu, latency_sigma, latency_timeout;
  std::optional<std::uint64_t> seed;
  std::optional<int> families, grid, channels, clip_size;
  std::optional<int> train_hotspots, train_non_hotspots, test_hotspots, test_non_hotspots;
  std::optional<std::uint64_t> dataset_seed;
  std::optional<bool> diagnostics;
  std::vector<std::string> grid_algorithms;
  std::vector<int> grid_clients;

  void add(CLI::App* app) {
    app->add_option("-c,--config", config_file, "JSON config file");
    app->add_option("--preset", preset, "desk | paper-scale");
    app->add_option("--algorithm", algorithm, "hfl-la | fedavg | fedprox | local | centralized");
    app->add_option("--mode", mode, "sync | async");
    app->add_option("--selection", selection, "first_k | random_k");
    app->add_option("--optimizer", optimizer, "sgd | adam");
    app->add_option("--model", model, "model preset name");
    app->add_option("--dataset-dir", dataset_dir, "load the dataset instead of generating it");
    app->add_option("--feature-mask", feature_mask, "mask JSON from select-features");
    app->add_option("--n-clients", n_clients);
    app->add_option("--k-responders", k_responders);
    app->add_option("--rounds", rounds);
    app->add_option("--e-local", e_local);
    app->add_option("--e-global", e_global);
    app->add_option("--batch", batch);
    app->add_option("--threads", threads);
    app->add_option("--probe-batches", probe_batches);
    app->add_option("--eta", eta);
    app->add_option("--skew", skew);
    app->add_option("--mu-prox", mu_prox);
    app->add_option("--l2", l2);
    app->add_option("--lambda-gl", lambda_gl);
    app->add_option("--latency-mu", latency_mu);
    app->add_option("--latency-sigma", latency_sigma);
    app->add_option("--latency-timeout", latency_timeout);
    app->add_option("--seed", seed, "overrides FEDLITH_SEED and the config file");
    app->add_option("--families", families);
    app->add_option("--grid", grid);
    app->add_option("--channels", channels);
    app->add_option("--clip-size", clip_size);
    app->add_option("--train-hotspots", train_hotspots);
    app->add_option("--train-non-hotspots", train_non_hotspots);
    app->add_option("--test-hotspots", test_hotspots);
    app->add_option("--test-non-hotspots", test_non_hotspots);
    app->add_option("--dataset-seed", dataset_seed);
    app->add_option("--diagnostics", diagnostics, "true | false");
    app->add_option("--grid-algorithms", grid_algorithms, "run every algorithm x client count");
    app->add_option("--grid-clients", grid_clients);
  }

  template <class T>
  static void put(json& j, const char* key, const std::optional<T>& v) {
    if (v) j[key] = *v;
  }

  harness::ExperimentConfig resolve() const {
    json j = config_file.empty() ? json::object() : read_json(config_file);
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    if (!preset.empty()) j["preset"] = preset;
    put(j, "algorithm", algorithm);
    put(j, "mode", mode);
    put(j, "selection", selection);
    put(j, "optimizer", optimizer);
    put(j, "model", model);
    put(j, "dataset_dir", dataset_dir);
    put(j, "feature_mask", feature_mask);
    put(j, "n_clients", n_clients);
    put(j, "k_responders", k_responders);
    put(j, "rounds", rounds);
    put(j, "e_local", e_local);
    put(j, "e_global", e_global);
    put(j, "batch", batch);
    put(j, "threads", threads);
    put(j, "probe_batches", probe_batches);
    put(j, "eta", eta);
    put(j, "skew", skew);
    put(j, "mu_prox", mu_prox);
    put(j, "l2", l2);
    put(j, "lambda_gl", lambda_gl);
    put(j, "diagnostics", diagnostics);
    if (latency_mu || latency_sigma || latency_timeout) {
      json& l = j["latency"];
      if (l.is_null()) l = json::object();
      put(l, "mu", latency_mu);
      put(l, "sigma", latency_sigma);
      put(l, "timeout", latency_timeout);
    }
    if (families || grid || channels || clip_size || train_hotspots || train_non_hotspots || test_hotspots ||
        test_non_hotspots || dataset_seed) {
      json& d = j["dataset"];
      if (d.is_null()) d = json::object();
      put(d, "families", families);
      put(d, "grid", grid);
      put(d, "channels", channels);
      put(d, "clip_size", clip_size);
      put(d, "train_hotspots", train_hotspots);
      put(d, "train_non_hotspots", train_non_hotspots);
      put(d, "test_hotspots", test_hotspots);
      put(d, "test_non_hotspots", test_non_hotspots);
      put(d, "seed", dataset_seed);
    }
    if (!grid_algorithms.empty() || !grid_clients.empty()) {
      json& g = j["grid"];
      if (g.is_null()) g = json::object();
      if (!grid_algorithms.empty()) g["algorithms"] = grid_algorithms;
      if (!grid_clients.empty()) g["n_clients"] = grid_clients;
    }
    auto c = harness::config_from_json(j);
    harness::apply_env_overrides(c);
    if (seed) c.seed = *seed;
    harness::validate(c);
    return c;
  }
};

int cmd_gen_data(const ConfigFlags& f, const std::string& out) {
  const auto c = f.resolve();
  const auto manifest = data::write_dataset(out, c.dataset);
  const auto& tr = manifest.at("splits").at("train");
  const auto& te = manifest.at("splits").at("test");
  std::printf("benchmark %s\n", manifest.at("benchmark").get<std::string>().c_str());
  std::printf("train: %d clips (%d hotspot, %d non-hotspot)\n", tr.at("n").get<int>(), tr.at("hotspots").get<int>(),
              tr.at("non_hotspots").get<int>());
  std::printf("test:  %d clips (%d hotspot, %d non-hotspot)\n", te.at("n").get<int>(), te.at("hotspots").get<int>(),
              te.at("non_hotspots").get<int>());
  // dry-run the partition the train command would use, to surface warnings early
  std::vector<int> fams;
  const auto clips = data::generate_clips(c.dataset, data::Split::Train);
  for (const auto& cl : clips) fams.push_back(cl.family);
  const auto part = data::partition_noniid(fams, c.dataset.families, c.n_clients, c.skew,
                                           RngStream(c.dataset.seed, "partition", {0}));
  for (const auto& w : part.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

int cmd_train(const ConfigFlags& f, const std::string& out) {
  const auto c = f.resolve();
  auto progress = [&](const fed::RoundLog& r) {
    std::string acc = "n/a";
    if (r.pooled) acc = harness::metric_or_nan(metrics::accuracy, *r.pooled);
    std::fprintf(stderr, "round %d acc %s%s\n", r.round, acc.c_str(), r.aborted ? " (aborted)" : "");
  };
  if (!c.grid_algorithms.empty() || !c.grid_clients.empty()) {
    harness::run_grid(c, out);
    std::cout << read_text(fs::path(out) / "summary.csv");
    return 0;
  }
  const auto r = harness::run_to_directory(c, out, progress);
  std::cout << harness::kSummaryHeader << harness::summary_row(c, r);
  return 0;
}

int cmd_compare(const std::vector<std::string>& runs, const std::string& out) {
  std::vector<fs::path> dirs(runs.begin(), runs.end());
  const auto c = harness::compare_directories(dirs, out);
  for (const auto& w : c.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::cout << c.table_csv;
  return 0;
}

int cmd_select(const ConfigFlags& f, const std::string& out, std::optional<int> k, std::optional<std::string> sel_mode,
               std::optional<int> steps) {
  auto c = f.resolve();
  c.feature_mask.clear();
  const auto d = harness::prepare_data(c);
  select::SelectionConfig s;
  if (sel_mode) s.mode = select::parse_selection_mode(*sel_mode);
  if (c.lambda_gl > 0) s.lambda_gl = c.lambda_gl;
  if (k) s.k = *k;
  s.seed = c.seed;
  s.n_clients = c.n_clients;
  s.rounds = c.rounds;
  s.skew = c.skew;
  if (steps) s.selection.steps = s.retrain.steps = *steps;
  const auto rep = select::run_selection_pipeline(harness::resolve_model(c), d.train, d.test, s);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  write_json(fs::path(out) / "mask.json", select::to_json(rep.mask, rep.norms));
  write_json(fs::path(out) / "selection_report.json", select::to_json(rep));
  std::printf("selected %zu of %d channels:", rep.mask.k(), rep.channels);
  for (int ch : rep.mask.selected) std::printf(" %d", ch);
  std::printf("\n");
  return 0;
}

/// Summarizes bound checks recorded in a run's history.
int cmd_diagnose(const std::string& run, const std::string& out) {
  const fs::path dir(run);
  const auto manifest = read_json(dir / "manifest.json");
  std::stringstream hist(read_text(dir / "history.jsonl"));
  std::string line;
  int rounds = 0, checked = 0, consensus_violations = 0, stationarity_violations = 0;
  double worst_ratio = 0.0;
  json last_constants;
  std::string status;
  while (std::getline(hist, line)) {
    if (line.empty()) continue;
    const auto r = json::parse(line);
    ++rounds;
    status = r.value("bounds_status", "");
    if (!r.contains("bounds")) continue;
    ++checked;
    const auto& b = r.at("bounds");
    last_constants = b.at("constants");
    if (b.contains("consensus_max")) {
      const double bound = b.at("consensus_bound_safe").get<double>();
      if (bound > 0) worst_ratio = std::max(worst_ratio, b.at("consensus_max").get<double>() / bound);
      consensus_violations += b.at("consensus_violation").get<bool>();
    }
    stationarity_violations += b.at("stationarity").at("violation").get<bool>();
  }
  json report{{"run", manifest.value("label", run)},
              {"rounds", rounds},
              {"rounds_checked", checked},
              {"bounds_status", status},
              {"consensus_violations", consensus_violations},
              {"worst_consensus_ratio", worst_ratio},
              {"stationarity_violations", stationarity_violations},
              {"constants", last_constants.is_null() ? json(nullptr) : last_constants}};
  if (!out.empty()) write_json(out, report);
  std::cout << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated hotspot detection with local adaptation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  ConfigFlags gen_flags, train_flags, select_flags;
  std::string gen_out, train_out, cmp_out, sel_out, diag_run, diag_out;
  std::vector<std::string> cmp_runs;
  std::optional<int> sel_k, sel_steps;
  std::optional<std::string> sel_mode;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
  gen_flags.add(gen);
  gen->add_option("-o,--out", gen_out, "dataset directory")->required();

  auto* train = app.add_subcommand("train", "run one experiment (or a grid) into a run directory");
  train_flags.add(train);
  train->add_option("-o,--out", train_out, "run directory")->required();

  auto* cmp = app.add_subcommand("compare", "merge completed runs into a table and curve data");
  cmp->add_option("runs", cmp_runs, "run directories")->required();
  cmp->add_option("-o,--out", cmp_out, "output directory")->required();

  auto* sel = app.add_subcommand("select-features", "group-lasso channel selection");
  select_flags.add(sel);
  sel->add_option("-o,--out", sel_out, "output directory")->required();
  sel->add_option("--k", sel_k, "channels to keep (default: knee rule)");
  sel->add_option("--selection-mode", sel_mode, "centralized | federated");
  sel->add_option("--steps", sel_steps, "training steps per model");

  auto* diag = app.add_subcommand("diagnose", "summarize bound checks of a run");
  diag->add_option("run", diag_run, "run directory")->required();
  diag->add_option("-o,--out", diag_out, "write the report here as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(gen_flags, gen_out);
    if (*train) return cmd_train(train_flags, train_out);
    if (*cmp) return cmd_compare(cmp_runs, cmp_out);
    if (*sel) return cmd_select(select_flags, sel_out, sel_k, sel_mode, sel_steps);
    if (*diag) return cmd_diagnose(diag_run, diag_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}
