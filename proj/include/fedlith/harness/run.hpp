#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlith/core/binary_io.hpp"
#include "fedlith/core/error.hpp"
#include "fedlith/core/rng.hpp"
#include "fedlith/core/version.hpp"
#include "fedlith/data/dataset.hpp"
#include "fedlith/data/dataset_io.hpp"
#include "fedlith/fed/objective.hpp"
#include "fedlith/fed/simulation.hpp"
#include "fedlith/harness/config.hpp"
#include "fedlith/metrics/metrics.hpp"
#include "fedlith/select/group_lasso.hpp"

namespace fedlith::harness {

namespace fs = std::filesystem;

/// Features, labels and the client partition of both splits.
struct PreparedData {
  data::Dataset train;
  data::Dataset test;
  std::string benchmark;
  std::vector<int> channel_mask;  // empty when all channels are used
  data::PartitionResult train_part;
  data::PartitionResult test_part;
};

/// Generates (or loads) the benchmark, applies the channel mask, and splits
/// both splits across clients with the same skew. Centralized runs use one
/// client holding everything.
inline PreparedData prepare_data(const ExperimentConfig& c) {
  PreparedData p;
  if (!c.dataset_dir.empty()) {
    auto loaded = data::load_dataset(c.dataset_dir);
    if (loaded.config.grid != c.dataset.grid || loaded.config.channels != c.dataset.channels)
      throw ConfigError("dataset_dir: stored grid/channels differ from the config's dataset section");
    p.train = std::move(loaded.train);
    p.test = std::move(loaded.test);
    p.benchmark = loaded.benchmark;
  } else {
    p.train = data::featurize(data::generate_clips(c.dataset, data::Split::Train), c.dataset.grid, c.dataset.channels);
    p.test = data::featurize(data::generate_clips(c.dataset, data::Split::Test), c.dataset.grid, c.dataset.channels);
    p.benchmark = data::benchmark_id(c.dataset);
  }
  if (!c.feature_mask.empty()) {
    const auto mask = select::mask_from_json(read_json(c.feature_mask));
    p.channel_mask = mask.selected;
    p.train = data::restrict_channels(p.train, mask.selected);
    p.test = data::restrict_channels(p.test, mask.selected);
  }
  const int n = c.algorithm == fed::AlgorithmKind::Centralized ? 1 : c.n_clients;
  p.train_part = data::partition_noniid(p.train.families, c.dataset.families, n, c.skew,
                                        RngStream(c.dataset.seed, "partition", {0}));
  p.test_part = data::partition_noniid(p.test.families, c.dataset.families, n, c.skew,
                                       RngStream(c.dataset.seed, "partition", {1}));
  return p;
}

/// Model after the channel mask.
inline nn::ModelSpec effective_model(const ExperimentConfig& c, const PreparedData& d) {
  auto m = resolve_model(c);
  if (!d.channel_mask.empty()) m = nn::with_input_channels(std::move(m), static_cast<int>(d.channel_mask.size()));
  return m;
}

struct RunResult {
  std::vector<fed::RoundLog> history;
  std::vector<double> initial_weights;
  std::vector<std::vector<double>> final_client_weights;
  std::size_t num_params = 0;
  int n_clients = 0;
  std::string error;  // set when a fatal error stopped the run early
  int error_code = 0;
};

/// Runs one experiment in memory. `on_round` sees each RoundLog as it is
/// produced. A fatal error stops the run; the partial history is kept in
/// the result and the error rethrown when `rethrow`.
inline RunResult run_experiment(const ExperimentConfig& c, const PreparedData& d,
                                const std::function<void(const fed::RoundLog&)>& on_round = {}, bool rethrow = true) {
  validate(c);
  const nn::ModelLayout model(effective_model(c, d));
  const int n = static_cast<int>(d.train_part.shards.size());
  std::vector<fed::NeuralObjective> objs;
  for (const auto& s : d.train_part.shards) objs.emplace_back(model, d.train, s.indices, c.l2, c.lambda_gl);

  fed::SimulationOptions o;
  o.algorithm = c.algorithm;
  o.plan = c.plan;
  o.latency = c.latency;
  o.seed = c.seed;
  o.diagnostics = c.diagnostics;
  o.probe_batches = c.probe_batches;
  o.threads = c.threads;

  RunResult r;
  r.initial_weights = model.init_params(RngStream(c.seed, "init"));
  r.num_params = model.num_params();
  r.n_clients = n;
  const auto& test_shards = d.test_part.shards;
  fed::Evaluator eval = [&](int k, std::span<const double> w) -> std::optional<metrics::ConfusionCounts> {
    return fed::evaluate(model, w, d.test, test_shards[static_cast<std::size_t>(k)].indices);
  };
  fed::Simulation<fed::NeuralObjective> sim(o, std::move(objs), r.initial_weights, eval);
  try {
    for (int t = 0; t < c.rounds; ++t) {
      r.history.push_back(sim.run_round());
      if (on_round) on_round(r.history.back());
    }
  } catch (const Error& e) {
    r.error = e.what();
    r.error_code = e.exit_code();
    for (int k = 0; k < n; ++k) r.final_client_weights.push_back(sim.client_params(k));
    if (rethrow) throw;
    return r;
  }
  for (int k = 0; k < n; ++k) r.final_client_weights.push_back(sim.client_params(k));
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const fed::UpdateTrace& t) {
  json j{{"steps", t.steps}, {"max_grad_norm", t.max_grad_norm}};
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  j["local_loss"] = {{"first", opt(t.local_first_loss)}, {"last", opt(t.local_last_loss)}};
  j["global_loss"] = {{"first", opt(t.global_first_loss)}, {"last", opt(t.global_last_loss)}};
  return j;
}

inline json to_json(const fed::RoundLog& r) {
  json clients = json::array();
  for (const auto& c : r.clients) {
    json cj{{"client", c.client},     {"n_k", c.n_k},       {"computed", c.computed}, {"responded", c.responded},
            {"aggregated", c.aggregated}, {"latency", c.latency}, {"trace", to_json(c.trace)}};
    if (c.test) cj["test"] = metrics::to_json(*c.test);
    if (!c.error.empty()) cj["error"] = c.error;
    clients.push_back(std::move(cj));
  }
  json j{{"round", r.round},
         {"algorithm", fed::to_string(r.algorithm)},
         {"clients", clients},
         {"bounds_status", r.bounds_status}};
  if (r.aggregation) {
    j["mode"] = fed::to_string(r.mode);
    j["participants"] = r.participants;
    j["aggregated"] = r.aggregated;
    j["aborted"] = r.aborted;
    if (r.aborted) j["abort_reason"] = r.abort_reason;
  }
  if (r.pooled) j["test"] = metrics::to_json(*r.pooled);
  if (r.mean_train_loss) j["mean_train_loss"] = *r.mean_train_loss;
  if (r.bounds) {
    const auto& b = *r.bounds;
    json bj{{"consensus_bound_safe", b.consensus_bound_safe},
            {"consensus_bound_tight", b.consensus_bound_tight},
            {"mean_grad_sq", b.stats.mean_grad_sq},
            {"mean_loss", b.stats.mean_loss},
            {"constants", diag::to_json(b.constants)},
            {"stationarity",
             {{"lhs_running", b.stationarity.lhs_running},
              {"optimization_term", b.stationarity.optimization_term},
              {"step_term_modulo_constant", b.stationarity.step_term},
              {"drift_term", b.stationarity.drift_term},
              {"rhs", b.stationarity.rhs},
              {"violation", b.stationarity.violation}}},
            {"f_star_is_estimate", true}};
    if (b.has_consensus) {
      bj["consensus_per_k"] = b.consensus_per_k;
      bj["consensus_max"] = b.consensus_max;
      bj["consensus_violation"] = b.consensus_violation;
    }
    j["bounds"] = std::move(bj);
  }
  return j;
}

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metric_or_nan(double (*f)(const metrics::ConfusionCounts&), const metrics::ConfusionCounts& c) {
  try {
    return fmt_double(f(c));
  } catch (const UndefinedMetricError&) {
    return "nan";
  }
}

inline std::string history_jsonl(const std::vector<fed::RoundLog>& h) {
  std::string out;
  for (const auto& r : h) out += to_json(r).dump() + "\n";
  return out;
}

inline std::string curve_csv(const std::vector<fed::RoundLog>& h) {
  std::string out = "round,acc,tpr,fpr,train_loss\n";
  for (const auto& r : h) {
    out += std::to_string(r.round) + ",";
    if (r.pooled)
      out += metric_or_nan(metrics::accuracy, *r.pooled) + "," + metric_or_nan(metrics::tpr, *r.pooled) + "," +
             metric_or_nan(metrics::fpr, *r.pooled);
    else
      out += "nan,nan,nan";
    out += "," + (r.mean_train_loss ? fmt_double(*r.mean_train_loss) : std::string("nan")) + "\n";
  }
  return out;
}

inline std::string bounds_csv(const std::vector<fed::RoundLog>& h) {
  std::string out = "round,consensus_max,consensus_bound_safe,consensus_bound_tight,stat_lhs,stat_rhs,violation\n";
  for (const auto& r : h) {
    if (!r.bounds) continue;
    const auto& b = *r.bounds;
    const bool violation = b.consensus_violation || b.stationarity.violation;
    out += std::to_string(r.round) + "," + (b.has_consensus ? fmt_double(b.consensus_max) : std::string("nan")) + "," +
           fmt_double(b.consensus_bound_safe) + "," + fmt_double(b.consensus_bound_tight) + "," +
           fmt_double(b.stationarity.lhs_running) + "," + fmt_double(b.stationarity.rhs) + "," + (violation ? "1" : "0") + "\n";
  }
  return out;
}

inline const char* kSummaryHeader = "algorithm,n_clients,mode,tpr,fpr,acc\n";

inline std::string summary_row(const ExperimentConfig& c, const RunResult& r) {
  const std::string mode = c.algorithm == fed::AlgorithmKind::Centralized ? "none" : fed::to_string(c.plan.mode);
  std::string row = std::string(fed::to_string(c.algorithm)) + "," + std::to_string(r.n_clients) + "," + mode + ",";
  if (!r.history.empty() && r.history.back().pooled) {
    const auto& p = *r.history.back().pooled;
    row += metric_or_nan(metrics::tpr, p) + "," + metric_or_nan(metrics::fpr, p) + "," + metric_or_nan(metrics::accuracy, p);
  } else {
    row += "nan,nan,nan";
  }
  return row + "\n";
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Run directories

/// Writes a run directory: manifest.json (written first, finalized last),
/// history.jsonl, curve.csv, summary.csv, bounds.csv and the initial/final
/// weights. A fatal error still persists the partial history before it is
/// rethrown.
inline RunResult run_to_directory(const ExperimentConfig& c, const fs::path& dir,
                                  const std::function<void(const fed::RoundLog&)>& on_round = {}) {
  validate(c);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());

  const std::vector<std::string> files{"history.jsonl",          "curve.csv",
                                       "summary.csv",            "bounds.csv",
                                       "weights_initial.f64",    "weights_initial.f64.json",
                                       "weights_final.f64",      "weights_final.f64.json"};
  json manifest{{"format", "fedlith-run/1"},
                {"code_version", kVersion},
                {"kind", "train"},
                {"seed", c.seed},
                {"config", to_json(c)},
                {"files", files},
                {"status", "running"},
                {"runtime", {{"threads", c.threads}, {"started_at", utc_now()}}}};
  write_json(dir / "manifest.json", manifest);

  const PreparedData d = prepare_data(c);
  manifest["benchmark"] = d.benchmark;
  manifest["warnings"] = d.train_part.warnings;
  for (const auto& w : d.train_part.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  RunResult r = run_experiment(c, d, on_round, false);

  write_text(dir / "history.jsonl", history_jsonl(r.history));
  write_text(dir / "curve.csv", curve_csv(r.history));
  write_text(dir / "summary.csv", std::string(kSummaryHeader) + summary_row(c, r));
  write_text(dir / "bounds.csv", bounds_csv(r.history));
  write_f64_array(dir / "weights_initial.f64", r.initial_weights, {r.num_params});
  std::vector<double> flat;
  for (const auto& w : r.final_client_weights) flat.insert(flat.end(), w.begin(), w.end());
  write_f64_array(dir / "weights_final.f64", flat, {r.final_client_weights.size(), r.num_params});

  manifest["label"] = std::string(fed::to_string(c.algorithm)) + "-" +
                      (c.algorithm == fed::AlgorithmKind::Centralized ? "none" : fed::to_string(c.plan.mode)) + "-n" +
                      std::to_string(r.n_clients);
  manifest["n_clients"] = r.n_clients;
  manifest["rounds_completed"] = r.history.size();
  manifest["bounds_status"] = r.history.empty() ? "" : r.history.back().bounds_status;
  manifest["status"] = r.error.empty() ? "completed" : "failed";
  if (!r.error.empty()) manifest["error"] = r.error;
  manifest["runtime"]["finished_at"] = utc_now();
  write_json(dir / "manifest.json", manifest);

  if (!r.error.empty()) {
    if (r.error_code == 3) throw NumericError(r.error);
    if (r.error_code == 2) throw ConfigError(r.error);
    if (r.error_code == 4) throw IoError(r.error);
    throw ProtocolError(r.error);
  }
  return r;
}

/// Grid run: one sub-directory per (algorithm, n_clients) and a combined
/// summary.csv, algorithms outer, client counts inner.
inline void run_grid(const ExperimentConfig& c, const fs::path& dir) {
  validate(c);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  const auto algs = c.grid_algorithms.empty() ? std::vector<fed::AlgorithmKind>{c.algorithm} : c.grid_algorithms;
  const auto clients = c.grid_clients.empty() ? std::vector<int>{c.n_clients} : c.grid_clients;
  json runs = json::array();
  for (auto a : algs)
    for (int n : clients) runs.push_back(std::string(fed::to_string(a)) + "-n" + std::to_string(n));
  json manifest{{"format", "fedlith-grid/1"},
                {"code_version", kVersion},
                {"kind", "grid"},
                {"seed", c.seed},
                {"config", to_json(c)},
                {"runs", runs},
                {"files", {"summary.csv"}},
                {"status", "running"},
                {"runtime", {{"threads", c.threads}, {"started_at", utc_now()}}}};
  write_json(dir / "manifest.json", manifest);
  std::string summary = kSummaryHeader;
  for (auto a : algs)
    for (int n : clients) {
      ExperimentConfig sub = c;
      sub.grid_algorithms.clear();
      sub.grid_clients.clear();
      sub.algorithm = a;
      sub.n_clients = n;
      if (sub.plan.mode == fed::Mode::Async && sub.plan.k_responders > n) sub.plan.k_responders = std::max(1, n / 2);
      const auto r = run_to_directory(sub, dir / (std::string(fed::to_string(a)) + "-n" + std::to_string(n)));
      summary += summary_row(sub, r);
    }
  write_text(dir / "summary.csv", summary);
  manifest["status"] = "completed";
  manifest["runtime"]["finished_at"] = utc_now();
  write_json(dir / "manifest.json", manifest);
}

}  // namespace fedlith::harness
