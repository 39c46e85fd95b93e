#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlith/core/binary_io.hpp"
#include "fedlith/core/error.hpp"

namespace fedlith::harness {

namespace fs = std::filesystem;

/// One completed run as seen by `compare`.
struct RunCurve {
  std::string label;
  std::string benchmark;
  std::vector<int> rounds;
  std::vector<std::string> acc;  // kept as text so values round-trip exactly
  std::string summary_row;       // data row of summary.csv, no newline
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

inline RunCurve load_run_curve(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw IoError("not a run directory (no manifest.json): " + dir.string());
  const auto m = read_json(dir / "manifest.json");
  if (m.value("status", "") != "completed") throw IoError("run is not completed: " + dir.string());
  RunCurve r;
  r.label = m.value("label", dir.filename().string());
  r.benchmark = m.value("benchmark", "");
  std::stringstream curve(read_text(dir / "curve.csv"));
  std::string line;
  std::getline(curve, line);  // header
  while (std::getline(curve, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < 2) throw IoError("malformed curve.csv in " + dir.string());
    r.rounds.push_back(std::stoi(cells[0]));
    r.acc.push_back(cells[1]);
  }
  std::stringstream summary(read_text(dir / "summary.csv"));
  std::getline(summary, line);
  std::getline(summary, r.summary_row);
  return r;
}

struct Comparison {
  std::string table_csv;   // label + final metrics, one row per run
  std::string curves_csv;  // round,<label1>,<label2>,...
  std::string curves_dat;  // same data, whitespace separated, '#' header
  std::vector<std::string> warnings;
};

/// Merges runs over the same benchmark. Curves are cut to the shortest run.
inline Comparison compare_runs(const std::vector<RunCurve>& runs) {
  if (runs.empty()) throw ConfigError("compare: at least one run directory is required");
  for (const auto& r : runs)
    if (r.benchmark != runs.front().benchmark)
      throw ConfigError("compare: benchmark mismatch ('" + runs.front().benchmark + "' vs '" + r.benchmark + "')");

  // labels must be unique column names
  std::vector<std::string> labels;
  std::map<std::string, int> seen;
  for (const auto& r : runs) {
    const int n = seen[r.label]++;
    labels.push_back(n == 0 ? r.label : r.label + "#" + std::to_string(n + 1));
  }

  Comparison c;
  std::size_t len = runs.front().rounds.size();
  for (const auto& r : runs) len = std::min(len, r.rounds.size());
  for (std::size_t i = 0; i < runs.size(); ++i)
    if (runs[i].rounds.size() != len)
      c.warnings.push_back("curve '" + labels[i] + "' truncated from " + std::to_string(runs[i].rounds.size()) +
                           " to " + std::to_string(len) + " rounds");

  c.table_csv = "label,algorithm,n_clients,mode,tpr,fpr,acc\n";
  for (std::size_t i = 0; i < runs.size(); ++i) c.table_csv += labels[i] + "," + runs[i].summary_row + "\n";

  c.curves_csv = "round";
  c.curves_dat = "# round";
  for (const auto& l : labels) {
    c.curves_csv += "," + l;
    c.curves_dat += " " + l;
  }
  c.curves_csv += "\n";
  c.curves_dat += "\n";
  for (std::size_t t = 0; t < len; ++t) {
    const auto round = std::to_string(runs.front().rounds[t]);
    c.curves_csv += round;
    c.curves_dat += round;
    for (const auto& r : runs) {
      c.curves_csv += "," + r.acc[t];
      c.curves_dat += " " + r.acc[t];
    }
    c.curves_csv += "\n";
    c.curves_dat += "\n";
  }
  return c;
}

/// Writes comparison.csv, curves.csv and curves.dat into `out`.
inline Comparison compare_directories(const std::vector<fs::path>& dirs, const fs::path& out) {
  std::vector<RunCurve> runs;
  for (const auto& d : dirs) runs.push_back(load_run_curve(d));
  auto c = compare_runs(runs);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  write_text(out / "comparison.csv", c.table_csv);
  write_text(out / "curves.csv", c.curves_csv);
  write_text(out / "curves.dat", c.curves_dat);
  return c;
}

}  // namespace fedlith::harness
