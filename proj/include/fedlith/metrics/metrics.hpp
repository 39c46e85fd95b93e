#pragma once

#include <cstdint>
#include <span>

#include <nlohmann/json.hpp>

#include "fedlith/core/error.hpp"

namespace fedlith::metrics {

/// Confusion counts with hotspot as the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t hotspots() const noexcept { return tp + fn; }
  std::uint64_t non_hotspots() const noexcept { return fp + tn; }
  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }

  void add(int truth, int predicted) {
    if (truth == 1) (predicted == 1 ? tp : fn)++;
    else (predicted == 1 ? fp : tn)++;
  }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Fraction of hotspots detected.
inline double tpr(const ConfusionCounts& c) {
  if (c.hotspots() == 0) throw UndefinedMetricError("TPR undefined: no hotspots in the evaluated set");
  return static_cast<double>(c.tp) / static_cast<double>(c.hotspots());
}

/// Fraction of non-hotspots flagged as hotspots (false alarms).
inline double fpr(const ConfusionCounts& c) {
  if (c.non_hotspots() == 0) throw UndefinedMetricError("FPR undefined: no non-hotspots in the evaluated set");
  return static_cast<double>(c.fp) / static_cast<double>(c.non_hotspots());
}

inline double accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) throw UndefinedMetricError("accuracy undefined: empty evaluation set");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

inline nlohmann::json to_json(const ConfusionCounts& c) {
  nlohmann::json j{{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
  if (c.hotspots() > 0) j["tpr"] = tpr(c);
  if (c.non_hotspots() > 0) j["fpr"] = fpr(c);
  if (c.total() > 0) j["acc"] = accuracy(c);
  return j;
}

inline ConfusionCounts counts_from_json(const nlohmann::json& j) {
  return {j.at("tp").get<std::uint64_t>(), j.at("fp").get<std::uint64_t>(), j.at("tn").get<std::uint64_t>(),
          j.at("fn").get<std::uint64_t>()};
}

}  // namespace fedlith::metrics
