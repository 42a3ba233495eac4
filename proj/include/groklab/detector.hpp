#pragma once

#include <optional>
#include <string>
#include <vector>

#include "groklab/metrics.hpp"

namespace groklab {

// Thresholds are relative to the baseline captured at baseline_step. ILDR flags
// above baseline, weight norm and grokfast flag below it. All crossings are
// strict inequalities.
struct DetectorConfig {
  int baseline_step = 3000;
  int log_every = 100;
  double ildr_threshold = 2.5;
  double weightnorm_threshold = 0.75;
  double grokfast_threshold = 0.50;
  double grok_acc = 0.95;

  void validate() const;
};

enum class DetectorMetric { ildr, weight_norm, grokfast };

std::string to_string(DetectorMetric m);

struct DetectorState {
  std::optional<double> base_ildr, base_weight_norm, base_grokfast;
  std::optional<int> flag_ildr, flag_weight_norm, flag_grokfast;
  std::optional<int> grok_step;
  int last_step = -1;

  std::optional<int> flag(DetectorMetric m) const;
};

// Consumes checkpoint snapshots in increasing step order. Baselines come from
// the snapshot at exactly baseline_step; crossings are evaluated only on later
// snapshots, and each flag fires at most once.
class Detector {
 public:
  explicit Detector(DetectorConfig config);

  // Returns the metrics newly flagged by this snapshot.
  std::vector<DetectorMetric> update(const MetricSnapshot& snapshot);

  const DetectorState& state() const { return state_; }
  const DetectorConfig& config() const { return config_; }

 private:
  DetectorConfig config_;
  DetectorState state_;
};

// grok_step - flag_step; positive means the metric led. Absent when either
// side is missing, which is distinct from a lead of 0.
std::optional<int> lead_time(const DetectorState& state, DetectorMetric metric);

}  // namespace groklab
