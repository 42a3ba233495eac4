#include "groklab/detector.hpp"

#include <stdexcept>

namespace groklab {

void DetectorConfig::validate() const {
  if (log_every <= 0) throw std::invalid_argument("DetectorConfig: log_every must be positive");
  if (baseline_step < 0 || baseline_step % log_every != 0) {
    throw std::invalid_argument("DetectorConfig: baseline_step must be a multiple of log_every");
  }
  if (ildr_threshold <= 0.0 || weightnorm_threshold <= 0.0 || grokfast_threshold <= 0.0) {
    throw std::invalid_argument("DetectorConfig: thresholds must be positive");
  }
  if (grok_acc <= 0.0 || grok_acc >= 1.0) {
    throw std::invalid_argument("DetectorConfig: grok_acc must lie in (0, 1)");
  }
}

std::string to_string(DetectorMetric m) {
  switch (m) {
    case DetectorMetric::ildr: return "ildr";
    case DetectorMetric::weight_norm: return "weight_norm";
    case DetectorMetric::grokfast: return "grokfast";
  }
  return "?";
}

std::optional<int> DetectorState::flag(DetectorMetric m) const {
  switch (m) {
    case DetectorMetric::ildr: return flag_ildr;
    case DetectorMetric::weight_norm: return flag_weight_norm;
    case DetectorMetric::grokfast: return flag_grokfast;
  }
  return std::nullopt;
}

Detector::Detector(DetectorConfig config) : config_(config) { config_.validate(); }

std::vector<DetectorMetric> Detector::update(const MetricSnapshot& snapshot) {
  if (snapshot.step <= state_.last_step) {
    throw std::invalid_argument("Detector::update: snapshots must arrive in increasing step order");
  }
  state_.last_step = snapshot.step;

  if (!state_.grok_step && snapshot.val_acc > config_.grok_acc) {
    state_.grok_step = snapshot.step;
  }

  if (snapshot.step == config_.baseline_step) {
    state_.base_ildr = snapshot.ildr;
    state_.base_weight_norm = snapshot.weight_norm;
    state_.base_grokfast = snapshot.grokfast_norm;
    return {};
  }

  std::vector<DetectorMetric> raised;
  if (snapshot.step > config_.baseline_step) {
    if (state_.base_ildr && !state_.flag_ildr &&
        snapshot.ildr > config_.ildr_threshold * *state_.base_ildr) {
      state_.flag_ildr = snapshot.step;
      raised.push_back(DetectorMetric::ildr);
    }
    if (state_.base_weight_norm && !state_.flag_weight_norm &&
        snapshot.weight_norm < config_.weightnorm_threshold * *state_.base_weight_norm) {
      state_.flag_weight_norm = snapshot.step;
      raised.push_back(DetectorMetric::weight_norm);
    }
    if (state_.base_grokfast && !state_.flag_grokfast &&
        snapshot.grokfast_norm < config_.grokfast_threshold * *state_.base_grokfast) {
      state_.flag_grokfast = snapshot.step;
      raised.push_back(DetectorMetric::grokfast);
    }
  }
  return raised;
}

std::optional<int> lead_time(const DetectorState& state, DetectorMetric metric) {
  const auto flag = state.flag(metric);
  if (!state.grok_step || !flag) return std::nullopt;
  return *state.grok_step - *flag;
}

}  // namespace groklab
