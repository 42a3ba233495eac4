#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "groklab/dataset.hpp"
#include "groklab/detector.hpp"
#include "groklab/metrics.hpp"
#include "groklab/model.hpp"
#include "groklab/optim.hpp"

namespace groklab {

struct InterventionPolicy {
  enum class Mode { accelerate_lr, accelerate_wd, accelerate_both, suppress_lr, suppress_wd };

  Mode mode = Mode::accelerate_both;
  double lr_scale = 1.0;
  double wd_scale = 1.0;
  int revert_after = 500;

  // Canonical scales: accelerate is lr x5 / wd x3, suppress is x0.1.
  static InterventionPolicy make(Mode mode);
  static InterventionPolicy from_string(const std::string& mode_name);
  std::string mode_name() const;
};

struct EarlyStopConfig {
  int grace = 200;  // steps past the ILDR flag before stopping
};

// Optional halt rule for batch experiment drivers: end a run once the listed
// detector events have all been observed plus a margin. Default-off; a plain
// run always goes to total_steps (or the early stop).
struct StopRule {
  bool need_grok = false;
  bool need_ildr_flag = false;
  bool need_weightnorm_flag = false;
  int margin = 500;
};

struct ExperimentConfig {
  TaskSpec task;
  ModelConfig model;
  int total_steps = 20000;  // S5 runs default to 40000
  int log_every = 100;
  int batch_size = 512;
  int subsample_max = 1500;
  std::vector<std::uint64_t> seeds = {0};
  DetectorConfig detector;
  std::optional<InterventionPolicy> intervention;
  std::optional<EarlyStopConfig> early_stop;
  std::optional<StopRule> stop_rule;
  std::string out_dir;
  std::string save_model_path;  // final-parameter checkpoint, empty = skip
  std::function<void(std::uint64_t seed, const MetricSnapshot&)> on_checkpoint;  // progress hook

  void validate() const;
};

struct InterventionEvent {
  int trigger_step = 0;
  double lr_before = 0.0, lr_after = 0.0;
  double wd_before = 0.0, wd_after = 0.0;
  std::optional<int> revert_step;
};

struct EarlyStopInfo {
  int stop_step = 0;
  double val_at_grace = 0.0;
};

struct RunLog {
  std::uint64_t seed = 0;
  std::vector<MetricSnapshot> snapshots;
  DetectorState detector;
  std::optional<InterventionEvent> intervention;
  std::optional<EarlyStopInfo> early_stop;
  bool diverged = false;
  int steps_run = 0;
  double total_seconds = 0.0;
  double mean_step_ms = 0.0;
  double mean_eval_ms = 0.0;
};

// One training run: sample batch, forward, cross-entropy, backward, grokfast
// EMA, optimizer step; every log_every steps a full MetricSnapshot is computed
// and fed to the detector. Data split, init, batches, and the metric subsample
// each use an independent stream derived from the experiment seed.
RunLog run_training(const ExperimentConfig& config, std::uint64_t seed);

// Same run with the policy applied at the ILDR flag and reverted
// policy.revert_after steps later. Pair it with a plain run_training at the
// same seed: both share identical streams, so snapshots match bit-for-bit up
// to the trigger step.
RunLog run_intervention(const ExperimentConfig& config, const InterventionPolicy& policy,
                        std::uint64_t seed);

struct EarlyStopRow {
  std::uint64_t seed = 0;
  std::optional<int> grok_step;       // from the paired full run
  std::optional<int> flag_step;       // ILDR flag
  std::optional<int> stop_step;       // flag + grace
  std::optional<int> saved_steps;     // grok - stop
  std::optional<double> saved_pct;    // 100 * saved / grok
  std::optional<double> val_at_grace;
  std::optional<int> wn_lead, gf_lead;
  bool excluded = false;
  std::string exclusion_reason;
};

struct EarlyStopSummary {
  std::vector<EarlyStopRow> rows;
  double mean_saved_pct = 0.0;  // over non-excluded seeds
  int included = 0;
};

// Per seed: an early-stopped run (halts at ILDR flag + grace) and a paired
// full run for the grok step. Seeds whose flag never fires are excluded and
// reported as such.
EarlyStopSummary run_early_stopping(const ExperimentConfig& config,
                                    std::span<const std::uint64_t> seeds);

// Derives the same rows from already-computed full runs; valid because paired
// runs are stream-identical, so a stopped run is a prefix of its full run.
EarlyStopSummary early_stop_summary(std::span<const RunLog> full_runs, int grace);

struct OscillationStats {
  double cv_pre = 0.0;        // percent
  double cv_post = 0.0;       // percent
  double variance_ratio = 0.0;  // var_pre / var_post, capped when var_post is 0
};

inline constexpr double kVarianceRatioCap = 1e12;

// ILDR series statistics split at grok_step: pre = snapshots strictly before,
// post = at or after. Population moments.
OscillationStats oscillation_stats(const RunLog& log, int grok_step);

struct BenchResult {
  double step_ms = 0.0;
  double weight_norm_ms = 0.0;
  double spectral_entropy_ms = 0.0;
  struct IldrTiming {
    int n = 0;
    double ildr_ms = 0.0;  // metric on already-extracted embeddings
    double phi_ms = 0.0;   // forward pass that extracts the embeddings
  };
  std::vector<IldrTiming> ildr;
  struct OverheadRow {
    int log_every = 0;
    double overhead_pct = 0.0;  // (ildr_ms at n=1000 / log_every) / step_ms * 100
  };
  std::vector<OverheadRow> overhead;
};

// Wall-clock timings on the monotonic clock, `reps` repetitions after
// `warmup` discarded ones. Run this with nothing else executing.
BenchResult bench_overhead(const ExperimentConfig& config, std::span<const int> sample_sizes,
                           std::span<const int> log_frequencies, int reps = 40, int warmup = 5);

}  // namespace groklab
