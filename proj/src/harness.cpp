#include "groklab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace groklab {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

struct SeriesStats {
  double mean = 0.0, var = 0.0, sd = 0.0;
};

SeriesStats series_stats(std::span<const double> xs) {
  SeriesStats s;
  const auto n = static_cast<double>(xs.size());
  for (double x : xs) s.mean += x;
  s.mean /= n;
  for (double x : xs) s.var += (x - s.mean) * (x - s.mean);
  s.var /= n;
  s.sd = std::sqrt(s.var);
  return s;
}

bool stop_rule_met(const StopRule& rule, const DetectorState& st, int step) {
  int latest = -1;
  if (rule.need_grok) {
    if (!st.grok_step) return false;
    latest = std::max(latest, *st.grok_step);
  }
  if (rule.need_ildr_flag) {
    if (!st.flag_ildr) return false;
    latest = std::max(latest, *st.flag_ildr);
  }
  if (rule.need_weightnorm_flag) {
    if (!st.flag_weight_norm) return false;
    latest = std::max(latest, *st.flag_weight_norm);
  }
  if (latest < 0) return false;
  return step >= latest + rule.margin;
}

}  // namespace

InterventionPolicy InterventionPolicy::make(Mode mode) {
  InterventionPolicy p;
  p.mode = mode;
  switch (mode) {
    case Mode::accelerate_lr: p.lr_scale = 5.0; p.wd_scale = 1.0; break;
    case Mode::accelerate_wd: p.lr_scale = 1.0; p.wd_scale = 3.0; break;
    case Mode::accelerate_both: p.lr_scale = 5.0; p.wd_scale = 3.0; break;
    case Mode::suppress_lr: p.lr_scale = 0.1; p.wd_scale = 1.0; break;
    case Mode::suppress_wd: p.lr_scale = 1.0; p.wd_scale = 0.1; break;
  }
  return p;
}

InterventionPolicy InterventionPolicy::from_string(const std::string& mode_name) {
  if (mode_name == "accelerate_lr") return make(Mode::accelerate_lr);
  if (mode_name == "accelerate_wd") return make(Mode::accelerate_wd);
  if (mode_name == "accelerate_both") return make(Mode::accelerate_both);
  if (mode_name == "suppress_lr") return make(Mode::suppress_lr);
  if (mode_name == "suppress_wd") return make(Mode::suppress_wd);
  throw std::invalid_argument("unknown intervention mode: " + mode_name);
}

std::string InterventionPolicy::mode_name() const {
  switch (mode) {
    case Mode::accelerate_lr: return "accelerate_lr";
    case Mode::accelerate_wd: return "accelerate_wd";
    case Mode::accelerate_both: return "accelerate_both";
    case Mode::suppress_lr: return "suppress_lr";
    case Mode::suppress_wd: return "suppress_wd";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  task.validate();
  if (log_every <= 0) throw std::invalid_argument("log_every must be positive");
  if (total_steps < 0 || total_steps % log_every != 0) {
    throw std::invalid_argument("total_steps must be a non-negative multiple of log_every");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (subsample_max < 1) throw std::invalid_argument("subsample_max must be >= 1");
  detector.validate();
  if (detector.log_every != log_every) {
    throw std::invalid_argument("detector.log_every must match the run log_every");
  }
  if (intervention && intervention->revert_after % log_every != 0) {
    throw std::invalid_argument("intervention revert_after must be a multiple of log_every");
  }
  if (early_stop && early_stop->grace % log_every != 0) {
    throw std::invalid_argument("early-stop grace must be a multiple of log_every");
  }
}

RunLog run_training(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();

  TaskSpec task = config.task;
  task.split_seed = stream_seed(seed, Stream::split);
  const Dataset data = generate_dataset(task);

  ModelConfig mc = config.model;
  mc.vocab_size = data.vocab_size;
  mc.n_classes = data.n_classes;
  mc.init_seed = stream_seed(seed, Stream::init);
  ModelParams params = init_params(mc);
  const auto named = params.named();
  const auto tensors = params.tensors();

  AdamW opt(named);
  GrokfastEma grokfast(tensors);
  Detector detector(config.detector);
  RandomStream batch_rng(stream_seed(seed, Stream::batches));
  const auto phi_rows = subsample(data.test_idx, config.subsample_max,
                                  stream_seed(seed, Stream::metrics));

  RunLog log;
  log.seed = seed;
  double gf_norm = 0.0;
  double step_ms_total = 0.0, eval_ms_total = 0.0;
  int evals = 0;
  const auto run_start = Clock::now();

  for (int step = 1; step <= config.total_steps; ++step) {
    const auto t0 = Clock::now();
    Batch batch = sample_batch(data, data.train_idx, config.batch_size, batch_rng);
    Tape tape;
    const auto fwd = forward(&tape, params, batch.tokens);
    const auto loss = ops::cross_entropy(&tape, fwd.logits, batch.labels);
    if (!std::isfinite(loss->data[0])) {
      log.diverged = true;
      log.steps_run = step;
      break;
    }
    for (const auto& t : tensors) t->zero_grad();
    tape.backward(loss);
    gf_norm = grokfast.update();
    opt.step();
    log.steps_run = step;
    step_ms_total += ms_between(t0, Clock::now());

    if (step % config.log_every != 0) continue;

    const auto e0 = Clock::now();
    const SplitEval test_eval = evaluate_collect_phi(params, data, data.test_idx, phi_rows);
    const double train_acc = evaluate(params, data, data.train_idx);
    EmbeddingBatch embeddings{test_eval.phi, test_eval.phi_labels, mc.d_model};
    const IldrResult geometry = ildr(embeddings);

    MetricSnapshot snap;
    snap.step = step;
    snap.train_acc = train_acc;
    snap.val_acc = test_eval.accuracy;
    snap.ildr = geometry.ildr;
    snap.inter = geometry.inter;
    snap.intra = geometry.intra;
    snap.weight_norm = weight_norm(tensors);
    snap.grokfast_norm = gf_norm;
    snap.spectral_entropy = spectral_entropy(params);
    snap.lr = opt.lr();
    snap.wd = opt.weight_decay();

    const auto raised = detector.update(snap);
    log.snapshots.push_back(snap);
    eval_ms_total += ms_between(e0, Clock::now());
    ++evals;
    if (config.on_checkpoint) config.on_checkpoint(seed, snap);

    const bool ildr_raised =
        std::find(raised.begin(), raised.end(), DetectorMetric::ildr) != raised.end();
    if (config.intervention && !log.intervention && ildr_raised) {
      InterventionEvent ev;
      ev.trigger_step = step;
      ev.lr_before = opt.lr();
      ev.wd_before = opt.weight_decay();
      ev.lr_after = ev.lr_before * config.intervention->lr_scale;
      ev.wd_after = ev.wd_before * config.intervention->wd_scale;
      opt.set_hyperparams(ev.lr_after, ev.wd_after);
      log.intervention = ev;
    } else if (log.intervention && !log.intervention->revert_step &&
               step == log.intervention->trigger_step + config.intervention->revert_after) {
      // the snapshot at this step still reports the intervened values
      opt.set_hyperparams(log.intervention->lr_before, log.intervention->wd_before);
      log.intervention->revert_step = step;
    }

    if (config.early_stop && detector.state().flag_ildr &&
        step == *detector.state().flag_ildr + config.early_stop->grace) {
      log.early_stop = EarlyStopInfo{step, snap.val_acc};
      break;
    }
    if (config.stop_rule && stop_rule_met(*config.stop_rule, detector.state(), step)) break;
  }

  if (!config.save_model_path.empty()) save_checkpoint(params, config.save_model_path);
  log.detector = detector.state();
  log.total_seconds = ms_between(run_start, Clock::now()) / 1000.0;
  log.mean_step_ms = log.steps_run > 0 ? step_ms_total / log.steps_run : 0.0;
  log.mean_eval_ms = evals > 0 ? eval_ms_total / evals : 0.0;
  return log;
}

RunLog run_intervention(const ExperimentConfig& config, const InterventionPolicy& policy,
                        std::uint64_t seed) {
  ExperimentConfig cfg = config;
  cfg.intervention = policy;
  return run_training(cfg, seed);
}

EarlyStopSummary early_stop_summary(std::span<const RunLog> full_runs, int grace) {
  EarlyStopSummary summary;
  double pct_total = 0.0;
  for (const auto& log : full_runs) {
    EarlyStopRow row;
    row.seed = log.seed;
    const auto& st = log.detector;
    row.grok_step = st.grok_step;
    row.flag_step = st.flag_ildr;
    row.wn_lead = lead_time(st, DetectorMetric::weight_norm);
    row.gf_lead = lead_time(st, DetectorMetric::grokfast);
    if (!st.flag_ildr) {
      row.excluded = true;
      row.exclusion_reason = "ILDR flag never fired";
    } else {
      const int stop = *st.flag_ildr + grace;
      row.stop_step = stop;
      for (const auto& snap : log.snapshots) {
        if (snap.step == stop) {
          row.val_at_grace = snap.val_acc;
          break;
        }
      }
      if (!st.grok_step) {
        row.excluded = true;
        row.exclusion_reason = "no grok step within budget";
      } else {
        row.saved_steps = *st.grok_step - stop;
        row.saved_pct = 100.0 * static_cast<double>(*row.saved_steps) /
                        static_cast<double>(*st.grok_step);
        pct_total += *row.saved_pct;
        ++summary.included;
      }
    }
    summary.rows.push_back(row);
  }
  summary.mean_saved_pct = summary.included > 0 ? pct_total / summary.included : 0.0;
  return summary;
}

EarlyStopSummary run_early_stopping(const ExperimentConfig& config,
                                    std::span<const std::uint64_t> seeds) {
  ExperimentConfig stopped_cfg = config;
  stopped_cfg.early_stop = EarlyStopConfig{};
  stopped_cfg.stop_rule.reset();
  ExperimentConfig full_cfg = config;
  full_cfg.early_stop.reset();

  std::vector<RunLog> fulls;
  std::vector<RunLog> stopped;
  for (const auto seed : seeds) {
    stopped.push_back(run_training(stopped_cfg, seed));
    fulls.push_back(run_training(full_cfg, seed));
  }
  auto summary = early_stop_summary(fulls, stopped_cfg.early_stop->grace);
  // val-at-grace comes from the actually stopped run; identical streams make it
  // equal to the full run's snapshot at the same step
  for (std::size_t i = 0; i < summary.rows.size(); ++i) {
    if (stopped[i].early_stop) summary.rows[i].val_at_grace = stopped[i].early_stop->val_at_grace;
  }
  return summary;
}

OscillationStats oscillation_stats(const RunLog& log, int grok_step) {
  std::vector<double> pre, post;
  for (const auto& snap : log.snapshots) {
    (snap.step < grok_step ? pre : post).push_back(snap.ildr);
  }
  if (pre.size() < 2 || post.size() < 2) {
    throw std::invalid_argument("oscillation_stats: need at least 2 snapshots on each side");
  }
  const auto sp = series_stats(pre);
  const auto sq = series_stats(post);
  OscillationStats out;
  out.cv_pre = sp.mean != 0.0 ? 100.0 * sp.sd / sp.mean : 0.0;
  out.cv_post = sq.mean != 0.0 ? 100.0 * sq.sd / sq.mean : 0.0;
  if (sq.var == 0.0) {
    out.variance_ratio = sp.var == 0.0 ? 1.0 : kVarianceRatioCap;
  } else {
    out.variance_ratio = std::min(sp.var / sq.var, kVarianceRatioCap);
  }
  return out;
}

BenchResult bench_overhead(const ExperimentConfig& config, std::span<const int> sample_sizes,
                           std::span<const int> log_frequencies, int reps, int warmup) {
  ExperimentConfig cfg = config;
  cfg.validate();
  TaskSpec task = cfg.task;
  task.split_seed = stream_seed(0, Stream::split);
  const Dataset data = generate_dataset(task);
  ModelConfig mc = cfg.model;
  mc.vocab_size = data.vocab_size;
  mc.n_classes = data.n_classes;
  mc.init_seed = stream_seed(0, Stream::init);
  ModelParams params = init_params(mc);
  const auto named = params.named();
  const auto tensors = params.tensors();
  AdamW opt(named);
  GrokfastEma grokfast(tensors);
  RandomStream batch_rng(stream_seed(0, Stream::batches));

  auto timed = [reps, warmup](auto&& fn) {
    for (int i = 0; i < warmup; ++i) fn();
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    return ms_between(t0, Clock::now()) / reps;
  };

  BenchResult result;
  result.step_ms = timed([&] {
    Batch batch = sample_batch(data, data.train_idx, cfg.batch_size, batch_rng);
    Tape tape;
    const auto fwd = forward(&tape, params, batch.tokens);
    const auto loss = ops::cross_entropy(&tape, fwd.logits, batch.labels);
    for (const auto& t : tensors) t->zero_grad();
    tape.backward(loss);
    grokfast.update();
    opt.step();
  });
  result.weight_norm_ms = timed([&] { weight_norm(tensors); });
  result.spectral_entropy_ms = timed([&] { spectral_entropy(params); });

  double ildr_ms_at_1000 = -1.0;
  for (const int n : sample_sizes) {
    const auto rows = subsample(data.test_idx, n, stream_seed(0, Stream::metrics));
    BenchResult::IldrTiming timing;
    timing.n = n;
    EmbeddingBatch embeddings;
    timing.phi_ms = timed([&] {
      const auto ev = evaluate_collect_phi(params, data, rows, rows);
      embeddings = EmbeddingBatch{ev.phi, ev.phi_labels, mc.d_model};
    });
    timing.ildr_ms = timed([&] { ildr(embeddings); });
    result.ildr.push_back(timing);
    if (n == 1000) ildr_ms_at_1000 = timing.ildr_ms;
  }
  if (ildr_ms_at_1000 >= 0.0) {
    for (const int f : log_frequencies) {
      result.overhead.push_back(
          {f, 100.0 * (ildr_ms_at_1000 / f) / result.step_ms});
    }
  }
  return result;
}

}  // namespace groklab
