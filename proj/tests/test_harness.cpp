#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "groklab/harness.hpp"
#include "groklab/report.hpp"

using namespace groklab;

namespace {

// small enough to train in milliseconds per step
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.task = TaskSpec{TaskOp::mul, 13, 0.5, 0};
  cfg.model.d_model = 16;
  cfg.model.n_heads = 2;
  cfg.model.n_layers = 1;
  cfg.total_steps = 600;
  cfg.log_every = 100;
  cfg.batch_size = 32;
  cfg.subsample_max = 64;
  cfg.detector = DetectorConfig{};
  cfg.detector.baseline_step = 300;
  return cfg;
}

bool snapshots_equal(const MetricSnapshot& a, const MetricSnapshot& b) {
  return a.step == b.step && a.train_acc == b.train_acc && a.val_acc == b.val_acc &&
         a.ildr == b.ildr && a.inter == b.inter && a.intra == b.intra &&
         a.weight_norm == b.weight_norm && a.grokfast_norm == b.grokfast_norm &&
         a.spectral_entropy == b.spectral_entropy && a.lr == b.lr && a.wd == b.wd;
}

}  // namespace

TEST_CASE("zero-step run produces an empty log") {
  auto cfg = tiny_config();
  cfg.total_steps = 0;
  const auto log = run_training(cfg, 1);
  CHECK(log.snapshots.empty());
  CHECK(log.steps_run == 0);
  CHECK_FALSE(log.detector.grok_step.has_value());
  CHECK_FALSE(log.diverged);
}

TEST_CASE("snapshot cadence and bookkeeping") {
  const auto cfg = tiny_config();
  const auto log = run_training(cfg, 1);
  REQUIRE(log.snapshots.size() == 6);
  for (std::size_t i = 0; i < log.snapshots.size(); ++i) {
    const auto& s = log.snapshots[i];
    CHECK(s.step == static_cast<int>((i + 1) * 100));
    CHECK(s.train_acc >= 0.0);
    CHECK(s.train_acc <= 1.0);
    CHECK(s.val_acc >= 0.0);
    CHECK(s.val_acc <= 1.0);
    CHECK(s.ildr >= 0.0);
    CHECK(s.inter >= 0.0);
    CHECK(s.intra >= 0.0);
    CHECK(s.weight_norm > 0.0);
    CHECK(s.lr == 1e-3);
    CHECK(s.wd == 1.0);
    CHECK(std::isfinite(s.spectral_entropy));
  }
  CHECK(log.steps_run == 600);
  CHECK(log.total_seconds > 0.0);
}

TEST_CASE("runs are deterministic per seed and differ across seeds") {
  const auto cfg = tiny_config();
  const auto a = run_training(cfg, 7);
  const auto b = run_training(cfg, 7);
  REQUIRE(a.snapshots.size() == b.snapshots.size());
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
    CHECK(snapshots_equal(a.snapshots[i], b.snapshots[i]));
  }
  const auto c = run_training(cfg, 8);
  CHECK_FALSE(snapshots_equal(a.snapshots.back(), c.snapshots.back()));
}

TEST_CASE("run CSV round-trips losslessly") {
  const auto cfg = tiny_config();
  auto log = run_training(cfg, 3);
  log.detector.flag_ildr = 400;  // exercise the flag columns
  log.detector.grok_step = 500;
  const auto text1 = run_csv_text(log);
  const auto parsed = parse_run_csv_text(text1);
  REQUIRE(parsed.snapshots.size() == log.snapshots.size());
  CHECK(parsed.flag_ildr == log.detector.flag_ildr);
  CHECK(parsed.grok_step == log.detector.grok_step);
  CHECK_FALSE(parsed.flag_weight_norm.has_value());

  RunLog round;
  round.snapshots = parsed.snapshots;
  round.detector.flag_ildr = parsed.flag_ildr;
  round.detector.flag_weight_norm = parsed.flag_weight_norm;
  round.detector.flag_grokfast = parsed.flag_grokfast;
  round.detector.grok_step = parsed.grok_step;
  const auto text2 = run_csv_text(round);
  CHECK(text1 == text2);

  const auto reparsed = parse_run_csv_text(text2);
  for (std::size_t i = 0; i < parsed.snapshots.size(); ++i) {
    CHECK(snapshots_equal(parsed.snapshots[i], reparsed.snapshots[i]));
  }
}

TEST_CASE("meta sidecar carries seed, events, and timings") {
  const auto cfg = tiny_config();
  auto log = run_training(cfg, 5);
  log.intervention = InterventionEvent{400, 1e-3, 5e-3, 1.0, 3.0, 600};
  log.early_stop = EarlyStopInfo{600, 0.25};
  const auto path = std::string("meta_test.meta");
  write_run_meta(log, "key=1", path);
  const auto kv = parse_kv_file(path);
  CHECK(kv.at("seed") == "5");
  CHECK(kv.at("config") == "key=1");
  CHECK(kv.at("trigger_step") == "400");
  CHECK(kv.at("revert_step") == "600");
  CHECK(kv.at("early_stop_step") == "600");
  CHECK(kv.at("diverged") == "0");
  std::remove(path.c_str());
}

TEST_CASE("paired runs agree bit-for-bit before the trigger and revert exactly") {
  auto cfg = tiny_config();
  cfg.total_steps = 800;
  // rigged threshold: any positive ILDR crosses right after the baseline
  cfg.detector.ildr_threshold = 1e-9;
  InterventionPolicy policy = InterventionPolicy::make(InterventionPolicy::Mode::accelerate_both);
  policy.revert_after = 200;

  const auto base = run_training(cfg, 11);
  const auto run = run_intervention(cfg, policy, 11);

  REQUIRE(run.intervention.has_value());
  const auto& ev = *run.intervention;
  CHECK(ev.trigger_step == 400);  // first checkpoint after baseline 300
  CHECK(ev.lr_before == 1e-3);
  CHECK(ev.lr_after == 5e-3);
  CHECK(ev.wd_before == 1.0);
  CHECK(ev.wd_after == 3.0);
  REQUIRE(ev.revert_step.has_value());
  CHECK(*ev.revert_step == 600);

  for (std::size_t i = 0; i < run.snapshots.size(); ++i) {
    const auto& s = run.snapshots[i];
    if (s.step <= ev.trigger_step) {
      CHECK(snapshots_equal(s, base.snapshots[i]));
    }
  }
  // snapshots during the intervention report the scaled values, then exact restore
  for (const auto& s : run.snapshots) {
    if (s.step > 400 && s.step <= 600) {
      CHECK(s.lr == 5e-3);
      CHECK(s.wd == 3.0);
    }
    if (s.step > 600) {
      CHECK(s.lr == 1e-3);
      CHECK(s.wd == 1.0);
    }
  }
  // divergence after the trigger is expected (different hyperparameters)
  bool diverged_after = false;
  for (std::size_t i = 0; i < run.snapshots.size(); ++i) {
    if (run.snapshots[i].step > 400 &&
        !snapshots_equal(run.snapshots[i], base.snapshots[i])) {
      diverged_after = true;
    }
  }
  CHECK(diverged_after);
}

TEST_CASE("intervention without a trigger completes unmodified") {
  auto cfg = tiny_config();
  cfg.detector.ildr_threshold = 1e12;  // unreachable
  const auto run =
      run_intervention(cfg, InterventionPolicy::make(InterventionPolicy::Mode::suppress_wd), 2);
  CHECK_FALSE(run.intervention.has_value());
  CHECK(run.steps_run == cfg.total_steps);
}

TEST_CASE("early stop halts at flag + grace and matches the full-run prefix") {
  auto cfg = tiny_config();
  cfg.total_steps = 800;
  cfg.detector.ildr_threshold = 1e-9;  // flag at 400
  auto stopped_cfg = cfg;
  stopped_cfg.early_stop = EarlyStopConfig{200};
  const auto stopped = run_training(stopped_cfg, 4);
  const auto full = run_training(cfg, 4);

  REQUIRE(stopped.early_stop.has_value());
  CHECK(stopped.early_stop->stop_step == 600);
  CHECK(stopped.steps_run == 600);
  CHECK(stopped.snapshots.size() == 6);
  for (std::size_t i = 0; i < stopped.snapshots.size(); ++i) {
    CHECK(snapshots_equal(stopped.snapshots[i], full.snapshots[i]));
  }
  CHECK(stopped.early_stop->val_at_grace == full.snapshots[5].val_acc);
  CHECK(stopped.steps_run <= cfg.total_steps);
}

TEST_CASE("early stop is skipped when the flag never fires") {
  auto cfg = tiny_config();
  cfg.detector.ildr_threshold = 1e12;
  cfg.early_stop = EarlyStopConfig{200};
  const auto log = run_training(cfg, 4);
  CHECK_FALSE(log.early_stop.has_value());
  CHECK(log.steps_run == cfg.total_steps);
}

TEST_CASE("run_early_stopping reports rows and exclusions") {
  auto cfg = tiny_config();
  cfg.total_steps = 800;
  cfg.detector.ildr_threshold = 1e-9;
  const std::vector<std::uint64_t> seeds = {4, 5};
  const auto summary = run_early_stopping(cfg, seeds);
  REQUIRE(summary.rows.size() == 2);
  for (const auto& row : summary.rows) {
    REQUIRE(row.flag_step.has_value());
    CHECK(*row.flag_step == 400);
    CHECK(*row.stop_step == 600);
    if (row.grok_step) {
      CHECK(*row.saved_steps == *row.grok_step - 600);
    } else {
      CHECK(row.excluded);
      CHECK(row.exclusion_reason == "no grok step within budget");
    }
    CHECK(row.val_at_grace.has_value());
  }
}

TEST_CASE("stop rule halts once required events plus margin are seen") {
  auto cfg = tiny_config();
  cfg.total_steps = 800;
  cfg.detector.ildr_threshold = 1e-9;  // flag at 400
  StopRule rule;
  rule.need_ildr_flag = true;
  rule.margin = 100;
  cfg.stop_rule = rule;
  const auto log = run_training(cfg, 4);
  CHECK(log.steps_run == 500);
  CHECK(*log.detector.flag_ildr == 400);
}

TEST_CASE("exploding hyperparameters mark the run as diverged") {
  auto cfg = tiny_config();
  cfg.total_steps = 800;
  cfg.detector.ildr_threshold = 1e-9;
  InterventionPolicy bomb;
  bomb.mode = InterventionPolicy::Mode::accelerate_lr;
  bomb.lr_scale = 1e14;
  bomb.wd_scale = 1.0;
  bomb.revert_after = 400;
  const auto log = run_intervention(cfg, bomb, 4);
  CHECK(log.diverged);
  CHECK(log.steps_run < cfg.total_steps);
}

TEST_CASE("oscillation statistics on synthetic series") {
  RunLog log;
  for (int i = 1; i <= 10; ++i) {
    MetricSnapshot s;
    s.step = i * 100;
    s.ildr = i <= 5 ? static_cast<double>(i) : 100.0;  // constant post series
    log.snapshots.push_back(s);
  }
  const auto stats = oscillation_stats(log, 600);
  CHECK(stats.cv_post == 0.0);
  CHECK(stats.variance_ratio == kVarianceRatioCap);
  CHECK(stats.cv_pre > 0.0);

  RunLog same;
  for (int i = 1; i <= 8; ++i) {
    MetricSnapshot s;
    s.step = i * 100;
    s.ildr = static_cast<double>(1 + (i - 1) % 4);  // identical pre and post blocks
    same.snapshots.push_back(s);
  }
  const auto ratio_one = oscillation_stats(same, 500);
  CHECK(ratio_one.variance_ratio == doctest::Approx(1.0).epsilon(1e-12));

  RunLog short_log;
  for (int i = 1; i <= 3; ++i) {
    MetricSnapshot s;
    s.step = i * 100;
    s.ildr = 1.0;
    short_log.snapshots.push_back(s);
  }
  CHECK_THROWS_AS(oscillation_stats(short_log, 300), std::invalid_argument);
}

TEST_CASE("bench overhead: sane timings, monotone amortized overhead") {
  auto cfg = tiny_config();
  const std::vector<int> sizes = {32, 64, 1000};
  const std::vector<int> freqs = {50, 100, 200, 500, 1000};
  const auto bench = bench_overhead(cfg, sizes, freqs, 3, 1);
  CHECK(bench.step_ms > 0.0);
  CHECK(bench.weight_norm_ms > 0.0);
  CHECK(bench.spectral_entropy_ms > 0.0);
  REQUIRE(bench.ildr.size() == 3);
  for (const auto& t : bench.ildr) {
    CHECK(t.ildr_ms > 0.0);
    CHECK(t.phi_ms > 0.0);
  }
  REQUIRE(bench.overhead.size() == freqs.size());
  for (std::size_t i = 1; i < bench.overhead.size(); ++i) {
    CHECK(bench.overhead[i].overhead_pct < bench.overhead[i - 1].overhead_pct);
  }
}

TEST_CASE("report markdown renders absent values and aggregates") {
  std::vector<RunSummary> rows(2);
  rows[0].seed = 0;
  rows[0].grok = 5300;
  rows[0].flag_ildr = 4800;
  rows[0].flag_weight_norm = 5500;
  rows[1].seed = 1;
  rows[1].grok = 5400;
  rows[1].flag_ildr = 4400;
  const auto text = leads_markdown(rows);
  CHECK(text.find("+500 (9%)") != std::string::npos);
  CHECK(text.find("-200") != std::string::npos);
  CHECK(text.find("+1000 (19%)") != std::string::npos);
  CHECK(text.find("---") != std::string::npos);
  // population std of {500, 1000} is 250
  CHECK(text.find("ILDR lead: 750 ± 250 (n=2)") != std::string::npos);
  CHECK(text.find("Weight-norm lead: -200 ± 0 (n=1)") != std::string::npos);

  std::vector<RunSummary> single(1);
  single[0].seed = 9;
  single[0].grok = 4000;
  single[0].flag_ildr = 3000;
  const auto one = leads_markdown(single);
  CHECK(one.find("1000 ± 0 (n=1)") != std::string::npos);
}

TEST_CASE("experiment config validation") {
  auto cfg = tiny_config();
  cfg.total_steps = 250;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.detector.log_every = 50;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.early_stop = EarlyStopConfig{150};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  InterventionPolicy p = InterventionPolicy::make(InterventionPolicy::Mode::suppress_lr);
  p.revert_after = 123;
  cfg.intervention = p;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
