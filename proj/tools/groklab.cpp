// Command-line driver: train, intervene, early-stop, oscillate, bench, report.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "groklab/harness.hpp"
#include "groklab/report.hpp"

namespace fs = std::filesystem;
using namespace groklab;

namespace {

struct CommonFlags {
  std::string task = "mul";
  int p = 97;
  double frac = 0.3;
  std::vector<std::uint64_t> seeds = {0};
  int steps = -1;  // -1: 20000, or 40000 for s5
  int d_model = 128;
  int heads = 4;
  int layers = 1;
  int log_every = 100;
  std::string out;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--task", flags.task, "task: add, mul, div, s5")
      ->check(CLI::IsMember({"add", "mul", "div", "s5"}));
  cmd->add_option("--p", flags.p, "prime modulus for modular tasks");
  cmd->add_option("--frac", flags.frac, "training fraction in (0,1)");
  cmd->add_option("--seeds,--seed", flags.seeds, "experiment seeds")->delimiter(',');
  cmd->add_option("--steps", flags.steps, "total training steps");
  cmd->add_option("--d-model", flags.d_model, "model width");
  cmd->add_option("--heads", flags.heads, "attention heads");
  cmd->add_option("--layers", flags.layers, "encoder layers");
  cmd->add_option("--log-every", flags.log_every, "checkpoint interval in steps");
  cmd->add_option("--out", flags.out, "output directory for run CSVs");
  cmd->add_option("--threads", flags.threads, "compute threads inside matrix products");
  cmd->set_config("--config", "", "flat key=value config file; command line overrides it");
}

void progress_hook(std::uint64_t seed, const MetricSnapshot& s) {
  if (s.step % 1000 != 0) return;
  std::cerr << "[seed " << seed << "] step " << s.step << " train_acc " << format_g6(s.train_acc)
            << " val_acc " << format_g6(s.val_acc) << " ildr " << format_g6(s.ildr) << '\n';
}

ExperimentConfig build_config(const CommonFlags& flags) {
  ExperimentConfig cfg;
  cfg.on_checkpoint = progress_hook;
  cfg.task.operation = task_op_from_string(flags.task);
  cfg.task.modulus = flags.p;
  cfg.task.train_fraction = flags.frac;
  cfg.model.d_model = flags.d_model;
  cfg.model.n_heads = flags.heads;
  cfg.model.n_layers = flags.layers;
  cfg.total_steps = flags.steps >= 0 ? flags.steps
                    : (cfg.task.operation == TaskOp::s5 ? 40000 : 20000);
  cfg.log_every = flags.log_every;
  cfg.detector.log_every = flags.log_every;
  cfg.seeds = flags.seeds;
  cfg.out_dir = flags.out;
  set_compute_threads(flags.threads);
  return cfg;
}

std::string config_key(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& extra) {
  std::ostringstream out;
  out << "task=" << to_string(cfg.task.operation) << ";p=" << cfg.task.modulus
      << ";f=" << format_g6(cfg.task.train_fraction) << ";steps=" << cfg.total_steps
      << ";log=" << cfg.log_every << ";B=" << cfg.batch_size << ";d=" << cfg.model.d_model
      << ";h=" << cfg.model.n_heads << ";L=" << cfg.model.n_layers << ";seed=" << seed;
  if (!extra.empty()) out << ';' << extra;
  return out.str();
}

void save_run(const ExperimentConfig& cfg, const RunLog& log, const std::string& stem,
              const std::string& extra_key) {
  if (cfg.out_dir.empty()) return;
  fs::create_directories(cfg.out_dir);
  const auto base = fs::path(cfg.out_dir) / stem;
  write_run_csv(log, base.string() + ".csv");
  write_run_meta(log, config_key(cfg, log.seed, extra_key), base.string() + ".meta");
}

int cmd_train(const CommonFlags& flags, const std::string& dump_data,
              const std::string& save_model) {
  ExperimentConfig cfg = build_config(flags);
  if (!dump_data.empty()) {
    TaskSpec spec = cfg.task;
    spec.split_seed = stream_seed(cfg.seeds.front(), Stream::split);
    dump_dataset_csv(generate_dataset(spec), dump_data);
  }
  std::vector<RunSummary> rows;
  for (const auto seed : cfg.seeds) {
    ExperimentConfig run_cfg = cfg;
    if (!save_model.empty()) {
      run_cfg.save_model_path = save_model + ".seed" + std::to_string(seed) + ".ckpt";
    }
    const RunLog log = run_training(run_cfg, seed);
    save_run(cfg, log, "run_seed" + std::to_string(seed), "");
    rows.push_back(summarize(log));
    std::cout << "seed " << seed << ": steps=" << log.steps_run
              << (log.diverged ? " DIVERGED" : "")
              << " grok=" << (log.detector.grok_step ? std::to_string(*log.detector.grok_step) : "---")
              << " (" << format_g6(log.total_seconds) << "s)\n";
  }
  std::cout << '\n' << leads_markdown(rows);
  return 0;
}

int cmd_intervene(const CommonFlags& flags, const std::string& mode) {
  ExperimentConfig cfg = build_config(flags);
  const auto policy = InterventionPolicy::from_string(mode);
  std::cout << "| seed | baseline grok | intervened grok | trigger | revert | lr | wd |\n";
  std::cout << "|---:|---:|---:|---:|---:|:---|:---|\n";
  for (const auto seed : cfg.seeds) {
    ExperimentConfig base_cfg = cfg;
    base_cfg.intervention.reset();
    const RunLog base = run_training(base_cfg, seed);
    const RunLog run = run_intervention(cfg, policy, seed);
    save_run(base_cfg, base, "baseline_seed" + std::to_string(seed), "");
    save_run(cfg, run, "intervene_" + mode + "_seed" + std::to_string(seed), "policy=" + mode);
    auto cell = [](const std::optional<int>& v) { return v ? std::to_string(*v) : "---"; };
    std::cout << "| " << seed << " | " << cell(base.detector.grok_step) << " | "
              << cell(run.detector.grok_step) << " | ";
    if (run.intervention) {
      const auto& ev = *run.intervention;
      std::cout << ev.trigger_step << " | " << cell(ev.revert_step) << " | "
                << format_g6(ev.lr_before) << "->" << format_g6(ev.lr_after) << " | "
                << format_g6(ev.wd_before) << "->" << format_g6(ev.wd_after) << " |\n";
    } else {
      std::cout << "no trigger | --- | --- | --- |\n";
    }
  }
  return 0;
}

int cmd_early_stop(const CommonFlags& flags) {
  ExperimentConfig cfg = build_config(flags);
  const auto summary = run_early_stopping(cfg, cfg.seeds);
  std::cout << early_stop_markdown(summary);
  return 0;
}

int cmd_oscillate(const CommonFlags& flags) {
  CommonFlags f = flags;
  if (f.steps < 0) f.steps = 30000;
  ExperimentConfig cfg = build_config(f);
  const auto seed = cfg.seeds.front();
  const RunLog log = run_training(cfg, seed);
  save_run(cfg, log, "oscillation_seed" + std::to_string(seed), "");
  if (!log.detector.grok_step) {
    std::cout << "no grok step within " << cfg.total_steps << " steps; no statistics\n";
    return 1;
  }
  const auto stats = oscillation_stats(log, *log.detector.grok_step);
  std::cout << "grok step: " << *log.detector.grok_step << '\n'
            << "CV (pre-grok): " << format_g6(stats.cv_pre) << "%\n"
            << "CV (post-grok): " << format_g6(stats.cv_post) << "%\n"
            << "variance ratio (pre/post): " << format_g6(stats.variance_ratio) << "x\n";
  return 0;
}

int cmd_bench(const CommonFlags& flags, std::vector<int> sample_sizes,
              std::vector<int> log_frequencies, int reps) {
  ExperimentConfig cfg = build_config(flags);
  const auto bench = bench_overhead(cfg, sample_sizes, log_frequencies, reps);
  std::cout << bench_markdown(bench);
  return 0;
}

int cmd_report(const std::vector<std::string>& csv_paths) {
  std::vector<RunSummary> rows;
  for (const auto& path : csv_paths) {
    const auto run = parse_run_csv(path);
    RunSummary s;
    const auto meta_path = fs::path(path).replace_extension(".meta");
    if (fs::exists(meta_path)) {
      const auto kv = parse_kv_file(meta_path.string());
      if (auto it = kv.find("seed"); it != kv.end()) s.seed = std::stoull(it->second);
      if (auto it = kv.find("diverged"); it != kv.end()) s.diverged = it->second == "1";
    }
    s.grok = run.grok_step;
    s.flag_ildr = run.flag_ildr;
    s.flag_weight_norm = run.flag_weight_norm;
    s.flag_grokfast = run.flag_grokfast;
    rows.push_back(s);
  }
  std::cout << leads_markdown(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grokking dynamics laboratory: trains small transformers on algebraic "
               "tasks and tracks representation-geometry detection signals"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string dump_data, save_model, mode;
  std::vector<int> sample_sizes = {100, 250, 500, 750, 1000, 1500, 2000};
  std::vector<int> log_frequencies = {50, 100, 200, 500, 1000};
  int bench_reps = 40;
  std::vector<std::string> csv_paths;

  auto* train = app.add_subcommand("train", "training runs with detection logging");
  add_common(train, flags);
  train->add_option("--dump-data", dump_data, "write the dataset as a,b,label,split CSV");
  train->add_option("--save-model", save_model, "checkpoint path stem for final parameters");

  auto* intervene = app.add_subcommand("intervene", "ILDR-triggered optimizer intervention");
  add_common(intervene, flags);
  intervene->add_option("--mode", mode, "accelerate_lr, accelerate_wd, accelerate_both, "
                                        "suppress_lr, suppress_wd")->required();

  auto* early = app.add_subcommand("early-stop", "ILDR flag + 200-step grace early stopping");
  add_common(early, flags);

  auto* osc = app.add_subcommand("oscillate", "extended run with pre/post-grok ILDR statistics");
  add_common(osc, flags);

  auto* bench = app.add_subcommand("bench", "metric and training-step timing benchmark");
  add_common(bench, flags);
  bench->add_option("--sample-sizes", sample_sizes, "ILDR subsample sizes")->delimiter(',');
  bench->add_option("--log-frequencies", log_frequencies, "logging intervals")->delimiter(',');
  bench->add_option("--reps", bench_reps, "timed repetitions per measurement");

  auto* report = app.add_subcommand("report", "summarize run CSVs into a lead-time table");
  report->add_option("csvs", csv_paths, "run CSV files")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(flags, dump_data, save_model);
    if (intervene->parsed()) return cmd_intervene(flags, mode);
    if (early->parsed()) return cmd_early_stop(flags);
    if (osc->parsed()) return cmd_oscillate(flags);
    if (bench->parsed()) return cmd_bench(flags, sample_sizes, log_frequencies, bench_reps);
    if (report->parsed()) return cmd_report(csv_paths);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
