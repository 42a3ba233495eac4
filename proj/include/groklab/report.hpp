#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "groklab/harness.hpp"

namespace groklab {

// Floats are written at 6 significant digits; emit(parse(emit(x))) == emit(x).
std::string format_g6(double v);

// Run CSV, one row per checkpoint. Column order:
// step,train_acc,val_acc,ildr,inter,intra,weight_norm,grokfast_norm,
// spectral_entropy,lr,wd,flag_ildr_step,flag_wn_step,flag_gf_step,grok_step
// The flag columns carry the detector state as of that row, empty until raised.
std::string run_csv_text(const RunLog& log);
void write_run_csv(const RunLog& log, const std::string& path);

struct ParsedRun {
  std::vector<MetricSnapshot> snapshots;
  std::optional<int> flag_ildr, flag_weight_norm, flag_grokfast, grok_step;
};

ParsedRun parse_run_csv_text(const std::string& text);
ParsedRun parse_run_csv(const std::string& path);

// Sidecar with everything the CSV cannot hold: seed, config key, intervention
// and early-stop events, timings. Flat key=value lines.
std::string run_meta_text(const RunLog& log, const std::string& config_key);
void write_run_meta(const RunLog& log, const std::string& config_key, const std::string& path);
std::map<std::string, std::string> parse_kv_file(const std::string& path);

// Per-seed detection summary used by the report tables.
struct RunSummary {
  std::uint64_t seed = 0;
  std::optional<int> grok, flag_ildr, flag_weight_norm, flag_grokfast;
  bool diverged = false;
};

RunSummary summarize(const RunLog& log);

struct LeadAggregate {
  double mean = 0.0;
  double sd = 0.0;  // population
  int n = 0;
};

LeadAggregate aggregate_leads(std::span<const RunSummary> rows,
                              std::optional<int> RunSummary::* flag_field);

// Markdown table of per-seed rows (grok, flags, leads with percent of the grok
// step) plus mean +- std footers. Absent values render as "---"; diverged runs
// are excluded from aggregates and counted.
std::string leads_markdown(std::span<const RunSummary> rows);

std::string early_stop_markdown(const EarlyStopSummary& summary);
std::string bench_markdown(const BenchResult& bench);

}  // namespace groklab
