#include "groklab/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace groklab {

namespace {

const char* kCsvHeader =
    "step,train_acc,val_acc,ildr,inter,intra,weight_norm,grokfast_norm,"
    "spectral_entropy,lr,wd,flag_ildr_step,flag_wn_step,flag_gf_step,grok_step";

std::string opt_cell(const std::optional<int>& v) {
  return v ? std::to_string(*v) : std::string();
}

std::string opt_dashes(const std::optional<int>& v) {
  return v ? std::to_string(*v) : std::string("---");
}

std::optional<int> parse_opt_int(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  return std::stoi(cell);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

// lead with percent of the grok step, e.g. "+500 (9%)"; negative leads carry
// no percent, matching how they read in summaries
std::string lead_cell(const std::optional<int>& grok, const std::optional<int>& flag) {
  if (!grok || !flag) return "---";
  const int lead = *grok - *flag;
  if (lead > 0) {
    const auto pct = std::llround(100.0 * lead / *grok);
    return "+" + std::to_string(lead) + " (" + std::to_string(pct) + "%)";
  }
  return std::to_string(lead);
}

}  // namespace

std::string format_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string run_csv_text(const RunLog& log) {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  const auto& st = log.detector;
  auto flag_at = [](const std::optional<int>& flag, int step) -> std::optional<int> {
    if (flag && *flag <= step) return flag;
    return std::nullopt;
  };
  for (const auto& s : log.snapshots) {
    out << s.step << ',' << format_g6(s.train_acc) << ',' << format_g6(s.val_acc) << ','
        << format_g6(s.ildr) << ',' << format_g6(s.inter) << ',' << format_g6(s.intra) << ','
        << format_g6(s.weight_norm) << ',' << format_g6(s.grokfast_norm) << ','
        << format_g6(s.spectral_entropy) << ',' << format_g6(s.lr) << ',' << format_g6(s.wd)
        << ',' << opt_cell(flag_at(st.flag_ildr, s.step)) << ','
        << opt_cell(flag_at(st.flag_weight_norm, s.step)) << ','
        << opt_cell(flag_at(st.flag_grokfast, s.step)) << ','
        << opt_cell(flag_at(st.grok_step, s.step)) << '\n';
  }
  return out.str();
}

void write_run_csv(const RunLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << run_csv_text(log);
}

ParsedRun parse_run_csv_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw std::runtime_error("run CSV: missing or unexpected header");
  }
  ParsedRun run;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 15) throw std::runtime_error("run CSV: expected 15 columns");
    MetricSnapshot s;
    s.step = std::stoi(cells[0]);
    s.train_acc = std::stod(cells[1]);
    s.val_acc = std::stod(cells[2]);
    s.ildr = std::stod(cells[3]);
    s.inter = std::stod(cells[4]);
    s.intra = std::stod(cells[5]);
    s.weight_norm = std::stod(cells[6]);
    s.grokfast_norm = std::stod(cells[7]);
    s.spectral_entropy = std::stod(cells[8]);
    s.lr = std::stod(cells[9]);
    s.wd = std::stod(cells[10]);
    run.snapshots.push_back(s);
    run.flag_ildr = parse_opt_int(cells[11]);
    run.flag_weight_norm = parse_opt_int(cells[12]);
    run.flag_grokfast = parse_opt_int(cells[13]);
    run.grok_step = parse_opt_int(cells[14]);
  }
  return run;
}

ParsedRun parse_run_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_csv_text(buf.str());
}

std::string run_meta_text(const RunLog& log, const std::string& config_key) {
  std::ostringstream out;
  out << "seed=" << log.seed << '\n';
  out << "config=" << config_key << '\n';
  out << "diverged=" << (log.diverged ? 1 : 0) << '\n';
  out << "steps_run=" << log.steps_run << '\n';
  auto opt_line = [&out](const char* key, const std::optional<int>& v) {
    if (v) out << key << '=' << *v << '\n';
  };
  opt_line("grok_step", log.detector.grok_step);
  opt_line("flag_ildr", log.detector.flag_ildr);
  opt_line("flag_weight_norm", log.detector.flag_weight_norm);
  opt_line("flag_grokfast", log.detector.flag_grokfast);
  if (log.intervention) {
    const auto& ev = *log.intervention;
    out << "trigger_step=" << ev.trigger_step << '\n';
    out << "lr_before=" << format_g6(ev.lr_before) << '\n';
    out << "lr_after=" << format_g6(ev.lr_after) << '\n';
    out << "wd_before=" << format_g6(ev.wd_before) << '\n';
    out << "wd_after=" << format_g6(ev.wd_after) << '\n';
    opt_line("revert_step", ev.revert_step);
  }
  if (log.early_stop) {
    out << "early_stop_step=" << log.early_stop->stop_step << '\n';
    out << "val_at_grace=" << format_g6(log.early_stop->val_at_grace) << '\n';
  }
  out << "total_seconds=" << format_g6(log.total_seconds) << '\n';
  out << "mean_step_ms=" << format_g6(log.mean_step_ms) << '\n';
  out << "mean_eval_ms=" << format_g6(log.mean_eval_ms) << '\n';
  return out.str();
}

void write_run_meta(const RunLog& log, const std::string& config_key, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << run_meta_text(log, config_key);
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad key=value line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

RunSummary summarize(const RunLog& log) {
  RunSummary s;
  s.seed = log.seed;
  s.grok = log.detector.grok_step;
  s.flag_ildr = log.detector.flag_ildr;
  s.flag_weight_norm = log.detector.flag_weight_norm;
  s.flag_grokfast = log.detector.flag_grokfast;
  s.diverged = log.diverged;
  return s;
}

LeadAggregate aggregate_leads(std::span<const RunSummary> rows,
                              std::optional<int> RunSummary::* flag_field) {
  std::vector<double> leads;
  for (const auto& r : rows) {
    if (r.diverged || !r.grok || !(r.*flag_field)) continue;
    leads.push_back(static_cast<double>(*r.grok - *(r.*flag_field)));
  }
  LeadAggregate agg;
  agg.n = static_cast<int>(leads.size());
  if (leads.empty()) return agg;
  for (double l : leads) agg.mean += l;
  agg.mean /= agg.n;
  for (double l : leads) agg.sd += (l - agg.mean) * (l - agg.mean);
  agg.sd = std::sqrt(agg.sd / agg.n);
  return agg;
}

std::string leads_markdown(std::span<const RunSummary> rows) {
  std::ostringstream out;
  out << "| seed | grok | ildr flag | ildr lead | wn flag | wn lead | gf flag | gf lead |\n";
  out << "|---:|---:|---:|---:|---:|---:|---:|---:|\n";
  int diverged = 0;
  for (const auto& r : rows) {
    if (r.diverged) {
      ++diverged;
      out << "| " << r.seed << " | diverged | --- | --- | --- | --- | --- | --- |\n";
      continue;
    }
    out << "| " << r.seed << " | " << opt_dashes(r.grok) << " | " << opt_dashes(r.flag_ildr)
        << " | " << lead_cell(r.grok, r.flag_ildr) << " | " << opt_dashes(r.flag_weight_norm)
        << " | " << lead_cell(r.grok, r.flag_weight_norm) << " | " << opt_dashes(r.flag_grokfast)
        << " | " << lead_cell(r.grok, r.flag_grokfast) << " |\n";
  }
  auto footer = [&out](const char* name, const LeadAggregate& agg) {
    out << name << ": ";
    if (agg.n == 0) {
      out << "---";
    } else {
      out << std::llround(agg.mean) << " ± " << std::llround(agg.sd) << " (n=" << agg.n << ")";
    }
    out << '\n';
  };
  out << '\n';
  footer("ILDR lead", aggregate_leads(rows, &RunSummary::flag_ildr));
  footer("Weight-norm lead", aggregate_leads(rows, &RunSummary::flag_weight_norm));
  footer("Grokfast lead", aggregate_leads(rows, &RunSummary::flag_grokfast));
  if (diverged > 0) out << "Diverged runs excluded from aggregates: " << diverged << '\n';
  return out.str();
}

std::string early_stop_markdown(const EarlyStopSummary& summary) {
  std::ostringstream out;
  out << "| seed | grok | ildr flag | stop | steps saved | saved % | val at grace | note |\n";
  out << "|---:|---:|---:|---:|---:|---:|---:|:---|\n";
  for (const auto& r : summary.rows) {
    out << "| " << r.seed << " | " << opt_dashes(r.grok_step) << " | " << opt_dashes(r.flag_step)
        << " | " << opt_dashes(r.stop_step) << " | ";
    if (r.saved_steps) {
      out << (*r.saved_steps >= 0 ? "+" : "") << *r.saved_steps;
    } else {
      out << "---";
    }
    out << " | ";
    if (r.saved_pct) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.1f%%", *r.saved_pct);
      out << buf;
    } else {
      out << "---";
    }
    out << " | ";
    if (r.val_at_grace) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * *r.val_at_grace);
      out << buf;
    } else {
      out << "---";
    }
    out << " | " << (r.excluded ? r.exclusion_reason : "") << " |\n";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f%%", summary.mean_saved_pct);
  out << "\nMean steps saved (" << summary.included << " seeds): " << buf << '\n';
  return out.str();
}

std::string bench_markdown(const BenchResult& bench) {
  std::ostringstream out;
  out << "| method | time (ms) | % of train step |\n|:---|---:|---:|\n";
  auto row = [&out, &bench](const char* name, double ms) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "| %s | %.3f | %.1f%% |\n", name, ms,
                  100.0 * ms / bench.step_ms);
    out << buf;
  };
  row("train step", bench.step_ms);
  row("weight norm", bench.weight_norm_ms);
  row("spectral entropy", bench.spectral_entropy_ms);
  for (const auto& t : bench.ildr) {
    char name[64];
    std::snprintf(name, sizeof(name), "ildr metric (n=%d)", t.n);
    row(name, t.ildr_ms);
  }
  out << "\n| n | ildr metric (ms) | phi extraction (ms) |\n|---:|---:|---:|\n";
  for (const auto& t : bench.ildr) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "| %d | %.4f | %.3f |\n", t.n, t.ildr_ms, t.phi_ms);
    out << buf;
  }
  out << "\n| log_every | amortized ildr overhead |\n|---:|---:|\n";
  for (const auto& o : bench.overhead) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "| %d | %.4f%% |\n", o.log_every, o.overhead_pct);
    out << buf;
  }
  return out.str();
}

}  // namespace groklab
