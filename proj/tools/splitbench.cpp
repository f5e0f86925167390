// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: run, sweep, report.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splitbench/config.hpp"
#include "splitbench/errors.hpp"
#include "splitbench/records.hpp"
#include "splitbench/report.hpp"
#include "splitbench/runner.hpp"

namespace sb = splitbench;

namespace {

struct RunFlags {
  std::string config;
  std::string out = "out";
  std::string cache;
  std::string mode;
  std::string listen;
  std::string connect;
  std::vector<std::uint64_t> seeds;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("config", f.config, "experiment config (JSON, comments allowed)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory")->capture_default_str();
  cmd->add_option("--cache", f.cache, "pretrained-model cache (default <out>/cache)");
  cmd->add_option("--mode", f.mode, "standalone or distributed (overrides the config)")
      ->check(CLI::IsMember({"standalone", "distributed"}));
  cmd->add_option("--listen", f.listen, "serve the Model Party on host:port");
  cmd->add_option("--connect", f.connect, "run the Data Party against host:port");
  cmd->add_option("--seed", f.seeds, "run only these seeds");
}

int execute(sb::ExperimentConfig cfg, const RunFlags& f) {
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  if (!f.mode.empty()) cfg.transport.mode = f.mode;
  if (!f.listen.empty()) cfg.transport.listen = f.listen;
  if (!f.connect.empty()) cfg.transport.connect = f.connect;
  if (!cfg.transport.listen.empty() && !cfg.transport.connect.empty()) {
    throw sb::ConfigError("--listen and --connect are exclusive");
  }
  if (!cfg.transport.listen.empty() || !cfg.transport.connect.empty()) cfg.transport.mode = "distributed";
  cfg.validate();

  sb::RunnerOptions opts;
  opts.out_dir = f.out;
  if (!f.cache.empty()) opts.cache_dir = f.cache;
  opts.mode = cfg.transport.mode;
  opts.listen = cfg.transport.listen;
  opts.connect = cfg.transport.connect;
  opts.log = &std::cerr;
  sb::ExperimentRunner runner(std::move(cfg), opts);
  if (!opts.listen.empty()) {
    runner.serve();
    return 0;
  }
  const auto records = runner.run();
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.status != "ok";
  std::cerr << records.size() << " cells, " << failed << " failed; results in " << f.out << "\n";
  return failed ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"split-learning privacy benchmark"};
  app.require_subcommand(1);

  RunFlags run_flags;
  auto* run = app.add_subcommand("run", "run every cell of one experiment");
  add_run_flags(run, run_flags);

  RunFlags sweep_flags;
  std::string axis = "strength";
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "run an experiment across a strength or n_head grid");
  add_run_flags(sweep, sweep_flags);
  sweep->add_option("--axis", axis, "strength or n_head")->check(CLI::IsMember({"strength", "n_head"}))->capture_default_str();
  sweep->add_option("--values", values, "grid (default: the defense's registered grid)");

  std::vector<std::string> records_dirs;
  std::string out_dir, kind, factor = "strategy", minuend;
  auto* report = app.add_subcommand("report", "render figures and tables from run records");
  report->add_option("records", records_dirs, "records directories (pooled)")->required()->check(CLI::ExistingDirectory);
  report->add_option("--kind", kind, "mp_ap_scatter, dcs_ranking, delta_dcs_hist or efficiency_table")->required();
  report->add_option("--out", out_dir, "output directory")->required();
  report->add_option("--factor", factor, "record field the delta report contrasts")->capture_default_str();
  report->add_option("--minuend", minuend, "factor value subtracted from");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return execute(sb::ExperimentConfig::load(run_flags.config), run_flags);
    if (*sweep) {
      auto cfg = sb::ExperimentConfig::load(sweep_flags.config);
      sb::SweepSpec s;
      s.axis = sb::parse_sweep_axis(axis);
      s.values = values;
      cfg.sweep = s;
      return execute(std::move(cfg), sweep_flags);
    }
    if (*report) {
      std::vector<sb::RunRecord> records;
      sb::ReportOptions ro;
      ro.factor = factor;
      ro.minuend = minuend;
      for (const auto& dir : records_dirs) {
        for (auto& r : sb::load_records(dir)) records.push_back(std::move(r));
        ro.timings.merge(sb::load_timings(dir));
      }
      for (const auto& p : sb::emit_report(records, sb::parse_report_kind(kind), out_dir, ro)) {
        std::cout << p.string() << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "splitbench: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
