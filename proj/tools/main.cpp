#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "abftattn/bench.hpp"
#include "abftattn/config.hpp"
#include "abftattn/report.hpp"

namespace {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfig = 2, kUnresolved = 3 };

struct Options {
  std::string config;
  std::string seed;
  std::string out;
  unsigned threads = 0;
  std::string format;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON config file");
  cmd->add_option("--seed", o.seed, "RNG seed (overrides ABFTATTN_SEED and the config)");
  cmd->add_option("--out", o.out, "Output directory (overrides ABFTATTN_OUT and the config)");
  cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--format", o.format, "json, csv or both")
      ->check(CLI::IsMember({"json", "csv", "both"}));
}

abftattn::RunConfig resolve(const Options& o) {
  abftattn::RunConfig cfg = o.config.empty() ? abftattn::RunConfig{}
                                             : abftattn::load_run_config(o.config);
  abftattn::apply_env_overrides(cfg);
  if (!o.seed.empty()) {
    if (o.seed.find_first_not_of("0123456789") != std::string::npos) {
      throw abftattn::ConfigError("--seed must be an unsigned integer");
    }
    try {
      cfg.seed = std::stoull(o.seed);
    } catch (const std::exception&) {
      throw abftattn::ConfigError("--seed out of range");
    }
  }
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.threads) cfg.threads = o.threads;
  if (!o.format.empty()) cfg.format = abftattn::parse_output_format(o.format);
  cfg.sync();
  cfg.validate();
  return cfg;
}

void announce(const std::vector<std::filesystem::path>& paths) {
  for (const auto& p : paths) std::cout << "wrote " << p.string() << "\n";
}

int cmd_study(const abftattn::RunConfig& cfg) {
  const auto study = abftattn::run_propagation_study(cfg.study);
  std::ostringstream csv;
  abftattn::write_study_csv(csv, study);
  for (const auto& row : study.rows) {
    std::cout << abftattn::to_string(row.kind) << " " << abftattn::to_string(row.site) << ":";
    for (const auto& c : row.cells) std::cout << " " << abftattn::to_string(c.matrix) << "=" << c.label();
    std::cout << "\n";
  }
  announce(abftattn::write_report(cfg.out_dir, "study", abftattn::to_json(study), csv.str(),
                                  cfg.format));
  return kOk;
}

int cmd_campaign(const abftattn::RunConfig& cfg) {
  const auto report = abftattn::run_detection_campaign(cfg.campaign);
  std::ostringstream csv;
  abftattn::write_campaign_csv(csv, report);
  std::printf("trials %zu detected %zu corrected %zu uncorrectable %zu missed %zu\n",
              report.trials, report.detected, report.corrected, report.uncorrectable,
              report.missed);
  std::printf("max residual %.3g (%.3g of bound)\n", report.max_residual,
              report.max_residual_ratio);
  announce(abftattn::write_report(cfg.out_dir, "campaign", abftattn::to_json(report),
                                  csv.str(), cfg.format));
  return report.uncorrectable || report.missed ? kUnresolved : kOk;
}

int cmd_optimize(const abftattn::RunConfig& cfg) {
  const auto report = abftattn::run_optimize(cfg.optimizer, cfg.seed, cfg.threads);
  std::ostringstream csv;
  abftattn::write_optimize_csv(csv, report);
  for (const auto& p : report.points) {
    const auto& f = p.result.assignment.f;
    std::printf("lambda %g/1e25: f_AS %.4f f_CL %.4f f_O %.4f failure %.3e%s\n",
                p.lambda_per_1e25, f[0], f[1], f[2], p.result.analytic_failure,
                p.result.infeasible ? " (infeasible)" : "");
  }
  announce(abftattn::write_report(cfg.out_dir, "optimize", abftattn::to_json(report), csv.str(),
                                  cfg.format));
  return report.any_infeasible() ? kUnresolved : kOk;
}

int cmd_bench(const abftattn::RunConfig& cfg) {
  const auto bench = abftattn::run_bench(cfg.dims, cfg.bench.repeats, cfg.seed);
  std::ostringstream csv;
  abftattn::write_bench_csv(csv, bench);
  std::printf("unprotected %.3f ms, protected %.3f ms, ratio %.3f\n", bench.unprotected_ms,
              bench.protected_ms, bench.ratio);
  for (const auto& s : bench.sections) {
    std::printf("%s model %llu counted %llu ratio %.3f\n", abftattn::to_string(s.section),
                static_cast<unsigned long long>(s.model_flops),
                static_cast<unsigned long long>(s.counted_flops), s.ratio());
  }
  announce(abftattn::write_report(cfg.out_dir, "bench", abftattn::to_json(bench), csv.str(),
                                  cfg.format));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fault-tolerant attention: propagation study, fault campaigns, ABFT frequency "
               "optimization"};
  app.require_subcommand(1);
  Options opts;
  auto* study = app.add_subcommand("study", "Fault propagation study on unprotected attention");
  auto* campaign = app.add_subcommand("campaign", "Fault-injection campaign on protected attention");
  auto* optimize = app.add_subcommand("optimize", "Optimize ABFT detection frequencies");
  auto* bench = app.add_subcommand("bench", "Time protected vs unprotected attention");
  for (auto* cmd : {study, campaign, optimize, bench}) add_common(cmd, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const abftattn::RunConfig cfg = resolve(opts);
    if (study->parsed()) return cmd_study(cfg);
    if (campaign->parsed()) return cmd_campaign(cfg);
    if (optimize->parsed()) return cmd_optimize(cfg);
    return cmd_bench(cfg);
  } catch (const abftattn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
}
