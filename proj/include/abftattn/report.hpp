#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abftattn/bench.hpp"
#include "abftattn/config.hpp"
#include "abftattn/coverage.hpp"
#include "abftattn/fault_injector.hpp"

namespace abftattn {

/// One optimizer run of a rate sweep together with its Monte-Carlo check.
struct SweepPoint {
  double lambda_per_1e25 = 0.0;
  ErrorRateProfile rates;
  OptimizationResult result;
  MonteCarloResult mc;
};

struct OptimizeReport {
  OptimizerSettings settings;
  std::vector<SectionProfile> profiles;
  std::vector<SweepPoint> points;

  bool any_infeasible() const noexcept;
};

OptimizeReport run_optimize(const OptimizerSettings& settings, std::uint64_t seed,
                            unsigned threads);

nlohmann::json to_json(const PropagationStudy& study);
nlohmann::json to_json(const CampaignReport& report, bool include_records = true);
nlohmann::json to_json(const OptimizeReport& report);
nlohmann::json to_json(const BenchResult& bench);

/// Quotes a field per RFC 4180 when it contains a comma, quote, CR or LF.
std::string csv_field(const std::string& s);
/// Shortest round-tripping text for a float or double; "nan", "inf", "-inf".
std::string csv_number(double x);
std::string csv_number(float x);

void write_study_csv(std::ostream& os, const PropagationStudy& study);
void write_campaign_csv(std::ostream& os, const CampaignReport& report);
void write_optimize_csv(std::ostream& os, const OptimizeReport& report);
void write_bench_csv(std::ostream& os, const BenchResult& bench);

/// Writes <stem>.json and/or <stem>.csv into dir, creating it if needed.
/// Returns the paths written.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir,
                                                const std::string& stem,
                                                const nlohmann::json& json,
                                                const std::string& csv, OutputFormat format);

}  // namespace abftattn
