#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "abftattn/attention.hpp"
#include "abftattn/coverage.hpp"
#include "abftattn/eec_abft.hpp"
#include "abftattn/fault_injector.hpp"

namespace abftattn {

enum class OutputFormat : std::uint8_t { Json, Csv, Both };
OutputFormat parse_output_format(const std::string& s);
const char* to_string(OutputFormat f) noexcept;

struct OptimizerSettings {
  ModelFamily model = ModelFamily::Bert;
  AttentionDims dims{128, 768, 12, 32};
  /// Error rates in errors per 1e25 flops, one optimization per entry.
  std::vector<double> lambda_per_1e25{13, 14, 15, 16, 17, 18, 19, 20};
  /// Multiplier applied to every rate before optimizing.
  double rate_scale = 1.0;
  double failure_target = 1e-11;
  HConvention h = HConvention::Printed;
  std::size_t mc_trials = 100000;
};

struct BenchSettings {
  std::size_t repeats = 5;
};

struct RunConfig {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::filesystem::path out_dir = "abftattn-out";
  OutputFormat format = OutputFormat::Json;
  AttentionDims dims;
  EecConfig eec;
  StudyConfig study;
  CampaignConfig campaign;
  OptimizerSettings optimizer;
  BenchSettings bench;

  /// Copies the shared fields (dims, seed, threads, thresholds) into the
  /// study and campaign configs. Call after changing any of them.
  void sync();
  void validate() const;
};

/// Parses a JSON config. Unknown keys and out-of-range values throw
/// ConfigError; missing keys keep their defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// ABFTATTN_SEED and ABFTATTN_OUT, when set, replace the seed and output
/// directory. Malformed values throw ConfigError.
void apply_env_overrides(RunConfig& cfg);

}  // namespace abftattn
