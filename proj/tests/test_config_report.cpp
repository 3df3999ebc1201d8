#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "abftattn/report.hpp"

using namespace abftattn;
namespace fs = std::filesystem;

namespace {

// Minimal RFC 4180 reader: records end in CRLF, quoted fields may contain
// separators and doubled quotes.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(field);
      field.clear();
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      row.push_back(field);
      field.clear();
      rows.push_back(row);
      row.clear();
      ++i;
    } else {
      field += c;
    }
  }
  EXPECT_TRUE(field.empty() && row.empty()) << "unterminated record";
  return rows;
}

// Column names listed in the schema document for one file.
std::vector<std::string> documented_columns(const std::string& file) {
  std::ifstream in(fs::path(ABFTATTN_SOURCE_DIR) / "docs" / "csv-schema.md");
  EXPECT_TRUE(in.good());
  std::vector<std::string> cols;
  std::string line;
  bool inside = false;
  while (std::getline(in, line)) {
    if (line.rfind("## ", 0) == 0) {
      inside = line == "## " + file;
      continue;
    }
    if (!inside || line.rfind("| ", 0) != 0 || line.rfind("| column", 0) == 0) continue;
    std::string names = line.substr(2, line.find(" |", 2) - 2);
    std::stringstream ss(names);
    std::string name;
    while (std::getline(ss, name, ',')) {
      name.erase(0, name.find_first_not_of(' '));
      cols.push_back(name);
    }
  }
  return cols;
}

void check_table(const std::string& csv, const std::string& file, std::size_t rows) {
  const auto table = parse_csv(csv);
  ASSERT_EQ(table.size(), rows + 1) << file;
  EXPECT_EQ(table[0], documented_columns(file));
  for (const auto& r : table) EXPECT_EQ(r.size(), table[0].size()) << file;
}

struct EnvGuard {
  explicit EnvGuard(const char* name) : name(name) {}
  ~EnvGuard() { unsetenv(name); }
  const char* name;
};

}  // namespace

TEST(Config, Defaults) {
  RunConfig cfg = parse_run_config("{}");
  EXPECT_EQ(cfg.seed, 0u);
  EXPECT_EQ(cfg.format, OutputFormat::Json);
  EXPECT_EQ(cfg.optimizer.failure_target, 1e-11);
  EXPECT_EQ(cfg.optimizer.lambda_per_1e25.front(), 13.0);
  EXPECT_EQ(cfg.optimizer.lambda_per_1e25.back(), 20.0);
}

TEST(Config, BundledFilesLoad) {
  for (const char* name : {"default.json", "quick.json", "optimizer-gpt2.json"}) {
    const RunConfig cfg = load_run_config(fs::path(ABFTATTN_SOURCE_DIR) / "configs" / name);
    EXPECT_EQ(cfg.study.seed, cfg.seed) << name;
    EXPECT_EQ(cfg.campaign.dims.seq_len, cfg.dims.seq_len) << name;
  }
  const RunConfig def = load_run_config(fs::path(ABFTATTN_SOURCE_DIR) / "configs" / "default.json");
  EXPECT_EQ(def.dims.seq_len, 32u);
  EXPECT_EQ(def.campaign.fraction, 0.10);
  EXPECT_EQ(def.format, OutputFormat::Both);
}

TEST(Config, Parsing) {
  const RunConfig cfg = parse_run_config(R"({
    "seed": "18446744073709551615", "threads": 3, "format": "csv",
    "dims": {"seq_len": 8, "d_model": 16, "heads": 2, "batches": 1},
    "campaign": {"fraction": 0.5, "sites": ["q", "O"], "kinds": ["-inf"],
                 "frequencies": {"S_CL": 0.25}},
    "optimizer": {"model": "GPT-2", "fc_target": 0.999, "h_convention": "survival"}
  })");
  EXPECT_EQ(cfg.seed, 18446744073709551615ull);
  EXPECT_EQ(cfg.campaign.threads, 3u);
  EXPECT_EQ(cfg.campaign.sites, (std::vector<GemmSite>{GemmSite::Q, GemmSite::O}));
  EXPECT_EQ(cfg.campaign.kinds, std::vector<FaultKind>{FaultKind::MinusInf});
  EXPECT_EQ(cfg.campaign.protection.frequency[1], 0.25);
  EXPECT_EQ(cfg.campaign.protection.frequency[0], 1.0);
  EXPECT_EQ(cfg.optimizer.model, ModelFamily::Gpt2);
  EXPECT_NEAR(cfg.optimizer.failure_target, 1e-3, 1e-15);
  EXPECT_EQ(cfg.optimizer.h, HConvention::Survival);
  EXPECT_EQ(cfg.study.dims.d_model, 16u);
}

TEST(Config, Rejections) {
  const char* bad[] = {
      "not json",
      "[1, 2]",
      R"({"sede": 1})",
      R"({"seed": -1})",
      R"({"seed": "12x"})",
      R"({"seed": "99999999999999999999999"})",
      R"({"threads": 0})",
      R"({"format": "xml"})",
      R"({"dims": {"seq_len": 0}})",
      R"({"dims": {"d_model": 30, "heads": 4}})",
      R"({"dims": {"seq": 8}})",
      R"({"study": {"trials_per_site": 0}})",
      R"({"study": {"sites": ["AP"]}})",
      R"({"campaign": {"fraction": 0}})",
      R"({"campaign": {"fraction": 1.5}})",
      R"({"campaign": {"kinds": ["zero"]}})",
      R"({"campaign": {"frequencies": {"S_AS": 2}}})",
      R"({"campaign": {"frequencies": {"AS": 1}}})",
      R"({"optimizer": {"failure_target": 1e-9, "fc_target": 0.9}})",
      R"({"optimizer": {"fc_target": 0}})",
      R"({"optimizer": {"h_convention": "other"}})",
      R"({"optimizer": {"model": "llama"}})",
      R"({"optimizer": {"rate_scale": 0}})",
      R"({"optimizer": {"lambda_per_1e25": []}})",
      R"({"optimizer": {"mc_trials": 0}})",
      R"({"bench": {"repeats": 0}})",
      R"({"eec": {"correct_threshold": 1e12}})",
  };
  for (const char* text : bad) EXPECT_THROW(parse_run_config(text), ConfigError) << text;
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, EnvOverrides) {
  EnvGuard seed("ABFTATTN_SEED"), out("ABFTATTN_OUT");
  RunConfig cfg = parse_run_config(R"({"seed": 1, "out": "a"})");
  setenv("ABFTATTN_SEED", "77", 1);
  setenv("ABFTATTN_OUT", "/tmp/elsewhere", 1);
  apply_env_overrides(cfg);
  EXPECT_EQ(cfg.seed, 77u);
  EXPECT_EQ(cfg.campaign.seed, 77u);
  EXPECT_EQ(cfg.out_dir, fs::path("/tmp/elsewhere"));
  setenv("ABFTATTN_SEED", "seven", 1);
  EXPECT_THROW(apply_env_overrides(cfg), ConfigError);
  unsetenv("ABFTATTN_SEED");
  unsetenv("ABFTATTN_OUT");
  RunConfig untouched = parse_run_config(R"({"seed": 5})");
  apply_env_overrides(untouched);
  EXPECT_EQ(untouched.seed, 5u);
}

TEST(Csv, Quoting) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_field("two\r\nlines"), "\"two\r\nlines\"");
  EXPECT_EQ(csv_field(""), "");
  const auto rows = parse_csv(csv_field("x,\"y\"") + "," + csv_field("z") + "\r\n");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"x,\"y\"", "z"}));
}

TEST(Csv, Numbers) {
  EXPECT_EQ(csv_number(0.1), "0.1");
  EXPECT_EQ(csv_number(0.1f), "0.1");
  EXPECT_EQ(csv_number(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(csv_number(-std::numeric_limits<float>::infinity()), "-inf");
  for (double x : {1e-300, 3.141592653589793, -2.5e17, 1e-11}) EXPECT_EQ(std::strtod(csv_number(x).c_str(), nullptr), x);
  for (float x : {1e-38f, 0.324f, 3.4e38f}) EXPECT_EQ(std::strtof(csv_number(x).c_str(), nullptr), x);
}

TEST(Report, StudyFiles) {
  StudyConfig sc;
  sc.dims = {8, 16, 2, 1};
  sc.trials_per_site = 5;
  const PropagationStudy study = run_propagation_study(sc);
  std::ostringstream csv;
  write_study_csv(csv, study);
  check_table(csv.str(), "study.csv", 3 * (4 + 4 + 2 + 3 + 1));

  const nlohmann::json j = to_json(study);
  EXPECT_EQ(j["rows"].size(), 15u);
  EXPECT_EQ(nlohmann::json::parse(j.dump()), j);
}

TEST(Report, CampaignFiles) {
  CampaignConfig cc;
  cc.dims = {8, 16, 2, 1};
  cc.fraction = 0.05;
  const CampaignReport r = run_detection_campaign(cc);
  std::ostringstream csv;
  write_campaign_csv(csv, r);
  check_table(csv.str(), "campaign.csv", r.trials);
  const nlohmann::json j = to_json(r);
  EXPECT_EQ(nlohmann::json::parse(j.dump()), j);
  EXPECT_EQ(j["records"].size(), r.trials);
  EXPECT_EQ(j["corrected"].get<std::size_t>(), r.corrected);
  EXPECT_FALSE(to_json(r, false).contains("records"));

  CampaignConfig empty = cc;
  empty.fraction = 1e-6;
  const nlohmann::json e = to_json(run_detection_campaign(empty));
  EXPECT_TRUE(e["detection_rate"].is_null());
}

TEST(Report, OptimizeFiles) {
  OptimizerSettings s;
  s.dims = {16, 32, 2, 2};
  s.lambda_per_1e25 = {13, 20};
  s.rate_scale = 1e12;
  s.failure_target = 1e-9;
  s.mc_trials = 1000;
  const OptimizeReport r = run_optimize(s, 3, 1);
  ASSERT_EQ(r.points.size(), 2u);
  std::ostringstream csv;
  write_optimize_csv(csv, r);
  check_table(csv.str(), "optimize.csv", 2);
  const nlohmann::json j = to_json(r);
  const nlohmann::json back = nlohmann::json::parse(j.dump());
  EXPECT_EQ(back, j);
  EXPECT_EQ(back["points"][1]["frequencies"]["S_O"].get<double>(),
            r.points[1].result.assignment.f[2]);
  EXPECT_EQ(back["points"][0]["analytic_failure"].get<double>(),
            r.points[0].result.analytic_failure);
}

TEST(Report, BenchFiles) {
  const BenchResult b = run_bench({8, 16, 2, 1}, 2, 1);
  std::ostringstream csv;
  write_bench_csv(csv, b);
  check_table(csv.str(), "bench.csv", 3);
  const nlohmann::json j = to_json(b);
  EXPECT_EQ(nlohmann::json::parse(j.dump()), j);
  EXPECT_TRUE(j["cost_model_within_2x"].get<bool>());
  EXPECT_THROW(run_bench({8, 16, 2, 1}, 0, 1), ConfigError);
}

TEST(Report, WriteFormats) {
  const fs::path dir = fs::temp_directory_path() / "abftattn-report-test";
  fs::remove_all(dir);
  const nlohmann::json j = {{"a", 1}};
  EXPECT_EQ(write_report(dir, "x", j, "h\r\n", OutputFormat::Json).size(), 1u);
  EXPECT_TRUE(fs::exists(dir / "x.json"));
  EXPECT_FALSE(fs::exists(dir / "x.csv"));
  EXPECT_EQ(write_report(dir, "y", j, "h\r\n", OutputFormat::Both).size(), 2u);
  std::ifstream in(dir / "y.csv", std::ios::binary);
  std::string body((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(body, "h\r\n");
  std::ifstream js(dir / "y.json");
  EXPECT_EQ(nlohmann::json::parse(js), j);
  fs::remove_all(dir);
}
