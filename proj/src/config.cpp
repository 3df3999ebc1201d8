#include "abftattn/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace abftattn {

using nlohmann::json;

OutputFormat parse_output_format(const std::string& s) {
  if (s == "json") return OutputFormat::Json;
  if (s == "csv") return OutputFormat::Csv;
  if (s == "both") return OutputFormat::Both;
  throw ConfigError("format must be json, csv or both, got '" + s + "'");
}

const char* to_string(OutputFormat f) noexcept {
  switch (f) {
    case OutputFormat::Json: return "json";
    case OutputFormat::Csv: return "csv";
    case OutputFormat::Both: return "both";
  }
  return "?";
}

void RunConfig::sync() {
  study.dims = dims;
  study.seed = seed;
  study.threads = threads;
  study.eec = eec;
  campaign.dims = dims;
  campaign.seed = seed;
  campaign.threads = threads;
  campaign.protection.eec = eec;
  campaign.protection.seed = seed;
}

void RunConfig::validate() const {
  if (threads == 0) throw ConfigError("threads must be >= 1");
  dims.validate();
  eec.validate();
  if (study.trials_per_site == 0) throw ConfigError("study.trials_per_site must be >= 1");
  if (study.sites.empty() || study.kinds.empty()) throw ConfigError("study needs sites and kinds");
  if (!(campaign.fraction > 0.0 && campaign.fraction <= 1.0)) {
    throw ConfigError("campaign.fraction must lie in (0, 1]");
  }
  if (campaign.sites.empty() || campaign.kinds.empty()) {
    throw ConfigError("campaign needs sites and kinds");
  }
  campaign.protection.validate();
  optimizer.dims.validate();
  if (optimizer.lambda_per_1e25.empty()) throw ConfigError("optimizer.lambda_per_1e25 is empty");
  for (double l : optimizer.lambda_per_1e25)
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("optimizer rates must be >= 0");
  if (!(optimizer.rate_scale > 0.0) || !std::isfinite(optimizer.rate_scale)) {
    throw ConfigError("optimizer.rate_scale must be > 0");
  }
  if (!(optimizer.failure_target >= 0.0 && optimizer.failure_target < 1.0)) {
    throw ConfigError("optimizer.failure_target must lie in [0, 1)");
  }
  if (optimizer.mc_trials == 0) throw ConfigError("optimizer.mc_trials must be >= 1");
  if (bench.repeats == 0) throw ConfigError("bench.repeats must be >= 1");
}

namespace {

void check_keys(const json& obj, const std::string& where, std::set<std::string> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for " + where + "." + key);
  }
}

void read_size(const json& obj, const char* key, std::size_t& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_number_integer() || it->get<long long>() < 0) {
    throw ConfigError(where + "." + key + " must be a non-negative integer");
  }
  out = it->get<std::size_t>();
}

void read_dims(const json& obj, AttentionDims& d, const std::string& where) {
  check_keys(obj, where, {"seq_len", "d_model", "heads", "batches"});
  read_size(obj, "seq_len", d.seq_len, where);
  read_size(obj, "d_model", d.d_model, where);
  read_size(obj, "heads", d.heads, where);
  read_size(obj, "batches", d.batches, where);
}

std::vector<GemmSite> read_sites(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + " must be an array");
  std::vector<GemmSite> out;
  for (const auto& s : v) {
    auto site = s.is_string() ? parse_site(s.get<std::string>()) : std::nullopt;
    if (!site) throw ConfigError("unknown site in " + where + ": " + s.dump());
    out.push_back(*site);
  }
  return out;
}

std::vector<FaultKind> read_kinds(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + " must be an array");
  std::vector<FaultKind> out;
  for (const auto& s : v) {
    auto kind = s.is_string() ? parse_fault_kind(s.get<std::string>()) : std::nullopt;
    if (!kind) throw ConfigError("unknown fault kind in " + where + ": " + s.dump());
    out.push_back(*kind);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& s, const char* what) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw ConfigError(std::string(what) + " must be an unsigned integer, got '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError(std::string(what) + " out of range: '" + s + "'");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "config",
             {"seed", "threads", "out", "format", "dims", "eec", "study", "campaign", "optimizer",
              "bench"});

  RunConfig cfg;
  if (root.contains("seed")) {
    const json& s = root["seed"];
    if (s.is_number_unsigned()) cfg.seed = s.get<std::uint64_t>();
    else if (s.is_string()) cfg.seed = parse_u64(s.get<std::string>(), "seed");
    else throw ConfigError("seed must be an unsigned integer");
  }
  if (root.contains("threads")) {
    std::size_t t = 1;
    read_size(root, "threads", t, "config");
    cfg.threads = static_cast<unsigned>(t);
  }
  if (root.contains("out")) {
    std::string out;
    read(root, "out", out, "config");
    cfg.out_dir = out;
  }
  if (root.contains("format")) {
    std::string f;
    read(root, "format", f, "config");
    cfg.format = parse_output_format(f);
  }
  if (root.contains("dims")) read_dims(root["dims"], cfg.dims, "dims");

  if (root.contains("eec")) {
    const json& e = root["eec"];
    check_keys(e, "eec", {"roundoff", "near_inf_threshold", "correct_threshold"});
    read(e, "roundoff", cfg.eec.roundoff, "eec");
    read(e, "near_inf_threshold", cfg.eec.near_inf_threshold, "eec");
    read(e, "correct_threshold", cfg.eec.correct_threshold, "eec");
  }

  if (root.contains("study")) {
    const json& s = root["study"];
    check_keys(s, "study", {"trials_per_site", "sites", "kinds"});
    read_size(s, "trials_per_site", cfg.study.trials_per_site, "study");
    if (s.contains("sites")) cfg.study.sites = read_sites(s["sites"], "study.sites");
    if (s.contains("kinds")) cfg.study.kinds = read_kinds(s["kinds"], "study.kinds");
  }

  if (root.contains("campaign")) {
    const json& c = root["campaign"];
    check_keys(c, "campaign", {"fraction", "sites", "kinds", "frequencies", "compare_unprotected"});
    read(c, "fraction", cfg.campaign.fraction, "campaign");
    if (c.contains("sites")) cfg.campaign.sites = read_sites(c["sites"], "campaign.sites");
    if (c.contains("kinds")) cfg.campaign.kinds = read_kinds(c["kinds"], "campaign.kinds");
    if (c.contains("frequencies")) {
      const json& f = c["frequencies"];
      check_keys(f, "campaign.frequencies", {"S_AS", "S_CL", "S_O"});
      for (SectionId s : kAllSections)
        read(f, to_string(s), cfg.campaign.protection.frequency[static_cast<std::size_t>(s)],
             "campaign.frequencies");
    }
    read(c, "compare_unprotected", cfg.campaign.compare_unprotected, "campaign");
  }

  if (root.contains("optimizer")) {
    const json& o = root["optimizer"];
    check_keys(o, "optimizer",
               {"model", "dims", "lambda_per_1e25", "rate_scale", "failure_target", "fc_target",
                "h_convention", "mc_trials"});
    if (o.contains("model")) {
      std::string m;
      read(o, "model", m, "optimizer");
      cfg.optimizer.model = parse_model_family(m);
    }
    if (o.contains("dims")) read_dims(o["dims"], cfg.optimizer.dims, "optimizer.dims");
    read(o, "lambda_per_1e25", cfg.optimizer.lambda_per_1e25, "optimizer");
    read(o, "rate_scale", cfg.optimizer.rate_scale, "optimizer");
    if (o.contains("failure_target") && o.contains("fc_target")) {
      throw ConfigError("give optimizer.failure_target or optimizer.fc_target, not both");
    }
    read(o, "failure_target", cfg.optimizer.failure_target, "optimizer");
    if (o.contains("fc_target")) {
      double fc = 1.0;
      read(o, "fc_target", fc, "optimizer");
      if (!(fc > 0.0 && fc <= 1.0)) throw ConfigError("optimizer.fc_target must lie in (0, 1]");
      cfg.optimizer.failure_target = 1.0 - fc;
    }
    if (o.contains("h_convention")) {
      std::string h;
      read(o, "h_convention", h, "optimizer");
      if (h == "printed") cfg.optimizer.h = HConvention::Printed;
      else if (h == "survival") cfg.optimizer.h = HConvention::Survival;
      else throw ConfigError("optimizer.h_convention must be printed or survival");
    }
    read_size(o, "mc_trials", cfg.optimizer.mc_trials, "optimizer");
  }

  if (root.contains("bench")) {
    const json& b = root["bench"];
    check_keys(b, "bench", {"repeats"});
    read_size(b, "repeats", cfg.bench.repeats, "bench");
  }

  cfg.sync();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void apply_env_overrides(RunConfig& cfg) {
  if (const char* s = std::getenv("ABFTATTN_SEED"); s && *s) {
    cfg.seed = parse_u64(s, "ABFTATTN_SEED");
  }
  if (const char* o = std::getenv("ABFTATTN_OUT"); o && *o) cfg.out_dir = o;
  cfg.sync();
}

}  // namespace abftattn
