#include "abftattn/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace abftattn {

using nlohmann::json;

bool OptimizeReport::any_infeasible() const noexcept {
  for (const auto& p : points)
    if (p.result.infeasible) return true;
  return false;
}

OptimizeReport run_optimize(const OptimizerSettings& settings, std::uint64_t seed,
                            unsigned threads) {
  OptimizeReport report;
  report.settings = settings;
  report.profiles = build_section_profiles(settings.dims, settings.model);
  for (std::size_t i = 0; i < settings.lambda_per_1e25.size(); ++i) {
    SweepPoint p;
    p.lambda_per_1e25 = settings.lambda_per_1e25[i];
    p.rates = ErrorRateProfile::uniform(p.lambda_per_1e25 * 1e-25 * settings.rate_scale);
    p.result = optimize_for_failure(report.profiles, p.rates, settings.failure_target,
                                    {settings.h});
    p.mc = monte_carlo_validate(p.result.assignment, report.profiles, p.rates, settings.mc_trials,
                                derive_seed(seed, 0x0B7, i), settings.h, threads);
    report.points.push_back(std::move(p));
  }
  return report;
}

namespace {

json dims_json(const AttentionDims& d) {
  return {{"seq_len", d.seq_len}, {"d_model", d.d_model}, {"heads", d.heads},
          {"batches", d.batches}};
}

json per_section(const std::array<double, 3>& v) {
  json j = json::object();
  for (SectionId s : kAllSections) j[to_string(s)] = v[static_cast<std::size_t>(s)];
  return j;
}

json number(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

}  // namespace

json to_json(const PropagationStudy& study) {
  json rows = json::array();
  for (const auto& row : study.rows) {
    json cells = json::array();
    for (const auto& c : row.cells) {
      json shapes = json::object();
      for (std::size_t i = 0; i < c.shape_counts.size(); ++i)
        shapes[to_string(static_cast<PatternShape>(i))] = c.shape_counts[i];
      json classes = json::object();
      for (std::size_t i = 0; i < c.class_counts.size(); ++i)
        classes[to_string(static_cast<FloatClass>(i))] = c.class_counts[i];
      cells.push_back({{"matrix", to_string(c.matrix)},
                       {"label", c.label()},
                       {"modal_shape", to_string(c.modal_shape())},
                       {"trials", c.trials},
                       {"shape_counts", shapes},
                       {"class_counts", classes},
                       {"both_inf_signs", c.both_inf_signs}});
    }
    rows.push_back({{"kind", to_string(row.kind)},
                    {"site", to_string(row.site)},
                    {"near_inf_resampled", row.near_inf_fallbacks},
                    {"cells", cells}});
  }
  return {{"command", "study"},
          {"seed", study.config.seed},
          {"dims", dims_json(study.config.dims)},
          {"trials_per_site", study.config.trials_per_site},
          {"rows", rows}};
}

json to_json(const CampaignReport& report, bool include_records) {
  json cells = json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"site", to_string(c.site)},
                     {"kind", to_string(c.kind)},
                     {"trials", c.trials},
                     {"detected", c.detected},
                     {"corrected", c.corrected},
                     {"uncorrectable", c.uncorrectable},
                     {"missed", c.missed},
                     {"nontrainable_proxy", c.nontrainable},
                     {"max_residual", number(c.max_residual)}});
  }
  json j = {{"command", "campaign"},
            {"trials", report.trials},
            {"detected", report.detected},
            {"corrected", report.corrected},
            {"uncorrectable", report.uncorrectable},
            {"missed", report.missed},
            {"nontrainable_proxy", report.nontrainable},
            {"detection_rate", number(report.detection_rate())},
            {"correction_rate", number(report.correction_rate())},
            {"nontrainable_proxy_rate", number(report.nontrainable_proxy_rate())},
            {"max_residual", number(report.max_residual)},
            {"max_residual_ratio", number(report.max_residual_ratio)},
            {"cells", cells}};
  if (include_records) {
    json recs = json::array();
    for (const auto& r : report.records) {
      recs.push_back({{"trial", r.trial},
                      {"site", to_string(r.site)},
                      {"kind", to_string(r.kind)},
                      {"batch", r.injection.element.batch},
                      {"head", r.injection.element.head},
                      {"row", r.injection.element.row},
                      {"col", r.injection.element.col},
                      {"before", number(r.injection.before)},
                      {"after", number(r.injection.after)},
                      {"bit", r.injection.bit},
                      {"attempts", r.injection.attempts},
                      {"near_inf_achieved", r.injection.near_inf_achieved},
                      {"detected", r.detected},
                      {"corrected", r.corrected},
                      {"uncorrectable", r.uncorrectable},
                      {"missed", r.missed},
                      {"residual", number(r.residual)},
                      {"residual_bound", number(r.residual_bound)},
                      {"nontrainable_proxy", r.nontrainable_proxy}});
    }
    j["records"] = recs;
  }
  return j;
}

json to_json(const OptimizeReport& report) {
  const OptimizerSettings& s = report.settings;
  json sections = json::array();
  for (const auto& p : report.profiles) {
    json ops = json::array();
    for (const auto& op : p.ops)
      ops.push_back({{"name", op.name}, {"n_flops", op.n_flops}, {"phi", op.phi}});
    sections.push_back({{"section", to_string(p.id)}, {"t_cost", p.t_cost}, {"ops", ops}});
  }
  json points = json::array();
  for (const auto& p : report.points) {
    const OptimizationResult& r = p.result;
    json order = json::array();
    for (SectionId id : r.order) order.push_back(to_string(id));
    points.push_back({{"lambda_per_1e25", p.lambda_per_1e25},
                      {"lambda_per_flop", p.rates.lambda_inf},
                      {"frequencies", per_section(r.assignment.f)},
                      {"time", per_section(r.time)},
                      {"fce", per_section(r.fce)},
                      {"fce_marginal", per_section(r.fce_marginal)},
                      {"order", order},
                      {"cost", r.cost},
                      {"analytic_fc", r.analytic_fc},
                      {"analytic_failure", r.analytic_failure},
                      {"approximate_fc", r.approximate_fc},
                      {"infeasible", r.infeasible},
                      {"best_achievable_fc", r.best_achievable_fc},
                      {"best_achievable_failure", r.best_achievable_failure},
                      {"monte_carlo",
                       {{"trials", p.mc.trials},
                        {"fc", p.mc.fc},
                        {"std_error", p.mc.std_error},
                        {"ci_low", p.mc.ci_low},
                        {"ci_high", p.mc.ci_high}}}});
  }
  return {{"command", "optimize"},
          {"model", to_string(s.model)},
          {"dims", dims_json(s.dims)},
          {"rate_scale", s.rate_scale},
          {"failure_target", s.failure_target},
          {"fc_target", 1.0 - s.failure_target},
          {"h_convention", to_string(s.h)},
          {"sections", sections},
          {"points", points},
          {"infeasible", report.any_infeasible()}};
}

json to_json(const BenchResult& b) {
  json sections = json::array();
  for (const auto& s : b.sections) {
    sections.push_back({{"section", to_string(s.section)},
                        {"model_flops", s.model_flops},
                        {"counted_flops", s.counted_flops},
                        {"ratio", s.ratio()}});
  }
  return {{"command", "bench"},
          {"dims", dims_json(b.dims)},
          {"repeats", b.repeats},
          {"unprotected_ms", b.unprotected_ms},
          {"protected_ms", b.protected_ms},
          {"ratio", b.ratio},
          {"cost_model_within_2x", b.cost_model_agrees()},
          {"sections", sections}};
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

namespace {

template <class T>
std::string shortest(T x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string csv_number(double x) { return shortest(x); }
std::string csv_number(float x) { return shortest(x); }

namespace {

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}
  CsvWriter& operator<<(const std::string& s) { return put(csv_field(s)); }
  CsvWriter& operator<<(const char* s) { return put(csv_field(s)); }
  CsvWriter& operator<<(std::size_t v) { return put(std::to_string(v)); }
  CsvWriter& operator<<(bool v) { return put(v ? "1" : "0"); }
  CsvWriter& operator<<(float v) { return put(csv_number(v)); }
  CsvWriter& operator<<(double v) { return put(csv_number(v)); }
  void end() {
    os_ << "\r\n";
    first_ = true;
  }

 private:
  CsvWriter& put(const std::string& s) {
    if (!first_) os_ << ',';
    os_ << s;
    first_ = false;
    return *this;
  }
  std::ostream& os_;
  bool first_ = true;
};

}  // namespace

void write_study_csv(std::ostream& os, const PropagationStudy& study) {
  CsvWriter w(os);
  w << "kind" << "site" << "matrix" << "trials" << "shape_none" << "shape_0d" << "shape_1r"
    << "shape_1c" << "shape_2d" << "class_finite" << "class_near_inf" << "class_inf"
    << "class_nan" << "both_inf_signs" << "label";
  w.end();
  for (const auto& row : study.rows) {
    for (const auto& c : row.cells) {
      w << to_string(row.kind) << to_string(row.site) << to_string(c.matrix) << c.trials;
      for (std::size_t n : c.shape_counts) w << n;
      for (std::size_t n : c.class_counts) w << n;
      w << c.both_inf_signs << c.label();
      w.end();
    }
  }
}

void write_campaign_csv(std::ostream& os, const CampaignReport& report) {
  CsvWriter w(os);
  w << "trial" << "site" << "kind" << "batch" << "head" << "row" << "col" << "before" << "after"
    << "bit" << "attempts" << "near_inf_achieved" << "detected" << "corrected" << "uncorrectable"
    << "missed" << "residual" << "residual_bound" << "nontrainable_proxy";
  w.end();
  for (const auto& r : report.records) {
    const InjectionRecord& inj = r.injection;
    w << r.trial << to_string(r.site) << to_string(r.kind) << inj.element.batch
      << inj.element.head << inj.element.row << inj.element.col << inj.before << inj.after
      << static_cast<std::size_t>(inj.bit) << static_cast<std::size_t>(inj.attempts)
      << inj.near_inf_achieved << r.detected << r.corrected << r.uncorrectable << r.missed
      << r.residual << r.residual_bound << r.nontrainable_proxy;
    w.end();
  }
}

void write_optimize_csv(std::ostream& os, const OptimizeReport& report) {
  CsvWriter w(os);
  w << "lambda_per_1e25" << "f_S_AS" << "f_S_CL" << "f_S_O" << "cost" << "analytic_fc"
    << "analytic_failure" << "approximate_fc" << "infeasible" << "mc_trials" << "mc_fc"
    << "mc_ci_low" << "mc_ci_high";
  w.end();
  for (const auto& p : report.points) {
    const auto& r = p.result;
    w << p.lambda_per_1e25 << r.assignment.f[0] << r.assignment.f[1] << r.assignment.f[2]
      << r.cost << r.analytic_fc << r.analytic_failure << r.approximate_fc << r.infeasible
      << p.mc.trials << p.mc.fc << p.mc.ci_low << p.mc.ci_high;
    w.end();
  }
}

void write_bench_csv(std::ostream& os, const BenchResult& bench) {
  CsvWriter w(os);
  w << "section" << "model_flops" << "counted_flops" << "ratio";
  w.end();
  for (const auto& s : bench.sections) {
    w << to_string(s.section) << static_cast<std::size_t>(s.model_flops)
      << static_cast<std::size_t>(s.counted_flops) << s.ratio();
    w.end();
  }
}

std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir,
                                                const std::string& stem, const json& j,
                                                const std::string& csv, OutputFormat format) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& ext, const std::string& body) {
    const auto path = dir / (stem + ext);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << body;
    if (!out) throw std::runtime_error("failed writing " + path.string());
    written.push_back(path);
  };
  if (format != OutputFormat::Csv) emit(".json", j.dump(2) + "\n");
  if (format != OutputFormat::Json) emit(".csv", csv);
  return written;
}

}  // namespace abftattn
