#include "abftattn/coverage.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>

#include "abftattn/fault_injector.hpp"
#include "parallel.hpp"

namespace abftattn {

const char* to_string(ErrorType e) noexcept {
  switch (e) {
    case ErrorType::Inf: return "inf";
    case ErrorType::NaN: return "nan";
    case ErrorType::NearInf: return "near_inf";
  }
  return "?";
}

const char* to_string(HConvention c) noexcept {
  return c == HConvention::Printed ? "printed" : "survival";
}

double ErrorRateProfile::rate(ErrorType e) const noexcept {
  switch (e) {
    case ErrorType::Inf: return lambda_inf;
    case ErrorType::NaN: return lambda_nan;
    case ErrorType::NearInf: return lambda_ninf;
  }
  return 0.0;
}

void ErrorRateProfile::validate() const {
  for (double l : {lambda_inf, lambda_nan, lambda_ninf})
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("error rates must be finite and >= 0");
}

void OpProfile::validate() const {
  if (!(n_flops >= 0.0) || !std::isfinite(n_flops)) throw ConfigError("op flops must be >= 0");
  for (double p : phi)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("phi values must lie in [0, 1]");
}

void SectionProfile::validate() const {
  if (ops.empty()) throw ConfigError("section profile needs at least one op");
  if (!(t_cost > 0.0) || !std::isfinite(t_cost)) throw ConfigError("section cost must be > 0");
  for (const auto& op : ops) op.validate();
}

void FrequencyAssignment::validate() const {
  for (double x : f)
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("frequencies must lie in [0, 1]");
}

double unhandled_survival(const OpProfile& op, ErrorType e, HConvention h) noexcept {
  const double phi = op.phi[static_cast<std::size_t>(e)];
  return h == HConvention::Printed ? phi : 1.0 - phi;
}

double poisson_prob(double lambda, double n, unsigned k) {
  if (!(lambda >= 0.0) || !(n >= 0.0)) throw ConfigError("poisson_prob: lambda and n must be >= 0");
  const double mu = lambda * n;
  if (mu == 0.0) return k == 0 ? 1.0 : 0.0;
  return std::exp(-mu + k * std::log(mu) - std::lgamma(k + 1.0));
}

namespace {

double op_mean(const OpProfile& op, const ErrorRateProfile& rates) {
  return (rates.lambda_inf + rates.lambda_nan + rates.lambda_ninf) * op.n_flops;
}

}  // namespace

double section_error_mean(const SectionProfile& section, const ErrorRateProfile& rates) {
  double mu = 0.0;
  for (const auto& op : section.ops) mu += op_mean(op, rates);
  return mu;
}

double section_free_prob(const SectionProfile& section, const ErrorRateProfile& rates) {
  double log_p = 0.0;
  for (const auto& op : section.ops)
    for (ErrorType e : kAllErrorTypes) log_p += std::log(poisson_prob(rates.rate(e), op.n_flops, 0));
  return std::exp(log_p);
}

double section_single_error_prob(const SectionProfile& section, const ErrorRateProfile& rates,
                                 std::size_t op_index, ErrorType e) {
  if (op_index >= section.ops.size()) throw std::out_of_range("op index outside section");
  const OpProfile& op = section.ops[op_index];
  double p = poisson_prob(rates.rate(e), op.n_flops, 1);
  for (ErrorType other : kAllErrorTypes)
    if (other != e) p *= poisson_prob(rates.rate(other), op.n_flops, 0);
  double rest = 0.0;
  for (std::size_t i = 0; i < section.ops.size(); ++i)
    if (i != op_index) rest += op_mean(section.ops[i], rates);
  return p * std::exp(-rest);
}

double section_multi_error_prob(const SectionProfile& section, const ErrorRateProfile& rates) {
  const double mu = section_error_mean(section, rates);
  if (mu == 0.0) return 0.0;
  if (mu >= 0.5) return -std::expm1(-mu) - mu * std::exp(-mu);
  double term = std::exp(-mu) * mu * mu / 2.0;
  double sum = 0.0;
  for (unsigned k = 2; term > 1e-300 && term > sum * 1e-18; ++k) {
    sum += term;
    term *= mu / (k + 1);
  }
  return sum;
}

namespace {

template <class Fn>
double sum_single(const SectionProfile& section, const ErrorRateProfile& rates, Fn weight) {
  double s = 0.0;
  for (std::size_t i = 0; i < section.ops.size(); ++i)
    for (ErrorType e : kAllErrorTypes)
      s += section_single_error_prob(section, rates, i, e) * weight(section.ops[i], e);
  return s;
}

void check_frequency(double f) {
  if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("frequency must lie in [0, 1]");
}

}  // namespace

double fault_coverage(const SectionProfile& section, const ErrorRateProfile& rates, double f,
                      HConvention h) {
  check_frequency(f);
  return section_free_prob(section, rates) +
         sum_single(section, rates, [&](const OpProfile& op, ErrorType e) {
           return f + (1.0 - f) * unhandled_survival(op, e, h);
         });
}

double fault_coverage_complement(const SectionProfile& section, const ErrorRateProfile& rates,
                                 double f, HConvention h) {
  check_frequency(f);
  return section_multi_error_prob(section, rates) +
         sum_single(section, rates, [&](const OpProfile& op, ErrorType e) {
           return (1.0 - f) * (1.0 - unhandled_survival(op, e, h));
         });
}

double coverage_gain(const SectionProfile& section, const ErrorRateProfile& rates, HConvention h) {
  return sum_single(section, rates, [&](const OpProfile& op, ErrorType e) {
    return 1.0 - unhandled_survival(op, e, h);
  });
}

namespace {

void validate_profiles(const std::vector<SectionProfile>& profiles) {
  if (profiles.empty()) throw ConfigError("no section profiles");
  std::array<bool, 3> seen{};
  for (const auto& p : profiles) {
    p.validate();
    auto& s = seen[static_cast<std::size_t>(p.id)];
    if (s) throw ConfigError("duplicate section profile");
    s = true;
  }
}

}  // namespace

double attention_fc(const FrequencyAssignment& assignment,
                    const std::vector<SectionProfile>& profiles, const ErrorRateProfile& rates,
                    HConvention h) {
  double fc = 1.0;
  for (const auto& p : profiles) fc *= fault_coverage(p, rates, assignment.of(p.id), h);
  return fc;
}

double attention_failure(const FrequencyAssignment& assignment,
                         const std::vector<SectionProfile>& profiles,
                         const ErrorRateProfile& rates, HConvention h) {
  double log_fc = 0.0;
  for (const auto& p : profiles)
    log_fc += std::log1p(-fault_coverage_complement(p, rates, assignment.of(p.id), h));
  return -std::expm1(log_fc);
}

double fce(const SectionProfile& section, const ErrorRateProfile& rates) {
  const double numerator =
      section_free_prob(section, rates) +
      sum_single(section, rates, [](const OpProfile& op, ErrorType e) {
        return 1.0 - op.phi[static_cast<std::size_t>(e)];
      });
  return numerator / section.t_cost;
}

double fce_marginal(const SectionProfile& section, const ErrorRateProfile& rates, HConvention h) {
  return coverage_gain(section, rates, h) / section.t_cost;
}

OptimizationResult optimize_frequencies(const std::vector<SectionProfile>& profiles,
                                        const ErrorRateProfile& rates, double fc_target,
                                        const OptimizerOptions& options) {
  if (!(fc_target > 0.0 && fc_target <= 1.0)) throw ConfigError("fc_target must lie in (0, 1]");
  OptimizationResult r = optimize_for_failure(profiles, rates, 1.0 - fc_target, options);
  r.fc_target = fc_target;
  return r;
}

OptimizationResult optimize_for_failure(const std::vector<SectionProfile>& profiles,
                                        const ErrorRateProfile& rates, double failure_target,
                                        const OptimizerOptions& options) {
  if (!(failure_target >= 0.0 && failure_target < 1.0)) {
    throw ConfigError("failure target must lie in [0, 1)");
  }
  validate_profiles(profiles);
  rates.validate();
  const HConvention h = options.h;

  OptimizationResult r;
  r.failure_target = failure_target;
  r.fc_target = 1.0 - failure_target;

  struct Entry {
    const SectionProfile* p;
    double base;  // 1 - FC_S(0)
    double gain;  // dFC_S/df
    double key;   // d log FC_S / dt at f = 0
  };
  std::vector<Entry> entries;
  double log_fc0 = 0.0;
  double fc0 = 1.0;
  for (const auto& p : profiles) {
    const std::size_t i = static_cast<std::size_t>(p.id);
    Entry e{&p, fault_coverage_complement(p, rates, 0.0, h), coverage_gain(p, rates, h), 0.0};
    e.key = e.gain / ((1.0 - e.base) * p.t_cost);
    r.fce[i] = fce(p, rates);
    r.fce_marginal[i] = fce_marginal(p, rates, h);
    log_fc0 += std::log1p(-e.base);
    fc0 *= 1.0 - e.base;
    entries.push_back(e);
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.key != b.key) return a.key > b.key;
    return a.p->id < b.p->id;
  });

  // Remaining gap in log FC.
  const double deficit0 = std::log1p(-failure_target) - log_fc0;
  double deficit = deficit0;
  for (const Entry& e : entries) {
    if (deficit <= 0.0) break;
    if (e.gain <= 0.0) continue;
    r.order.push_back(e.p->id);
    const std::size_t i = static_cast<std::size_t>(e.p->id);
    const double full = std::log1p(-(e.base - e.gain)) - std::log1p(-e.base);
    if (full <= deficit * (1.0 + 1e-12)) {
      r.assignment.f[i] = 1.0;
      deficit -= full;
    } else {
      // (1 - base + gain f) = (1 - base) exp(deficit)
      r.assignment.f[i] = std::clamp((1.0 - e.base) * std::expm1(deficit) / e.gain, 0.0, 1.0);
      deficit = 0.0;
    }
  }

  FrequencyAssignment all_on;
  all_on.f = {1.0, 1.0, 1.0};
  r.best_achievable_failure = attention_failure(all_on, profiles, rates, h);
  r.best_achievable_fc = 1.0 - r.best_achievable_failure;
  r.infeasible = deficit > 1e-9 * std::max(deficit0, 0.0) ||
                 r.best_achievable_failure > failure_target * (1.0 + 1e-9);
  if (r.infeasible) {
    for (const auto& p : profiles) r.assignment.f[static_cast<std::size_t>(p.id)] = 1.0;
  }

  r.cost = 0.0;
  r.approximate_fc = fc0;
  for (const Entry& e : entries) {
    const std::size_t i = static_cast<std::size_t>(e.p->id);
    r.time[i] = r.assignment.f[i] * e.p->t_cost;
    r.cost += r.time[i];
    r.approximate_fc += e.gain * r.assignment.f[i];
  }
  r.analytic_failure = attention_failure(r.assignment, profiles, rates, h);
  r.analytic_fc = attention_fc(r.assignment, profiles, rates, h);
  return r;
}

MonteCarloResult monte_carlo_validate(const FrequencyAssignment& assignment,
                                      const std::vector<SectionProfile>& profiles,
                                      const ErrorRateProfile& rates, std::size_t trials,
                                      std::uint64_t seed, HConvention h, unsigned threads) {
  if (trials == 0) throw ConfigError("monte_carlo_validate needs at least one trial");
  assignment.validate();
  validate_profiles(profiles);
  rates.validate();

  struct Outcome {
    double weight;
    double survival;
  };
  struct SectionSim {
    double mean = 0.0;
    double f = 0.0;
    std::vector<Outcome> outcomes;
  };
  std::vector<SectionSim> sims;
  for (const auto& p : profiles) {
    SectionSim s;
    s.f = assignment.of(p.id);
    for (const auto& op : p.ops)
      for (ErrorType e : kAllErrorTypes) {
        const double w = rates.rate(e) * op.n_flops;
        s.mean += w;
        s.outcomes.push_back({w, unhandled_survival(op, e, h)});
      }
    sims.push_back(std::move(s));
  }

  constexpr std::size_t kChunk = 1 << 16;
  const std::size_t chunks = (trials + kChunk - 1) / kChunk;
  std::vector<std::size_t> ok(chunks, 0);
  detail::parallel_for(chunks, threads, [&](std::size_t c) {
    std::mt19937_64 rng(derive_seed(seed, 0xC0DE, c));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::poisson_distribution<unsigned>> counts;
    std::vector<std::discrete_distribution<std::size_t>> which;
    for (const auto& s : sims) {
      counts.emplace_back(s.mean > 0.0 ? s.mean : 1.0);
      std::vector<double> w;
      for (const auto& o : s.outcomes) w.push_back(o.weight);
      which.emplace_back(w.begin(), w.end());
    }
    const std::size_t begin = c * kChunk, end = std::min(trials, begin + kChunk);
    for (std::size_t t = begin; t < end; ++t) {
      bool survived = true;
      for (std::size_t si = 0; si < sims.size() && survived; ++si) {
        const SectionSim& s = sims[si];
        if (s.mean <= 0.0) continue;
        const unsigned n = counts[si](rng);
        if (n == 0) continue;
        const bool checked = unit(rng) < s.f;
        if (checked) {
          survived = n == 1;
          continue;
        }
        for (unsigned k = 0; k < n && survived; ++k)
          survived = unit(rng) < s.outcomes[which[si](rng)].survival;
      }
      ok[c] += survived;
    }
  });

  MonteCarloResult m;
  m.trials = trials;
  m.successes = std::accumulate(ok.begin(), ok.end(), std::size_t{0});
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(m.successes) / n;
  m.fc = p;
  m.std_error = std::sqrt(p * (1.0 - p) / n);
  const double z = 3.0;
  const double denom = 1.0 + z * z / n;
  const double centre = (p + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
  m.ci_low = std::max(0.0, centre - half);
  m.ci_high = std::min(1.0, centre + half);
  return m;
}

const char* to_string(ModelFamily m) noexcept {
  switch (m) {
    case ModelFamily::Bert: return "bert";
    case ModelFamily::Gpt2: return "gpt2";
    case ModelFamily::GptNeo: return "gpt-neo";
    case ModelFamily::Roberta: return "roberta";
  }
  return "?";
}

ModelFamily parse_model_family(const std::string& s) {
  std::string k;
  for (char c : s)
    if (std::isalnum(static_cast<unsigned char>(c)))
      k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (k == "bert") return ModelFamily::Bert;
  if (k == "gpt2") return ModelFamily::Gpt2;
  if (k == "gptneo" || k == "neo") return ModelFamily::GptNeo;
  if (k == "roberta") return ModelFamily::Roberta;
  throw ConfigError("unknown model family: " + s);
}

std::array<std::array<double, 3>, 5> vulnerability_table(ModelFamily m) noexcept {
  // Columns: INF, NaN, near-INF. Rows: Q, K, V, AS, CL.
  switch (m) {
    case ModelFamily::Bert:
      return {{{1.0, 1.0, 0.459}, {1.0, 1.0, 0.434}, {1.0, 1.0, 0.063}, {1.0, 1.0, 0.002},
               {1.0, 1.0, 0.006}}};
    case ModelFamily::Gpt2:
      return {{{0.918, 1.0, 0.384}, {0.868, 1.0, 0.372}, {1.0, 1.0, 0.010}, {0.569, 0.547, 0.005},
               {1.0, 1.0, 0.007}}};
    case ModelFamily::GptNeo:
      return {{{1.0, 1.0, 0.103}, {0.856, 1.0, 0.144}, {1.0, 1.0, 0.058}, {0.547, 0.547, 0.112},
               {1.0, 1.0, 0.096}}};
    case ModelFamily::Roberta:
      return {{{1.0, 1.0, 0.540}, {0.999, 1.0, 0.499}, {1.0, 1.0, 0.036}, {1.0, 1.0, 0.055},
               {1.0, 1.0, 0.004}}};
  }
  return {};
}

std::vector<SectionProfile> build_section_profiles(const AttentionDims& dims, ModelFamily model) {
  const auto table = vulnerability_table(model);
  auto op = [&](const char* name, double flops, GemmSite site) {
    const std::size_t row = site == GemmSite::O ? static_cast<std::size_t>(GemmSite::CL)
                                                : static_cast<std::size_t>(site);
    return OpProfile{name, flops, table[row]};
  };
  std::vector<SectionProfile> out;
  for (SectionId s : kAllSections) {
    const auto flops = section_gemm_flops(s, dims);
    SectionProfile p;
    p.id = s;
    p.t_cost = static_cast<double>(section_cost(s, dims));
    switch (s) {
      case SectionId::AS:
        p.ops = {op("XWq", flops[0], GemmSite::Q), op("XWk", flops[1], GemmSite::K),
                 op("QKt", flops[2], GemmSite::AS)};
        break;
      case SectionId::CL:
        p.ops = {op("XWv", flops[0], GemmSite::V), op("APV", flops[1], GemmSite::CL)};
        break;
      case SectionId::O: p.ops = {op("CLWo", flops[0], GemmSite::O)}; break;
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace abftattn
