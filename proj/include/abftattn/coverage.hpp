#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "abftattn/attention.hpp"

namespace abftattn {

/// Error classes of the coverage model.
enum class ErrorType : std::uint8_t { Inf = 0, NaN = 1, NearInf = 2 };
inline constexpr std::array<ErrorType, 3> kAllErrorTypes{ErrorType::Inf, ErrorType::NaN,
                                                         ErrorType::NearInf};
const char* to_string(ErrorType e) noexcept;

/// Errors per flop for each error type.
struct ErrorRateProfile {
  double lambda_inf = 0.0;
  double lambda_nan = 0.0;
  double lambda_ninf = 0.0;

  double rate(ErrorType e) const noexcept;
  void validate() const;
  static ErrorRateProfile uniform(double lambda) noexcept { return {lambda, lambda, lambda}; }
};

struct OpProfile {
  std::string name;
  double n_flops = 0.0;
  /// Probability that an unhandled error of each type leads to a
  /// non-trainable state, indexed by ErrorType.
  std::array<double, 3> phi{0.0, 0.0, 0.0};

  void validate() const;
};

struct SectionProfile {
  SectionId id = SectionId::AS;
  std::vector<OpProfile> ops;
  double t_cost = 1.0;

  void validate() const;
};

struct FrequencyAssignment {
  std::array<double, 3> f{0.0, 0.0, 0.0};  ///< indexed by SectionId

  double of(SectionId s) const noexcept { return f[static_cast<std::size_t>(s)]; }
  void validate() const;
};

/// How the unhandled term of H is read. Printed: H = f + (1 - f) phi.
/// Survival: H = f + (1 - f)(1 - phi), treating phi as a failure probability.
enum class HConvention : std::uint8_t { Printed, Survival };
const char* to_string(HConvention c) noexcept;

/// Probability that an unchecked single error of this type in this op does
/// not cause a failure.
double unhandled_survival(const OpProfile& op, ErrorType e, HConvention h) noexcept;

/// Poisson pmf of k events with mean lambda * n, computed in log space.
double poisson_prob(double lambda, double n, unsigned k);

/// Expected number of errors in the section.
double section_error_mean(const SectionProfile& section, const ErrorRateProfile& rates);
/// R_free: probability of no error anywhere in the section.
double section_free_prob(const SectionProfile& section, const ErrorRateProfile& rates);
/// R^e(j): exactly one error, of type e, in op j and none elsewhere.
double section_single_error_prob(const SectionProfile& section, const ErrorRateProfile& rates,
                                 std::size_t op_index, ErrorType e);
/// Probability of two or more errors in the section.
double section_multi_error_prob(const SectionProfile& section, const ErrorRateProfile& rates);

/// FC_S = R_free + sum R^e(i) H^e_i.
double fault_coverage(const SectionProfile& section, const ErrorRateProfile& rates, double f,
                      HConvention h = HConvention::Printed);
/// 1 - FC_S, evaluated without cancellation.
double fault_coverage_complement(const SectionProfile& section, const ErrorRateProfile& rates,
                                 double f, HConvention h = HConvention::Printed);
/// dFC_S/df; FC_S is linear in f.
double coverage_gain(const SectionProfile& section, const ErrorRateProfile& rates,
                     HConvention h = HConvention::Printed);

double attention_fc(const FrequencyAssignment& assignment,
                    const std::vector<SectionProfile>& profiles, const ErrorRateProfile& rates,
                    HConvention h = HConvention::Printed);
/// 1 - FC_att, evaluated without cancellation.
double attention_failure(const FrequencyAssignment& assignment,
                         const std::vector<SectionProfile>& profiles,
                         const ErrorRateProfile& rates, HConvention h = HConvention::Printed);

/// (R_free + sum R^e(i)(1 - phi)) / T_S.
double fce(const SectionProfile& section, const ErrorRateProfile& rates);
/// dFC_S / dt_S with t_S = f T_S, i.e. coverage_gain / T_S.
double fce_marginal(const SectionProfile& section, const ErrorRateProfile& rates,
                    HConvention h = HConvention::Printed);

struct OptimizerOptions {
  HConvention h = HConvention::Printed;
};

struct OptimizationResult {
  FrequencyAssignment assignment;
  std::array<double, 3> time{0.0, 0.0, 0.0};  ///< t_S = f_S T_S
  std::array<double, 3> fce{0.0, 0.0, 0.0};
  std::array<double, 3> fce_marginal{0.0, 0.0, 0.0};
  std::vector<SectionId> order;  ///< allocation order
  double fc_target = 1.0;
  double failure_target = 0.0;
  double analytic_fc = 1.0;      ///< exact product FC_att
  double analytic_failure = 0.0;
  double approximate_fc = 1.0;   ///< additive first-order estimate
  double cost = 0.0;             ///< sum f_S T_S
  bool infeasible = false;
  double best_achievable_fc = 1.0;
  double best_achievable_failure = 0.0;
};

/// Greedy allocation: sections are visited by decreasing coverage gained per
/// unit cost, each saturated until the remaining gap fits in one section,
/// which gets the partial allocation that closes it exactly.
OptimizationResult optimize_frequencies(const std::vector<SectionProfile>& profiles,
                                        const ErrorRateProfile& rates, double fc_target,
                                        const OptimizerOptions& options = {});
/// Same with the target given as an allowed failure probability 1 - FC,
/// which keeps resolution for targets like 1e-11.
OptimizationResult optimize_for_failure(const std::vector<SectionProfile>& profiles,
                                        const ErrorRateProfile& rates, double failure_target,
                                        const OptimizerOptions& options = {});

struct MonteCarloResult {
  std::size_t trials = 0;
  std::size_t successes = 0;
  double fc = 1.0;
  double std_error = 0.0;  ///< binomial, from the empirical rate
  double ci_low = 1.0;     ///< Wilson 99.7% interval
  double ci_high = 1.0;
};

/// Simulates invocations: per-section error counts are Poisson, each
/// section is checked with probability f. A checked section survives at most
/// one error; an unchecked one survives each error with the unhandled
/// survival probability of its op and type.
MonteCarloResult monte_carlo_validate(const FrequencyAssignment& assignment,
                                      const std::vector<SectionProfile>& profiles,
                                      const ErrorRateProfile& rates, std::size_t trials,
                                      std::uint64_t seed, HConvention h = HConvention::Printed,
                                      unsigned threads = 1);

enum class ModelFamily : std::uint8_t { Bert, Gpt2, GptNeo, Roberta };
const char* to_string(ModelFamily m) noexcept;
ModelFamily parse_model_family(const std::string& s);

/// Profiled non-trainable probabilities, indexed [site Q..CL][ErrorType].
std::array<std::array<double, 3>, 5> vulnerability_table(ModelFamily m) noexcept;

/// Section profiles for an attention layer: op flops from the GEMM shapes,
/// T_S from section_cost, phi from the model's vulnerability table. The
/// output projection borrows the CL values.
std::vector<SectionProfile> build_section_profiles(const AttentionDims& dims, ModelFamily model);

}  // namespace abftattn
