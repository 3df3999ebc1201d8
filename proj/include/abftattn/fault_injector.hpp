#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "abftattn/attention.hpp"
#include "abftattn/core_numerics.hpp"
#include "abftattn/eec_abft.hpp"

namespace abftattn {

enum class FaultKind : std::uint8_t { PlusInf, MinusInf, NaN, NearInfBitFlip };
inline constexpr std::array<FaultKind, 4> kAllFaultKinds{FaultKind::PlusInf, FaultKind::MinusInf,
                                                         FaultKind::NaN,
                                                         FaultKind::NearInfBitFlip};
const char* to_string(FaultKind k) noexcept;
std::optional<FaultKind> parse_fault_kind(const std::string& s);
std::optional<GemmSite> parse_site(const std::string& s);

struct ElementIndex {
  std::size_t batch = 0;
  std::size_t head = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const ElementIndex&) const = default;
};

/// One fault in the output of a GEMM, applied right after the GEMM.
struct FaultSpec {
  GemmSite site = GemmSite::Q;
  ElementIndex element;
  FaultKind kind = FaultKind::PlusInf;
};

/// Exponent MSB.
inline constexpr unsigned kNearInfBit = 30;
inline constexpr unsigned kNearInfResampleAttempts = 8;

/// Applies the fault to the (row, col) element of one output slice.
/// NearInfBitFlip flips bit 30 of the existing value. Throws
/// std::out_of_range when the element is outside the slice.
Matrix inject(const Matrix& m, const FaultSpec& spec);
void inject_in_place(Matrix& m, const FaultSpec& spec);

struct InjectionRecord {
  ElementIndex element;
  float before = 0.0f;
  float after = 0.0f;
  unsigned bit = kNearInfBit;
  unsigned attempts = 1;       ///< elements tried before one accepted the flip
  bool near_inf_achieved = true;
  bool fallback_bit = false;   ///< accepted with a lower exponent bit
};

/// Near-INF injection with resampling.
///
/// Flipping bit 30 only lands in (T_nearINF, FLT_MAX] for |x| < 1; values
/// in [1, 2) become INF/NaN and larger values collapse towards zero. Up to
/// 8 uniformly drawn elements are tried; after that the slice is scanned in
/// row-major order from the first candidate, also accepting the most
/// significant zero exponent bit below 30 (which scales |x| >= 2 up by at
/// least 2^64). If nothing qualifies the first candidate gets bit 30 anyway
/// and `near_inf_achieved` is false.
InjectionRecord inject_near_inf(Matrix& m, ElementIndex start, std::mt19937_64& rng,
                                float near_inf_threshold = kDefaultNearInfThreshold);

/// Hook that injects `spec` when the matching GEMM slice goes by. Near-INF
/// faults use inject_near_inf with a generator seeded from `resample_seed`.
GemmHook make_injection_hook(const FaultSpec& spec, std::uint64_t resample_seed,
                             InjectionRecord* record = nullptr,
                             float near_inf_threshold = kDefaultNearInfThreshold);

enum class PatternShape : std::uint8_t { None, D0, R1, C1, D2 };
const char* to_string(PatternShape s) noexcept;

struct PropagationPattern {
  PatternShape shape = PatternShape::None;
  /// Indexed by FloatClass: which classes occur among corrupted cells.
  std::array<bool, 4> type_mix{false, false, false, false};
  bool has_positive_inf = false;
  bool has_negative_inf = false;
  std::size_t corrupted_cells = 0;

  bool contains(FloatClass c) const noexcept { return type_mix[static_cast<std::size_t>(c)]; }
  /// e.g. "1R-nan", "1C-inf*", "2D-mix".
  std::string label() const;
};

/// Marks a cell corrupted when its FloatClass changed or the values differ by
/// more than `tolerance`, then classifies the layout of corrupted cells.
PropagationPattern classify_pattern(const Matrix& reference, const Matrix& corrupted,
                                    float tolerance,
                                    float near_inf_threshold = kDefaultNearInfThreshold);
PropagationPattern classify_pattern(const Matrix& reference, const Matrix& corrupted,
                                    const EecConfig& cfg);

/// Matrices observed by the propagation study, in execution order.
enum class TraceMatrix : std::uint8_t { Q, K, V, AS, AP, CL, O };
inline constexpr std::array<TraceMatrix, 7> kTraceMatrices{
    TraceMatrix::Q, TraceMatrix::K, TraceMatrix::V, TraceMatrix::AS,
    TraceMatrix::AP, TraceMatrix::CL, TraceMatrix::O};
const char* to_string(TraceMatrix m) noexcept;
TraceMatrix trace_matrix_of(GemmSite s) noexcept;
/// Matrices computed from the site's output, in order.
std::vector<TraceMatrix> downstream_of(GemmSite s);

struct StudyCell {
  TraceMatrix matrix = TraceMatrix::O;
  std::array<std::size_t, 5> shape_counts{};  ///< indexed by PatternShape
  std::array<std::size_t, 4> class_counts{};  ///< trials in which each class appeared
  std::size_t both_inf_signs = 0;             ///< trials with +INF and -INF present
  std::size_t trials = 0;

  PatternShape modal_shape() const noexcept;
  /// Classes present in at least half of the trials.
  std::array<bool, 4> modal_types() const noexcept;
  std::string label() const;
};

struct StudyRow {
  FaultKind kind = FaultKind::PlusInf;
  GemmSite site = GemmSite::Q;
  std::vector<StudyCell> cells;  ///< one per downstream matrix
  std::size_t near_inf_fallbacks = 0;

  const StudyCell* cell(TraceMatrix m) const noexcept;
};

struct StudyConfig {
  AttentionDims dims;
  std::vector<GemmSite> sites{GemmSite::Q, GemmSite::K, GemmSite::V, GemmSite::AS, GemmSite::CL};
  std::vector<FaultKind> kinds{FaultKind::PlusInf, FaultKind::NaN, FaultKind::NearInfBitFlip};
  std::size_t trials_per_site = 200;
  std::uint64_t seed = 0;
  EecConfig eec;
  unsigned threads = 1;
};

struct PropagationStudy {
  StudyConfig config;
  std::vector<StudyRow> rows;

  const StudyRow* row(FaultKind kind, GemmSite site) const noexcept;
};

/// Injects one fault per trial into an unprotected forward pass and records
/// the propagation pattern in every downstream matrix of the faulted slice.
PropagationStudy run_propagation_study(const StudyConfig& config);

struct CampaignConfig {
  AttentionDims dims;
  double fraction = 0.10;
  std::vector<GemmSite> sites{kAllSites.begin(), kAllSites.end()};
  std::vector<FaultKind> kinds{kAllFaultKinds.begin(), kAllFaultKinds.end()};
  ProtectionConfig protection;
  bool compare_unprotected = true;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct TrialRecord {
  std::size_t trial = 0;
  GemmSite site = GemmSite::Q;
  FaultKind kind = FaultKind::PlusInf;
  InjectionRecord injection;
  bool detected = false;
  bool corrected = false;
  bool uncorrectable = false;
  bool missed = false;
  float residual = 0.0f;        ///< max |O - O_fault_free|; NaN if non-finite
  float residual_bound = 0.0f;  ///< roundoff threshold of the output check
  bool nontrainable_proxy = false;
};

struct CellSummary {
  GemmSite site = GemmSite::Q;
  FaultKind kind = FaultKind::PlusInf;
  std::size_t trials = 0;
  std::size_t detected = 0;
  std::size_t corrected = 0;
  std::size_t uncorrectable = 0;
  std::size_t missed = 0;
  std::size_t nontrainable = 0;
  float max_residual = 0.0f;
};

struct CampaignReport {
  std::size_t trials = 0;
  std::size_t detected = 0;
  std::size_t corrected = 0;
  std::size_t uncorrectable = 0;
  std::size_t missed = 0;
  std::size_t nontrainable = 0;
  /// Largest residual among corrected trials.
  float max_residual = 0.0f;
  /// Largest residual / bound ratio among corrected trials.
  double max_residual_ratio = 0.0;
  std::vector<CellSummary> cells;
  std::vector<TrialRecord> records;

  bool rates_defined() const noexcept { return trials > 0; }
  double detection_rate() const noexcept;
  double correction_rate() const noexcept;
  double nontrainable_proxy_rate() const noexcept;
};

/// Samples `fraction` of the elements of every (site, kind) output without
/// replacement, injects each into a protected forward pass and compares the
/// result with the fault-free output.
CampaignReport run_detection_campaign(const CampaignConfig& config);

/// Per-trial seed derived from a campaign seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept;

}  // namespace abftattn
