#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "abftattn/checksum.hpp"
#include "abftattn/core_numerics.hpp"

namespace abftattn {

inline constexpr float kDefaultCorrectThreshold = 1e5f;

/// Thresholds for extreme-error-correcting ABFT.
struct EecConfig {
  float roundoff = roundoff_threshold(64, 1.0f, 1.0f);  ///< E
  float near_inf_threshold = kDefaultNearInfThreshold;  ///< T_nearINF
  float correct_threshold = kDefaultCorrectThreshold;   ///< T_correct

  /// Throws ConfigError unless 0 < E < T_correct < T_nearINF.
  void validate() const;
  EecConfig with_roundoff(float e) const;
};

enum class Strategy : std::uint8_t { DeltaAdjust, Reconstruct };

const char* to_string(Strategy s) noexcept;

namespace verdict {

struct Clean {};

struct Corrected {
  std::size_t index = 0;
  float old_value = 0.0f;
  float new_value = 0.0f;
  FloatClass fault_class = FloatClass::Finite;
  Strategy strategy = Strategy::Reconstruct;
};

struct PropagationDetected {
  std::size_t suspect_count = 0;
};

struct Uncorrectable {
  std::string reason;
};

}  // namespace verdict

using Verdict = std::variant<verdict::Clean, verdict::Corrected, verdict::PropagationDetected,
                             verdict::Uncorrectable>;

const char* verdict_name(const Verdict& v) noexcept;

inline bool is_clean(const Verdict& v) noexcept {
  return std::holds_alternative<verdict::Clean>(v);
}

/// Counts elements that could be the fault, widening the net with the class
/// of delta1: Finite counts near-INF only, Inf adds INF, NaN adds NaN.
std::size_t count_suspects(StridedView v, FloatClass delta1_class, const EecConfig& cfg);

/// Checks one vector against its stored checksums and repairs it in place
/// when exactly one element is at fault. On PropagationDetected or
/// Uncorrectable the vector is left bit-for-bit untouched.
Verdict detect_and_correct_vector(StridedView v, float csum, float wsum, const EecConfig& cfg,
                                  FlopCounter* fc = nullptr);

struct VectorVerdict {
  Axis axis = Axis::Column;
  std::size_t vector = 0;
  Verdict verdict;
};

struct CorrectionLog {
  std::string tag;
  std::vector<VectorVerdict> entries;
  bool row_phase_ran = false;
  bool column_checksums_rebuilt = false;
  /// Set when some fault could not be repaired by any phase.
  bool unresolved = false;

  std::size_t count_clean() const noexcept;
  std::size_t count_corrected() const noexcept;
  std::size_t count_propagation() const noexcept;
  std::size_t count_uncorrectable() const noexcept;
  bool all_clean() const noexcept { return count_clean() == entries.size(); }
  bool detected() const noexcept { return !all_clean(); }
};

/// Runs EEC-ABFT on every vector along `axis` (columns use column checksums).
/// Corrected vectors get their checksum entries refreshed from the repaired
/// data.
CorrectionLog correct_matrix_deterministic(EncodedMatrix& m, Axis axis, const EecConfig& cfg,
                                           FlopCounter* fc = nullptr);

/// Two-phase recovery for matrices whose fault pattern may be either 1R or
/// 1C.
///
/// Phase 1 tries the column checksums. The row checksums take over when a
/// column reports propagation or cannot be repaired, and also when phase 1
/// sees nothing wrong while the row deltas exceed their threshold (a 1C
/// pattern of moderate errors leaves column checksums consistent with the
/// corrupted data). After a row phase the column checksums are rebuilt from
/// the repaired matrix; after a column-only repair the row checksums are.
CorrectionLog correct_matrix_nondeterministic(EncodedMatrix& m, const EecConfig& column_cfg,
                                              const EecConfig& row_cfg,
                                              FlopCounter* fc = nullptr);

}  // namespace abftattn
