#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "abftattn/attention.hpp"

namespace abftattn {

struct SectionCostCheck {
  SectionId section = SectionId::AS;
  std::uint64_t model_flops = 0;    ///< section_cost
  std::uint64_t counted_flops = 0;  ///< instrumented counter, fault-free run
  double ratio() const noexcept;    ///< counted / model
};

struct BenchResult {
  AttentionDims dims;
  std::size_t repeats = 0;
  double unprotected_ms = 0.0;  ///< median
  double protected_ms = 0.0;    ///< median
  double ratio = 0.0;           ///< protected / unprotected
  std::array<SectionCostCheck, 3> sections{};

  /// Every section's counter is within a factor of two of the model.
  bool cost_model_agrees() const noexcept;
};

/// Times unprotected and fully protected forward passes on random inputs
/// and compares the counted ABFT flops with section_cost. Throws
/// ConfigError when repeats is 0.
BenchResult run_bench(const AttentionDims& dims, std::size_t repeats, std::uint64_t seed);

}  // namespace abftattn
