#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "abftattn/core_numerics.hpp"

namespace abftattn {

enum class Axis : std::uint8_t { Column, Row };

const char* to_string(Axis a) noexcept;

/// Running flop tally for checksum work.
struct FlopCounter {
  std::uint64_t flops = 0;
  void add(std::uint64_t n) noexcept { flops += n; }
};

inline void count(FlopCounter* fc, std::uint64_t n) noexcept {
  if (fc) fc->add(n);
}

/// A possibly strided view over fp32 elements (a matrix row or column).
class StridedView {
 public:
  StridedView(float* base, std::size_t size, std::size_t stride = 1) noexcept
      : base_(base), size_(size), stride_(stride) {}
  StridedView(std::span<float> s) noexcept : StridedView(s.data(), s.size()) {}  // NOLINT

  static StridedView column(Matrix& m, std::size_t c) noexcept {
    return {m.data().data() + c, m.rows(), m.cols()};
  }
  static StridedView row(Matrix& m, std::size_t r) noexcept { return m.row(r); }

  std::size_t size() const noexcept { return size_; }
  float& operator[](std::size_t i) const noexcept { return base_[i * stride_]; }

 private:
  float* base_;
  std::size_t size_;
  std::size_t stride_;
};

/// Unweighted (v1 = [1..1]) and weighted (v2 = [1, 2, .., n]) checksums
/// along one axis. Column checksums hold one entry per matrix column.
struct ChecksumPair {
  Axis axis = Axis::Column;
  std::vector<float> unweighted;
  std::vector<float> weighted;
  /// Max |unweighted| over finite, non-near-INF entries.
  float magnitude = 0.0f;

  std::size_t size() const noexcept { return unweighted.size(); }
};

struct EncodedMatrix {
  Matrix matrix;
  std::optional<ChecksumPair> col;
  std::optional<ChecksumPair> row;
};

/// Swaps the checksum axes along with the data: column checksums of A
/// become row checksums of A^T.
EncodedMatrix transposed(const EncodedMatrix& m);

struct ChecksumDelta {
  Axis axis = Axis::Column;
  std::vector<float> delta1;
  std::vector<float> delta2;
};

ChecksumPair encode_column_checksums(const Matrix& a, FlopCounter* fc = nullptr);
ChecksumPair encode_row_checksums(const Matrix& b, FlopCounter* fc = nullptr);
ChecksumPair recompute_checksums(const Matrix& c, Axis axis, FlopCounter* fc = nullptr);

/// (v^T A) * B for a column checksum pair of A.
ChecksumPair propagate_column_checksums(const ChecksumPair& a_col, const Matrix& b,
                                        FlopCounter* fc = nullptr);
/// A * (B v) for a row checksum pair of B.
ChecksumPair propagate_row_checksums(const Matrix& a, const ChecksumPair& b_row,
                                     FlopCounter* fc = nullptr);

/// Attaches checksums to C = A * B derived from the input checksums. Column
/// checksums come from A's, row checksums from B's; C itself is never read.
EncodedMatrix update_checksums_through_gemm(const EncodedMatrix& a, const EncodedMatrix& b,
                                            Matrix c, FlopCounter* fc = nullptr);

ChecksumDelta checksum_delta(const ChecksumPair& stored, const ChecksumPair& fresh);

inline constexpr float kUnitRoundoff = 1.1920928955078125e-07f;  // 2^-23
inline constexpr float kRoundoffSlack = 16.0f;

/// E = 2^-23 * k * mag_a * mag_b * 16.
float roundoff_threshold(std::size_t k, float mag_a, float mag_b);

/// Largest sum of |x| down a column (Axis::Column) or along a row
/// (Axis::Row), skipping non-finite and near-INF elements. Bounds the
/// rounding error of a checksum taken along that axis.
float max_abs_sum(const Matrix& m, Axis axis,
                  float near_inf_threshold = kDefaultNearInfThreshold) noexcept;

/// Max |x| over elements that are finite and at most `near_inf_threshold`.
float finite_max_abs(std::span<const float> xs,
                     float near_inf_threshold = kDefaultNearInfThreshold) noexcept;

}  // namespace abftattn
