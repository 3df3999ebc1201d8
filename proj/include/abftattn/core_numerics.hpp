#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace abftattn {

/// Raised when operand shapes do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller hands in an inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major fp32 matrix.
///
/// A default-constructed matrix is empty (0 x 0) and only serves as a
/// placeholder; every other constructor requires rows, cols >= 1.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  Matrix transposed() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// True when both matrices have the same shape and identical bit patterns.
bool bitwise_equal(const Matrix& a, const Matrix& b) noexcept;

/// Largest |a - b| over all elements; NaN if any pair disagrees in a way
/// that makes the difference undefined (NaN or INF involvement).
float max_abs_diff(const Matrix& a, const Matrix& b);

/// A (batch, head) grid of equally shaped matrices.
class BatchedMatrix {
 public:
  BatchedMatrix() = default;
  BatchedMatrix(std::size_t batches, std::size_t heads, std::size_t rows, std::size_t cols);

  std::size_t batches() const noexcept { return batches_; }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  Matrix& at(std::size_t batch, std::size_t head);
  const Matrix& at(std::size_t batch, std::size_t head) const;

  std::span<Matrix> slices() noexcept { return slices_; }
  std::span<const Matrix> slices() const noexcept { return slices_; }

 private:
  std::size_t batches_ = 0;
  std::size_t heads_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Matrix> slices_;
};

enum class FloatClass : std::uint8_t { Finite, NearInf, Inf, NaN };

const char* to_string(FloatClass c) noexcept;

inline constexpr float kDefaultNearInfThreshold = 1e10f;

/// C = op(A) * op(B) with a plain fp32 triple loop. The inner dimension is
/// always accumulated in ascending order so results are reproducible bit for
/// bit across calls.
Matrix gemm(const Matrix& a, const Matrix& b, bool trans_a = false, bool trans_b = false);

/// Max-subtracted softmax applied independently to each row.
Matrix softmax_rows(const Matrix& m);

Matrix scale(const Matrix& m, float factor);

FloatClass classify_value(float x, float near_inf_threshold = kDefaultNearInfThreshold) noexcept;

/// Flips bit `pos` (0 = mantissa LSB, 31 = sign) of the IEEE-754 pattern.
float flip_bit(float x, unsigned pos);

}  // namespace abftattn
