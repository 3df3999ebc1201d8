#include "abftattn/core_numerics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

namespace abftattn {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) throw ShapeError("matrix dimensions must be >= 1");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) throw ShapeError("matrix dimensions must be >= 1");
  if (data_.size() != rows * cols) throw ShapeError("matrix data length != rows * cols");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<float> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged row in Matrix::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) noexcept {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

float max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("max_abs_diff: shape mismatch");
  float worst = 0.0f;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const float d = std::fabs(da[i] - db[i]);
    if (std::isnan(d)) return std::numeric_limits<float>::quiet_NaN();
    worst = std::max(worst, d);
  }
  return worst;
}

BatchedMatrix::BatchedMatrix(std::size_t batches, std::size_t heads, std::size_t rows,
                             std::size_t cols)
    : batches_(batches), heads_(heads), rows_(rows), cols_(cols) {
  if (batches * heads == 0) throw ShapeError("batched matrix needs batches * heads >= 1");
  slices_.assign(batches * heads, Matrix(rows, cols));
}

Matrix& BatchedMatrix::at(std::size_t batch, std::size_t head) {
  if (batch >= batches_ || head >= heads_) throw ShapeError("batched matrix index out of range");
  return slices_[batch * heads_ + head];
}

const Matrix& BatchedMatrix::at(std::size_t batch, std::size_t head) const {
  if (batch >= batches_ || head >= heads_) throw ShapeError("batched matrix index out of range");
  return slices_[batch * heads_ + head];
}

const char* to_string(FloatClass c) noexcept {
  switch (c) {
    case FloatClass::Finite: return "finite";
    case FloatClass::NearInf: return "near_inf";
    case FloatClass::Inf: return "inf";
    case FloatClass::NaN: return "nan";
  }
  return "?";
}

Matrix gemm(const Matrix& a, const Matrix& b, bool trans_a, bool trans_b) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != kb) {
    throw ShapeError("gemm: inner dimensions differ (" + std::to_string(k) + " vs " +
                     std::to_string(kb) + ")");
  }

  Matrix c(m, n);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  const std::size_t lda = a.cols();
  const std::size_t ldb = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) {
        const float av = trans_a ? pa[p * lda + i] : pa[i * lda + p];
        const float bv = trans_b ? pb[j * ldb + p] : pb[p * ldb + j];
        acc += av * bv;
      }
      c(i, j) = acc;
    }
  }
  return c;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto dst = out.row(r);
    // NaN never compares greater, so it is skipped here and surfaces through
    // the exp below instead.
    float mx = -std::numeric_limits<float>::infinity();
    for (float x : in)
      if (x > mx) mx = x;
    float sum = 0.0f;
    for (std::size_t j = 0; j < in.size(); ++j) {
      dst[j] = std::exp(in[j] - mx);
      sum += dst[j];
    }
    for (float& x : dst) x /= sum;
  }
  return out;
}

Matrix scale(const Matrix& m, float factor) {
  Matrix out = m;
  for (float& x : out.data()) x *= factor;
  return out;
}

FloatClass classify_value(float x, float near_inf_threshold) noexcept {
  if (std::isnan(x)) return FloatClass::NaN;
  if (std::isinf(x)) return FloatClass::Inf;
  if (std::fabs(x) > near_inf_threshold) return FloatClass::NearInf;
  return FloatClass::Finite;
}

float flip_bit(float x, unsigned pos) {
  if (pos > 31) throw std::out_of_range("flip_bit: bit position must be in [0, 31]");
  return std::bit_cast<float>(std::bit_cast<std::uint32_t>(x) ^ (std::uint32_t{1} << pos));
}

}  // namespace abftattn
