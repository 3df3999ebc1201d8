#include "abftattn/checksum.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace abftattn {

const char* to_string(Axis a) noexcept { return a == Axis::Column ? "column" : "row"; }

float finite_max_abs(std::span<const float> xs, float near_inf_threshold) noexcept {
  float m = 0.0f;
  for (float x : xs) {
    const float ax = std::fabs(x);
    if (std::isfinite(ax) && ax <= near_inf_threshold) m = std::max(m, ax);
  }
  return m;
}

float max_abs_sum(const Matrix& m, Axis axis, float near_inf_threshold) noexcept {
  const bool by_column = axis == Axis::Column;
  std::vector<double> sums(by_column ? m.cols() : m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const float ax = std::fabs(m(i, j));
      if (std::isfinite(ax) && ax <= near_inf_threshold) sums[by_column ? j : i] += ax;
    }
  double best = 0.0;
  for (double x : sums) best = std::max(best, x);
  return static_cast<float>(best);
}

namespace {

void finish(ChecksumPair& p) { p.magnitude = finite_max_abs(p.unweighted); }

}  // namespace

ChecksumPair encode_column_checksums(const Matrix& a, FlopCounter* fc) {
  ChecksumPair p;
  p.axis = Axis::Column;
  p.unweighted.assign(a.cols(), 0.0f);
  p.weighted.assign(a.cols(), 0.0f);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const float w = static_cast<float>(i + 1);
    auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) {
      p.unweighted[j] += r[j];
      p.weighted[j] += w * r[j];
    }
  }
  count(fc, 3ull * a.size());
  finish(p);
  return p;
}

ChecksumPair encode_row_checksums(const Matrix& b, FlopCounter* fc) {
  ChecksumPair p;
  p.axis = Axis::Row;
  p.unweighted.assign(b.rows(), 0.0f);
  p.weighted.assign(b.rows(), 0.0f);
  for (std::size_t i = 0; i < b.rows(); ++i) {
    auto r = b.row(i);
    float s = 0.0f;
    float ws = 0.0f;
    for (std::size_t j = 0; j < b.cols(); ++j) {
      s += r[j];
      ws += static_cast<float>(j + 1) * r[j];
    }
    p.unweighted[i] = s;
    p.weighted[i] = ws;
  }
  count(fc, 3ull * b.size());
  finish(p);
  return p;
}

ChecksumPair recompute_checksums(const Matrix& c, Axis axis, FlopCounter* fc) {
  return axis == Axis::Column ? encode_column_checksums(c, fc) : encode_row_checksums(c, fc);
}

ChecksumPair propagate_column_checksums(const ChecksumPair& a_col, const Matrix& b,
                                        FlopCounter* fc) {
  if (a_col.axis != Axis::Column) throw ConfigError("expected column checksums");
  if (a_col.size() != b.rows()) throw ShapeError("column checksum length != rows of B");
  ChecksumPair p;
  p.axis = Axis::Column;
  p.unweighted.assign(b.cols(), 0.0f);
  p.weighted.assign(b.cols(), 0.0f);
  for (std::size_t j = 0; j < b.cols(); ++j) {
    float s = 0.0f;
    float ws = 0.0f;
    for (std::size_t k = 0; k < b.rows(); ++k) {
      s += a_col.unweighted[k] * b(k, j);
      ws += a_col.weighted[k] * b(k, j);
    }
    p.unweighted[j] = s;
    p.weighted[j] = ws;
  }
  count(fc, 4ull * b.size());
  finish(p);
  return p;
}

ChecksumPair propagate_row_checksums(const Matrix& a, const ChecksumPair& b_row,
                                     FlopCounter* fc) {
  if (b_row.axis != Axis::Row) throw ConfigError("expected row checksums");
  if (b_row.size() != a.cols()) throw ShapeError("row checksum length != cols of A");
  ChecksumPair p;
  p.axis = Axis::Row;
  p.unweighted.assign(a.rows(), 0.0f);
  p.weighted.assign(a.rows(), 0.0f);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    float s = 0.0f;
    float ws = 0.0f;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      s += r[k] * b_row.unweighted[k];
      ws += r[k] * b_row.weighted[k];
    }
    p.unweighted[i] = s;
    p.weighted[i] = ws;
  }
  count(fc, 4ull * a.size());
  finish(p);
  return p;
}

EncodedMatrix transposed(const EncodedMatrix& m) {
  EncodedMatrix t;
  t.matrix = m.matrix.transposed();
  if (m.col) {
    t.row = *m.col;
    t.row->axis = Axis::Row;
  }
  if (m.row) {
    t.col = *m.row;
    t.col->axis = Axis::Column;
  }
  return t;
}

EncodedMatrix update_checksums_through_gemm(const EncodedMatrix& a, const EncodedMatrix& b,
                                            Matrix c, FlopCounter* fc) {
  if (a.matrix.cols() != b.matrix.rows() || c.rows() != a.matrix.rows() ||
      c.cols() != b.matrix.cols()) {
    throw ShapeError("update_checksums_through_gemm: shapes do not match C = A * B");
  }
  if (!a.col && !b.row) {
    throw ConfigError("update_checksums_through_gemm: need column checksums on A or row "
                      "checksums on B");
  }
  EncodedMatrix out;
  if (a.col) out.col = propagate_column_checksums(*a.col, b.matrix, fc);
  if (b.row) out.row = propagate_row_checksums(a.matrix, *b.row, fc);
  out.matrix = std::move(c);
  return out;
}

ChecksumDelta checksum_delta(const ChecksumPair& stored, const ChecksumPair& fresh) {
  if (stored.axis != fresh.axis) throw ConfigError("checksum_delta: axis mismatch");
  if (stored.size() != fresh.size() || stored.weighted.size() != fresh.weighted.size()) {
    throw ConfigError("checksum_delta: length mismatch");
  }
  ChecksumDelta d;
  d.axis = stored.axis;
  d.delta1.resize(stored.size());
  d.delta2.resize(stored.size());
  for (std::size_t i = 0; i < stored.size(); ++i) {
    d.delta1[i] = stored.unweighted[i] - fresh.unweighted[i];
    d.delta2[i] = stored.weighted[i] - fresh.weighted[i];
  }
  return d;
}

float roundoff_threshold(std::size_t k, float mag_a, float mag_b) {
  return kUnitRoundoff * static_cast<float>(k) * mag_a * mag_b * kRoundoffSlack;
}

}  // namespace abftattn
