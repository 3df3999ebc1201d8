#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "abftattn/checksum.hpp"

using namespace abftattn;

namespace {

constexpr float kInf = std::numeric_limits<float>::infinity();

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Matrix m(r, c);
  for (float& x : m.data()) x = u(rng);
  return m;
}

float threshold_for(const Matrix& a, const Matrix& b) {
  return roundoff_threshold(a.cols(), max_abs_sum(a, Axis::Column), finite_max_abs(b.data()));
}

}  // namespace

TEST(Encode, ColumnExamples) {
  ChecksumPair z = encode_column_checksums(Matrix(3, 2));
  EXPECT_EQ(z.axis, Axis::Column);
  EXPECT_EQ(z.unweighted, (std::vector<float>{0, 0}));
  EXPECT_EQ(z.weighted, (std::vector<float>{0, 0}));

  ChecksumPair p = encode_column_checksums(Matrix::from_rows({{1, 2}, {3, 4}}));
  EXPECT_EQ(p.unweighted, (std::vector<float>{4, 6}));
  EXPECT_EQ(p.weighted, (std::vector<float>{7, 10}));

  ChecksumPair i = encode_column_checksums(Matrix::from_rows({{kInf, 1}, {1, 1}}));
  EXPECT_EQ(i.unweighted[0], kInf);
}

TEST(Encode, RowExamples) {
  ChecksumPair id = encode_row_checksums(Matrix::identity(2));
  EXPECT_EQ(id.axis, Axis::Row);
  EXPECT_EQ(id.unweighted, (std::vector<float>{1, 1}));
  EXPECT_EQ(id.weighted, (std::vector<float>{1, 2}));

  ChecksumPair z = encode_row_checksums(Matrix(2, 3));
  EXPECT_EQ(z.unweighted, (std::vector<float>{0, 0}));

  ChecksumPair one = encode_row_checksums(Matrix::from_rows({{1, 2, 3}}));
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one.unweighted[0], 6.0f);
  EXPECT_EQ(one.weighted[0], 14.0f);
}

TEST(Encode, RecomputeMatchesEncoders) {
  std::mt19937_64 rng(1);
  Matrix m = random_matrix(5, 7, rng);
  EXPECT_EQ(recompute_checksums(m, Axis::Column).unweighted,
            encode_column_checksums(m).unweighted);
  EXPECT_EQ(recompute_checksums(m, Axis::Row).weighted, encode_row_checksums(m).weighted);
}

TEST(Encode, Linearity) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    Matrix a = random_matrix(9, 6, rng), b = random_matrix(9, 6, rng), s(9, 6);
    for (std::size_t i = 0; i < s.size(); ++i) s.data()[i] = a.data()[i] + b.data()[i];
    ChecksumPair ca = encode_column_checksums(a), cb = encode_column_checksums(b),
                 cs = encode_column_checksums(s);
    const float e = roundoff_threshold(9, 2.0f, 1.0f);
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_LE(std::fabs(cs.unweighted[j] - (ca.unweighted[j] + cb.unweighted[j])), e);
      EXPECT_LE(std::fabs(cs.weighted[j] - (ca.weighted[j] + cb.weighted[j])), 9 * e);
    }
  }
}

TEST(Encode, FlopCount) {
  FlopCounter fc;
  encode_column_checksums(Matrix(4, 5), &fc);
  EXPECT_EQ(fc.flops, 3u * 4 * 5);
}

TEST(Propagate, FaultFreeMatchesRecompute) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    Matrix a = random_matrix(m, k, rng), b = random_matrix(k, n, rng);
    EncodedMatrix ea{a, encode_column_checksums(a), std::nullopt};
    EncodedMatrix eb{b, std::nullopt, encode_row_checksums(b)};
    EncodedMatrix c = update_checksums_through_gemm(ea, eb, gemm(a, b));
    ASSERT_TRUE(c.col && c.row);
    const float e_col = roundoff_threshold(k, max_abs_sum(a, Axis::Column), finite_max_abs(b.data()));
    const float e_row = roundoff_threshold(k, finite_max_abs(a.data()), max_abs_sum(b, Axis::Row));
    const ChecksumDelta dc = checksum_delta(*c.col, recompute_checksums(c.matrix, Axis::Column));
    const ChecksumDelta dr = checksum_delta(*c.row, recompute_checksums(c.matrix, Axis::Row));
    for (float d : dc.delta1) ASSERT_LE(std::fabs(d), e_col);
    for (float d : dr.delta1) ASSERT_LE(std::fabs(d), e_row);
  }
}

TEST(Propagate, Calibration32) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int t = 0; t < 10000; ++t) {
    Matrix a(32, 32), b(32, 32);
    for (float& x : a.data()) x = n(rng);
    for (float& x : b.data()) x = n(rng);
    EncodedMatrix ea{a, encode_column_checksums(a), std::nullopt};
    EncodedMatrix c = update_checksums_through_gemm(ea, EncodedMatrix{b, {}, {}}, gemm(a, b));
    const float e = threshold_for(a, b);
    const ChecksumDelta d = checksum_delta(*c.col, recompute_checksums(c.matrix, Axis::Column));
    for (float x : d.delta1) ASSERT_LT(std::fabs(x), e);
  }
}

TEST(Propagate, IdentityKeepsChecksums) {
  std::mt19937_64 rng(5);
  Matrix a = random_matrix(6, 6, rng);
  EncodedMatrix ea{a, encode_column_checksums(a), std::nullopt};
  EncodedMatrix c =
      update_checksums_through_gemm(ea, EncodedMatrix{Matrix::identity(6), {}, {}}, a);
  const float e = roundoff_threshold(6, max_abs_sum(a, Axis::Column), 1.0f);
  for (std::size_t j = 0; j < 6; ++j)
    EXPECT_LE(std::fabs(c.col->unweighted[j] - ea.col->unweighted[j]), e);
}

TEST(Propagate, DetectsInputFault) {
  std::mt19937_64 rng(6);
  Matrix a = random_matrix(8, 8, rng), b = random_matrix(8, 8, rng);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      EncodedMatrix ea{a, encode_column_checksums(a), std::nullopt};
      ea.matrix(i, j) += 10.0f;
      EncodedMatrix c = update_checksums_through_gemm(ea, EncodedMatrix{b, {}, {}},
                                                      gemm(ea.matrix, b));
      const float e = threshold_for(a, b);
      const ChecksumDelta d = checksum_delta(*c.col, recompute_checksums(c.matrix, Axis::Column));
      // A fault in A(i, j) reaches row i of C, so every column sees it.
      std::size_t flagged = 0;
      for (float x : d.delta1) flagged += std::fabs(x) > e;
      EXPECT_GE(flagged, 7u);
    }
}

TEST(Propagate, Errors) {
  Matrix a(2, 3), b(3, 4);
  EncodedMatrix ea{a, std::nullopt, std::nullopt}, eb{b, std::nullopt, std::nullopt};
  EXPECT_THROW(update_checksums_through_gemm(ea, eb, gemm(a, b)), ConfigError);
  ea.col = encode_column_checksums(a);
  EXPECT_THROW(update_checksums_through_gemm(ea, eb, Matrix(3, 3)), ShapeError);
  EXPECT_THROW(update_checksums_through_gemm(EncodedMatrix{Matrix(2, 2), encode_column_checksums(Matrix(2, 2)), {}},
                                             eb, Matrix(2, 4)),
               ShapeError);
}

TEST(Propagate, TransposedSwapsAxes) {
  std::mt19937_64 rng(7);
  Matrix k = random_matrix(5, 3, rng);
  EncodedMatrix ek{k, encode_column_checksums(k), std::nullopt};
  EncodedMatrix kt = transposed(ek);
  ASSERT_TRUE(kt.row && !kt.col);
  EXPECT_EQ(kt.row->axis, Axis::Row);
  EXPECT_EQ(kt.row->unweighted, encode_row_checksums(kt.matrix).unweighted);
}

TEST(Delta, Examples) {
  ChecksumPair p = encode_column_checksums(Matrix::from_rows({{1, 2}, {3, 4}}));
  ChecksumDelta same = checksum_delta(p, p);
  EXPECT_EQ(same.delta1, (std::vector<float>{0, 0}));
  EXPECT_EQ(same.delta2, (std::vector<float>{0, 0}));

  ChecksumPair inf = p;
  inf.unweighted[1] = kInf;
  EXPECT_EQ(checksum_delta(inf, p).delta1[1], kInf);

  ChecksumPair nan = p;
  nan.unweighted[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_TRUE(std::isnan(checksum_delta(nan, p).delta1[0]));

  EXPECT_THROW(checksum_delta(p, encode_row_checksums(Matrix(2, 2))), ConfigError);
  EXPECT_THROW(checksum_delta(p, encode_column_checksums(Matrix(2, 3))), ConfigError);
}

TEST(Delta, SingleErrorSignature) {
  std::mt19937_64 rng(8);
  Matrix c = random_matrix(8, 8, rng);
  const ChecksumPair stored = encode_column_checksums(c);
  const float e = roundoff_threshold(8, max_abs_sum(c, Axis::Column), 1.0f);
  for (float delta : {1.0f, -1.0f, 1e3f, -1e3f})
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        Matrix bad = c;
        bad(i, j) += delta;
        const ChecksumDelta d = checksum_delta(stored, recompute_checksums(bad, Axis::Column));
        EXPECT_NEAR(d.delta1[j], -delta, e + std::fabs(delta) * 1e-6f);
        EXPECT_NEAR(d.delta2[j], -(i + 1.0f) * delta, 8 * e + std::fabs(delta) * 1e-5f);
        EXPECT_EQ(std::lround(d.delta2[j] / d.delta1[j]), static_cast<long>(i + 1));
        for (std::size_t other = 0; other < 8; ++other)
          if (other != j) EXPECT_LE(std::fabs(d.delta1[other]), e);
      }
}

TEST(Roundoff, Formula) {
  EXPECT_FLOAT_EQ(roundoff_threshold(1, 1.0f, 1.0f), 16.0f * std::ldexp(1.0f, -23));
  EXPECT_FLOAT_EQ(roundoff_threshold(10, 2.0f, 3.0f), 16.0f * std::ldexp(1.0f, -23) * 60.0f);
  EXPECT_EQ(roundoff_threshold(4, 0.0f, 0.0f), 0.0f);
}

TEST(Roundoff, MaxAbsSum) {
  Matrix m = Matrix::from_rows({{1, -2}, {-3, kInf}, {1e12f, 4}});
  EXPECT_EQ(max_abs_sum(m, Axis::Column), 6.0f);
  EXPECT_EQ(max_abs_sum(m, Axis::Row), 4.0f);
}

TEST(Roundoff, FiniteMaxAbsIgnoresFaults) {
  std::vector<float> xs{1.0f, -3.0f, kInf, std::numeric_limits<float>::quiet_NaN(), 1e12f};
  EXPECT_EQ(finite_max_abs(xs), 3.0f);
  EXPECT_EQ(finite_max_abs(std::vector<float>{}), 0.0f);
}
