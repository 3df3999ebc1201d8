#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "abftattn/eec_abft.hpp"

using namespace abftattn;

namespace {

constexpr float kInf = std::numeric_limits<float>::infinity();
constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

EecConfig small_cfg() { return EecConfig{}.with_roundoff(1e-4f); }

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> mag(0.1f, 1.0f);
  std::bernoulli_distribution neg(0.5);
  Matrix m(r, c);
  for (float& x : m.data()) x = neg(rng) ? -mag(rng) : mag(rng);
  return m;
}

EncodedMatrix encode_both(const Matrix& m) {
  return {m, encode_column_checksums(m), encode_row_checksums(m)};
}

float apply(float x, int kind) {
  switch (kind) {
    case 0: return kInf;
    case 1: return -kInf;
    case 2: return kNaN;
    default: return flip_bit(x, 30);
  }
}

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST(EecConfig, Validation) {
  EXPECT_NO_THROW(EecConfig{}.validate());
  EecConfig bad;
  bad.correct_threshold = 1e11f;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = EecConfig{};
  bad.roundoff = 0.0f;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = EecConfig{};
  bad.roundoff = 2e5f;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_GT(EecConfig{}.with_roundoff(0.0f).roundoff, 0.0f);
}

TEST(CountSuspects, Examples) {
  const EecConfig cfg;
  std::vector<float> a{1e12f, 2, 3};
  EXPECT_EQ(count_suspects(StridedView(a), FloatClass::Inf, cfg), 1u);
  std::vector<float> b{kNaN, 1e12f, kInf};
  EXPECT_EQ(count_suspects(StridedView(b), FloatClass::NaN, cfg), 3u);
  EXPECT_EQ(count_suspects(StridedView(b), FloatClass::Inf, cfg), 2u);
  EXPECT_EQ(count_suspects(StridedView(b), FloatClass::Finite, cfg), 1u);
  std::vector<float> c{1, 2, 3};
  EXPECT_EQ(count_suspects(StridedView(c), FloatClass::Finite, cfg), 0u);
}

TEST(DetectVector, Clean) {
  std::vector<float> v{1, 2, 3};
  EXPECT_TRUE(is_clean(detect_and_correct_vector(StridedView(v), 6, 14, small_cfg())));
}

TEST(DetectVector, InfReconstruct) {
  std::vector<float> v{1, 2, kInf};
  Verdict r = detect_and_correct_vector(StridedView(v), 6, 14, small_cfg());
  auto* c = std::get_if<verdict::Corrected>(&r);
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->index, 2u);
  EXPECT_EQ(c->new_value, 3.0f);
  EXPECT_EQ(c->strategy, Strategy::Reconstruct);
  EXPECT_EQ(c->fault_class, FloatClass::Inf);
  EXPECT_EQ(v[2], 3.0f);
}

TEST(DetectVector, NearInfReconstruct) {
  std::vector<float> v{1e12f, 2, 3};
  Verdict r = detect_and_correct_vector(StridedView(v), 6, 14, small_cfg());
  auto* c = std::get_if<verdict::Corrected>(&r);
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->index, 0u);
  EXPECT_EQ(c->strategy, Strategy::Reconstruct);
  EXPECT_EQ(c->fault_class, FloatClass::NearInf);
  EXPECT_EQ(v[0], 1.0f);
}

TEST(DetectVector, FiniteDeltaAdjust) {
  std::vector<float> v{1, 2.5f, 3};
  Verdict r = detect_and_correct_vector(StridedView(v), 6, 14, small_cfg());
  auto* c = std::get_if<verdict::Corrected>(&r);
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->index, 1u);
  EXPECT_EQ(c->strategy, Strategy::DeltaAdjust);
  EXPECT_EQ(v[1], 2.0f);
}

TEST(DetectVector, NaNLocatesFirstNaN) {
  std::vector<float> v{1, kNaN, 3};
  Verdict r = detect_and_correct_vector(StridedView(v), 6, 14, small_cfg());
  auto* c = std::get_if<verdict::Corrected>(&r);
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->index, 1u);
  EXPECT_EQ(v[1], 2.0f);
}

TEST(DetectVector, NaNChecksumFallsBackToInf) {
  // NaN in the stored checksum with an INF in the data: INF search wins.
  std::vector<float> v{1, kInf, 3};
  Verdict r = detect_and_correct_vector(StridedView(v), kNaN, 14, small_cfg());
  // The reconstruction uses a NaN checksum, so it cannot succeed.
  EXPECT_TRUE(std::holds_alternative<verdict::Uncorrectable>(r));
  EXPECT_EQ(v[1], kInf);
}

TEST(DetectVector, Propagation) {
  std::vector<float> v{kNaN, kInf, 3};
  const std::vector<float> before = v;
  Verdict r = detect_and_correct_vector(StridedView(v), 6, 14, small_cfg());
  auto* p = std::get_if<verdict::PropagationDetected>(&r);
  ASSERT_NE(p, nullptr);
  EXPECT_EQ(p->suspect_count, 2u);
  EXPECT_TRUE(same_bits(v, before));
}

TEST(DetectVector, MaxSearchTieLowestIndex) {
  // delta2 is NaN so the ratio is unusable; two equal maxima.
  std::vector<float> v{5, 1, 5};
  Verdict r = detect_and_correct_vector(StridedView(v), 7, kNaN, small_cfg());
  auto* c = std::get_if<verdict::Corrected>(&r);
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->index, 0u);
}

TEST(DetectVector, StridedColumn) {
  Matrix m = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
  ChecksumPair cs = encode_column_checksums(m);
  m(1, 1) = -kInf;
  Verdict r = detect_and_correct_vector(StridedView::column(m, 1), cs.unweighted[1],
                                        cs.weighted[1], small_cfg());
  EXPECT_TRUE(std::holds_alternative<verdict::Corrected>(r));
  EXPECT_EQ(m(1, 1), 4.0f);
  EXPECT_EQ(m(1, 0), 3.0f);
}

TEST(DetectVector, AbortSafety) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> kind(0, 3);
  for (int t = 0; t < 2000; ++t) {
    Matrix m = random_matrix(12, 1, rng);
    ChecksumPair cs = encode_column_checksums(m);
    std::uniform_int_distribution<std::size_t> pos(0, 11);
    const std::size_t i = pos(rng);
    std::size_t j = pos(rng);
    if (j == i) j = (i + 1) % 12;
    m(i, 0) = apply(m(i, 0), kind(rng));
    m(j, 0) = apply(m(j, 0), kind(rng));
    const Matrix before = m;
    Verdict r = detect_and_correct_vector(StridedView::column(m, 0), cs.unweighted[0],
                                          cs.weighted[0], small_cfg());
    if (!std::holds_alternative<verdict::Corrected>(r)) {
      ASSERT_TRUE(bitwise_equal(m, before)) << verdict_name(r);
    }
    if (auto* p = std::get_if<verdict::PropagationDetected>(&r)) EXPECT_GT(p->suspect_count, 1u);
  }
}

TEST(DetectVector, SingleFaultCompleteness) {
  std::mt19937_64 rng(12);
  const std::pair<std::size_t, std::size_t> sizes[] = {{4, 4}, {8, 8}, {16, 31}};
  for (auto [rows, cols] : sizes) {
    Matrix clean = random_matrix(rows, cols, rng);
    const ChecksumPair cs = encode_column_checksums(clean);
    EecConfig cfg = EecConfig{}.with_roundoff(roundoff_threshold(rows, max_abs_sum(clean, Axis::Column), 1.0f));
    for (int kind = 0; kind < 4; ++kind)
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
          Matrix m = clean;
          m(i, j) = apply(m(i, j), kind);
          Verdict r = detect_and_correct_vector(StridedView::column(m, j), cs.unweighted[j],
                                                cs.weighted[j], cfg);
          auto* c = std::get_if<verdict::Corrected>(&r);
          ASSERT_NE(c, nullptr) << rows << "x" << cols << " kind " << kind << " at " << i << ","
                                << j << ": " << verdict_name(r);
          EXPECT_EQ(c->index, i);
          EXPECT_LE(std::fabs(m(i, j) - clean(i, j)), cfg.roundoff);
        }
  }
}

TEST(DetectVector, NoFalsePositives) {
  std::mt19937_64 rng(13);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::size_t vectors = 0;
  while (vectors < 10000) {
    Matrix a(16, 24), b(24, 16);
    for (float& x : a.data()) x = n(rng);
    for (float& x : b.data()) x = n(rng);
    EncodedMatrix ea{a, encode_column_checksums(a), std::nullopt};
    EncodedMatrix c = update_checksums_through_gemm(ea, EncodedMatrix{b, {}, {}}, gemm(a, b));
    const EecConfig cfg =
        EecConfig{}.with_roundoff(roundoff_threshold(24, max_abs_sum(a, Axis::Column), finite_max_abs(b.data())));
    const Matrix before = c.matrix;
    CorrectionLog log = correct_matrix_deterministic(c, Axis::Column, cfg);
    ASSERT_TRUE(log.all_clean());
    ASSERT_TRUE(bitwise_equal(c.matrix, before));
    vectors += log.entries.size();
  }
}

TEST(Deterministic, FaultFree) {
  std::mt19937_64 rng(14);
  EncodedMatrix m = encode_both(random_matrix(8, 8, rng));
  CorrectionLog log = correct_matrix_deterministic(m, Axis::Column, small_cfg());
  EXPECT_EQ(log.entries.size(), 8u);
  EXPECT_TRUE(log.all_clean());
}

TEST(Deterministic, RowOfInf) {
  std::mt19937_64 rng(15);
  const Matrix clean = random_matrix(8, 8, rng);
  EncodedMatrix m = encode_both(clean);
  for (float& x : m.matrix.row(3)) x = kInf;
  CorrectionLog log = correct_matrix_deterministic(m, Axis::Column, small_cfg());
  EXPECT_EQ(log.count_corrected(), 8u);
  EXPECT_LE(max_abs_diff(m.matrix, clean), 1e-5f);
  // Refreshed checksums agree with the repaired data.
  const ChecksumDelta d = checksum_delta(*m.col, recompute_checksums(m.matrix, Axis::Column));
  for (float x : d.delta1) EXPECT_EQ(x, 0.0f);
}

TEST(Deterministic, MixedRow) {
  std::mt19937_64 rng(16);
  const Matrix clean = random_matrix(6, 8, rng);
  EncodedMatrix m = encode_both(clean);
  const float faults[] = {kInf, kNaN, 1e12f, -kInf, 3e11f, kNaN, -1e15f, kInf};
  for (std::size_t j = 0; j < 8; ++j) m.matrix(2, j) = faults[j];
  CorrectionLog log = correct_matrix_deterministic(m, Axis::Column, small_cfg());
  EXPECT_EQ(log.count_corrected(), 8u);
  EXPECT_LE(max_abs_diff(m.matrix, clean), 1e-5f);
}

TEST(Deterministic, RowAxis) {
  std::mt19937_64 rng(17);
  const Matrix clean = random_matrix(6, 5, rng);
  EncodedMatrix m = encode_both(clean);
  for (std::size_t r = 0; r < 6; ++r) m.matrix(r, 4) = kNaN;
  CorrectionLog log = correct_matrix_deterministic(m, Axis::Row, small_cfg());
  EXPECT_EQ(log.count_corrected(), 6u);
  EXPECT_LE(max_abs_diff(m.matrix, clean), 1e-5f);
}

TEST(Deterministic, TwoFaultsInOneColumnUnresolved) {
  std::mt19937_64 rng(18);
  EncodedMatrix m = encode_both(random_matrix(6, 5, rng));
  m.matrix(1, 2) = kInf;
  m.matrix(4, 2) = kNaN;
  CorrectionLog log = correct_matrix_deterministic(m, Axis::Column, small_cfg());
  EXPECT_EQ(log.count_propagation(), 1u);
  EXPECT_TRUE(log.unresolved);
}

TEST(Deterministic, Idempotent) {
  std::mt19937_64 rng(19);
  std::uniform_int_distribution<int> kind(0, 3);
  for (int t = 0; t < 200; ++t) {
    EncodedMatrix m = encode_both(random_matrix(7, 9, rng));
    std::uniform_int_distribution<std::size_t> r(0, 6), c(0, 8);
    const std::size_t i = r(rng), j = c(rng);
    m.matrix(i, j) = apply(m.matrix(i, j), kind(rng));
    correct_matrix_deterministic(m, Axis::Column, small_cfg());
    const EncodedMatrix once = m;
    CorrectionLog second = correct_matrix_deterministic(m, Axis::Column, small_cfg());
    EXPECT_TRUE(second.all_clean());
    EXPECT_TRUE(bitwise_equal(m.matrix, once.matrix));
  }
}

TEST(Nondeterministic, RowPatternUsesColumnsOnly) {
  std::mt19937_64 rng(20);
  const Matrix clean = random_matrix(8, 8, rng);
  EncodedMatrix m = encode_both(clean);
  for (float& x : m.matrix.row(5)) x = kNaN;
  CorrectionLog log = correct_matrix_nondeterministic(m, small_cfg(), small_cfg());
  EXPECT_FALSE(log.row_phase_ran);
  EXPECT_FALSE(log.unresolved);
  EXPECT_LE(max_abs_diff(m.matrix, clean), 1e-5f);
}

TEST(Nondeterministic, ColumnOfNaN) {
  std::mt19937_64 rng(21);
  const Matrix clean = random_matrix(8, 8, rng);
  EncodedMatrix m = encode_both(clean);
  for (std::size_t r = 0; r < 8; ++r) m.matrix(r, 6) = kNaN;
  CorrectionLog log = correct_matrix_nondeterministic(m, small_cfg(), small_cfg());
  EXPECT_TRUE(log.row_phase_ran);
  EXPECT_TRUE(log.column_checksums_rebuilt);
  EXPECT_FALSE(log.unresolved);
  EXPECT_GE(log.count_propagation(), 1u);
  EXPECT_LE(max_abs_diff(m.matrix, clean), 1e-5f);
  const ChecksumDelta d = checksum_delta(*m.col, encode_column_checksums(clean));
  for (float x : d.delta1) EXPECT_LE(std::fabs(x), 1e-4f);
}

TEST(Nondeterministic, SilentColumnPattern) {
  std::mt19937_64 rng(22);
  const Matrix clean = random_matrix(8, 8, rng);
  EncodedMatrix m = encode_both(clean);
  // Errors that cancel in the column sum leave the column check silent.
  m.matrix(1, 3) += 5.0f;
  m.matrix(6, 3) -= 5.0f;
  CorrectionLog log = correct_matrix_nondeterministic(m, small_cfg(), small_cfg());
  EXPECT_TRUE(log.row_phase_ran);
  EXPECT_EQ(log.count_corrected(), 2u);
  EXPECT_LE(max_abs_diff(m.matrix, clean), 1e-5f);
}

TEST(Nondeterministic, TwoDimensionalIsUnresolved) {
  std::mt19937_64 rng(23);
  EncodedMatrix m = encode_both(random_matrix(6, 6, rng));
  for (std::size_t r = 1; r < 3; ++r)
    for (std::size_t c = 1; c < 3; ++c) m.matrix(r, c) = kNaN;
  CorrectionLog log = correct_matrix_nondeterministic(m, small_cfg(), small_cfg());
  EXPECT_TRUE(log.unresolved);
}

TEST(Nondeterministic, RequiresBothChecksums) {
  EncodedMatrix m{Matrix(3, 3), encode_column_checksums(Matrix(3, 3)), std::nullopt};
  EXPECT_THROW(correct_matrix_nondeterministic(m, small_cfg(), small_cfg()), ConfigError);
}
