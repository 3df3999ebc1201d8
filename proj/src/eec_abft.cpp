#include "abftattn/eec_abft.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace abftattn {

void EecConfig::validate() const {
  if (!(roundoff > 0.0f && roundoff < correct_threshold && correct_threshold < near_inf_threshold)) {
    throw ConfigError("EEC thresholds must satisfy 0 < E < T_correct < T_nearINF");
  }
}

EecConfig EecConfig::with_roundoff(float e) const {
  EecConfig c = *this;
  c.roundoff = std::max(e, std::numeric_limits<float>::min());
  return c;
}

const char* to_string(Strategy s) noexcept {
  return s == Strategy::DeltaAdjust ? "delta_adjust" : "reconstruct";
}

const char* verdict_name(const Verdict& v) noexcept {
  switch (v.index()) {
    case 0: return "clean";
    case 1: return "corrected";
    case 2: return "propagation";
    default: return "uncorrectable";
  }
}

namespace {

FloatClass delta_class(float d) noexcept {
  if (std::isnan(d)) return FloatClass::NaN;
  if (std::isinf(d)) return FloatClass::Inf;
  return FloatClass::Finite;
}

// Lowest index wins ties so repeated runs log the same location.
std::size_t argmax_abs(StridedView v) noexcept {
  std::size_t best = 0;
  float best_abs = -1.0f;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float a = std::fabs(v[i]);
    if (a > best_abs) {
      best_abs = a;
      best = i;
    }
  }
  return best;
}

std::size_t first_matching(StridedView v, FloatClass wanted, std::size_t fallback) noexcept {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (classify_value(v[i], std::numeric_limits<float>::max()) == wanted) return i;
  return fallback;
}

float reconstruct(StridedView v, std::size_t skip, float csum) noexcept {
  float others = 0.0f;
  for (std::size_t j = 0; j < v.size(); ++j)
    if (j != skip) others += v[j];
  return csum - others;
}

}  // namespace

std::size_t count_suspects(StridedView v, FloatClass delta1_class, const EecConfig& cfg) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    switch (classify_value(v[i], cfg.near_inf_threshold)) {
      case FloatClass::NearInf: ++n; break;
      case FloatClass::Inf:
        if (delta1_class != FloatClass::Finite) ++n;
        break;
      case FloatClass::NaN:
        if (delta1_class == FloatClass::NaN) ++n;
        break;
      case FloatClass::Finite: break;
    }
  }
  return n;
}

Verdict detect_and_correct_vector(StridedView v, float csum, float wsum, const EecConfig& cfg,
                                  FlopCounter* fc) {
  const std::size_t n = v.size();
  float fresh = 0.0f;
  float wfresh = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    fresh += v[i];
    wfresh += static_cast<float>(i + 1) * v[i];
  }
  count(fc, 3ull * n + 2);

  const float d1 = csum - fresh;
  const float d2 = wsum - wfresh;
  const FloatClass cls = delta_class(d1);
  if (cls == FloatClass::Finite && std::fabs(d1) <= cfg.roundoff) return verdict::Clean{};

  const std::size_t suspects = count_suspects(v, cls, cfg);
  if (suspects > 1) return verdict::PropagationDetected{suspects};

  std::size_t index = 0;
  bool adjust = false;
  switch (cls) {
    case FloatClass::Finite: {
      index = argmax_abs(v);
      if (std::isfinite(d2)) {
        const double loc = std::nearbyint(static_cast<double>(d2) / static_cast<double>(d1)) - 1.0;
        if (loc >= 0.0 && loc < static_cast<double>(n)) index = static_cast<std::size_t>(loc);
      }
      adjust = std::fabs(v[index]) <= cfg.correct_threshold;
      break;
    }
    case FloatClass::Inf: index = argmax_abs(v); break;
    default:
      index = first_matching(v, FloatClass::NaN,
                             first_matching(v, FloatClass::Inf, argmax_abs(v)));
      break;
  }

  const float old = v[index];
  const float repaired = adjust ? old + d1 : reconstruct(v, index, csum);
  count(fc, adjust ? 1 : n);
  if (!std::isfinite(repaired)) {
    return verdict::Uncorrectable{"repair of element " + std::to_string(index) +
                                  " is not finite; remaining elements or checksum corrupted"};
  }
  v[index] = repaired;
  return verdict::Corrected{index, old, repaired, classify_value(old, cfg.near_inf_threshold),
                            adjust ? Strategy::DeltaAdjust : Strategy::Reconstruct};
}

std::size_t CorrectionLog::count_clean() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries) n += std::holds_alternative<verdict::Clean>(e.verdict);
  return n;
}
std::size_t CorrectionLog::count_corrected() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries) n += std::holds_alternative<verdict::Corrected>(e.verdict);
  return n;
}
std::size_t CorrectionLog::count_propagation() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries)
    n += std::holds_alternative<verdict::PropagationDetected>(e.verdict);
  return n;
}
std::size_t CorrectionLog::count_uncorrectable() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries) n += std::holds_alternative<verdict::Uncorrectable>(e.verdict);
  return n;
}

namespace {

StridedView vector_of(Matrix& m, Axis axis, std::size_t i) {
  return axis == Axis::Column ? StridedView::column(m, i) : StridedView::row(m, i);
}

struct PhaseResult {
  bool any_corrected = false;
  bool any_failed = false;  // propagation or uncorrectable
};

PhaseResult run_phase(EncodedMatrix& m, Axis axis, const EecConfig& cfg, CorrectionLog& log,
                      FlopCounter* fc) {
  ChecksumPair& sums = axis == Axis::Column ? *m.col : *m.row;
  const std::size_t count_vectors = axis == Axis::Column ? m.matrix.cols() : m.matrix.rows();
  if (sums.size() != count_vectors) throw ShapeError("checksum length does not match matrix");

  PhaseResult r;
  for (std::size_t i = 0; i < count_vectors; ++i) {
    StridedView v = vector_of(m.matrix, axis, i);
    Verdict verdict = detect_and_correct_vector(v, sums.unweighted[i], sums.weighted[i], cfg, fc);
    if (std::holds_alternative<verdict::Corrected>(verdict)) {
      r.any_corrected = true;
      float s = 0.0f;
      float ws = 0.0f;
      for (std::size_t j = 0; j < v.size(); ++j) {
        s += v[j];
        ws += static_cast<float>(j + 1) * v[j];
      }
      sums.unweighted[i] = s;
      sums.weighted[i] = ws;
      count(fc, 3ull * v.size());
    } else if (!is_clean(verdict)) {
      r.any_failed = true;
    }
    log.entries.push_back({axis, i, std::move(verdict)});
  }
  sums.magnitude = finite_max_abs(sums.unweighted);
  return r;
}

bool row_side_violates(const EncodedMatrix& m, const EecConfig& cfg, FlopCounter* fc) {
  const ChecksumDelta d = checksum_delta(*m.row, recompute_checksums(m.matrix, Axis::Row, fc));
  for (float x : d.delta1)
    if (!(std::fabs(x) <= cfg.roundoff)) return true;
  return false;
}

}  // namespace

CorrectionLog correct_matrix_deterministic(EncodedMatrix& m, Axis axis, const EecConfig& cfg,
                                           FlopCounter* fc) {
  if ((axis == Axis::Column && !m.col) || (axis == Axis::Row && !m.row)) {
    throw ConfigError("correct_matrix_deterministic: matrix carries no checksums on that axis");
  }
  CorrectionLog log;
  const PhaseResult r = run_phase(m, axis, cfg, log, fc);
  log.unresolved = r.any_failed;
  return log;
}

CorrectionLog correct_matrix_nondeterministic(EncodedMatrix& m, const EecConfig& column_cfg,
                                              const EecConfig& row_cfg, FlopCounter* fc) {
  if (!m.col || !m.row) {
    throw ConfigError("correct_matrix_nondeterministic: needs both column and row checksums");
  }
  CorrectionLog log;
  const PhaseResult p1 = run_phase(m, Axis::Column, column_cfg, log, fc);

  const bool silent_pass = !p1.any_corrected && !p1.any_failed;
  if (p1.any_failed || (silent_pass && row_side_violates(m, row_cfg, fc))) {
    log.row_phase_ran = true;
    const PhaseResult p2 = run_phase(m, Axis::Row, row_cfg, log, fc);
    log.unresolved = p2.any_failed;
    m.col = recompute_checksums(m.matrix, Axis::Column, fc);
    log.column_checksums_rebuilt = true;
  } else if (p1.any_corrected) {
    // Row checksums were derived from the faulty operand when the fault came
    // in along rows (1R), so rebuild them from the repaired data.
    m.row = recompute_checksums(m.matrix, Axis::Row, fc);
  }
  return log;
}

}  // namespace abftattn
