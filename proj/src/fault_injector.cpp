#include "abftattn/fault_injector.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "parallel.hpp"

namespace abftattn {

const char* to_string(FaultKind k) noexcept {
  switch (k) {
    case FaultKind::PlusInf: return "plus_inf";
    case FaultKind::MinusInf: return "minus_inf";
    case FaultKind::NaN: return "nan";
    case FaultKind::NearInfBitFlip: return "near_inf";
  }
  return "?";
}

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::optional<FaultKind> parse_fault_kind(const std::string& s) {
  const std::string k = lower(s);
  if (k == "plus_inf" || k == "inf" || k == "+inf") return FaultKind::PlusInf;
  if (k == "minus_inf" || k == "-inf") return FaultKind::MinusInf;
  if (k == "nan") return FaultKind::NaN;
  if (k == "near_inf" || k == "ninf" || k == "nearinf") return FaultKind::NearInfBitFlip;
  return std::nullopt;
}

std::optional<GemmSite> parse_site(const std::string& s) {
  const std::string k = lower(s);
  for (GemmSite site : kAllSites)
    if (lower(to_string(site)) == k) return site;
  return std::nullopt;
}

void inject_in_place(Matrix& m, const FaultSpec& spec) {
  const ElementIndex& e = spec.element;
  if (e.row >= m.rows() || e.col >= m.cols()) throw std::out_of_range("fault element outside slice");
  float& x = m(e.row, e.col);
  switch (spec.kind) {
    case FaultKind::PlusInf: x = std::numeric_limits<float>::infinity(); break;
    case FaultKind::MinusInf: x = -std::numeric_limits<float>::infinity(); break;
    case FaultKind::NaN: x = std::numeric_limits<float>::quiet_NaN(); break;
    case FaultKind::NearInfBitFlip: x = flip_bit(x, kNearInfBit); break;
  }
}

Matrix inject(const Matrix& m, const FaultSpec& spec) {
  Matrix out = m;
  inject_in_place(out, spec);
  return out;
}

namespace {

bool lands_near_inf(float x, float t) { return classify_value(x, t) == FloatClass::NearInf; }

// Highest exponent bit below 30 that is clear, or 0 when there is none.
unsigned highest_clear_exponent_bit(float x) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
  for (unsigned b = 29; b >= 23; --b)
    if (!(bits & (std::uint32_t{1} << b))) return b;
  return 0;
}

}  // namespace

InjectionRecord inject_near_inf(Matrix& m, ElementIndex start, std::mt19937_64& rng,
                                float near_inf_threshold) {
  if (start.row >= m.rows() || start.col >= m.cols()) {
    throw std::out_of_range("fault element outside slice");
  }
  InjectionRecord rec;
  rec.element = start;
  rec.attempts = 0;
  std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);

  auto accept = [&](std::size_t r, std::size_t c, unsigned bit) {
    float& x = m(r, c);
    rec.element.row = r;
    rec.element.col = c;
    rec.before = x;
    rec.bit = bit;
    x = flip_bit(x, bit);
    rec.after = x;
    return rec;
  };

  std::size_t r = start.row, c = start.col;
  for (unsigned attempt = 0; attempt < kNearInfResampleAttempts; ++attempt) {
    ++rec.attempts;
    if (lands_near_inf(flip_bit(m(r, c), kNearInfBit), near_inf_threshold)) {
      return accept(r, c, kNearInfBit);
    }
    const std::size_t flat = pick(rng);
    r = flat / m.cols();
    c = flat % m.cols();
  }

  const std::size_t origin = start.row * m.cols() + start.col;
  for (std::size_t step = 0; step < m.size(); ++step) {
    const std::size_t flat = (origin + step) % m.size();
    const std::size_t rr = flat / m.cols(), cc = flat % m.cols();
    const float x = m(rr, cc);
    if (lands_near_inf(flip_bit(x, kNearInfBit), near_inf_threshold)) {
      return accept(rr, cc, kNearInfBit);
    }
    const unsigned bit = highest_clear_exponent_bit(x);
    if (bit != 0 && lands_near_inf(flip_bit(x, bit), near_inf_threshold)) {
      rec.fallback_bit = true;
      return accept(rr, cc, bit);
    }
  }
  rec.near_inf_achieved = false;
  return accept(start.row, start.col, kNearInfBit);
}

GemmHook make_injection_hook(const FaultSpec& spec, std::uint64_t resample_seed,
                             InjectionRecord* record, float near_inf_threshold) {
  return [spec, resample_seed, record, near_inf_threshold](GemmSite site, std::size_t batch,
                                                           std::size_t head, Matrix& out) {
    if (site != spec.site || batch != spec.element.batch || head != spec.element.head) return;
    if (spec.kind == FaultKind::NearInfBitFlip) {
      std::mt19937_64 rng(resample_seed);
      InjectionRecord rec = inject_near_inf(out, spec.element, rng, near_inf_threshold);
      if (record) *record = rec;
      return;
    }
    InjectionRecord rec;
    rec.element = spec.element;
    rec.before = out(spec.element.row, spec.element.col);
    inject_in_place(out, spec);
    rec.after = out(spec.element.row, spec.element.col);
    if (record) *record = rec;
  };
}

const char* to_string(PatternShape s) noexcept {
  switch (s) {
    case PatternShape::None: return "none";
    case PatternShape::D0: return "0D";
    case PatternShape::R1: return "1R";
    case PatternShape::C1: return "1C";
    case PatternShape::D2: return "2D";
  }
  return "?";
}

namespace {

std::string types_label(const std::array<bool, 4>& types, bool both_inf_signs) {
  const int present = std::count(types.begin(), types.end(), true);
  if (present == 0) return "";
  if (present > 1) return "mix";
  if (types[static_cast<std::size_t>(FloatClass::Inf)]) return both_inf_signs ? "inf*" : "inf";
  if (types[static_cast<std::size_t>(FloatClass::NaN)]) return "nan";
  if (types[static_cast<std::size_t>(FloatClass::NearInf)]) return "ninf";
  return "finite";
}

}  // namespace

std::string PropagationPattern::label() const {
  if (shape == PatternShape::None) return "none";
  return std::string(to_string(shape)) + "-" +
         types_label(type_mix, has_positive_inf && has_negative_inf);
}

PropagationPattern classify_pattern(const Matrix& reference, const Matrix& corrupted,
                                    float tolerance, float near_inf_threshold) {
  if (reference.rows() != corrupted.rows() || reference.cols() != corrupted.cols()) {
    throw ShapeError("classify_pattern: shape mismatch");
  }
  PropagationPattern p;
  std::size_t first_row = 0, first_col = 0;
  bool one_row = true, one_col = true;
  for (std::size_t r = 0; r < reference.rows(); ++r) {
    for (std::size_t c = 0; c < reference.cols(); ++c) {
      const float a = reference(r, c);
      const float b = corrupted(r, c);
      const FloatClass ca = classify_value(a, near_inf_threshold);
      const FloatClass cb = classify_value(b, near_inf_threshold);
      bool bad = ca != cb;
      if (!bad && (cb == FloatClass::Finite || cb == FloatClass::NearInf)) {
        bad = std::fabs(a - b) > tolerance;
      } else if (!bad && cb == FloatClass::Inf) {
        bad = a != b;
      }
      if (!bad) continue;
      if (p.corrupted_cells == 0) {
        first_row = r;
        first_col = c;
      }
      one_row = one_row && r == first_row;
      one_col = one_col && c == first_col;
      ++p.corrupted_cells;
      p.type_mix[static_cast<std::size_t>(cb)] = true;
      if (cb == FloatClass::Inf) (b > 0 ? p.has_positive_inf : p.has_negative_inf) = true;
    }
  }
  if (p.corrupted_cells == 0) p.shape = PatternShape::None;
  else if (p.corrupted_cells == 1) p.shape = PatternShape::D0;
  else if (one_row) p.shape = PatternShape::R1;
  else if (one_col) p.shape = PatternShape::C1;
  else p.shape = PatternShape::D2;
  return p;
}

PropagationPattern classify_pattern(const Matrix& reference, const Matrix& corrupted,
                                    const EecConfig& cfg) {
  return classify_pattern(reference, corrupted, cfg.roundoff, cfg.near_inf_threshold);
}

const char* to_string(TraceMatrix m) noexcept {
  switch (m) {
    case TraceMatrix::Q: return "Q";
    case TraceMatrix::K: return "K";
    case TraceMatrix::V: return "V";
    case TraceMatrix::AS: return "AS";
    case TraceMatrix::AP: return "AP";
    case TraceMatrix::CL: return "CL";
    case TraceMatrix::O: return "O";
  }
  return "?";
}

TraceMatrix trace_matrix_of(GemmSite s) noexcept {
  switch (s) {
    case GemmSite::Q: return TraceMatrix::Q;
    case GemmSite::K: return TraceMatrix::K;
    case GemmSite::V: return TraceMatrix::V;
    case GemmSite::AS: return TraceMatrix::AS;
    case GemmSite::CL: return TraceMatrix::CL;
    case GemmSite::O: return TraceMatrix::O;
  }
  return TraceMatrix::O;
}

std::vector<TraceMatrix> downstream_of(GemmSite s) {
  switch (s) {
    case GemmSite::Q:
    case GemmSite::K: return {TraceMatrix::AS, TraceMatrix::AP, TraceMatrix::CL, TraceMatrix::O};
    case GemmSite::V: return {TraceMatrix::CL, TraceMatrix::O};
    case GemmSite::AS: return {TraceMatrix::AP, TraceMatrix::CL, TraceMatrix::O};
    case GemmSite::CL: return {TraceMatrix::O};
    case GemmSite::O: return {};
  }
  return {};
}

PatternShape StudyCell::modal_shape() const noexcept {
  // Ties go to the lower-dimensional shape.
  std::size_t best = 0;
  for (std::size_t i = 1; i < shape_counts.size(); ++i)
    if (shape_counts[i] > shape_counts[best]) best = i;
  return static_cast<PatternShape>(best);
}

std::array<bool, 4> StudyCell::modal_types() const noexcept {
  std::array<bool, 4> t{};
  for (std::size_t i = 0; i < 4; ++i) t[i] = trials > 0 && 2 * class_counts[i] >= trials;
  return t;
}

std::string StudyCell::label() const {
  const PatternShape s = modal_shape();
  if (s == PatternShape::None) return "none";
  return std::string(to_string(s)) + "-" + types_label(modal_types(), 2 * both_inf_signs >= trials);
}

const StudyCell* StudyRow::cell(TraceMatrix m) const noexcept {
  for (const auto& c : cells)
    if (c.matrix == m) return &c;
  return nullptr;
}

const StudyRow* PropagationStudy::row(FaultKind kind, GemmSite site) const noexcept {
  for (const auto& r : rows)
    if (r.kind == kind && r.site == site) return &r;
  return nullptr;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

namespace {

const Matrix& slice_of(const PlainTrace& t, TraceMatrix m, const ElementIndex& e) {
  switch (m) {
    case TraceMatrix::Q: return t.q.at(e.batch, e.head);
    case TraceMatrix::K: return t.k.at(e.batch, e.head);
    case TraceMatrix::V: return t.v.at(e.batch, e.head);
    case TraceMatrix::AS: return t.as.at(e.batch, e.head);
    case TraceMatrix::AP: return t.ap.at(e.batch, e.head);
    case TraceMatrix::CL: return t.cl.at(e.batch, e.head);
    case TraceMatrix::O: return t.o.at(e.batch, 0);
  }
  return t.o.at(e.batch, 0);
}

ElementIndex random_element(GemmSite site, const AttentionDims& dims, std::mt19937_64& rng) {
  const auto [rows, cols] = site_shape(site, dims);
  const std::size_t heads = site_heads(site, dims);
  std::uniform_int_distribution<std::size_t> pick(0, dims.batches * heads * rows * cols - 1);
  std::size_t flat = pick(rng);
  ElementIndex e;
  e.col = flat % cols;
  flat /= cols;
  e.row = flat % rows;
  flat /= rows;
  e.head = flat % heads;
  e.batch = flat / heads;
  return e;
}

struct ModelInstance {
  AttentionParams params;
  BatchedMatrix x;
};

ModelInstance make_instance(const AttentionDims& dims, std::uint64_t seed) {
  dims.validate();
  std::mt19937_64 rng(derive_seed(seed, 0xA77E, 0));
  ModelInstance inst;
  inst.params = AttentionParams::random(dims.d_model, dims.heads, rng);
  inst.x = random_input(dims, rng);
  return inst;
}

std::uint64_t stream_id(FaultKind k, GemmSite s) {
  return 0x100 + 8 * static_cast<std::uint64_t>(k) + static_cast<std::uint64_t>(s);
}

}  // namespace

PropagationStudy run_propagation_study(const StudyConfig& config) {
  if (config.trials_per_site == 0) throw ConfigError("trials_per_site must be >= 1");
  const ModelInstance inst = make_instance(config.dims, config.seed);
  const PlainTrace reference = forward_unprotected_trace(inst.x, inst.params);

  PropagationStudy study;
  study.config = config;
  for (FaultKind kind : config.kinds) {
    for (GemmSite site : config.sites) {
      const std::vector<TraceMatrix> downstream = downstream_of(site);
      const std::size_t n = config.trials_per_site;
      std::vector<std::vector<PropagationPattern>> patterns(n);
      std::vector<InjectionRecord> injections(n);

      detail::parallel_for(n, config.threads, [&](std::size_t t) {
        std::mt19937_64 rng(derive_seed(config.seed, stream_id(kind, site), t));
        FaultSpec spec{site, random_element(site, config.dims, rng), kind};
        GemmHook hook = make_injection_hook(spec, rng(), &injections[t],
                                            config.eec.near_inf_threshold);
        const PlainTrace faulty = forward_unprotected_trace(inst.x, inst.params, hook);
        for (TraceMatrix m : downstream) {
          patterns[t].push_back(classify_pattern(slice_of(reference, m, spec.element),
                                                 slice_of(faulty, m, spec.element), config.eec));
        }
      });

      StudyRow row;
      row.kind = kind;
      row.site = site;
      for (std::size_t i = 0; i < downstream.size(); ++i) {
        StudyCell cell;
        cell.matrix = downstream[i];
        for (std::size_t t = 0; t < n; ++t) {
          const PropagationPattern& p = patterns[t][i];
          ++cell.shape_counts[static_cast<std::size_t>(p.shape)];
          for (std::size_t c = 0; c < 4; ++c) cell.class_counts[c] += p.type_mix[c];
          cell.both_inf_signs += p.has_positive_inf && p.has_negative_inf;
          ++cell.trials;
        }
        row.cells.push_back(cell);
      }
      for (const auto& inj : injections) row.near_inf_fallbacks += inj.attempts > 1;
      study.rows.push_back(std::move(row));
    }
  }
  return study;
}

double CampaignReport::detection_rate() const noexcept {
  return trials ? static_cast<double>(detected) / static_cast<double>(trials)
                : std::numeric_limits<double>::quiet_NaN();
}
double CampaignReport::correction_rate() const noexcept {
  return trials ? static_cast<double>(corrected) / static_cast<double>(trials)
                : std::numeric_limits<double>::quiet_NaN();
}
double CampaignReport::nontrainable_proxy_rate() const noexcept {
  return trials ? static_cast<double>(nontrainable) / static_cast<double>(trials)
                : std::numeric_limits<double>::quiet_NaN();
}

namespace {

bool has_non_finite(const BatchedMatrix& m) {
  for (const Matrix& s : m.slices())
    for (float x : s.data())
      if (!std::isfinite(x)) return true;
  return false;
}

std::vector<ElementIndex> sample_elements(GemmSite site, const AttentionDims& dims,
                                          std::size_t count, std::mt19937_64& rng) {
  const auto [rows, cols] = site_shape(site, dims);
  const std::size_t heads = site_heads(site, dims);
  const std::size_t total = dims.batches * heads * rows * cols;
  std::vector<std::size_t> flat(total);
  std::iota(flat.begin(), flat.end(), std::size_t{0});
  count = std::min(count, total);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(flat[i], flat[pick(rng)]);
  }
  std::vector<ElementIndex> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t f = flat[i];
    ElementIndex e;
    e.col = f % cols;
    f /= cols;
    e.row = f % rows;
    f /= rows;
    e.head = f % heads;
    e.batch = f / heads;
    out.push_back(e);
  }
  return out;
}

}  // namespace

CampaignReport run_detection_campaign(const CampaignConfig& config) {
  if (!(config.fraction > 0.0 && config.fraction <= 1.0)) {
    throw ConfigError("campaign fraction must lie in (0, 1]");
  }
  config.protection.validate();
  const ModelInstance inst = make_instance(config.dims, config.seed);
  const ProtectedResult reference = forward_protected(inst.x, inst.params, config.protection);
  const float t_ninf = config.protection.eec.near_inf_threshold;

  struct Planned {
    GemmSite site;
    FaultKind kind;
    ElementIndex element;
  };
  std::vector<Planned> plan;
  for (GemmSite site : config.sites) {
    const auto [rows, cols] = site_shape(site, config.dims);
    const std::size_t total = config.dims.batches * site_heads(site, config.dims) * rows * cols;
    const auto count = static_cast<std::size_t>(std::llround(config.fraction * total));
    for (FaultKind kind : config.kinds) {
      std::mt19937_64 rng(derive_seed(config.seed, stream_id(kind, site), 0xCA));
      for (const ElementIndex& e : sample_elements(site, config.dims, count, rng))
        plan.push_back({site, kind, e});
    }
  }

  CampaignReport report;
  report.records.resize(plan.size());
  detail::parallel_for(plan.size(), config.threads, [&](std::size_t t) {
    const Planned& p = plan[t];
    TrialRecord& rec = report.records[t];
    rec.trial = t;
    rec.site = p.site;
    rec.kind = p.kind;
    const FaultSpec spec{p.site, p.element, p.kind};
    const std::uint64_t resample_seed = derive_seed(config.seed, 0x5EED, t);

    GemmHook hook = make_injection_hook(spec, resample_seed, &rec.injection, t_ninf);
    const ProtectedResult run = forward_protected(inst.x, inst.params, config.protection, hook, t);

    rec.detected = run.trace.detected();
    bool within = true;
    rec.residual = 0.0f;
    rec.residual_bound = std::numeric_limits<float>::infinity();
    for (std::size_t b = 0; b < config.dims.batches; ++b) {
      const float bound = reference.trace.batches[b].o_column_e;
      const float r = max_abs_diff(run.output.at(b, 0), reference.output.at(b, 0));
      rec.residual_bound = std::min(rec.residual_bound, bound);
      if (std::isnan(r) || std::isnan(rec.residual)) rec.residual = std::numeric_limits<float>::quiet_NaN();
      else rec.residual = std::max(rec.residual, r);
      within = within && !std::isnan(r) && r <= bound;
    }
    rec.corrected = rec.detected && !run.failed && within;
    rec.uncorrectable = rec.detected && !rec.corrected;
    rec.missed = !rec.detected;

    if (config.compare_unprotected) {
      GemmHook plain_hook = make_injection_hook(spec, resample_seed, nullptr, t_ninf);
      rec.nontrainable_proxy = has_non_finite(forward_unprotected(inst.x, inst.params, plain_hook));
    } else {
      rec.nontrainable_proxy = has_non_finite(run.output);
    }
  });

  for (const TrialRecord& rec : report.records) {
    auto it = std::find_if(report.cells.begin(), report.cells.end(), [&](const CellSummary& c) {
      return c.site == rec.site && c.kind == rec.kind;
    });
    if (it == report.cells.end()) {
      report.cells.push_back({rec.site, rec.kind});
      it = std::prev(report.cells.end());
    }
    ++it->trials;
    it->detected += rec.detected;
    it->corrected += rec.corrected;
    it->uncorrectable += rec.uncorrectable;
    it->missed += rec.missed;
    it->nontrainable += rec.nontrainable_proxy;
    ++report.trials;
    report.detected += rec.detected;
    report.corrected += rec.corrected;
    report.uncorrectable += rec.uncorrectable;
    report.missed += rec.missed;
    report.nontrainable += rec.nontrainable_proxy;
    if (rec.corrected) {
      it->max_residual = std::max(it->max_residual, rec.residual);
      report.max_residual = std::max(report.max_residual, rec.residual);
      if (rec.residual_bound > 0.0f) {
        report.max_residual_ratio =
            std::max(report.max_residual_ratio,
                     static_cast<double>(rec.residual) / static_cast<double>(rec.residual_bound));
      }
    }
  }
  return report;
}

}  // namespace abftattn
