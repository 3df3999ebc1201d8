#include "abftattn/attention.hpp"

#include <cmath>
#include <string>

namespace abftattn {

void AttentionDims::validate() const {
  if (seq_len == 0 || d_model == 0 || heads == 0 || batches == 0) {
    throw ConfigError("attention dims must all be >= 1");
  }
  if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
}

void AttentionParams::validate() const {
  if (heads == 0 || w_q.empty()) throw ConfigError("attention params are empty");
  const std::size_t d = d_model();
  for (const Matrix* w : {&w_q, &w_k, &w_v, &w_o}) {
    if (w->rows() != d || w->cols() != d) throw ShapeError("weights must be d_model x d_model");
    for (float x : w->data())
      if (!std::isfinite(x)) throw ConfigError("weights must be finite");
  }
  if (d % heads != 0) throw ConfigError("d_model must be divisible by heads");
}

namespace {

Matrix random_normal(std::size_t rows, std::size_t cols, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  Matrix m(rows, cols);
  for (float& x : m.data()) x = dist(rng);
  return m;
}

}  // namespace

AttentionParams AttentionParams::random(std::size_t d_model, std::size_t heads,
                                        std::mt19937_64& rng) {
  const float sd = 1.0f / std::sqrt(static_cast<float>(d_model));
  AttentionParams p;
  p.w_q = random_normal(d_model, d_model, sd, rng);
  p.w_k = random_normal(d_model, d_model, sd, rng);
  p.w_v = random_normal(d_model, d_model, sd, rng);
  p.w_o = random_normal(d_model, d_model, sd, rng);
  p.heads = heads;
  p.validate();
  return p;
}

BatchedMatrix random_input(const AttentionDims& dims, std::mt19937_64& rng) {
  dims.validate();
  BatchedMatrix x(dims.batches, 1, dims.seq_len, dims.d_model);
  for (Matrix& m : x.slices()) m = random_normal(dims.seq_len, dims.d_model, 1.0f, rng);
  return x;
}

const char* to_string(SectionId s) noexcept {
  switch (s) {
    case SectionId::AS: return "S_AS";
    case SectionId::CL: return "S_CL";
    case SectionId::O: return "S_O";
  }
  return "?";
}

const char* to_string(GemmSite s) noexcept {
  switch (s) {
    case GemmSite::Q: return "Q";
    case GemmSite::K: return "K";
    case GemmSite::V: return "V";
    case GemmSite::AS: return "AS";
    case GemmSite::CL: return "CL";
    case GemmSite::O: return "O";
  }
  return "?";
}

SectionId section_of(GemmSite s) noexcept {
  switch (s) {
    case GemmSite::Q:
    case GemmSite::K:
    case GemmSite::AS: return SectionId::AS;
    case GemmSite::V:
    case GemmSite::CL: return SectionId::CL;
    case GemmSite::O: return SectionId::O;
  }
  return SectionId::O;
}

std::pair<std::size_t, std::size_t> site_shape(GemmSite s, const AttentionDims& dims) noexcept {
  switch (s) {
    case GemmSite::AS: return {dims.seq_len, dims.seq_len};
    case GemmSite::O: return {dims.seq_len, dims.d_model};
    default: return {dims.seq_len, dims.d_k()};
  }
}

std::size_t site_heads(GemmSite s, const AttentionDims& dims) noexcept {
  return s == GemmSite::O ? 1 : dims.heads;
}

void ProtectionConfig::validate() const {
  for (double f : frequency)
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("section frequencies must lie in [0, 1]");
  eec.validate();
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

bool section_scheduled(double frequency, std::uint64_t invocation, std::uint64_t seed,
                       SectionId section) noexcept {
  if (frequency <= 0.0) return false;
  if (frequency >= 1.0) return true;
  const double phase =
      static_cast<double>(splitmix64(seed ^ (0x51ull + static_cast<std::uint64_t>(section))) >>
                          11) *
      0x1.0p-53;
  const double n = static_cast<double>(invocation);
  return std::floor((n + 1.0) * frequency + phase) > std::floor(n * frequency + phase);
}

bool AttentionTrace::detected() const noexcept {
  for (const auto& b : batches) {
    if (b.o_log.detected()) return true;
    for (const auto& h : b.heads)
      if (h.as_log.detected() || h.cl_log.detected()) return true;
  }
  return false;
}

namespace {

Matrix column_block(const Matrix& w, std::size_t first, std::size_t width) {
  Matrix out(w.rows(), width);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = w(r, first + c);
  return out;
}

struct HeadWeights {
  Matrix q, k, v;
};

std::vector<HeadWeights> split_heads(const AttentionParams& p) {
  const std::size_t dk = p.d_k();
  std::vector<HeadWeights> out;
  out.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    out.push_back({column_block(p.w_q, h * dk, dk), column_block(p.w_k, h * dk, dk),
                   column_block(p.w_v, h * dk, dk)});
  }
  return out;
}

float score_scale(std::size_t dk) { return 1.0f / std::sqrt(static_cast<float>(dk)); }

void check_input(const BatchedMatrix& x, const AttentionParams& params) {
  params.validate();
  if (x.heads() != 1 || x.cols() != params.d_model() || x.rows() == 0) {
    throw ShapeError("input must be (batches, 1, seq_len, d_model)");
  }
}

void place_head(Matrix& concat, const Matrix& head, std::size_t first) {
  for (std::size_t r = 0; r < head.rows(); ++r)
    for (std::size_t c = 0; c < head.cols(); ++c) concat(r, first + c) = head(r, c);
}

}  // namespace

PlainTrace forward_unprotected_trace(const BatchedMatrix& x, const AttentionParams& params,
                                     const GemmHook& hook) {
  check_input(x, params);
  const std::size_t b = x.batches(), s = x.rows(), d = params.d_model(), h = params.heads,
                    dk = params.d_k();
  const auto weights = split_heads(params);
  const float factor = score_scale(dk);

  PlainTrace t{BatchedMatrix(b, h, s, dk), BatchedMatrix(b, h, s, dk), BatchedMatrix(b, h, s, dk),
               BatchedMatrix(b, h, s, s),  BatchedMatrix(b, h, s, s),  BatchedMatrix(b, h, s, dk),
               BatchedMatrix(b, 1, s, d)};
  for (std::size_t bi = 0; bi < b; ++bi) {
    const Matrix& xb = x.at(bi, 0);
    Matrix cl_cat(s, d);
    for (std::size_t hi = 0; hi < h; ++hi) {
      Matrix& q = t.q.at(bi, hi);
      Matrix& k = t.k.at(bi, hi);
      Matrix& v = t.v.at(bi, hi);
      q = gemm(xb, weights[hi].q);
      if (hook) hook(GemmSite::Q, bi, hi, q);
      k = gemm(xb, weights[hi].k);
      if (hook) hook(GemmSite::K, bi, hi, k);
      v = gemm(xb, weights[hi].v);
      if (hook) hook(GemmSite::V, bi, hi, v);
      Matrix& as = t.as.at(bi, hi);
      as = gemm(q, k, false, true);
      if (hook) hook(GemmSite::AS, bi, hi, as);
      Matrix& ap = t.ap.at(bi, hi);
      ap = softmax_rows(scale(as, factor));
      Matrix& cl = t.cl.at(bi, hi);
      cl = gemm(ap, v);
      if (hook) hook(GemmSite::CL, bi, hi, cl);
      place_head(cl_cat, cl, hi * dk);
    }
    Matrix& o = t.o.at(bi, 0);
    o = gemm(cl_cat, params.w_o);
    if (hook) hook(GemmSite::O, bi, 0, o);
  }
  return t;
}

BatchedMatrix forward_unprotected(const BatchedMatrix& x, const AttentionParams& params,
                                  const GemmHook& hook) {
  return forward_unprotected_trace(x, params, hook).o;
}

Matrix forward_unprotected(const Matrix& x, const AttentionParams& params) {
  BatchedMatrix bx(1, 1, x.rows(), x.cols());
  bx.at(0, 0) = x;
  return forward_unprotected(bx, params).at(0, 0);
}

ProtectedResult forward_protected(const BatchedMatrix& x, const AttentionParams& params,
                                  const ProtectionConfig& config, const GemmHook& hook,
                                  std::uint64_t invocation) {
  check_input(x, params);
  config.validate();
  const std::size_t b = x.batches(), s = x.rows(), d = params.d_model(), h = params.heads,
                    dk = params.d_k();
  const auto weights = split_heads(params);
  const float factor = score_scale(dk);

  ProtectedResult res;
  AttentionTrace& tr = res.trace;
  for (SectionId sec : kAllSections) {
    tr.section_ran[static_cast<std::size_t>(sec)] =
        section_scheduled(config.frequency_of(sec), invocation, config.seed, sec);
  }
  const bool run_as = tr.section_ran[0], run_cl = tr.section_ran[1], run_o = tr.section_ran[2];
  std::array<FlopCounter, 3> fc{};
  FlopCounter* fc_as = &fc[0];
  FlopCounter* fc_cl = &fc[1];
  FlopCounter* fc_o = &fc[2];

  std::vector<ChecksumPair> wv_rows;
  wv_rows.reserve(h);
  for (const auto& w : weights) wv_rows.push_back(encode_row_checksums(w.v, fc_cl));
  const float wo_mag = finite_max_abs(params.w_o.data(), config.eec.near_inf_threshold);

  res.output = BatchedMatrix(b, 1, s, d);
  tr.batches.resize(b);
  for (std::size_t bi = 0; bi < b; ++bi) {
    BatchTrace& bt = tr.batches[bi];
    const Matrix& xb = x.at(bi, 0);
    bt.x.matrix = xb;
    bt.x.col = encode_column_checksums(xb, fc_as);

    Matrix cl_cat(s, d);
    ChecksumPair cl_cat_col;
    cl_cat_col.axis = Axis::Column;
    cl_cat_col.unweighted.assign(d, 0.0f);
    cl_cat_col.weighted.assign(d, 0.0f);

    bt.heads.resize(h);
    for (std::size_t hi = 0; hi < h; ++hi) {
      HeadTrace& ht = bt.heads[hi];
      const HeadWeights& w = weights[hi];

      // S_AS: X carries column checksums into Q and K; detection is delayed
      // until Q K^T is formed.
      Matrix q = gemm(xb, w.q);
      if (hook) hook(GemmSite::Q, bi, hi, q);
      ht.q.col = propagate_column_checksums(*bt.x.col, w.q, fc_as);
      ht.q.matrix = std::move(q);

      Matrix k = gemm(xb, w.k);
      if (hook) hook(GemmSite::K, bi, hi, k);
      ht.k.col = propagate_column_checksums(*bt.x.col, w.k, fc_as);
      ht.k.matrix = std::move(k);

      Matrix v = gemm(xb, w.v);
      if (hook) hook(GemmSite::V, bi, hi, v);
      ht.v.row = propagate_row_checksums(xb, wv_rows[hi], fc_cl);
      ht.v.matrix = std::move(v);

      Matrix as = gemm(ht.q.matrix, ht.k.matrix, false, true);
      if (hook) hook(GemmSite::AS, bi, hi, as);
      ht.as = update_checksums_through_gemm(ht.q, transposed(ht.k), std::move(as), fc_as);
      const float t_ninf = config.eec.near_inf_threshold;
      ht.as_column_e = roundoff_threshold(dk, max_abs_sum(ht.q.matrix, Axis::Column, t_ninf),
                                          finite_max_abs(ht.k.matrix.data(), t_ninf));
      ht.as_row_e = roundoff_threshold(dk, finite_max_abs(ht.q.matrix.data(), t_ninf),
                                       max_abs_sum(ht.k.matrix, Axis::Column, t_ninf));
      if (run_as) {
        ht.as_log = correct_matrix_nondeterministic(ht.as, config.eec.with_roundoff(ht.as_column_e),
                                                    config.eec.with_roundoff(ht.as_row_e), fc_as);
        ht.as_log.tag = "AS[" + std::to_string(bi) + "," + std::to_string(hi) + "]";
        tr.failed = tr.failed || ht.as_log.unresolved;
      }

      // S_CL: V inherits row checksums from W^V, AP is freshly encoded with
      // column checksums, so CL carries both.
      ht.ap.matrix = softmax_rows(scale(ht.as.matrix, factor));
      ht.ap.col = encode_column_checksums(ht.ap.matrix, fc_cl);
      Matrix cl = gemm(ht.ap.matrix, ht.v.matrix);
      if (hook) hook(GemmSite::CL, bi, hi, cl);
      ht.cl = update_checksums_through_gemm(ht.ap, ht.v, std::move(cl), fc_cl);
      ht.cl_column_e = roundoff_threshold(s, max_abs_sum(ht.ap.matrix, Axis::Column, t_ninf),
                                          finite_max_abs(ht.v.matrix.data(), t_ninf));
      ht.cl_row_e = roundoff_threshold(s, finite_max_abs(ht.ap.matrix.data(), t_ninf),
                                       max_abs_sum(ht.v.matrix, Axis::Row, t_ninf));
      if (run_cl) {
        ht.cl_log = correct_matrix_nondeterministic(ht.cl, config.eec.with_roundoff(ht.cl_column_e),
                                                    config.eec.with_roundoff(ht.cl_row_e), fc_cl);
        ht.cl_log.tag = "CL[" + std::to_string(bi) + "," + std::to_string(hi) + "]";
        tr.failed = tr.failed || ht.cl_log.unresolved;
      }

      place_head(cl_cat, ht.cl.matrix, hi * dk);
      for (std::size_t c = 0; c < dk; ++c) {
        cl_cat_col.unweighted[hi * dk + c] = ht.cl.col->unweighted[c];
        cl_cat_col.weighted[hi * dk + c] = ht.cl.col->weighted[c];
      }
    }
    cl_cat_col.magnitude = finite_max_abs(cl_cat_col.unweighted);
    bt.cl_concat.matrix = std::move(cl_cat);
    bt.cl_concat.col = std::move(cl_cat_col);

    // S_O: CL's column checksums ride through CL W^O.
    Matrix o = gemm(bt.cl_concat.matrix, params.w_o);
    if (hook) hook(GemmSite::O, bi, 0, o);
    bt.o.col = propagate_column_checksums(*bt.cl_concat.col, params.w_o, fc_o);
    bt.o.matrix = std::move(o);
    bt.o_column_e = roundoff_threshold(
        d, max_abs_sum(bt.cl_concat.matrix, Axis::Column, config.eec.near_inf_threshold), wo_mag);
    if (run_o) {
      bt.o_log = correct_matrix_deterministic(bt.o, Axis::Column,
                                              config.eec.with_roundoff(bt.o_column_e), fc_o);
      bt.o_log.tag = "O[" + std::to_string(bi) + "]";
      tr.failed = tr.failed || bt.o_log.unresolved;
    }
    res.output.at(bi, 0) = bt.o.matrix;
  }

  for (std::size_t i = 0; i < 3; ++i) tr.section_flops[i] = fc[i].flops;
  res.failed = tr.failed;
  return res;
}

std::uint64_t section_cost(SectionId section, const AttentionDims& dims) {
  dims.validate();
  const std::uint64_t b = dims.batches, s = dims.seq_len, d = dims.d_model, h = dims.heads,
                      dk = dims.d_k();
  // Conventions: encoding an m x n block costs 3mn (one add for the plain
  // sum, a multiply-add for the weighted one); passing a checksum pair
  // through a GEMM with a k x n operand costs 4kn; checking one vector of
  // length m costs 3m + 2.
  switch (section) {
    case SectionId::AS: {
      const std::uint64_t encode_x = 3 * s * d;
      const std::uint64_t pass_qk = 2 * (4 * d * dk);
      const std::uint64_t pass_as = 4 * dk * s + 4 * s * dk;
      const std::uint64_t detect = s * (3 * s + 2) + 3 * s * s;  // columns + row-side check
      return b * encode_x + b * h * (pass_qk + pass_as + detect);
    }
    case SectionId::CL: {
      const std::uint64_t encode_wv = 3 * d * dk;
      const std::uint64_t pass_v = 4 * s * d;
      const std::uint64_t encode_ap = 3 * s * s;
      const std::uint64_t pass_cl = 4 * s * dk + 4 * s * s;
      const std::uint64_t detect = dk * (3 * s + 2) + 3 * s * dk;
      return h * encode_wv + b * h * (pass_v + encode_ap + pass_cl + detect);
    }
    case SectionId::O: {
      const std::uint64_t pass_o = 4 * d * d;
      const std::uint64_t detect = d * (3 * s + 2);
      return b * (pass_o + detect);
    }
  }
  return 0;
}

std::vector<std::uint64_t> section_gemm_flops(SectionId section, const AttentionDims& dims) {
  dims.validate();
  const std::uint64_t b = dims.batches, s = dims.seq_len, d = dims.d_model, h = dims.heads,
                      dk = dims.d_k();
  const std::uint64_t proj = 2 * b * s * d * d;
  const std::uint64_t per_head = 2 * b * h * s * s * dk;
  switch (section) {
    case SectionId::AS: return {proj, proj, per_head};
    case SectionId::CL: return {proj, per_head};
    case SectionId::O: return {proj};
  }
  return {};
}

}  // namespace abftattn
