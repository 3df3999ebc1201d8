#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "abftattn/checksum.hpp"
#include "abftattn/core_numerics.hpp"
#include "abftattn/eec_abft.hpp"

namespace abftattn {

struct AttentionDims {
  std::size_t seq_len = 32;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t batches = 2;

  std::size_t d_k() const noexcept { return heads ? d_model / heads : 0; }
  void validate() const;
};

struct AttentionParams {
  Matrix w_q;
  Matrix w_k;
  Matrix w_v;
  Matrix w_o;
  std::size_t heads = 1;

  std::size_t d_model() const noexcept { return w_q.rows(); }
  std::size_t d_k() const noexcept { return heads ? d_model() / heads : 0; }
  void validate() const;

  /// Weights drawn from N(0, 1/d_model).
  static AttentionParams random(std::size_t d_model, std::size_t heads, std::mt19937_64& rng);
};

/// X drawn from N(0, 1), shaped (batches, 1, seq_len, d_model).
BatchedMatrix random_input(const AttentionDims& dims, std::mt19937_64& rng);

/// The three protection sections: {XW^Q, XW^K, QK^T}, {XW^V, AP V}, {CL W^O}.
enum class SectionId : std::uint8_t { AS = 0, CL = 1, O = 2 };
inline constexpr std::array<SectionId, 3> kAllSections{SectionId::AS, SectionId::CL,
                                                        SectionId::O};
const char* to_string(SectionId s) noexcept;

/// Output matrices of the six GEMMs.
enum class GemmSite : std::uint8_t { Q = 0, K = 1, V = 2, AS = 3, CL = 4, O = 5 };
inline constexpr std::array<GemmSite, 6> kAllSites{GemmSite::Q,  GemmSite::K,  GemmSite::V,
                                                   GemmSite::AS, GemmSite::CL, GemmSite::O};
const char* to_string(GemmSite s) noexcept;
SectionId section_of(GemmSite s) noexcept;

/// Shape of one (batch, head) slice of a site's output.
std::pair<std::size_t, std::size_t> site_shape(GemmSite s, const AttentionDims& dims) noexcept;
/// Number of head slices a site spans (O is stored once per batch).
std::size_t site_heads(GemmSite s, const AttentionDims& dims) noexcept;

/// Called right after each GEMM with its output slice; fault injection
/// hooks in here. O is reported with head 0.
using GemmHook = std::function<void(GemmSite, std::size_t batch, std::size_t head, Matrix&)>;

struct ProtectionConfig {
  std::array<double, 3> frequency{1.0, 1.0, 1.0};  ///< indexed by SectionId
  EecConfig eec;
  std::uint64_t seed = 0;

  double frequency_of(SectionId s) const noexcept {
    return frequency[static_cast<std::size_t>(s)];
  }
  void validate() const;
};

/// Counter-based schedule: the section runs on invocation n when
/// floor((n + 1) * f + phase) > floor(n * f + phase), with a phase in [0, 1)
/// derived from the seed. Over any window of N invocations the section runs
/// floor(N f) or ceil(N f) times.
bool section_scheduled(double frequency, std::uint64_t invocation, std::uint64_t seed,
                       SectionId section) noexcept;

struct HeadTrace {
  EncodedMatrix q, k, v, as, ap, cl;
  CorrectionLog as_log, cl_log;
  float as_column_e = 0.0f, as_row_e = 0.0f;
  float cl_column_e = 0.0f, cl_row_e = 0.0f;
};

struct BatchTrace {
  EncodedMatrix x;
  EncodedMatrix cl_concat;
  EncodedMatrix o;
  CorrectionLog o_log;
  float o_column_e = 0.0f;
  std::vector<HeadTrace> heads;
};

struct AttentionTrace {
  std::vector<BatchTrace> batches;
  std::array<bool, 3> section_ran{false, false, false};
  std::array<std::uint64_t, 3> section_flops{0, 0, 0};
  /// Some section detected a fault it could not repair.
  bool failed = false;

  /// Any section logged something other than Clean.
  bool detected() const noexcept;
};

struct ProtectedResult {
  BatchedMatrix output;
  AttentionTrace trace;
  bool failed = false;
};

/// Plain intermediates of an unprotected pass, per (batch, head); o is per batch.
struct PlainTrace {
  BatchedMatrix q, k, v, as, ap, cl, o;
};

PlainTrace forward_unprotected_trace(const BatchedMatrix& x, const AttentionParams& params,
                                     const GemmHook& hook = {});
BatchedMatrix forward_unprotected(const BatchedMatrix& x, const AttentionParams& params,
                                  const GemmHook& hook = {});
Matrix forward_unprotected(const Matrix& x, const AttentionParams& params);

/// Forward pass with checksum passing through the three protection sections.
/// Faults a section cannot repair are reported through `failed` and the
/// output is returned as computed; recovery is up to the caller.
ProtectedResult forward_protected(const BatchedMatrix& x, const AttentionParams& params,
                                  const ProtectionConfig& config, const GemmHook& hook = {},
                                  std::uint64_t invocation = 0);

/// Analytic ABFT flop cost of one section: checksum encoding, passing and
/// fault-free detection, summed over all batches and heads.
std::uint64_t section_cost(SectionId section, const AttentionDims& dims);

/// Flops of the GEMMs that make up a section, one entry per operation.
std::vector<std::uint64_t> section_gemm_flops(SectionId section, const AttentionDims& dims);

}  // namespace abftattn
