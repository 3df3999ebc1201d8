#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "abftattn/bench.hpp"
#include "abftattn/config.hpp"
#include "abftattn/coverage.hpp"
#include "abftattn/eec_abft.hpp"
#include "abftattn/fault_injector.hpp"
#include "abftattn/report.hpp"

namespace py = pybind11;
using namespace abftattn;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<float>(a.data(), a.data() + rows * cols));
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<float>& v) {
  Array out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

// (batches, seq, d_model) array to a (batches, 1) batched matrix.
BatchedMatrix to_batched(const Array& a) {
  if (a.ndim() != 3) throw ShapeError("expected a 3-D array (batches, seq_len, d_model)");
  const auto b = static_cast<std::size_t>(a.shape(0));
  const auto s = static_cast<std::size_t>(a.shape(1));
  const auto d = static_cast<std::size_t>(a.shape(2));
  BatchedMatrix x(b, 1, s, d);
  for (std::size_t i = 0; i < b; ++i)
    std::copy(a.data() + i * s * d, a.data() + (i + 1) * s * d, x.at(i, 0).data().begin());
  return x;
}

Array from_batched(const BatchedMatrix& x) {
  const std::size_t s = x.rows(), d = x.cols();
  Array out({x.batches(), s, d});
  for (std::size_t i = 0; i < x.batches(); ++i)
    std::copy(x.at(i, 0).data().begin(), x.at(i, 0).data().end(), out.mutable_data() + i * s * d);
  return out;
}

AttentionParams make_params(const Array& w_q, const Array& w_k, const Array& w_v,
                            const Array& w_o, std::size_t heads) {
  AttentionParams p{to_matrix(w_q), to_matrix(w_k), to_matrix(w_v), to_matrix(w_o), heads};
  p.validate();
  return p;
}

GemmHook fault_hook(const py::object& fault, std::uint64_t seed) {
  if (fault.is_none()) return {};
  const auto d = fault.cast<py::dict>();
  FaultSpec spec;
  const auto site = parse_site(d["site"].cast<std::string>());
  const auto kind = parse_fault_kind(d["kind"].cast<std::string>());
  if (!site) throw ConfigError("unknown site");
  if (!kind) throw ConfigError("unknown fault kind");
  spec.site = *site;
  spec.kind = *kind;
  auto get = [&](const char* key) {
    return d.contains(key) ? d[key].cast<std::size_t>() : std::size_t{0};
  };
  spec.element = {get("batch"), get("head"), get("row"), get("col")};
  return make_injection_hook(spec, seed);
}

RunConfig run_config(const std::string& json_text) {
  RunConfig cfg = parse_run_config(json_text);
  cfg.sync();
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_abftattn, m) {
  m.doc() = "Fault-tolerant multi-head attention with extreme-error-correcting ABFT";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("gemm", [](const Array& a, const Array& b, bool ta, bool tb) {
    return to_array(gemm(to_matrix(a), to_matrix(b), ta, tb));
  }, py::arg("a"), py::arg("b"), py::arg("trans_a") = false, py::arg("trans_b") = false);
  m.def("softmax_rows", [](const Array& a) { return to_array(softmax_rows(to_matrix(a))); });
  m.def("flip_bit", &flip_bit, py::arg("x"), py::arg("pos"));
  m.def("classify_value", [](float x, float t) { return std::string(to_string(classify_value(x, t))); },
        py::arg("x"), py::arg("near_inf_threshold") = kDefaultNearInfThreshold);
  m.def("roundoff_threshold", &roundoff_threshold, py::arg("k"), py::arg("mag_a"),
        py::arg("mag_b"));

  m.def("column_checksums", [](const Array& a) {
    const ChecksumPair p = encode_column_checksums(to_matrix(a));
    return py::make_tuple(to_array(p.unweighted), to_array(p.weighted));
  }, "Unweighted and weighted sums down each column.");
  m.def("row_checksums", [](const Array& a) {
    const ChecksumPair p = encode_row_checksums(to_matrix(a));
    return py::make_tuple(to_array(p.unweighted), to_array(p.weighted));
  }, "Unweighted and weighted sums along each row.");

  m.def("correct_vector", [](const Array& v, float csum, float wsum, float roundoff) {
    if (v.ndim() != 1) throw ShapeError("expected a 1-D array");
    std::vector<float> data(v.data(), v.data() + v.shape(0));
    EecConfig cfg;
    cfg.roundoff = roundoff;
    cfg.validate();
    const Verdict verdict = detect_and_correct_vector(StridedView(std::span<float>(data)), csum,
                                                      wsum, cfg);
    return py::make_tuple(to_array(data), std::string(verdict_name(verdict)));
  }, py::arg("v"), py::arg("csum"), py::arg("wsum"), py::arg("roundoff"),
     "Checks a vector against its checksums; returns (repaired copy, verdict).");

  m.def("random_attention", [](std::size_t seq, std::size_t d_model, std::size_t heads,
                               std::size_t batches, std::uint64_t seed) {
    const AttentionDims dims{seq, d_model, heads, batches};
    dims.validate();
    std::mt19937_64 rng(seed);
    const AttentionParams p = AttentionParams::random(d_model, heads, rng);
    const BatchedMatrix x = random_input(dims, rng);
    return py::make_tuple(from_batched(x), to_array(p.w_q), to_array(p.w_k), to_array(p.w_v),
                          to_array(p.w_o));
  }, py::arg("seq_len"), py::arg("d_model"), py::arg("heads"), py::arg("batches"),
     py::arg("seed") = 0, "Returns (x, w_q, w_k, w_v, w_o) drawn from N(0, 1) and scaled weights.");

  m.def("forward", [](const Array& x, const Array& w_q, const Array& w_k, const Array& w_v,
                      const Array& w_o, std::size_t heads, const py::object& fault,
                      std::uint64_t seed) {
    const AttentionParams p = make_params(w_q, w_k, w_v, w_o, heads);
    return from_batched(forward_unprotected(to_batched(x), p, fault_hook(fault, seed)));
  }, py::arg("x"), py::arg("w_q"), py::arg("w_k"), py::arg("w_v"), py::arg("w_o"),
     py::arg("heads"), py::arg("fault") = py::none(), py::arg("seed") = 0);

  m.def("forward_protected", [](const Array& x, const Array& w_q, const Array& w_k,
                                const Array& w_v, const Array& w_o, std::size_t heads,
                                std::array<double, 3> frequencies, const py::object& fault,
                                std::uint64_t seed) {
    const AttentionParams p = make_params(w_q, w_k, w_v, w_o, heads);
    ProtectionConfig cfg;
    cfg.frequency = frequencies;
    cfg.seed = seed;
    cfg.validate();
    const ProtectedResult r = forward_protected(to_batched(x), p, cfg, fault_hook(fault, seed));
    py::dict info;
    info["detected"] = r.trace.detected();
    info["failed"] = r.failed;
    py::list ran;
    for (bool b : r.trace.section_ran) ran.append(b);
    info["sections_ran"] = ran;
    return py::make_tuple(from_batched(r.output), info);
  }, py::arg("x"), py::arg("w_q"), py::arg("w_k"), py::arg("w_v"), py::arg("w_o"),
     py::arg("heads"), py::arg("frequencies") = std::array<double, 3>{1.0, 1.0, 1.0},
     py::arg("fault") = py::none(), py::arg("seed") = 0,
     "Returns (output, info) where info reports detection and unresolved faults.");

  m.def("classify_pattern", [](const Array& ref, const Array& bad, float tol) {
    return classify_pattern(to_matrix(ref), to_matrix(bad), tol).label();
  }, py::arg("reference"), py::arg("corrupted"), py::arg("tolerance") = 1e-5f);

  m.def("section_cost", [](const std::string& section, std::size_t seq, std::size_t d_model,
                           std::size_t heads, std::size_t batches) {
    for (SectionId s : kAllSections)
      if (section == to_string(s)) return section_cost(s, {seq, d_model, heads, batches});
    throw ConfigError("unknown section " + section);
  });

  m.def("_study", [](const std::string& cfg) {
    const RunConfig c = run_config(cfg);
    py::gil_scoped_release release;
    return to_json(run_propagation_study(c.study)).dump();
  });
  m.def("_campaign", [](const std::string& cfg, bool records) {
    const RunConfig c = run_config(cfg);
    py::gil_scoped_release release;
    return to_json(run_detection_campaign(c.campaign), records).dump();
  });
  m.def("_optimize", [](const std::string& cfg) {
    const RunConfig c = run_config(cfg);
    py::gil_scoped_release release;
    return to_json(run_optimize(c.optimizer, c.seed, c.threads)).dump();
  });
  m.def("_bench", [](const std::string& cfg) {
    const RunConfig c = run_config(cfg);
    py::gil_scoped_release release;
    return to_json(run_bench(c.dims, c.bench.repeats, c.seed)).dump();
  });
}
