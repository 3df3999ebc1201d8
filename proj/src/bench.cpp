#include "abftattn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <vector>

namespace abftattn {

double SectionCostCheck::ratio() const noexcept {
  return model_flops ? static_cast<double>(counted_flops) / static_cast<double>(model_flops) : 0.0;
}

bool BenchResult::cost_model_agrees() const noexcept {
  return std::all_of(sections.begin(), sections.end(), [](const SectionCostCheck& s) {
    const double r = s.ratio();
    return r >= 0.5 && r <= 2.0;
  });
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <class Fn>
double time_ms(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

BenchResult run_bench(const AttentionDims& dims, std::size_t repeats, std::uint64_t seed) {
  if (repeats == 0) throw ConfigError("bench needs at least one repeat");
  dims.validate();
  std::mt19937_64 rng(seed);
  const AttentionParams params = AttentionParams::random(dims.d_model, dims.heads, rng);
  const BatchedMatrix x = random_input(dims, rng);
  ProtectionConfig protection;
  protection.seed = seed;

  BenchResult r;
  r.dims = dims;
  r.repeats = repeats;

  const ProtectedResult probe = forward_protected(x, params, protection);
  for (SectionId s : kAllSections) {
    auto& check = r.sections[static_cast<std::size_t>(s)];
    check.section = s;
    check.model_flops = section_cost(s, dims);
    check.counted_flops = probe.trace.section_flops[static_cast<std::size_t>(s)];
  }

  std::vector<double> plain, guarded;
  for (std::size_t i = 0; i < repeats; ++i) {
    plain.push_back(time_ms([&] { (void)forward_unprotected(x, params); }));
    guarded.push_back(time_ms([&] { (void)forward_protected(x, params, protection, {}, i); }));
  }
  r.unprotected_ms = median(plain);
  r.protected_ms = median(guarded);
  r.ratio = r.unprotected_ms > 0.0 ? r.protected_ms / r.unprotected_ms : 0.0;
  return r;
}

}  // namespace abftattn
