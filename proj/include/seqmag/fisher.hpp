#pragma once

#include <seqmag/io.hpp>
#include <seqmag/protocol.hpp>

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

namespace seqmag {

inline constexpr double kDefaultFisherStep = 1e-5;

/// Classical Fisher information of the outcome distribution with respect to B_x.
struct FisherResult
{
  int n_seq = 0;
  double value = 0.0;
  double delta_b = kDefaultFisherStep;
  double pruned_mass = 0.0;
  /// (dP/dB)^2 / P per outcome string, when requested.
  std::vector<double> contributions;
  std::string warning;
};

/// F from tables at B - delta, B and B + delta by central differences.
/// Outcomes with P at or below the collapse floor are skipped.
[[nodiscard]] inline FisherResult fisher_from_tables(const std::vector<double>& minus, const std::vector<double>& centre,
                                                     const std::vector<double>& plus, double delta_b,
                                                     bool keep_contributions = false)
{
  if (minus.size() != centre.size() || plus.size() != centre.size()) {
    throw dimension_error("probability tables differ in size");
  }
  FisherResult r;
  r.delta_b = delta_b;
  if (keep_contributions) {
    r.contributions.assign(centre.size(), 0.0);
  }
  // Round-off in each enumerated probability is a few ulps of 1; the central
  // difference is resolved only when it clears that noise.
  constexpr double kTableNoise = 1e-14;
  double largest_diff = 0.0;
  for (std::size_t i = 0; i < centre.size(); ++i) {
    const double p = centre[i];
    const double diff = plus[i] - minus[i];
    largest_diff = std::max(largest_diff, std::abs(diff));
    if (p <= kOutcomeFloor) {
      continue;
    }
    const double dp = diff / (2.0 * delta_b);
    const double c = dp * dp / p;
    r.value += c;
    if (keep_contributions) {
      r.contributions[i] = c;
    }
  }
  if (largest_diff > 0.0 && largest_diff < 100.0 * kTableNoise) {
    r.warning = "probability differences at step " + std::to_string(delta_b)
                + " are near round-off; increase delta_b";
  }
  return r;
}

namespace detail {

inline SpinChainParams shifted_x(SpinChainParams p, double d)
{
  p.field_x += d;
  return p;
}

inline void attach_pruning_note(FisherResult& r, double pruned)
{
  r.pruned_mass = pruned;
  if (pruned > 1e-6) {
    if (!r.warning.empty()) {
      r.warning += "; ";
    }
    r.warning += "pruned probability mass " + std::to_string(pruned) + " exceeds 1e-6";
  }
}

} // namespace detail

/// F(n) for every prefix n = 1..n_seq of `schedule`, from three tree passes.
[[nodiscard]] inline std::vector<FisherResult> fisher_sweep(const SpinChainParams& params,
                                                            const MeasurementSchedule& schedule,
                                                            double delta_b = kDefaultFisherStep,
                                                            double prune_threshold = kDefaultPruneThreshold,
                                                            unsigned threads = 1)
{
  if (!(delta_b > 0.0)) {
    throw invalid_argument_error("delta_b must be positive");
  }
  if (schedule.n_seq() > kDefaultEnumerationCap) {
    throw capacity_error("n_seq = " + std::to_string(schedule.n_seq())
                         + " exceeds the enumeration cap; Fisher information needs the full outcome table");
  }
  const int n = schedule.n_seq();
  const auto lo = SequentialProbe(detail::shifted_x(params, -delta_b), schedule).enumerate_levels(n, prune_threshold, threads);
  const auto mid = SequentialProbe(params, schedule).enumerate_levels(n, prune_threshold, threads);
  const auto hi = SequentialProbe(detail::shifted_x(params, delta_b), schedule).enumerate_levels(n, prune_threshold, threads);
  std::vector<FisherResult> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::size_t d = 0; d < static_cast<std::size_t>(n); ++d) {
    FisherResult r = fisher_from_tables(lo[d].probabilities, mid[d].probabilities, hi[d].probabilities, delta_b);
    r.n_seq = static_cast<int>(d) + 1;
    detail::attach_pruning_note(r, std::max({lo[d].pruned_mass, mid[d].pruned_mass, hi[d].pruned_mass}));
    out.push_back(std::move(r));
  }
  return out;
}

[[nodiscard]] inline FisherResult classical_fisher(const SpinChainParams& params, const MeasurementSchedule& schedule,
                                                   double delta_b = kDefaultFisherStep,
                                                   double prune_threshold = kDefaultPruneThreshold,
                                                   unsigned threads = 1, bool keep_contributions = false)
{
  if (!(delta_b > 0.0)) {
    throw invalid_argument_error("delta_b must be positive");
  }
  const auto lo = enumerate_distribution(detail::shifted_x(params, -delta_b), schedule, prune_threshold,
                                         kDefaultEnumerationCap, threads);
  const auto mid = enumerate_distribution(params, schedule, prune_threshold, kDefaultEnumerationCap, threads);
  const auto hi = enumerate_distribution(detail::shifted_x(params, delta_b), schedule, prune_threshold,
                                         kDefaultEnumerationCap, threads);
  FisherResult r = fisher_from_tables(lo.probabilities, mid.probabilities, hi.probabilities, delta_b, keep_contributions);
  r.n_seq = schedule.n_seq();
  detail::attach_pruning_note(r, std::max({lo.pruned_mass, mid.pruned_mass, hi.pruned_mass}));
  return r;
}

/// CSV with columns (n_seq, F, inv_F, pruned_mass).
inline void write_csv(std::ostream& os, const std::vector<FisherResult>& sweep)
{
  CsvWriter w(os, {"n_seq", "F", "inv_F", "pruned_mass"});
  for (const auto& r : sweep) {
    const double inv = r.value > 0.0 ? 1.0 / r.value : std::numeric_limits<double>::infinity();
    w.row(r.n_seq, r.value, inv, r.pruned_mass);
  }
}

} // namespace seqmag
