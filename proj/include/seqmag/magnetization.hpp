#pragma once

#include <seqmag/measurement.hpp>
#include <seqmag/propagator.hpp>

#include <optional>

namespace seqmag {

/// z magnetization m_j(t) = 2 <psi(t)|P_j^up|psi(t)> - 1 of one site.
struct MagnetizationSeries
{
  int site = 1;
  std::vector<double> times;
  std::vector<double> values;
};

/// Magnetization of `site` over `times`, starting from the all-down state.
[[nodiscard]] inline MagnetizationSeries magnetization_series(const SpinChainParams& params, int site,
                                                              const std::vector<double>& times)
{
  params.validate();
  if (site < 1 || site > params.n_sites) {
    throw invalid_argument_error("site must lie in [1, N]");
  }
  const Propagator prop = make_propagator(build_hamiltonian(params));
  const PureState psi0 = PureState::all_down(params.n_sites);
  const std::size_t mask = site_mask(params.n_sites, site);

  MagnetizationSeries out;
  out.site = site;
  out.times = times;
  out.values.reserve(times.size());
  for (double t : times) {
    if (!(t >= 0.0)) {
      throw invalid_argument_error("magnetization times must be non-negative");
    }
    CVector v = psi0.amplitudes();
    prop.apply(v, t);
    out.values.push_back(2.0 * detail::up_probability(v, mask, Basis::Z) - 1.0);
  }
  return out;
}

/// First grid time at which m_j(t) departs from -1 by more than `threshold`.
[[nodiscard]] inline std::optional<double> response_onset(const MagnetizationSeries& s, double threshold)
{
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (s.values[i] + 1.0 > threshold) {
      return s.times[i];
    }
  }
  return std::nullopt;
}

} // namespace seqmag
