#pragma once

#include <seqmag/spin_chain.hpp>

namespace seqmag {

/// Readout basis of a single-site projective measurement.
enum class Basis { Z, X };

inline constexpr double kOutcomeFloor = 1e-12;

[[nodiscard]] inline const char* to_string(Basis b) { return b == Basis::Z ? "Z" : "X"; }

/// Outcome symbol: u/d for the z basis, +/- for the x basis.
[[nodiscard]] inline char outcome_symbol(Basis b, bool up)
{
  if (b == Basis::Z) {
    return up ? 'u' : 'd';
  }
  return up ? '+' : '-';
}

/// (I + s) / 2 or (I - s) / 2 with s = sigma^z or sigma^x at the given site.
[[nodiscard]] inline Operator site_projector(int n_sites, int site, Basis basis, bool up)
{
  const Operator s = pauli(n_sites, site, basis == Basis::Z ? 'z' : 'x');
  const auto dim = s.dim();
  const double sign = up ? 1.0 : -1.0;
  return Operator::projector(0.5 * (CMatrix::Identity(dim, dim) + sign * s.matrix()));
}

[[nodiscard]] inline double clamp_probability(double p)
{
  if (p < 0.0 && p > -kOutcomeFloor) {
    return 0.0;
  }
  if (p > 1.0 && p < 1.0 + kOutcomeFloor) {
    return 1.0;
  }
  return p;
}

/// <psi|P|psi> for a projector P.
[[nodiscard]] inline double measure_probability(const PureState& state, const Operator& proj)
{
  if (proj.kind() != OperatorKind::projector) {
    throw invalid_argument_error("measure_probability requires an operator tagged projector");
  }
  if (proj.dim() != state.dim()) {
    throw dimension_error("projector and state dimensions differ");
  }
  const CVector& v = state.amplitudes();
  return clamp_probability(v.dot(proj.matrix() * v).real());
}

/// P|psi> / sqrt(p); p must exceed the outcome floor.
[[nodiscard]] inline PureState collapse(const PureState& state, const Operator& proj, double probability)
{
  if (proj.dim() != state.dim()) {
    throw dimension_error("projector and state dimensions differ");
  }
  if (!(probability > kOutcomeFloor)) {
    throw degenerate_outcome_error("cannot collapse onto an outcome with probability " + std::to_string(probability));
  }
  CVector v = proj.matrix() * state.amplitudes();
  const double norm = v.norm();
  if (!(norm > 0.0)) {
    throw degenerate_outcome_error("projected state vanishes");
  }
  v /= norm;
  return PureState::adopt(std::move(v), state.n_sites());
}

namespace detail {

// Structural site-local measurement on raw amplitude vectors. These avoid
// forming the dense projector on the hot paths of the protocol engine.

inline double up_probability(const CVector& v, std::size_t mask, Basis basis)
{
  const auto dim = static_cast<std::size_t>(v.size());
  double p = 0.0;
  if (basis == Basis::Z) {
    for (std::size_t a = 0; a < dim; ++a) {
      if ((a & mask) != 0) {
        p += std::norm(v(static_cast<Eigen::Index>(a)));
      }
    }
    return clamp_probability(p);
  }
  // <sigma^x> = 2 Re sum_{a: bit clear} conj(v_a) v_{a^mask}
  double sx = 0.0;
  for (std::size_t a = 0; a < dim; ++a) {
    if ((a & mask) == 0) {
      sx += (std::conj(v(static_cast<Eigen::Index>(a))) * v(static_cast<Eigen::Index>(a | mask))).real();
    }
  }
  return clamp_probability(0.5 * (1.0 + 2.0 * sx));
}

// Project in place onto the outcome and rescale by 1/sqrt(p). With p = 1
// this is the bare projection.
inline void collapse_in_place(CVector& v, std::size_t mask, Basis basis, bool up, double p = 1.0)
{
  const auto dim = static_cast<std::size_t>(v.size());
  const double scale = 1.0 / std::sqrt(p);
  if (basis == Basis::Z) {
    for (std::size_t a = 0; a < dim; ++a) {
      const bool bit = (a & mask) != 0;
      auto& c = v(static_cast<Eigen::Index>(a));
      c = (bit == up) ? c * scale : cplx(0.0);
    }
    return;
  }
  // (I +- sigma^x)/2 mixes each pair (a, a^mask).
  const double sign = up ? 1.0 : -1.0;
  for (std::size_t a = 0; a < dim; ++a) {
    if ((a & mask) == 0) {
      const auto i0 = static_cast<Eigen::Index>(a);
      const auto i1 = static_cast<Eigen::Index>(a | mask);
      const cplx lo = v(i0);
      const cplx hi = v(i1);
      v(i0) = 0.5 * (lo + sign * hi) * scale;
      v(i1) = 0.5 * (hi + sign * lo) * scale;
    }
  }
}

} // namespace detail

} // namespace seqmag
