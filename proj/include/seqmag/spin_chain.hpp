#pragma once

// Spin-chain probe: parameters, dense operators, pure states and the
// Heisenberg Hamiltonian with a local field on the first site.
//
// Basis convention: a basis index is an N-bit integer; site 1 is the most
// significant bit, spin down is bit 0 and spin up is bit 1. Energies are in
// units of the coupling J and times in units of 1/J.

#include <seqmag/errors.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace seqmag {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

inline constexpr int kDefaultMaxSites = 12;

/// Exchange offsets of one bond, one per Pauli axis.
struct BondOffset
{
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const BondOffset&, const BondOffset&) = default;
};

struct SpinChainParams
{
  int n_sites = 6;
  double coupling = 1.0;
  double field_x = 0.0;
  double field_z = 0.0;
  /// Per-bond anisotropy offsets; empty means isotropic.
  std::vector<BondOffset> bond_offsets;
  int max_sites = kDefaultMaxSites;

  friend bool operator==(const SpinChainParams&, const SpinChainParams&) = default;

  [[nodiscard]] std::size_t dim() const { return std::size_t{1} << n_sites; }

  void validate() const
  {
    if (n_sites < 1) {
      throw invalid_argument_error("n_sites must be at least 1, got " + std::to_string(n_sites));
    }
    if (n_sites > max_sites) {
      throw capacity_error("n_sites = " + std::to_string(n_sites) + " exceeds the configured maximum of "
                           + std::to_string(max_sites) + " (state dimension 2^N)");
    }
    if (!bond_offsets.empty() && bond_offsets.size() != static_cast<std::size_t>(n_sites - 1)) {
      throw invalid_argument_error("bond_offsets must hold N-1 = " + std::to_string(n_sites - 1)
                                   + " entries, got " + std::to_string(bond_offsets.size()));
    }
    if (!std::isfinite(coupling) || !std::isfinite(field_x) || !std::isfinite(field_z)) {
      throw invalid_argument_error("coupling and field components must be finite");
    }
  }

  [[nodiscard]] SpinChainParams with_field(double bx, double bz) const
  {
    SpinChainParams p = *this;
    p.field_x = bx;
    p.field_z = bz;
    return p;
  }

  [[nodiscard]] bool isotropic() const
  {
    return std::all_of(bond_offsets.begin(), bond_offsets.end(),
                       [](const BondOffset& b) { return b.x == 0.0 && b.y == 0.0 && b.z == 0.0; });
  }
};

/// Bit mask of a 1-based site index.
[[nodiscard]] inline std::size_t site_mask(int n_sites, int site)
{
  return std::size_t{1} << (n_sites - site);
}

enum class OperatorKind { hermitian, projector, general };

/// Dense 2^N x 2^N operator with a symmetry tag checked on construction.
class Operator
{
public:
  Operator() = default;

  static Operator hermitian(CMatrix m)
  {
    check_square(m);
    const double dev = (m - m.adjoint()).cwiseAbs().maxCoeff();
    if (dev >= 1e-12) {
      throw invalid_argument_error("matrix is not hermitian (max |A - A^dagger| = " + std::to_string(dev) + ")");
    }
    return Operator(std::move(m), OperatorKind::hermitian);
  }

  static Operator projector(CMatrix m)
  {
    check_square(m);
    const double dev = (m * m - m).cwiseAbs().maxCoeff();
    if (dev >= 1e-10) {
      throw invalid_argument_error("matrix is not a projector (max |A^2 - A| = " + std::to_string(dev) + ")");
    }
    return Operator(std::move(m), OperatorKind::projector);
  }

  static Operator general(CMatrix m)
  {
    check_square(m);
    return Operator(std::move(m), OperatorKind::general);
  }

  [[nodiscard]] const CMatrix& matrix() const { return m_; }
  [[nodiscard]] OperatorKind kind() const { return kind_; }
  [[nodiscard]] Eigen::Index dim() const { return m_.rows(); }
  [[nodiscard]] bool is_real() const { return m_.imag().cwiseAbs().maxCoeff() == 0.0; }

private:
  Operator(CMatrix m, OperatorKind k) : m_(std::move(m)), kind_(k) {}

  static void check_square(const CMatrix& m)
  {
    if (m.rows() != m.cols() || m.rows() == 0) {
      throw dimension_error("operator must be a non-empty square matrix");
    }
  }

  CMatrix m_;
  OperatorKind kind_ = OperatorKind::general;
};

/// Normalized state vector of an N-site chain.
class PureState
{
public:
  PureState() = default;

  /// Normalizes the given amplitudes; the vector length must be a power of two.
  static PureState from_amplitudes(CVector amplitudes)
  {
    const auto len = static_cast<std::size_t>(amplitudes.size());
    if (len == 0 || (len & (len - 1)) != 0) {
      throw dimension_error("state length must be a positive power of two");
    }
    const double norm = amplitudes.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw invalid_argument_error("state vector has zero or non-finite norm");
    }
    amplitudes /= norm;
    int n = 0;
    while ((std::size_t{1} << n) < len) {
      ++n;
    }
    return PureState(std::move(amplitudes), n);
  }

  static PureState basis(int n_sites, std::size_t index)
  {
    CVector v = CVector::Zero(static_cast<Eigen::Index>(std::size_t{1} << n_sites));
    v(static_cast<Eigen::Index>(index)) = 1.0;
    return PureState(std::move(v), n_sites);
  }

  /// Ferromagnetic initial state with every spin down.
  static PureState all_down(int n_sites) { return basis(n_sites, 0); }

  [[nodiscard]] const CVector& amplitudes() const { return v_; }
  [[nodiscard]] int n_sites() const { return n_; }
  [[nodiscard]] Eigen::Index dim() const { return v_.size(); }

  // Trusted constructor for internal paths that maintain the norm themselves.
  static PureState adopt(CVector v, int n_sites) { return PureState(std::move(v), n_sites); }

private:
  PureState(CVector v, int n) : v_(std::move(v)), n_(n) {}

  CVector v_;
  int n_ = 0;
};

namespace detail {

// Coupling constant J + offset for axis a (0=x, 1=y, 2=z) of bond b.
inline double bond_coupling(const SpinChainParams& p, int bond, int axis)
{
  if (p.bond_offsets.empty()) {
    return p.coupling;
  }
  const BondOffset& o = p.bond_offsets[static_cast<std::size_t>(bond)];
  return p.coupling + (axis == 0 ? o.x : axis == 1 ? o.y : o.z);
}

// Real symmetric Hamiltonian matrix. sigma^y sigma^y has real matrix
// elements, so the whole Hamiltonian is real when B_y = 0.
inline RMatrix hamiltonian_real(const SpinChainParams& p)
{
  const int n = p.n_sites;
  const std::size_t dim = p.dim();
  RMatrix h = RMatrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  const std::size_t m1 = site_mask(n, 1);
  for (std::size_t a = 0; a < dim; ++a) {
    const auto ia = static_cast<Eigen::Index>(a);
    for (int j = 1; j < n; ++j) {
      const std::size_t mj = site_mask(n, j);
      const std::size_t mk = site_mask(n, j + 1);
      const bool sj = (a & mj) != 0;
      const bool sk = (a & mk) != 0;
      const double jx = bond_coupling(p, j - 1, 0);
      const double jy = bond_coupling(p, j - 1, 1);
      const double jz = bond_coupling(p, j - 1, 2);
      // -Jz sz sz
      h(ia, ia) -= jz * (sj == sk ? 1.0 : -1.0);
      // -Jx sx sx - Jy sy sy flips both spins; sy sy gives +1 on antiparallel, -1 on parallel pairs.
      const auto ib = static_cast<Eigen::Index>(a ^ (mj | mk));
      h(ib, ia) -= jx + (sj == sk ? -jy : jy);
    }
    h(static_cast<Eigen::Index>(a ^ m1), ia) += p.field_x;
    h(ia, ia) += ((a & m1) != 0 ? 1.0 : -1.0) * p.field_z;
  }
  return h;
}

} // namespace detail

/// H = -sum_j sum_a (J + dJ_a,j) s_j^a s_{j+1}^a + B_x s_1^x + B_z s_1^z.
[[nodiscard]] inline Operator build_hamiltonian(const SpinChainParams& params)
{
  params.validate();
  return Operator::hermitian(detail::hamiltonian_real(params).cast<cplx>());
}

/// Pauli operator for axis 'x', 'y' or 'z' acting on a 1-based site.
[[nodiscard]] inline Operator pauli(int n_sites, int site, char axis)
{
  if (site < 1 || site > n_sites) {
    throw invalid_argument_error("site index out of range");
  }
  const std::size_t dim = std::size_t{1} << n_sites;
  const std::size_t m = site_mask(n_sites, site);
  CMatrix op = CMatrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t a = 0; a < dim; ++a) {
    const bool up = (a & m) != 0;
    const auto ia = static_cast<Eigen::Index>(a);
    const auto ib = static_cast<Eigen::Index>(a ^ m);
    switch (axis) {
    case 'x': op(ib, ia) = 1.0; break;
    case 'y': op(ib, ia) = up ? cplx(0.0, 1.0) : cplx(0.0, -1.0); break;
    case 'z': op(ia, ia) = up ? 1.0 : -1.0; break;
    default: throw invalid_argument_error(std::string("unknown Pauli axis '") + axis + "'");
    }
  }
  return Operator::hermitian(std::move(op));
}

/// Expectation value <psi|A|psi> (real part; exact for hermitian A).
[[nodiscard]] inline double expectation(const PureState& psi, const Operator& op)
{
  if (op.dim() != psi.dim()) {
    throw dimension_error("operator and state dimensions differ");
  }
  return psi.amplitudes().dot(op.matrix() * psi.amplitudes()).real();
}

} // namespace seqmag
