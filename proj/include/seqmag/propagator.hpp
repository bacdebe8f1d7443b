#pragma once

#include <seqmag/spin_chain.hpp>

#include <Eigen/Eigenvalues>

#include <map>
#include <memory>
#include <mutex>
#include <sstream>

namespace seqmag {

/// Eigendecomposition H = V diag(lambda) V^dagger used for exact evolution
/// over arbitrary durations.
class Propagator
{
public:
  Propagator() = default;

  [[nodiscard]] const RVector& eigenvalues() const { return values_; }
  [[nodiscard]] const CMatrix& eigenvectors() const { return vectors_; }
  [[nodiscard]] Eigen::Index dim() const { return values_.size(); }
  /// True when the source Hamiltonian was real, so V is real orthogonal.
  [[nodiscard]] bool real() const { return real_vectors_.size() > 0; }
  [[nodiscard]] const RMatrix& real_eigenvectors() const { return real_vectors_; }

  /// Dense unitary exp(-i H t).
  [[nodiscard]] CMatrix unitary(double t) const
  {
    const CVector phases = phase_vector(t);
    if (real()) {
      const CMatrix scaled = real_vectors_.cast<cplx>() * phases.asDiagonal();
      // V diag V^T with V real: split into two real products.
      RMatrix re = scaled.real() * real_vectors_.transpose();
      RMatrix im = scaled.imag() * real_vectors_.transpose();
      CMatrix u(dim(), dim());
      u.real() = re;
      u.imag() = im;
      return u;
    }
    return vectors_ * phases.asDiagonal() * vectors_.adjoint();
  }

  /// exp(-i lambda_k t) for every eigenvalue.
  [[nodiscard]] CVector phase_vector(double t) const
  {
    CVector ph(dim());
    for (Eigen::Index k = 0; k < dim(); ++k) {
      ph(k) = std::polar(1.0, -values_(k) * t);
    }
    return ph;
  }

  /// Apply exp(-i H t) through the eigenbasis without forming the unitary.
  void apply(CVector& v, double t) const { apply_phases(v, phase_vector(t)); }

  /// Apply V diag(phases) V^dagger; `phases` usually comes from phase_vector.
  /// For real V this costs the same as one dense complex matrix-vector product.
  void apply_phases(CVector& v, const CVector& phases) const
  {
    if (real()) {
      CVector coeff(dim());
      coeff.real() = real_vectors_.transpose() * v.real();
      coeff.imag() = real_vectors_.transpose() * v.imag();
      coeff = coeff.cwiseProduct(phases);
      v.real() = real_vectors_ * coeff.real();
      v.imag() = real_vectors_ * coeff.imag();
    } else {
      CVector coeff = vectors_.adjoint() * v;
      coeff = coeff.cwiseProduct(phases);
      v = vectors_ * coeff;
    }
  }

  [[nodiscard]] CMatrix reconstruct() const
  {
    return vectors_ * values_.cast<cplx>().asDiagonal() * vectors_.adjoint();
  }

private:
  friend Propagator make_propagator(const Operator& h);

  RVector values_;
  CMatrix vectors_;
  RMatrix real_vectors_;
};

namespace detail {

/// H commutes with the global spin flip |a> -> |~a>, which holds for real
/// chains without a z field.
inline bool flip_symmetric(const RMatrix& h)
{
  const Eigen::Index d = h.rows();
  for (Eigen::Index b = 0; b < d; ++b) {
    for (Eigen::Index a = 0; a < d; ++a) {
      if (h(a, b) != h(d - 1 - a, d - 1 - b)) {
        return false;
      }
    }
  }
  return true;
}

/// Diagonalize the flip-even and flip-odd blocks A +- B separately, where
/// A = H[low, low] and B(i, j) = H(i, ~j), and merge them in ascending order.
inline bool flip_block_eigen(const RMatrix& h, RVector& values, RMatrix& vectors)
{
  const Eigen::Index d = h.rows();
  const Eigen::Index half = d / 2;
  const RMatrix a = h.topLeftCorner(half, half);
  RMatrix b(half, half);
  for (Eigen::Index j = 0; j < half; ++j) {
    b.col(j) = h.col(d - 1 - j).head(half);
  }
  const Eigen::SelfAdjointEigenSolver<RMatrix> even(a + b);
  const Eigen::SelfAdjointEigenSolver<RMatrix> odd(a - b);
  if (even.info() != Eigen::Success || odd.info() != Eigen::Success) {
    return false;
  }
  const double r = std::sqrt(0.5);
  values.resize(d);
  vectors = RMatrix::Zero(d, d);
  Eigen::Index ie = 0;
  Eigen::Index io = 0;
  for (Eigen::Index k = 0; k < d; ++k) {
    const bool take_even = io == half || (ie < half && even.eigenvalues()(ie) <= odd.eigenvalues()(io));
    const auto& es = take_even ? even : odd;
    const Eigen::Index src = take_even ? ie++ : io++;
    const double sign = take_even ? 1.0 : -1.0;
    values(k) = es.eigenvalues()(src);
    for (Eigen::Index i = 0; i < half; ++i) {
      const double u = r * es.eigenvectors()(i, src);
      vectors(i, k) = u;
      vectors(d - 1 - i, k) = sign * u;
    }
  }
  return true;
}

} // namespace detail

/// Diagonalize a hermitian operator. Real Hamiltonians (B_y = 0) use the real
/// symmetric solver, split into spin-flip blocks when H allows it; eigenvalues
/// are sorted ascending in every case.
[[nodiscard]] inline Propagator make_propagator(const Operator& h)
{
  if (h.kind() != OperatorKind::hermitian) {
    throw invalid_argument_error("make_propagator requires an operator tagged hermitian");
  }
  Propagator p;
  if (h.is_real()) {
    const RMatrix hr = h.matrix().real();
    if (hr.rows() >= 4 && detail::flip_symmetric(hr) && detail::flip_block_eigen(hr, p.values_, p.real_vectors_)) {
      p.vectors_ = p.real_vectors_.cast<cplx>();
      return p;
    }
    Eigen::SelfAdjointEigenSolver<RMatrix> es(hr);
    if (es.info() != Eigen::Success) {
      std::ostringstream os;
      os << "eigensolver did not converge (dim " << h.dim() << ", max |H_ij| = " << h.matrix().cwiseAbs().maxCoeff()
         << ")";
      throw numeric_error(os.str());
    }
    p.values_ = es.eigenvalues();
    p.real_vectors_ = es.eigenvectors();
    p.vectors_ = p.real_vectors_.cast<cplx>();
  } else {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h.matrix());
    if (es.info() != Eigen::Success) {
      std::ostringstream os;
      os << "eigensolver did not converge (dim " << h.dim() << ", max |H_ij| = " << h.matrix().cwiseAbs().maxCoeff()
         << ")";
      throw numeric_error(os.str());
    }
    p.values_ = es.eigenvalues();
    p.vectors_ = es.eigenvectors();
  }
  return p;
}

/// exp(-i H t)|psi> for t >= 0.
[[nodiscard]] inline PureState evolve(const Propagator& prop, const PureState& state, double duration)
{
  if (state.dim() != prop.dim()) {
    throw dimension_error("state and propagator dimensions differ");
  }
  if (!(duration >= 0.0)) {
    throw invalid_argument_error("evolution duration must be non-negative");
  }
  CVector v = state.amplitudes();
  prop.apply(v, duration);
  return PureState::adopt(std::move(v), state.n_sites());
}

/// Dense unitaries of one Hamiltonian, cached per duration. Thread-safe.
class UnitaryCache
{
public:
  explicit UnitaryCache(std::shared_ptr<const Propagator> prop) : prop_(std::move(prop)) {}

  [[nodiscard]] const CMatrix& get(double t) const
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(t);
    if (it == cache_.end()) {
      it = cache_.emplace(t, prop_->unitary(t)).first;
    }
    return it->second;
  }

  [[nodiscard]] const Propagator& propagator() const { return *prop_; }

private:
  std::shared_ptr<const Propagator> prop_;
  mutable std::mutex mutex_;
  // std::map nodes are stable, so returned references stay valid.
  mutable std::map<double, CMatrix> cache_;
};

} // namespace seqmag
