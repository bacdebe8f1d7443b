#pragma once

#include <seqmag/fisher.hpp>
#include <seqmag/parallel.hpp>
#include <seqmag/protocol.hpp>

#include <Eigen/Sparse>

#include <bit>

namespace seqmag {

inline constexpr int kOpenSystemMaxSites = 8;
inline constexpr int kOpenSystemEnumerationCap = 12;

/// Local sigma^z dephasing at rate gamma on every site.
struct DephasingParams
{
  double rate = 0.0;

  void validate() const
  {
    if (!(rate >= 0.0) || !std::isfinite(rate)) {
      throw invalid_argument_error("dephasing rate must be finite and non-negative");
    }
  }
};

class DensityMatrix
{
public:
  DensityMatrix() = default;

  [[nodiscard]] static DensityMatrix from_pure(const PureState& psi)
  {
    DensityMatrix r;
    r.rho_ = psi.amplitudes() * psi.amplitudes().adjoint();
    r.n_sites_ = psi.n_sites();
    return r;
  }

  [[nodiscard]] static DensityMatrix all_down(int n_sites) { return from_pure(PureState::all_down(n_sites)); }

  /// Validated: hermitian within 1e-10, unit trace within 1e-9, spectrum
  /// bounded below by -1e-8.
  [[nodiscard]] static DensityMatrix from_matrix(CMatrix rho)
  {
    const auto d = rho.rows();
    if (d != rho.cols() || d < 2 || (d & (d - 1)) != 0) {
      throw dimension_error("density matrix must be square with power-of-two dimension");
    }
    DensityMatrix r;
    r.rho_ = std::move(rho);
    r.n_sites_ = std::countr_zero(static_cast<std::uint64_t>(d));
    const std::string problem = r.check();
    if (!problem.empty()) {
      throw invalid_argument_error(problem);
    }
    return r;
  }

  /// Trusted construction for states produced by the library itself.
  [[nodiscard]] static DensityMatrix adopt(CMatrix rho, int n_sites)
  {
    DensityMatrix r;
    r.rho_ = std::move(rho);
    r.n_sites_ = n_sites;
    return r;
  }

  [[nodiscard]] const CMatrix& matrix() const { return rho_; }
  [[nodiscard]] int n_sites() const { return n_sites_; }
  [[nodiscard]] double trace() const { return rho_.trace().real(); }
  [[nodiscard]] double purity() const { return (rho_ * rho_).trace().real(); }
  [[nodiscard]] double hermiticity_error() const { return (rho_ - rho_.adjoint()).cwiseAbs().maxCoeff(); }

  [[nodiscard]] double min_eigenvalue() const
  {
    const CMatrix h = 0.5 * (rho_ + rho_.adjoint());
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

  /// Empty when every invariant holds, else a description of the first violation.
  [[nodiscard]] std::string check() const
  {
    if (hermiticity_error() > 1e-10) {
      return "density matrix is not hermitian";
    }
    if (std::abs(trace() - 1.0) > 1e-9) {
      return "density matrix trace differs from 1";
    }
    if (min_eigenvalue() < -1e-8) {
      return "density matrix has a negative eigenvalue";
    }
    return {};
  }

private:
  CMatrix rho_;
  int n_sites_ = 0;
};

/// Generator L(rho) = -i[H, rho] + sum_j (gamma/2)(Z_j rho Z_j - rho).
/// The dissipator multiplies element (a, b) by -gamma * popcount(a xor b),
/// and H has at most N + 1 nonzeros per row, so L costs O(N 4^N) per
/// application. exp(L t) is applied by a Taylor series on substeps of
/// norm at most 4, summed until terms fall below double precision.
class LindbladGenerator
{
public:
  LindbladGenerator(const SpinChainParams& params, const DephasingParams& dephasing)
      : params_(params), gamma_(dephasing.rate)
  {
    params_.validate();
    dephasing.validate();
    if (params_.n_sites > kOpenSystemMaxSites) {
      throw capacity_error("open-system simulation supports at most " + std::to_string(kOpenSystemMaxSites)
                           + " sites (Liouville space grows as 4^N)");
    }
    const RMatrix h = detail::hamiltonian_real(params_);
    const auto dim = h.rows();
    h_ = h.cast<cplx>().sparseView(0.0, 0.0);
    h_.makeCompressed();
    Eigen::SelfAdjointEigenSolver<RMatrix> es(h, Eigen::EigenvaluesOnly);
    width_ = es.eigenvalues().maxCoeff() - es.eigenvalues().minCoeff();
    // Centre the dissipator's real spectrum [-gamma N, 0] on zero.
    shift_ = 0.5 * gamma_ * params_.n_sites;
    decay_.resize(dim, dim);
    for (Eigen::Index a = 0; a < dim; ++a) {
      for (Eigen::Index b = 0; b < dim; ++b) {
        const int flips = std::popcount(static_cast<std::uint64_t>(a ^ b));
        decay_(a, b) = shift_ - gamma_ * flips;
      }
    }
  }

  [[nodiscard]] double rate() const { return gamma_; }
  [[nodiscard]] const SpinChainParams& params() const { return params_; }

  /// L(rho) for hermitian rho.
  [[nodiscard]] CMatrix apply(const CMatrix& rho) const
  {
    CMatrix out = apply_shifted(rho);
    out.array() -= shift_ * rho.array();
    return out;
  }

  /// rho <- exp(L t) rho.
  void evolve(CMatrix& rho, double t) const
  {
    if (!(t >= 0.0)) {
      throw invalid_argument_error("evolution time must be non-negative");
    }
    if (t == 0.0) {
      return;
    }
    const double theta = (width_ + shift_) * t;
    const int steps = std::max(1, static_cast<int>(std::ceil(theta / 4.0)));
    const double h = t / steps;
    CMatrix term(rho.rows(), rho.cols());
    CMatrix next(rho.rows(), rho.cols());
    CMatrix work(rho.rows(), rho.cols());
    for (int s = 0; s < steps; ++s) {
      term = rho;
      const double scale = rho.cwiseAbs2().maxCoeff();
      int small = 0;
      for (int k = 1; k <= 200; ++k) {
        apply_shifted(term, next, work);
        term = next * (h / k);
        rho += term;
        small = term.cwiseAbs2().maxCoeff() <= 1e-34 * scale ? small + 1 : 0;
        if (small == 2) {
          break;
        }
      }
    }
    rho *= std::exp(-shift_ * t);
    // Restore exact hermiticity lost to round-off.
    rho = 0.5 * (rho + rho.adjoint()).eval();
  }

private:
  CMatrix apply_shifted(const CMatrix& rho) const
  {
    CMatrix out(rho.rows(), rho.cols());
    CMatrix work(rho.rows(), rho.cols());
    apply_shifted(rho, out, work);
    return out;
  }

  // out = -i(H rho - rho H) + decay o rho, using rho H = (H rho)^dagger.
  void apply_shifted(const CMatrix& rho, CMatrix& out, CMatrix& work) const
  {
    work.noalias() = h_ * rho;
    out = cplx(0.0, -1.0) * (work - work.adjoint());
    out.array() += decay_.array() * rho.array();
  }

  SpinChainParams params_;
  double gamma_ = 0.0;
  double width_ = 0.0;
  double shift_ = 0.0;
  Eigen::SparseMatrix<cplx, Eigen::RowMajor> h_;
  RMatrix decay_;
};

[[nodiscard]] inline DensityMatrix evolve_lindblad(const SpinChainParams& params, const DephasingParams& dephasing,
                                                   const DensityMatrix& rho, double duration)
{
  if (rho.n_sites() != params.n_sites) {
    throw dimension_error("density matrix size does not match the chain");
  }
  const LindbladGenerator gen(params, dephasing);
  CMatrix m = rho.matrix();
  gen.evolve(m, duration);
  return DensityMatrix::adopt(std::move(m), params.n_sites);
}

namespace detail {

inline double up_probability(const CMatrix& rho, std::size_t mask, Basis basis)
{
  const auto dim = static_cast<std::size_t>(rho.rows());
  double s = 0.0;
  if (basis == Basis::Z) {
    for (std::size_t a = 0; a < dim; ++a) {
      if (a & mask) {
        s += rho(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)).real();
      }
    }
    return clamp_probability(s);
  }
  for (std::size_t a = 0; a < dim; ++a) {
    s += rho(static_cast<Eigen::Index>(a ^ mask), static_cast<Eigen::Index>(a)).real();
  }
  return clamp_probability(0.5 * (1.0 + s));
}

/// rho <- P rho P / p for the site projector selected by (basis, up).
inline void collapse_in_place(CMatrix& rho, std::size_t mask, Basis basis, bool up, double p)
{
  const auto dim = static_cast<std::size_t>(rho.rows());
  const auto at = [](std::size_t i) { return static_cast<Eigen::Index>(i); };
  if (basis == Basis::Z) {
    for (std::size_t b = 0; b < dim; ++b) {
      for (std::size_t a = 0; a < dim; ++a) {
        const bool keep = (((a & mask) != 0) == up) && (((b & mask) != 0) == up);
        rho(at(a), at(b)) = keep ? rho(at(a), at(b)) / p : cplx(0.0);
      }
    }
    return;
  }
  const double s = up ? 1.0 : -1.0;
  CMatrix out(rho.rows(), rho.cols());
  for (std::size_t b = 0; b < dim; ++b) {
    for (std::size_t a = 0; a < dim; ++a) {
      out(at(a), at(b)) = (rho(at(a), at(b)) + s * rho(at(a ^ mask), at(b)) + s * rho(at(a), at(b ^ mask))
                           + rho(at(a ^ mask), at(b ^ mask)))
                          / (4.0 * p);
    }
  }
  rho = std::move(out);
}

} // namespace detail

/// (p_up, p_down) = Tr(P rho) for one readout of `site`.
[[nodiscard]] inline std::pair<double, double> step_probabilities(const DensityMatrix& rho, Basis basis, int site)
{
  if (site < 1 || site > rho.n_sites()) {
    throw invalid_argument_error("readout site out of range");
  }
  const double pu = detail::up_probability(rho.matrix(), site_mask(rho.n_sites(), site), basis);
  return {pu, 1.0 - pu};
}

/// Sequential protocol on a dephasing probe. Dephasing acts during the free
/// evolution intervals only.
class DephasingProbe
{
public:
  DephasingProbe(const SpinChainParams& params, const DephasingParams& dephasing, const MeasurementSchedule& schedule)
      : gen_(params, dephasing), schedule_(schedule)
  {
    schedule_.validate(params.n_sites);
    mask_ = site_mask(params.n_sites, schedule_.site(params.n_sites));
  }

  [[nodiscard]] const MeasurementSchedule& schedule() const { return schedule_; }
  [[nodiscard]] const LindbladGenerator& generator() const { return gen_; }

  [[nodiscard]] std::vector<TrajectoryDistribution> enumerate_levels(int n_max, double prune_threshold,
                                                                      unsigned threads = 1) const
  {
    if (n_max < 1 || n_max > schedule_.n_seq()) {
      throw invalid_argument_error("enumeration depth must lie in [1, n_seq]");
    }
    if (n_max > kOpenSystemEnumerationCap) {
      throw capacity_error("n_seq = " + std::to_string(n_max) + " exceeds the open-system enumeration cap of "
                           + std::to_string(kOpenSystemEnumerationCap));
    }
    if (!(prune_threshold >= 0.0)) {
      throw invalid_argument_error("prune threshold must be non-negative");
    }
    std::vector<TrajectoryDistribution> levels(static_cast<std::size_t>(n_max));
    for (int d = 1; d <= n_max; ++d) {
      auto& L = levels[static_cast<std::size_t>(d - 1)];
      L.n_seq = d;
      L.basis = schedule_.basis;
      L.params = gen_.params();
      L.schedule = schedule_.prefix(d);
      L.probabilities.assign(std::size_t{1} << d, 0.0);
    }
    const int split = std::min(n_max, 3);
    std::vector<Node> frontier{Node{DensityMatrix::all_down(gen_.params().n_sites).matrix(), 1.0, 0}};
    std::vector<double> head_pruned(static_cast<std::size_t>(n_max), 0.0);
    for (int d = 0; d < split; ++d) {
      std::vector<Node> next;
      for (auto& node : frontier) {
        expand(node, d, levels, prune_threshold, head_pruned, [&](Node child) { next.push_back(std::move(child)); });
      }
      frontier = std::move(next);
    }
    std::vector<std::vector<double>> sub_pruned(frontier.size(),
                                                std::vector<double>(static_cast<std::size_t>(n_max), 0.0));
    if (split < n_max) {
      parallel_for(frontier.size(), threads, [&](std::size_t k) {
        descend(std::move(frontier[k]), split, n_max, levels, prune_threshold, sub_pruned[k]);
      });
    }
    for (int d = 0; d < n_max; ++d) {
      double s = head_pruned[static_cast<std::size_t>(d)];
      for (const auto& sp : sub_pruned) {
        s += sp[static_cast<std::size_t>(d)];
      }
      levels[static_cast<std::size_t>(d)].pruned_mass = s;
    }
    return levels;
  }

private:
  struct Node
  {
    CMatrix rho;
    double prob;
    std::uint64_t index;
  };

  template <typename Sink>
  void expand(Node& node, int d, std::vector<TrajectoryDistribution>& levels, double prune,
              std::vector<double>& pruned, Sink&& sink) const
  {
    const int n_max = static_cast<int>(levels.size());
    gen_.evolve(node.rho, schedule_.intervals[static_cast<std::size_t>(d)]);
    const double pu = detail::up_probability(node.rho, mask_, schedule_.basis);
    for (int o = 0; o <= 1; ++o) {
      const bool up = o == 1;
      const double p = up ? pu : 1.0 - pu;
      const double child_p = node.prob * p;
      const std::uint64_t child_idx = (node.index << 1U) | static_cast<std::uint64_t>(o);
      if (child_p < prune) {
        for (int k = d; k < n_max; ++k) {
          pruned[static_cast<std::size_t>(k)] += child_p;
        }
        continue;
      }
      levels[static_cast<std::size_t>(d)].probabilities[child_idx] = child_p;
      if (d + 1 == n_max) {
        continue;
      }
      if (p <= kOutcomeFloor) {
        for (int k = d + 1; k < n_max; ++k) {
          pruned[static_cast<std::size_t>(k)] += child_p;
        }
        continue;
      }
      CMatrix r = up ? std::move(node.rho) : node.rho;
      detail::collapse_in_place(r, mask_, schedule_.basis, up, p);
      sink(Node{std::move(r), child_p, child_idx});
    }
  }

  void descend(Node node, int d, int n_max, std::vector<TrajectoryDistribution>& levels, double prune,
               std::vector<double>& pruned) const
  {
    if (d >= n_max) {
      return;
    }
    expand(node, d, levels, prune, pruned,
           [&](Node child) { descend(std::move(child), d + 1, n_max, levels, prune, pruned); });
  }

  LindbladGenerator gen_;
  MeasurementSchedule schedule_;
  std::size_t mask_ = 0;
};

[[nodiscard]] inline TrajectoryDistribution enumerate_distribution_lindblad(
    const SpinChainParams& params, const DephasingParams& dephasing, const MeasurementSchedule& schedule,
    double prune_threshold = kDefaultPruneThreshold, unsigned threads = 1)
{
  if (schedule.n_seq() > kOpenSystemEnumerationCap) {
    throw capacity_error("n_seq = " + std::to_string(schedule.n_seq()) + " exceeds the open-system enumeration cap of "
                         + std::to_string(kOpenSystemEnumerationCap));
  }
  auto levels = DephasingProbe(params, dephasing, schedule).enumerate_levels(schedule.n_seq(), prune_threshold, threads);
  return std::move(levels.back());
}

struct DephasingFisherRow
{
  double gamma = 0.0;
  FisherResult fisher;
};

/// F(n_seq; gamma) for every prefix of `schedule` and every rate.
[[nodiscard]] inline std::vector<DephasingFisherRow> fisher_dephasing_sweep(
    const SpinChainParams& params, const MeasurementSchedule& schedule, const std::vector<double>& gammas,
    double delta_b = kDefaultFisherStep, double prune_threshold = kDefaultPruneThreshold, unsigned threads = 1)
{
  if (!(delta_b > 0.0)) {
    throw invalid_argument_error("delta_b must be positive");
  }
  const int n = schedule.n_seq();
  std::vector<DephasingFisherRow> rows;
  for (double g : gammas) {
    const DephasingParams dp{g};
    dp.validate();
    const auto lo = DephasingProbe(detail::shifted_x(params, -delta_b), dp, schedule).enumerate_levels(n, prune_threshold, threads);
    const auto mid = DephasingProbe(params, dp, schedule).enumerate_levels(n, prune_threshold, threads);
    const auto hi = DephasingProbe(detail::shifted_x(params, delta_b), dp, schedule).enumerate_levels(n, prune_threshold, threads);
    for (std::size_t d = 0; d < static_cast<std::size_t>(n); ++d) {
      FisherResult r = fisher_from_tables(lo[d].probabilities, mid[d].probabilities, hi[d].probabilities, delta_b);
      r.n_seq = static_cast<int>(d) + 1;
      detail::attach_pruning_note(r, std::max({lo[d].pruned_mass, mid[d].pruned_mass, hi[d].pruned_mass}));
      rows.push_back({g, std::move(r)});
    }
  }
  return rows;
}

/// CSV with columns (gamma, n_seq, F).
inline void write_csv(std::ostream& os, const std::vector<DephasingFisherRow>& rows)
{
  CsvWriter w(os, {"gamma", "n_seq", "F"});
  for (const auto& r : rows) {
    w.row(r.gamma, r.fisher.n_seq, r.fisher.value);
  }
}

} // namespace seqmag
