#include <seqmag/open_system.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace seqmag;

namespace {

SpinChainParams chain(int n, double bx, double bz = 0.0)
{
  SpinChainParams p;
  p.n_sites = n;
  p.field_x = bx;
  p.field_z = bz;
  return p;
}

double max_abs_diff(const CMatrix& a, const oracle::Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Right-hand side of the master equation from dense Kronecker operators.
oracle::Mat lindblad_rhs(const oracle::Mat& h, const std::vector<oracle::Mat>& z, double gamma, const oracle::Mat& rho)
{
  const oracle::cplx i(0, 1);
  oracle::Mat out = -i * (h * rho - rho * h);
  for (const auto& zj : z) {
    out += 0.5 * gamma * (zj * rho * zj - rho);
  }
  return out;
}

oracle::Mat rk4(const oracle::Mat& h, const std::vector<oracle::Mat>& z, double gamma, oracle::Mat rho, double t,
                int steps)
{
  const double dt = t / steps;
  for (int s = 0; s < steps; ++s) {
    const oracle::Mat k1 = lindblad_rhs(h, z, gamma, rho);
    const oracle::Mat k2 = lindblad_rhs(h, z, gamma, rho + 0.5 * dt * k1);
    const oracle::Mat k3 = lindblad_rhs(h, z, gamma, rho + 0.5 * dt * k2);
    const oracle::Mat k4 = lindblad_rhs(h, z, gamma, rho + dt * k3);
    rho += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return rho;
}

std::vector<oracle::Mat> site_z(int n)
{
  std::vector<oracle::Mat> z;
  for (int j = 1; j <= n; ++j) {
    z.push_back(oracle::embed(oracle::sz(), j, n));
  }
  return z;
}

// exp(L t) vec(rho) with the dense column-stacked Liouvillian
// L = -i (I x H - H^T x I) + sum_j (gamma/2) (Z_j^T x Z_j - I).
oracle::Mat liouvillian_evolve(const oracle::Mat& h, const std::vector<oracle::Mat>& z, double gamma,
                               const oracle::Mat& rho, double t)
{
  const Eigen::Index d = h.rows();
  const oracle::Mat id = oracle::Mat::Identity(d, d);
  const oracle::cplx i(0, 1);
  oracle::Mat l = -i * (Eigen::kroneckerProduct(id, h).eval() - Eigen::kroneckerProduct(h.transpose(), id).eval());
  const oracle::Mat big_id = oracle::Mat::Identity(d * d, d * d);
  for (const auto& zj : z) {
    l += 0.5 * gamma * (Eigen::kroneckerProduct(zj.transpose(), zj).eval() - big_id);
  }
  const oracle::Mat prop = (l * t).exp();
  const oracle::Vec v = prop * rho.reshaped();
  return v.reshaped(d, d);
}

} // namespace

TEST(Lindblad, ClosedLimitMatchesPureEvolution)
{
  const int n = 4;
  const auto p = chain(n, 0.1, 0.05);
  const auto rho = evolve_lindblad(p, DephasingParams{0.0}, DensityMatrix::all_down(n), 7.0);
  const oracle::Vec psi = oracle::expm_unitary(oracle::hamiltonian(n, 1.0, 0.1, 0.05), 7.0) * oracle::all_down(n);
  EXPECT_LT(max_abs_diff(rho.matrix(), psi * psi.adjoint()), 1e-8);
}

TEST(Lindblad, LoneQubitCoherenceDecaysAtRateGamma)
{
  SpinChainParams p;
  p.n_sites = 1;
  CMatrix m(2, 2);
  m << 0.3, cplx(0.2, 0.35), cplx(0.2, -0.35), 0.7;
  const auto rho0 = DensityMatrix::from_matrix(m);
  const double gamma = 0.3;
  for (double t : {0.5, 2.0, 5.0}) {
    const auto rho = evolve_lindblad(p, DephasingParams{gamma}, rho0, t);
    EXPECT_NEAR(std::abs(rho.matrix()(0, 1) - m(0, 1) * std::exp(-gamma * t)), 0.0, 1e-12);
    EXPECT_NEAR(rho.matrix()(0, 0).real(), 0.3, 1e-12);
    EXPECT_NEAR(rho.matrix()(1, 1).real(), 0.7, 1e-12);
  }
}

TEST(Lindblad, MatchesRungeKuttaIntegration)
{
  const int n = 4;
  const double gamma = 0.05;
  const auto p = chain(n, 0.1, 0.07);
  const auto rho = evolve_lindblad(p, DephasingParams{gamma}, DensityMatrix::all_down(n), 4.0);
  const oracle::Vec v = oracle::all_down(n);
  const oracle::Mat ref = rk4(oracle::hamiltonian(n, 1.0, 0.1, 0.07), site_z(n), gamma, v * v.adjoint(), 4.0, 4000);
  EXPECT_LT(max_abs_diff(rho.matrix(), ref), 1e-6);
  EXPECT_EQ(rho.check(), "");
  EXPECT_NEAR(rho.trace(), 1.0, 1e-9);
  EXPECT_LT(rho.hermiticity_error(), 1e-10);
  EXPECT_GT(rho.min_eigenvalue(), -1e-8);
}

TEST(Lindblad, MatchesDenseLiouvillianExponential)
{
  const int n = 3;
  const auto p = chain(n, 0.13, 0.05);
  const oracle::Mat h = oracle::hamiltonian(n, 1.0, 0.13, 0.05);
  const oracle::Vec v = oracle::all_down(n);
  for (double gamma : {0.0, 0.05, 0.3}) {
    for (double t : {0.5, 6.0, 17.0}) {
      const auto rho = evolve_lindblad(p, DephasingParams{gamma}, DensityMatrix::all_down(n), t);
      EXPECT_LT(max_abs_diff(rho.matrix(), liouvillian_evolve(h, site_z(n), gamma, v * v.adjoint(), t)), 1e-10)
          << "gamma=" << gamma << " t=" << t;
    }
  }
}

TEST(Lindblad, PurityNeverIncreasesAtZeroField)
{
  const int n = 4;
  // Product of |+> states: coherent in every site, so dephasing bites.
  CVector plus = CVector::Constant(16, cplx(0.25, 0.0));
  auto rho = DensityMatrix::from_pure(PureState::from_amplitudes(plus));
  double last = rho.purity();
  for (int k = 0; k < 20; ++k) {
    rho = evolve_lindblad(chain(n, 0.0), DephasingParams{0.05}, rho, 0.5);
    EXPECT_LE(rho.purity(), last + 1e-9);
    last = rho.purity();
    EXPECT_GT(rho.min_eigenvalue(), -1e-8);
  }
  EXPECT_LT(last, 0.9);
}

TEST(Lindblad, CapacityAndArgumentChecks)
{
  EXPECT_THROW(LindbladGenerator(chain(9, 0.1), DephasingParams{0.01}), capacity_error);
  EXPECT_THROW(LindbladGenerator(chain(4, 0.1), DephasingParams{-0.01}), invalid_argument_error);
  EXPECT_THROW((void)enumerate_distribution_lindblad(chain(3, 0.1), DephasingParams{0.01},
                                                     MeasurementSchedule::uniform(13, 3.0)),
               capacity_error);
  CMatrix bad = CMatrix::Identity(4, 4);
  EXPECT_THROW((void)DensityMatrix::from_matrix(bad), invalid_argument_error);
}

TEST(LindbladMeasurement, ProjectionMatchesDenseAlgebra)
{
  const int n = 3;
  const auto rho = evolve_lindblad(chain(n, 0.2, 0.1), DephasingParams{0.1}, DensityMatrix::all_down(n), 3.0);
  for (bool z : {true, false}) {
    for (bool up : {true, false}) {
      const oracle::Mat pr = oracle::projector(n, n, z, up);
      const double p = (pr * rho.matrix()).trace().real();
      const auto [pu, pd] = step_probabilities(rho, z ? Basis::Z : Basis::X, n);
      EXPECT_NEAR(up ? pu : pd, p, 1e-12);
      CMatrix m = rho.matrix();
      detail::collapse_in_place(m, site_mask(n, n), z ? Basis::Z : Basis::X, up, p);
      EXPECT_LT(max_abs_diff(m, pr * rho.matrix() * pr / p), 1e-12);
    }
  }
}

TEST(LindbladEnumerate, ClosedLimitMatchesPureEnumeration)
{
  for (Basis b : {Basis::Z, Basis::X}) {
    const auto sched = MeasurementSchedule::uniform(4, 4.0, b);
    const auto pure = enumerate_distribution(chain(4, 0.12, 0.05), sched, 0.0);
    const auto mixed = enumerate_distribution_lindblad(chain(4, 0.12, 0.05), DephasingParams{0.0}, sched, 0.0);
    for (std::size_t i = 0; i < pure.probabilities.size(); ++i) {
      EXPECT_NEAR(mixed.probabilities[i], pure.probabilities[i], 1e-8);
    }
  }
}

TEST(LindbladEnumerate, NormalizedAndThreadIndependent)
{
  const auto sched = MeasurementSchedule::uniform(5, 4.0);
  const auto a = enumerate_distribution_lindblad(chain(4, 0.1), DephasingParams{0.05}, sched, 0.0, 1);
  const auto b = enumerate_distribution_lindblad(chain(4, 0.1), DephasingParams{0.05}, sched, 0.0, 3);
  EXPECT_NEAR(a.total(), 1.0, 1e-8);
  EXPECT_EQ(a.probabilities, b.probabilities);
}

TEST(LindbladEnumerate, ContinuousInGamma)
{
  const auto sched = MeasurementSchedule::uniform(4, 4.0);
  const auto a = enumerate_distribution_lindblad(chain(4, 0.1), DephasingParams{0.0}, sched, 0.0);
  const auto b = enumerate_distribution_lindblad(chain(4, 0.1), DephasingParams{1e-4}, sched, 0.0);
  for (std::size_t i = 0; i < a.probabilities.size(); ++i) {
    EXPECT_LT(std::abs(b.probabilities[i] - a.probabilities[i]) / 1e-4, 10.0);
  }
}

// Stochastic unraveling: sigma^z jumps at total rate N gamma / 2 on uniformly
// chosen sites, exact unitary evolution in between.
TEST(LindbladEnumerate, AgreesWithQuantumJumpUnraveling)
{
  const int n = 6;
  const int n_seq = 6;
  const double gamma = 0.01;
  const double tau = 6.0;
  const auto dist = enumerate_distribution_lindblad(chain(n, 0.1), DephasingParams{gamma},
                                                    MeasurementSchedule::uniform(n_seq, tau), 0.0);

  Eigen::SelfAdjointEigenSolver<oracle::Mat> es(oracle::hamiltonian(n, 1.0, 0.1, 0.0));
  const oracle::Mat v = es.eigenvectors();
  const Eigen::VectorXd lam = es.eigenvalues();
  auto evolve = [&](oracle::Vec& psi, double t) {
    oracle::Vec c = v.adjoint() * psi;
    for (Eigen::Index k = 0; k < c.size(); ++k) {
      c(k) *= std::exp(oracle::cplx(0, -lam(k) * t));
    }
    psi = v * c;
  };
  const int dim = 1 << n;
  std::mt19937_64 rng(31337);
  std::exponential_distribution<double> wait(n * gamma / 2.0);
  std::uniform_int_distribution<int> site(1, n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int samples = 40000;
  std::vector<int> counts(std::size_t{1} << n_seq, 0);
  for (int s = 0; s < samples; ++s) {
    oracle::Vec psi = oracle::all_down(n);
    std::uint64_t idx = 0;
    for (int step = 0; step < n_seq; ++step) {
      double left = tau;
      for (;;) {
        const double w = wait(rng);
        if (w >= left) {
          evolve(psi, left);
          break;
        }
        evolve(psi, w);
        left -= w;
        const int j = site(rng);
        for (int a = 0; a < dim; ++a) {
          if (((a >> (n - j)) & 1) == 0) {
            psi(a) = -psi(a);
          }
        }
      }
      double pu = 0.0;
      for (int a = 0; a < dim; ++a) {
        if (a & 1) {
          pu += std::norm(psi(a));
        }
      }
      const bool up = u(rng) < pu;
      for (int a = 0; a < dim; ++a) {
        if (((a & 1) != 0) != up) {
          psi(a) = 0;
        }
      }
      psi.normalize();
      idx = (idx << 1U) | (up ? 1U : 0U);
    }
    ++counts[idx];
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double p = dist.probabilities[i];
    const double sigma = std::sqrt(samples * p * (1.0 - p));
    EXPECT_LE(std::abs(counts[i] - samples * p), 3.0 * sigma + 1.0) << dist.label(i);
  }
}

TEST(DephasingFisher, ClosedColumnMatchesAndDephasingCostsInformation)
{
  const auto sched = MeasurementSchedule::uniform(5, 4.0);
  const auto rows = fisher_dephasing_sweep(chain(4, 0.1), sched, {0.0, 0.02, 0.1});
  ASSERT_EQ(rows.size(), 15U);
  const auto clean = fisher_sweep(chain(4, 0.1), sched);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_NEAR(rows[k].fisher.value / clean[k].value, 1.0, 1e-6);
    EXPECT_GT(rows[k].fisher.value, rows[5 + k].fisher.value);
    EXPECT_GT(rows[5 + k].fisher.value, rows[10 + k].fisher.value);
  }
  std::ostringstream os;
  write_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, 15), "gamma,n_seq,F\n0");
}
