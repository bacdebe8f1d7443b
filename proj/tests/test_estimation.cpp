#include <seqmag/fisher.hpp>
#include <seqmag/posterior.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

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

// Up probability at the last site after one interval, from the dense oracle.
double oracle_up(int n, double bx, double tau)
{
  const oracle::Mat u = oracle::expm_unitary(oracle::hamiltonian(n, 1.0, bx, 0.0), tau);
  const oracle::Vec psi = u * oracle::all_down(n);
  return psi.dot(oracle::projector(n, n, true, true) * psi).real();
}

} // namespace

TEST(Fisher, VanishesAtZeroFieldByParity)
{
  for (int n : {4, 6}) {
    const auto r = classical_fisher(chain(n, 0.0), MeasurementSchedule::uniform(5, n));
    EXPECT_LT(r.value, 1e-6);
  }
}

TEST(Fisher, SingleMeasurementMatchesBinaryFormula)
{
  const int n = 4;
  const double bx = 0.1;
  const double tau = 4.0;
  const double h = 1e-3;
  // Five-point stencil on the independent oracle.
  const double dp = (-oracle_up(n, bx + 2 * h, tau) + 8 * oracle_up(n, bx + h, tau) - 8 * oracle_up(n, bx - h, tau)
                     + oracle_up(n, bx - 2 * h, tau))
                    / (12 * h);
  const double p = oracle_up(n, bx, tau);
  const double expected = dp * dp * (1.0 / p + 1.0 / (1.0 - p));
  const auto r = classical_fisher(chain(n, bx), MeasurementSchedule::uniform(1, tau));
  EXPECT_NEAR(r.value / expected, 1.0, 1e-6);
  EXPECT_TRUE(r.warning.empty());
}

TEST(Fisher, StepHalvingAgreesWithinOnePercent)
{
  const auto sched = MeasurementSchedule::uniform(6, 6.0);
  const double a = classical_fisher(chain(6, 0.1), sched, 1e-5).value;
  const double b = classical_fisher(chain(6, 0.1), sched, 5e-6).value;
  EXPECT_NEAR(a / b, 1.0, 1e-2);
}

TEST(Fisher, SweepMatchesIndividualEvaluations)
{
  const auto sched = MeasurementSchedule::uniform(6, 6.0);
  const auto sweep = fisher_sweep(chain(6, 0.1), sched);
  ASSERT_EQ(sweep.size(), 6U);
  for (int n = 1; n <= 6; ++n) {
    const auto r = classical_fisher(chain(6, 0.1), sched.prefix(n));
    EXPECT_EQ(sweep[static_cast<std::size_t>(n - 1)].n_seq, n);
    EXPECT_NEAR(sweep[static_cast<std::size_t>(n - 1)].value, r.value, 1e-9 * r.value);
  }
}

TEST(Fisher, InformationGrowsWithMoreMeasurements)
{
  const auto sweep = fisher_sweep(chain(6, 0.1), MeasurementSchedule::uniform(10, 6.0));
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    EXPECT_GE(sweep[i].value, sweep[i - 1].value - 1e-9);
  }
  // Faster than linear: F(10)/F(5) well above 2.
  EXPECT_GT(sweep[9].value / sweep[4].value, 2.5);
}

TEST(Fisher, ContributionsSumToTotal)
{
  const auto r = classical_fisher(chain(5, 0.1), MeasurementSchedule::uniform(4, 5.0), 1e-5, 0.0, 1, true);
  ASSERT_EQ(r.contributions.size(), 16U);
  double s = 0.0;
  for (double c : r.contributions) {
    EXPECT_GE(c, 0.0);
    s += c;
  }
  EXPECT_NEAR(s, r.value, 1e-12 * r.value);
}

TEST(Fisher, TinyStepRaisesWarning)
{
  const auto r = classical_fisher(chain(4, 0.1), MeasurementSchedule::uniform(2, 4.0), 1e-14);
  EXPECT_FALSE(r.warning.empty());
  EXPECT_THROW((void)classical_fisher(chain(4, 0.1), MeasurementSchedule::uniform(2, 4.0), 0.0),
               invalid_argument_error);
}

TEST(Fisher, CsvExport)
{
  std::ostringstream os;
  write_csv(os, fisher_sweep(chain(3, 0.1), MeasurementSchedule::uniform(2, 3.0)));
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "n_seq,F,inv_F,pruned_mass");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 3);
}

TEST(Likelihood, EmptyDatasetIsZero)
{
  TrajectoryDataset ds;
  ds.n_seq = 3;
  EXPECT_EQ(log_likelihood(ds, chain(4, 0.1), MeasurementSchedule::uniform(3, 4.0)), 0.0);
}

TEST(Likelihood, TruthBeatsDistantCandidate)
{
  const auto sched = MeasurementSchedule::uniform(3, 6.0);
  const auto ds = sample_dataset(chain(6, 0.1), sched, 1000, 11);
  const double at_truth = log_likelihood(ds, chain(6, 0.1), sched);
  EXPECT_GT(at_truth, log_likelihood(ds, chain(6, 0.03), sched));
  EXPECT_GT(at_truth, log_likelihood(ds, chain(6, 0.19), sched));
}

TEST(Likelihood, GridAgreesWithDirectEvaluationAndCaches)
{
  const auto sched = MeasurementSchedule::uniform(4, 5.0);
  const GridSpec grid{-0.2, 0.2, 21};
  auto lik = LikelihoodGrid::along_x(chain(5, 0.0), sched, grid);
  const auto ds = sample_dataset(chain(5, 0.12), sched, 200, 3);
  const auto ll = lik.evaluate(ds);
  const auto nodes = grid.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double direct = log_likelihood(ds, chain(5, nodes[i]), sched);
    if (std::isinf(direct)) {
      EXPECT_TRUE(std::isinf(ll[i]));
    } else {
      EXPECT_NEAR(ll[i], direct, 1e-9 * std::abs(direct));
    }
  }
  EXPECT_EQ(lik.evaluate(ds), ll);
}

TEST(Likelihood, ImpossibleObservationIsNegativeInfinity)
{
  const auto sched = MeasurementSchedule::uniform(2, 3.0);
  TrajectoryDataset ds;
  ds.n_seq = 2;
  ds.add(Trajectory{{1, 0}, Basis::Z});
  EXPECT_TRUE(std::isinf(log_likelihood(ds, chain(3, 0.0), sched)));
}

TEST(Posterior, NoDataGivesUniformPrior)
{
  TrajectoryDataset ds;
  ds.n_seq = 3;
  const auto post = posterior(ds, chain(4, 0.0), MeasurementSchedule::uniform(3, 4.0));
  ASSERT_EQ(post.size(), 401U);
  for (double p : post.probabilities) {
    EXPECT_NEAR(p, 2.5, 1e-12);
  }
  EXPECT_NEAR(post.total_mass(), 1.0, 1e-12);
}

TEST(Posterior, NormalizedAndMirrorSymmetricInZBasis)
{
  const auto sched = MeasurementSchedule::uniform(3, 6.0);
  const auto ds = sample_dataset(chain(6, 0.1), sched, 500, 21);
  const auto post = posterior(ds, chain(6, 0.0), sched);
  EXPECT_NEAR(post.total_mass(), 1.0, 1e-8);
  EXPECT_FALSE(post.sign_identifiable);
  const std::size_t n = post.size();
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_NEAR(post.probabilities[i], post.probabilities[n - 1 - i], 1e-8 * (1.0 + post.probabilities[i]));
  }
  EXPECT_GE(count_regions_above(post, 0.5), 2);
  const auto m = error_metrics(post, 0.1);
  EXPECT_TRUE(m.folded);
  EXPECT_LT(m.bias, 0.02);
  EXPECT_FALSE(error_metrics(post, 0.1, FoldMode::never).folded);
}

// Single spin with H = B sigma_x read out in the z basis after time t is the
// rotated-frame copy of the plus-state spin under B sigma_z read out in the
// +/- basis: P(down) = cos^2(B t).
TEST(Posterior, SingleQubitMatchesAnalyticForm)
{
  SpinChainParams p;
  p.n_sites = 1;
  p.field_x = 0.13;
  const double t = 5.0;
  const auto sched = MeasurementSchedule::uniform(1, t);
  const std::size_t m = 60;
  const auto ds = sample_dataset(p, sched, m, 8);
  const std::size_t k = ds.counts.contains(0) ? ds.counts.at(0) : 0;
  ASSERT_GT(k, 0U);
  ASSERT_LT(k, m);

  const GridSpec grid;
  const auto post = posterior(ds, p, sched, grid);
  const auto x = grid.nodes();
  const auto w = grid.weights();
  std::vector<double> analytic(x.size());
  double top = -INFINITY;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = std::cos(x[i] * t);
    const double s = std::sin(x[i] * t);
    analytic[i] = static_cast<double>(k) * std::log(c * c) + static_cast<double>(m - k) * std::log(s * s);
    top = std::max(top, analytic[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    analytic[i] = std::exp(analytic[i] - top);
    z += w[i] * analytic[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(post.probabilities[i], analytic[i] / z, 1e-8) << x[i];
  }
}

TEST(Posterior, SharpensWithMoreMeasurements)
{
  std::vector<double> widths;
  for (int n : {1, 3, 5}) {
    const auto sched = MeasurementSchedule::uniform(n, 6.0);
    const auto ds = sample_dataset(chain(6, 0.1), sched, 1000, 17);
    widths.push_back(posterior(ds, chain(6, 0.0), sched).folded_standard_deviation());
  }
  EXPECT_GT(widths[0], widths[1]);
  EXPECT_GT(widths[1], widths[2]);
}

TEST(Posterior, AllDownTrajectoryPeaksWhereItIsMostLikely)
{
  const auto sched = MeasurementSchedule::uniform(4, 5.0);
  const GridSpec grid{-0.2, 0.2, 41};
  Trajectory t{{0, 0, 0, 0}, Basis::Z};
  const auto post = single_trajectory_posterior(t, chain(5, 0.0), sched, grid);
  const auto x = grid.nodes();
  const auto w = grid.weights();
  std::vector<double> scan(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    scan[i] = enumerate_distribution(chain(5, x[i]), sched, 0.0).probability("dddd");
    z += w[i] * scan[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(post.probabilities[i], scan[i] / z, 1e-8);
  }
  const auto peak = std::max_element(post.probabilities.begin(), post.probabilities.end()) - post.probabilities.begin();
  EXPECT_NEAR(x[static_cast<std::size_t>(peak)], 0.0, 1e-12);
}

TEST(ErrorMetrics, PointMassAtTruthIsExact)
{
  const GridSpec grid{-0.2, 0.2, 401};
  std::vector<double> ll(401, -INFINITY);
  ll[300] = 0.0;
  const auto post = make_posterior(grid, std::nullopt, ll);
  const auto m = error_metrics(post, grid.nodes()[300]);
  EXPECT_NEAR(m.delta_sq, 0.0, 1e-20);
}

TEST(ErrorMetrics, UnbiasedPosteriorGivesInverseSignalToNoise)
{
  const GridSpec grid;
  const auto x = grid.nodes();
  std::vector<double> ll(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    ll[i] = -0.5 * std::pow((x[i] - 0.1) / 0.01, 2);
  }
  const auto post = make_posterior(grid, std::nullopt, ll);
  const auto m = error_metrics(post, 0.1);
  EXPECT_LT(m.bias, 1e-10);
  EXPECT_NEAR(m.delta_sq, m.variance / 0.01, 1e-12);
  EXPECT_NEAR(std::sqrt(m.variance), 0.01, 1e-4);
}

TEST(ErrorMetrics, ZeroTruthAndDegeneratePosteriorRaise)
{
  TrajectoryDataset ds;
  ds.n_seq = 1;
  const auto post = posterior(ds, chain(3, 0.0), MeasurementSchedule::uniform(1, 3.0));
  EXPECT_THROW((void)error_metrics(post, 0.0), numeric_error);
  EXPECT_THROW((void)make_posterior(GridSpec{}, std::nullopt, std::vector<double>(401, -INFINITY)),
               degenerate_posterior_error);
}

TEST(ErrorMetrics, PosteriorSamplesReproduceMoments)
{
  const GridSpec grid;
  const auto x = grid.nodes();
  std::vector<double> ll(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    ll[i] = -0.5 * std::pow((x[i] - 0.05) / 0.02, 2);
  }
  const auto post = make_posterior(grid, std::nullopt, ll);
  Rng rng(5);
  double s = 0.0;
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    s += sample_estimate(post, rng);
  }
  EXPECT_NEAR(s / draws, post.mean(), 4 * 0.02 / std::sqrt(draws));
}

TEST(AveragedError, SingleSampleEqualsSingleRun)
{
  const auto sched = MeasurementSchedule::uniform(2, 4.0);
  const auto p = chain(4, 0.1);
  const auto avg = averaged_error(p, sched, 100, 1, 99);
  const auto ds = sample_dataset(p, sched, 100, derive_seed(99, 0));
  EXPECT_EQ(avg.mean, error_metrics(posterior(ds, p, sched), 0.1).delta_sq);
}

TEST(AveragedError, DeterministicAndThreadIndependent)
{
  const auto sched = MeasurementSchedule::uniform(2, 4.0);
  const auto a = averaged_error(chain(4, 0.1), sched, 100, 6, 7, {}, 1);
  const auto b = averaged_error(chain(4, 0.1), sched, 100, 6, 7, {}, 3);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_GT(a.std_error, 0.0);
}

TEST(AveragedError, SpreadOfMeanShrinksWithSampleCount)
{
  const auto sched = MeasurementSchedule::uniform(2, 4.0);
  const auto p = chain(4, 0.1);
  const GridSpec grid{-0.2, 0.2, 101};
  auto lik = LikelihoodGrid::along_x(p, sched, grid);
  auto spread = [&](std::size_t n) {
    std::vector<double> means;
    for (std::uint64_t r = 0; r < 16; ++r) {
      means.push_back(averaged_error(p, lik, grid, 40, n, 1000 + r).mean);
    }
    double mu = 0.0;
    for (double v : means) {
      mu += v;
    }
    mu /= static_cast<double>(means.size());
    double ss = 0.0;
    for (double v : means) {
      ss += (v - mu) * (v - mu);
    }
    return ss / static_cast<double>(means.size() - 1);
  };
  const double v2 = spread(2);
  const double v16 = spread(16);
  // Expected ratio 8; allow the sampling spread of a 16-run variance estimate.
  EXPECT_GT(v2 / v16, 3.0);
  EXPECT_LT(v2 / v16, 25.0);
}

TEST(Posterior2D, EmptyDataIsUniform)
{
  DatasetPair data;
  data.z.n_seq = data.x.n_seq = 1;
  const GridSpec2D grid{{-0.2, 0.2, 11}, {-0.2, 0.2, 11}};
  const auto post = posterior_2d(data, chain(3, 0.0), MeasurementSchedule::uniform(1, 3.0), grid);
  for (double p : post.probabilities) {
    EXPECT_NEAR(p, 1.0 / 0.16, 1e-10);
  }
}

TEST(Posterior2D, SingleBasisRidgeIsMultiValued)
{
  const auto sched = MeasurementSchedule::uniform(1, 6.0);
  const SpinChainParams truth = chain(6, 0.15, 0.1);
  DatasetPair data;
  data.z = sample_dataset(truth, sched, 500, 4);
  data.x.n_seq = 1;
  const GridSpec2D grid{{-0.2, 0.2, 61}, {-0.2, 0.2, 61}};
  const auto post = posterior_2d(data, chain(6, 0.0), sched, grid);
  EXPECT_NEAR(post.total_mass(), 1.0, 1e-8);
  EXPECT_GE(count_regions_above(post, 0.5), 2);
}

TEST(Posterior2D, CombinedBasesConcentrateNearTruth)
{
  const auto sched = MeasurementSchedule::uniform(3, 6.0);
  const SpinChainParams truth = chain(6, 0.15, 0.1);
  const auto data = sample_dataset_pair(truth, sched, 1000, 12);
  const GridSpec2D grid{{-0.2, 0.2, 41}, {-0.2, 0.2, 41}};
  const auto post = posterior_2d(data, chain(6, 0.0), sched, grid);
  const auto mu = post.mean_2d();
  EXPECT_NEAR(mu[0], 0.15, 0.03);
  EXPECT_NEAR(mu[1], 0.1, 0.03);
  const auto m = error_metrics(post, {0.15, 0.1});
  EXPECT_LT(m.delta_sq, 0.1);
}

TEST(Posterior, CsvExport)
{
  TrajectoryDataset ds;
  ds.n_seq = 1;
  const auto post = posterior(ds, chain(2, 0.0), MeasurementSchedule::uniform(1, 2.0), GridSpec{-0.2, 0.2, 5});
  std::ostringstream os;
  write_csv(os, post);
  EXPECT_EQ(os.str(), "B_x,density\n-0.2,2.5\n-0.1,2.5\n0,2.5\n0.1,2.5\n0.2,2.5\n");
}
