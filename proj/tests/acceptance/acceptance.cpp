#include <seqmag/disorder.hpp>
#include <seqmag/fisher.hpp>
#include <seqmag/fit.hpp>
#include <seqmag/magnetization.hpp>
#include <seqmag/open_system.hpp>
#include <seqmag/posterior.hpp>
#include <seqmag/resource.hpp>

#include "../oracles.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace seqmag;

namespace {

unsigned g_threads = 1;

/// Collects failed checks and a short summary for one criterion.
class Verdict
{
public:
  void check(bool ok, const std::string& what)
  {
    if (!ok) {
      failures_.push_back(what);
    }
  }

  void note(const std::string& s) { notes_.push_back(s); }

  [[nodiscard]] bool passed() const { return failures_.empty(); }

  [[nodiscard]] std::string detail() const
  {
    std::string out;
    for (const auto& n : notes_) {
      out += out.empty() ? n : "; " + n;
    }
    for (const auto& f : failures_) {
      out += (out.empty() ? "failed: " : "; failed: ") + f;
    }
    return out;
  }

private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(const char* f, double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

SpinChainParams chain(int n, double bx, double bz = 0.0)
{
  SpinChainParams p;
  p.n_sites = n;
  p.field_x = bx;
  p.field_z = bz;
  return p;
}

std::vector<double> iota_d(int lo, int hi)
{
  std::vector<double> v;
  for (int k = lo; k <= hi; ++k) {
    v.push_back(k);
  }
  return v;
}

std::string label_of(const std::vector<int>& outcomes, Basis b)
{
  std::string s;
  for (int o : outcomes) {
    s += outcome_symbol(b, o == 1);
  }
  return s;
}

std::vector<int> bits_of(std::uint64_t idx, int n)
{
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    v[static_cast<std::size_t>(k)] = static_cast<int>((idx >> (n - 1 - k)) & 1U);
  }
  return v;
}

double median(std::vector<double> v)
{
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// 1. Closed-system sanity.
void closed_system_sanity(Verdict& v)
{
  double worst_stat = 0.0;
  double worst_norm = 0.0;
  double worst_energy = 0.0;
  double worst_parity = 0.0;
  double worst_sum = 0.0;
  for (int n : {2, 4, 6}) {
    const auto still = enumerate_distribution(chain(n, 0.0), MeasurementSchedule::uniform(8, n), 0.0);
    worst_stat = std::max(worst_stat, std::abs(still.probability(std::string(8, 'd')) - 1.0));

    const Operator h = build_hamiltonian(chain(n, 0.13, 0.07));
    const Propagator p = make_propagator(h);
    PureState psi = evolve(p, PureState::all_down(n), 0.7);
    const Operator plus = site_projector(n, 1, Basis::X, true);
    psi = collapse(psi, plus, measure_probability(psi, plus));
    const double e0 = expectation(psi, h);
    for (int k = 0; k < 50; ++k) {
      psi = evolve(p, psi, 1.3);
      worst_norm = std::max(worst_norm, std::abs(psi.amplitudes().norm() - 1.0));
      worst_energy = std::max(worst_energy, std::abs(expectation(psi, h) - e0));
    }

    for (int len = 1; len <= 8; ++len) {
      const auto sched = MeasurementSchedule::uniform(len, n);
      const auto a = enumerate_distribution(chain(n, 0.1), sched, 0.0);
      const auto b = enumerate_distribution(chain(n, -0.1), sched, 0.0);
      for (std::size_t i = 0; i < a.probabilities.size(); ++i) {
        worst_parity = std::max(worst_parity, std::abs(a.probabilities[i] - b.probabilities[i]));
      }
      for (Basis basis : {Basis::Z, Basis::X}) {
        const auto d = enumerate_distribution(chain(n, 0.1, 0.05), sched.with_basis(basis), 0.0);
        worst_sum = std::max(worst_sum, std::abs(d.total() - 1.0));
      }
    }
  }
  v.check(worst_stat <= 1e-10, "all-down stationarity at B = 0");
  v.check(worst_norm <= 1e-10, "norm conservation");
  v.check(worst_energy <= 1e-9, "energy conservation");
  v.check(worst_parity <= 1e-10, "z-basis parity in B_x");
  v.check(worst_sum <= 1e-9, "normalization at prune 0");
  v.note("max deviations: stationarity " + fmt("%.1e", worst_stat) + ", norm " + fmt("%.1e", worst_norm)
         + ", energy " + fmt("%.1e", worst_energy) + ", parity " + fmt("%.1e", worst_parity) + ", sum "
         + fmt("%.1e", worst_sum));
}

// 2. Enumeration against explicit propagation and against sampling.
void oracle_equivalence(Verdict& v)
{
  const int n = 6;
  const int len = 3;
  const double tau = 6.0;
  const auto params = chain(n, 0.1);
  const oracle::Mat h = oracle::hamiltonian(n, 1.0, 0.1, 0.0);
  double worst = 0.0;
  int beyond = 0;
  double worst_z = 0.0;
  for (Basis basis : {Basis::Z, Basis::X}) {
    const auto sched = MeasurementSchedule::uniform(len, tau, basis);
    const SequentialProbe probe(params, sched);
    const auto d = probe.enumerate(0.0);
    for (std::uint64_t idx = 0; idx < 8; ++idx) {
      const auto outcomes = bits_of(idx, len);
      const double ref = oracle::sequence_probability(n, h, tau, basis == Basis::Z, outcomes);
      worst = std::max(worst, std::abs(d.probability(label_of(outcomes, basis)) - ref));
    }
    const std::size_t m = 100000;
    const auto ds = sample_dataset(probe, m, basis == Basis::Z ? 2024 : 2025, g_threads);
    for (std::uint64_t idx = 0; idx < 8; ++idx) {
      const double p = d.probabilities[idx];
      const auto it = ds.counts.find(idx);
      const double k = it == ds.counts.end() ? 0.0 : static_cast<double>(it->second);
      const double sigma = std::sqrt(static_cast<double>(m) * p * (1.0 - p));
      const double z = sigma > 0.0 ? std::abs(k - static_cast<double>(m) * p) / sigma : (k == 0.0 ? 0.0 : INFINITY);
      worst_z = std::max(worst_z, z);
      beyond += z > 4.0 ? 1 : 0;
    }
  }
  v.check(worst <= 1e-10, "enumeration vs explicit propagation");
  v.check(beyond == 0, std::to_string(beyond) + " leaves beyond 4 sigma");
  v.note("max |P - P_oracle| " + fmt("%.1e", worst) + ", max |z| " + fmt("%.2f", worst_z));
}

std::vector<double> inverse_fisher(int n_sites, double bx, int n_max, double delta = kDefaultFisherStep)
{
  const auto sweep = fisher_sweep(chain(n_sites, bx), MeasurementSchedule::uniform(n_max, n_sites), delta,
                                  kDefaultPruneThreshold, g_threads);
  std::vector<double> inv;
  for (const auto& r : sweep) {
    inv.push_back(1.0 / r.value);
  }
  return inv;
}

// 3. Fisher scaling with tau = N.
void fisher_scaling(Verdict& v)
{
  const auto n = iota_d(1, 10);
  const auto inv6 = inverse_fisher(6, 0.1, 10);
  const auto inv10 = inverse_fisher(10, 0.1, 10);
  const FitResult f6 = fit_power_law(n, inv6, true);
  const FitResult f10 = fit_power_law(n, inv10, true);
  v.check(f6.converged, "fit for N = 6 did not converge");
  v.check(f6.beta >= 1.05, "beta(N = 6) >= 1.05");
  v.check(inv10.back() < inv6.back(), "N = 10 below N = 6 at n_seq = 10");
  v.note("beta(N=6) " + fmt("%.3f", f6.beta) + ", beta(N=10) " + fmt("%.3f", f10.beta) + ", 1/F at n=10: N=6 "
         + fmt("%.3e", inv6.back()) + ", N=10 " + fmt("%.3e", inv10.back()));
}

// 4. Finite-difference step robustness.
void finite_difference(Verdict& v)
{
  const auto sched = MeasurementSchedule::uniform(10, 6.0);
  const auto a = fisher_sweep(chain(6, 0.1), sched, 1e-5, kDefaultPruneThreshold, g_threads);
  const auto b = fisher_sweep(chain(6, 0.1), sched, 5e-6, kDefaultPruneThreshold, g_threads);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i].value - b[i].value) / std::abs(a[i].value));
  }
  const auto zero = fisher_sweep(chain(6, 0.0), sched, 1e-5, kDefaultPruneThreshold, g_threads);
  double at_zero = 0.0;
  for (const auto& r : zero) {
    at_zero = std::max(at_zero, std::abs(r.value));
  }
  v.check(worst < 0.01, "relative difference between steps below 1%");
  v.check(at_zero <= 1e-6, "F(B_x = 0) = 0");
  v.note("max relative difference " + fmt("%.2e", worst) + ", max |F(0)| " + fmt("%.1e", at_zero));
}

// 5. Single-spin posterior against the closed form. The N = 1 probe with
// H = B sigma_x read in the z basis is the rotated-frame copy of a plus-state
// spin under B sigma_z read in the +/- basis: P(down) = cos^2(B t).
void single_qubit_bayes(Verdict& v)
{
  double worst = 0.0;
  const GridSpec grid;
  const auto x = grid.nodes();
  const auto w = grid.weights();
  int cases = 0;
  for (double truth : {0.05, 0.13}) {
    for (std::size_t m : {60U, 1000U}) {
      const double t = 5.0;
      const auto sched = MeasurementSchedule::uniform(1, t);
      SpinChainParams p;
      p.n_sites = 1;
      p.field_x = truth;
      const auto ds = sample_dataset(p, sched, m, 8 + m);
      const std::size_t k = ds.counts.contains(0) ? ds.counts.at(0) : 0;
      const auto post = posterior(ds, p, sched, grid, g_threads);
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
        analytic[i] = std::isfinite(analytic[i]) ? std::exp(analytic[i] - top) : 0.0;
        z += w[i] * analytic[i];
      }
      for (std::size_t i = 0; i < x.size(); ++i) {
        worst = std::max(worst, std::abs(post.probabilities[i] - analytic[i] / z));
      }
      ++cases;
    }
  }
  v.check(worst <= 1e-8, "posterior equals the analytic form");
  v.note(std::to_string(cases) + " datasets, max pointwise difference " + fmt("%.1e", worst));
}

// 6. Posterior narrowing with n_seq.
void posterior_narrowing(Verdict& v)
{
  const int n = 6;
  const std::vector<int> ns{1, 3, 5, 7};
  const GridSpec grid;
  const std::size_t m = 1000;
  std::vector<double> widths;
  std::vector<LikelihoodGrid> liks;
  for (int len : ns) {
    liks.push_back(LikelihoodGrid::along_x(chain(n, 0.0), MeasurementSchedule::uniform(len, n), grid, g_threads));
  }
  for (std::size_t j = 0; j < ns.size(); ++j) {
    const SequentialProbe probe(chain(n, 0.1), liks[j].schedule());
    std::vector<double> s;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto ds = sample_dataset(probe, m, derive_seed(600, seed), g_threads);
      s.push_back(posterior(ds, liks[j], grid).folded_standard_deviation());
    }
    widths.push_back(median(s));
  }
  std::string w = "median std";
  for (std::size_t j = 0; j < ns.size(); ++j) {
    w += " " + fmt("%.2e", widths[j]);
    if (j > 0) {
      v.check(widths[j] < widths[j - 1], "std at n_seq = " + std::to_string(ns[j]) + " below n_seq = "
                                             + std::to_string(ns[j - 1]));
    }
  }
  v.note(w);
  std::string e = "delta_sq n=1/n=5:";
  for (double b : {0.04, 0.08, 0.12, 0.16, 0.2}) {
    const auto one = averaged_error(chain(n, b), liks[0], grid, m, 20, derive_seed(601, static_cast<std::uint64_t>(std::lround(b * 1000))), g_threads);
    const auto five = averaged_error(chain(n, b), liks[2], grid, m, 20, derive_seed(602, static_cast<std::uint64_t>(std::lround(b * 1000))), g_threads);
    v.check(five.mean < one.mean, "delta_sq(5) < delta_sq(1) at B_x = " + fmt("%.2f", b));
    e += " " + fmt("%.2e", one.mean) + "/" + fmt("%.2e", five.mean);
  }
  v.note(e);
}

// 7. Resource scaling and universal collapse.
void resource_scaling(Verdict& v)
{
  const ResourceModel model{600.0, 50.0, 6.0};
  const std::vector<double> budgets{1e5, 2e5, 4e5, 8e5, 1.6e6};
  std::vector<int> ns;
  for (int k = 1; k <= 8; ++k) {
    ns.push_back(k);
  }
  const auto r = scaling_experiment(chain(6, 0.1), model, budgets, ns, 50, 4242, GridSpec{}, g_threads);
  v.check(r.nu_fit.nu >= 0.7 && r.nu_fit.nu <= 1.3, "nu in [0.7, 1.3]");
  v.check(r.beta_mean > 1.0, "mean beta(T) > 1");
  v.check(r.spearman > 0.95, "collapse Spearman > 0.95");
  v.note("nu " + fmt("%.3f", r.nu_fit.nu) + ", mean beta " + fmt("%.3f", r.beta_mean) + ", Spearman "
         + fmt("%.4f", r.spearman));
}

// 8. Two-parameter estimation of (B_x, B_z).
void two_parameter(Verdict& v)
{
  const auto truth = chain(6, 0.15, 0.1);
  const GridSpec2D grid;
  std::vector<double> dets;
  int single_regions = 0;
  for (int len : {1, 7}) {
    const auto sched = MeasurementSchedule::uniform(len, 6.0);
    auto lik = LikelihoodGrid::over_xz(chain(6, 0.0), sched, grid, g_threads);
    const auto data = sample_dataset_pair(truth, sched, 1000, derive_seed(800, len), g_threads);
    dets.push_back(posterior_2d(data, lik, grid).covariance_2d().determinant());
    if (len == 1) {
      DatasetPair z_only;
      z_only.z = sample_dataset(truth, sched, 1000, derive_seed(801, len), g_threads);
      z_only.x.n_seq = len;
      z_only.x.basis = Basis::X;
      single_regions = count_regions_above(posterior_2d(z_only, lik, grid), 0.5);
    }
  }
  v.check(dets[1] * 5.0 <= dets[0], "det(cov) at n_seq = 7 at least 5x below n_seq = 1");
  v.check(single_regions >= 2, "single-basis posterior has at least two regions above half maximum");
  v.note("det(cov) n=1 " + fmt("%.3e", dets[0]) + ", n=7 " + fmt("%.3e", dets[1]) + ", ratio "
         + fmt("%.1f", dets[0] / dets[1]) + ", z-only regions " + std::to_string(single_regions));
}

// 9. Dephasing.
void dephasing(Verdict& v)
{
  const auto params = chain(6, 0.1);
  const auto sched = MeasurementSchedule::uniform(8, 6.0);
  double worst = 0.0;
  for (Basis basis : {Basis::Z, Basis::X}) {
    const auto open = enumerate_distribution_lindblad(params, DephasingParams{0.0}, sched.with_basis(basis), 0.0,
                                                      g_threads);
    const auto closed = enumerate_distribution(params, sched.with_basis(basis), 0.0);
    for (std::size_t i = 0; i < open.probabilities.size(); ++i) {
      worst = std::max(worst, std::abs(open.probabilities[i] - closed.probabilities[i]));
    }
  }
  v.check(worst <= 1e-8, "gamma = 0 reproduces closed-system leaves");

  const std::vector<double> gammas{0.0, 0.01, 0.05, 0.2};
  const auto rows = fisher_dephasing_sweep(params, sched, gammas, kDefaultFisherStep, kDefaultPruneThreshold, g_threads);
  const auto f = [&](std::size_t g, std::size_t k) { return rows[g * 8 + k].fisher.value; };
  for (std::size_t k = 0; k < 8; ++k) {
    for (std::size_t g = 1; g < gammas.size(); ++g) {
      v.check(f(g, k) < f(g - 1, k), "F(gamma = " + fmt("%g", gammas[g]) + ") < F(gamma = " + fmt("%g", gammas[g - 1])
                                         + ") at n_seq = " + std::to_string(k + 1));
    }
  }
  std::vector<double> inv;
  for (std::size_t k = 0; k < 8; ++k) {
    inv.push_back(1.0 / f(2, k));
  }
  const FitResult growth = fit_power_law(iota_d(1, 8), inv, false);
  v.check(growth.beta > 1.0, "growth exponent at gamma = 0.05 > 1");
  v.note("max leaf difference at gamma = 0 " + fmt("%.1e", worst) + ", F(n=8) over gammas " + fmt("%.1f", f(0, 7))
         + " " + fmt("%.1f", f(1, 7)) + " " + fmt("%.1f", f(2, 7)) + " " + fmt("%.1f", f(3, 7))
         + ", growth exponent at 0.05 " + fmt("%.3f", growth.beta));
}

// 10. Disorder.
void disorder(Verdict& v)
{
  const auto params = chain(6, 0.1);
  const auto sched = MeasurementSchedule::uniform(10, 6.0);
  const auto clean = fisher_sweep(params, sched, kDefaultFisherStep, kDefaultPruneThreshold, g_threads);
  std::vector<std::vector<DisorderFisherRow>> rows;
  for (double h : {0.0, 0.01, 0.05, 0.1}) {
    rows.push_back(averaged_fisher_disorder(params, sched, DisorderParams::isotropic(h, 100), 1010, kDefaultFisherStep,
                                            kDefaultPruneThreshold, g_threads));
  }
  bool exact = true;
  for (std::size_t k = 0; k < clean.size(); ++k) {
    exact = exact && rows[0][k].mean == clean[k].value;
  }
  v.check(exact, "h = 0 equals the clean Fisher information");
  for (std::size_t k = 0; k < clean.size(); ++k) {
    for (std::size_t i = 1; i < rows.size(); ++i) {
      v.check(rows[i][k].mean < rows[i - 1][k].mean, "mean F decreasing in h at n_seq = " + std::to_string(k + 1));
    }
  }
  v.note("mean F at n=10 " + fmt("%.1f", rows[0][9].mean) + " " + fmt("%.1f", rows[1][9].mean) + " "
         + fmt("%.1f", rows[2][9].mean) + " " + fmt("%.1f", rows[3][9].mean));

  const ResourceModel model{600.0, 50.0, 6.0};
  const std::vector<double> budgets{1e5, 2e5, 4e5, 8e5, 1.6e6};
  std::vector<int> ns;
  for (int k = 1; k <= 8; ++k) {
    ns.push_back(k);
  }
  const auto r = misspecified_bayes_experiment(params, model, DisorderParams::isotropic(0.01, 100), budgets, ns, 100,
                                               1011, GridSpec{}, g_threads);
  v.check(r.nu_mean >= 0.8 && r.nu_mean <= 1.3, "mean nu in [0.8, 1.3]");
  v.check(r.g_fit.converged, "g(n) fit converged");
  v.check(r.g_fit.beta >= 0.7 && r.g_fit.beta <= 1.3, "g(n) exponent in [0.7, 1.3]");
  v.note("mean nu " + fmt("%.3f", r.nu_mean) + ", g(n) exponent " + fmt("%.3f", r.g_fit.beta)
         + " (free-nu amplitudes " + fmt("%.3f", r.g_fit_free.beta) + ")");
}

struct Criterion
{
  const char* name;
  std::function<void(Verdict&)> run;
};

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Acceptance checks for the sequential-measurement magnetometry library"};
  std::vector<int> which;
  app.add_option("-c,--criterion", which, "Criteria to run (1-10); default all")->check(CLI::Range(1, 10));
  app.add_option("-t,--threads", g_threads, "Worker threads (default: hardware concurrency)");
  g_threads = std::max(1U, std::thread::hardware_concurrency());
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {"closed-system sanity", closed_system_sanity},
      {"oracle equivalence", oracle_equivalence},
      {"Fisher scaling", fisher_scaling},
      {"finite-difference robustness", finite_difference},
      {"single-qubit Bayes oracle", single_qubit_bayes},
      {"posterior narrowing", posterior_narrowing},
      {"resource scaling", resource_scaling},
      {"two-parameter estimation", two_parameter},
      {"dephasing", dephasing},
      {"disorder", disorder},
  };
  if (which.empty()) {
    for (int k = 1; k <= 10; ++k) {
      which.push_back(k);
    }
  }
  int failed = 0;
  for (int k : which) {
    const auto& c = all[static_cast<std::size_t>(k - 1)];
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(v);
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %s  %s (%.1f s): %s\n", k, v.passed() ? "PASS" : "FAIL", c.name, secs,
                v.detail().c_str());
    std::fflush(stdout);
    failed += v.passed() ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
