#pragma once

#include <seqmag/fisher.hpp>
#include <seqmag/resource.hpp>

#include <map>

namespace seqmag {

/// Uniform per-bond, per-axis coupling offsets in [-h_a, h_a] J.
struct DisorderParams
{
  std::array<double, 3> half_widths{0.0, 0.0, 0.0};
  /// Fresh offsets for every protocol run; otherwise one draw per dataset.
  bool resample_per_trajectory = true;
  std::size_t samples = 100;

  void validate() const
  {
    for (double h : half_widths) {
      if (!(h >= 0.0 && h <= 1.0)) {
        throw invalid_argument_error("disorder half-widths must lie in [0, 1]");
      }
    }
    if (samples < 1) {
      throw invalid_argument_error("disorder sample count must be at least 1");
    }
  }

  [[nodiscard]] bool clean() const { return half_widths[0] == 0.0 && half_widths[1] == 0.0 && half_widths[2] == 0.0; }

  [[nodiscard]] static DisorderParams isotropic(double h, std::size_t samples = 100)
  {
    DisorderParams d;
    d.half_widths = {h, h, h};
    d.samples = samples;
    return d;
  }
};

/// Copy of `params` with fresh offsets, drawn bond by bond in x, y, z order.
[[nodiscard]] inline SpinChainParams sample_disorder(const SpinChainParams& params, const DisorderParams& disorder,
                                                     Rng& rng)
{
  disorder.validate();
  SpinChainParams out = params;
  out.bond_offsets.assign(static_cast<std::size_t>(std::max(0, params.n_sites - 1)), BondOffset{});
  for (auto& b : out.bond_offsets) {
    b.x = disorder.half_widths[0] * params.coupling * (2.0 * uniform01(rng) - 1.0);
    b.y = disorder.half_widths[1] * params.coupling * (2.0 * uniform01(rng) - 1.0);
    b.z = disorder.half_widths[2] * params.coupling * (2.0 * uniform01(rng) - 1.0);
  }
  return out;
}

namespace detail {

// Disorder draws use a stream separate from the measurement outcomes, so a
// clean run and a disordered run with the same seed see the same outcome
// randomness.
inline std::uint64_t disorder_stream(std::uint64_t seed) { return derive_seed(~seed, 0x5eed); }

} // namespace detail

struct DisorderFisherRow
{
  std::array<double, 3> half_widths{};
  int n_seq = 0;
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean classical Fisher information over disorder realizations, for every
/// prefix of `schedule`. Realization s is drawn from make_rng(stream, s), and
/// the finite difference at B +- delta reuses that realization.
[[nodiscard]] inline std::vector<DisorderFisherRow> averaged_fisher_disorder(
    const SpinChainParams& params, const MeasurementSchedule& schedule, const DisorderParams& disorder,
    std::uint64_t seed, double delta_b = kDefaultFisherStep, double prune_threshold = kDefaultPruneThreshold,
    unsigned threads = 1)
{
  disorder.validate();
  const auto n = static_cast<std::size_t>(schedule.n_seq());
  std::vector<DisorderFisherRow> rows(n);
  for (std::size_t d = 0; d < n; ++d) {
    rows[d].half_widths = disorder.half_widths;
    rows[d].n_seq = static_cast<int>(d) + 1;
  }
  if (disorder.clean()) {
    const auto sweep = fisher_sweep(params, schedule, delta_b, prune_threshold, threads);
    for (std::size_t d = 0; d < n; ++d) {
      rows[d].mean = sweep[d].value;
    }
    return rows;
  }
  std::vector<std::vector<FisherResult>> per_sample(disorder.samples);
  const std::uint64_t stream = detail::disorder_stream(seed);
  parallel_for(disorder.samples, threads, [&](std::size_t s) {
    Rng rng = make_rng(stream, s);
    per_sample[s] = fisher_sweep(sample_disorder(params, disorder, rng), schedule, delta_b, prune_threshold, 1);
  });
  const double count = static_cast<double>(disorder.samples);
  for (std::size_t d = 0; d < n; ++d) {
    double sum = 0.0;
    for (const auto& f : per_sample) {
      sum += f[d].value;
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& f : per_sample) {
      ss += (f[d].value - mean) * (f[d].value - mean);
    }
    rows[d].mean = mean;
    rows[d].std_error = disorder.samples > 1 ? std::sqrt(ss / (count - 1.0) / count) : 0.0;
  }
  return rows;
}

/// Dataset whose runs come from disordered copies of `params`. Outcomes of
/// run k are drawn from make_rng(seed, k), exactly as in sample_dataset;
/// offsets come from a separate stream.
[[nodiscard]] inline TrajectoryDataset sample_dataset_disordered(const SpinChainParams& params,
                                                                 const MeasurementSchedule& schedule,
                                                                 const DisorderParams& disorder, std::size_t m_repeats,
                                                                 std::uint64_t seed, unsigned threads = 1)
{
  disorder.validate();
  if (disorder.clean()) {
    return sample_dataset(params, schedule, m_repeats, seed, threads);
  }
  if (m_repeats < 1) {
    throw invalid_argument_error("m_repeats must be at least 1");
  }
  const std::uint64_t stream = detail::disorder_stream(seed);
  std::optional<SequentialProbe> shared;
  if (!disorder.resample_per_trajectory) {
    Rng rng = make_rng(stream, 0);
    shared.emplace(sample_disorder(params, disorder, rng), schedule);
  }
  std::vector<Trajectory> runs(m_repeats);
  parallel_for(m_repeats, threads, [&](std::size_t k) {
    Rng rng = make_rng(seed, k);
    if (shared) {
      runs[k] = shared->sample(rng);
      return;
    }
    Rng drng = make_rng(stream, k);
    const SequentialProbe probe(sample_disorder(params, disorder, drng), schedule);
    runs[k] = probe.sample(rng);
  });
  TrajectoryDataset ds;
  ds.seed = seed;
  ds.basis = schedule.basis;
  ds.n_seq = schedule.n_seq();
  for (auto& t : runs) {
    ds.add(std::move(t));
  }
  return ds;
}

struct MisspecifiedCell
{
  double total_time = 0.0;
  int n_seq = 0;
  std::size_t m_repeats = 0;
  double delta_sq = 0.0;
  double std_error = 0.0;
  std::string skipped;
};

struct MisspecifiedResult
{
  std::vector<MisspecifiedCell> cells;
  /// G(T) = g(n) T^-nu(n) + epsilon(n) per n_seq; nu(n) is in `beta` and `nu`.
  std::vector<std::pair<int, FitResult>> per_n;
  double nu_mean = 0.0;
  /// G(T) = g(n) T^-nu_mean + epsilon(n) per n_seq, linear in g and epsilon.
  std::vector<std::pair<int, FitResult>> per_n_common_nu;
  /// g(n) = c n^-b from the common-nu amplitudes; b is in `beta`.
  FitResult g_fit;
  /// The same fit over the free-nu amplitudes g(n) of `per_n`.
  FitResult g_fit_free;
  std::vector<std::string> report;
};

/// Data from disordered probes (per `disorder`), inference with the clean
/// isotropic model of `params`. M follows from each budget. Cell (i, j) uses
/// seed derive_seed(derive_seed(seed, i), j) and its sample k uses
/// derive_seed(cell seed, k), matching scaling_experiment.
[[nodiscard]] inline MisspecifiedResult misspecified_bayes_experiment(
    const SpinChainParams& params, const ResourceModel& model, const DisorderParams& disorder,
    const std::vector<double>& budgets, const std::vector<int>& n_seqs, std::size_t n_samples, std::uint64_t seed,
    const GridSpec& grid = {}, unsigned threads = 1)
{
  model.validate();
  disorder.validate();
  if (n_samples < 1) {
    throw invalid_argument_error("n_samples must be at least 1");
  }
  MisspecifiedResult out;
  for (std::size_t j = 0; j < n_seqs.size(); ++j) {
    const auto sched = MeasurementSchedule::uniform(n_seqs[j], model.tau);
    auto lik = LikelihoodGrid::along_x(params, sched, grid, threads);
    const SequentialProbe clean_probe(params, sched);
    for (std::size_t i = 0; i < budgets.size(); ++i) {
      MisspecifiedCell cell;
      cell.total_time = budgets[i];
      cell.n_seq = n_seqs[j];
      try {
        cell.m_repeats = repeats_for_budget(model, budgets[i], n_seqs[j]);
      } catch (const budget_error& e) {
        cell.skipped = e.what();
        out.report.push_back(cell.skipped);
        out.cells.push_back(cell);
        continue;
      }
      const std::uint64_t cell_seed = derive_seed(derive_seed(seed, i), j);
      std::vector<double> samples;
      for (std::size_t k = 0; k < n_samples; ++k) {
        const std::uint64_t s = derive_seed(cell_seed, k);
        const auto ds = disorder.clean() ? sample_dataset(clean_probe, cell.m_repeats, s, threads)
                                         : sample_dataset_disordered(params, sched, disorder, cell.m_repeats, s,
                                                                     threads);
        samples.push_back(error_metrics(posterior(ds, lik, grid), params.field_x).delta_sq);
      }
      double sum = 0.0;
      for (double v : samples) {
        sum += v;
      }
      cell.delta_sq = sum / static_cast<double>(n_samples);
      if (n_samples > 1) {
        double ss = 0.0;
        for (double v : samples) {
          ss += (v - cell.delta_sq) * (v - cell.delta_sq);
        }
        cell.std_error = std::sqrt(ss / static_cast<double>(n_samples - 1) / static_cast<double>(n_samples));
      }
      out.cells.push_back(cell);
    }
  }

  // Fits of G(T) per n_seq with free exponents give nu_mean; g(n) then comes
  // from refits at the common exponent nu_mean.
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_n;
  for (const auto& c : out.cells) {
    if (c.skipped.empty() && c.delta_sq > 0.0) {
      by_n[c.n_seq].first.push_back(c.total_time);
      by_n[c.n_seq].second.push_back(c.delta_sq);
    }
  }
  std::vector<double> ns_free, gs_free;
  double nu_sum = 0.0;
  for (int n : n_seqs) {
    const auto& [ts, ys] = by_n[n];
    if (ts.size() < 4) {
      out.report.push_back("n_seq = " + std::to_string(n) + " has fewer than four budgets; not fitted");
      continue;
    }
    FitResult f = fit_power_law(ts, ys, true);
    f.nu = f.beta;
    nu_sum += f.beta;
    if (f.alpha > 0.0) {
      ns_free.push_back(n);
      gs_free.push_back(f.alpha);
    }
    out.per_n.emplace_back(n, std::move(f));
  }
  if (out.per_n.empty()) {
    out.report.push_back("no n_seq could be fitted");
    return out;
  }
  out.nu_mean = nu_sum / static_cast<double>(out.per_n.size());

  std::vector<double> ns, gs;
  for (const auto& [n, free_fit] : out.per_n) {
    const auto& [ts, ys] = by_n[n];
    Eigen::MatrixXd a(static_cast<Eigen::Index>(ts.size()), 2);
    Eigen::VectorXd b(static_cast<Eigen::Index>(ts.size()));
    for (std::size_t k = 0; k < ts.size(); ++k) {
      a(static_cast<Eigen::Index>(k), 0) = std::pow(ts[k], -out.nu_mean);
      a(static_cast<Eigen::Index>(k), 1) = 1.0;
      b(static_cast<Eigen::Index>(k)) = ys[k];
    }
    const Eigen::Vector2d sol = a.colPivHouseholderQr().solve(b);
    FitResult f;
    f.alpha = sol(0);
    f.beta = out.nu_mean;
    f.nu = out.nu_mean;
    f.epsilon = sol(1);
    f.rss = (a * sol - b).squaredNorm();
    f.converged = true;
    if (f.alpha > 0.0) {
      ns.push_back(n);
      gs.push_back(f.alpha);
    }
    out.per_n_common_nu.emplace_back(n, std::move(f));
  }
  if (ns.size() >= 4) {
    out.g_fit = fit_power_law(ns, gs, false);
  } else {
    out.report.push_back("fewer than four positive common-nu amplitudes; g exponent not determined");
  }
  if (ns_free.size() >= 4) {
    out.g_fit_free = fit_power_law(ns_free, gs_free, false);
  }
  return out;
}

/// CSV with columns (h_x, h_y, h_z, n_seq, F_mean, std_error).
inline void write_csv(std::ostream& os, const std::vector<DisorderFisherRow>& rows)
{
  CsvWriter w(os, {"h_x", "h_y", "h_z", "n_seq", "F_mean", "std_error"});
  for (const auto& r : rows) {
    w.row(r.half_widths[0], r.half_widths[1], r.half_widths[2], r.n_seq, r.mean, r.std_error);
  }
}

/// CSV with columns (T, n_seq, M, delta_sq, std_error).
inline void write_csv(std::ostream& os, const std::vector<MisspecifiedCell>& cells)
{
  CsvWriter w(os, {"T", "n_seq", "M", "delta_sq", "std_error"});
  for (const auto& c : cells) {
    if (c.skipped.empty()) {
      w.row(c.total_time, c.n_seq, c.m_repeats, c.delta_sq, c.std_error);
    }
  }
}

} // namespace seqmag
