#pragma once

#include <seqmag/fit.hpp>
#include <seqmag/posterior.hpp>

#include <cmath>
#include <map>
#include <optional>
#include <string>

namespace seqmag {

/// Time cost of the protocol: every repetition pays t_init once and
/// (tau + t_meas) per measurement.
struct ResourceModel
{
  double t_init = 600.0;
  double t_meas = 50.0;
  double tau = 6.0;

  void validate() const
  {
    if (!(t_init > 0.0) || !(t_meas > 0.0) || !(tau > 0.0)) {
      throw invalid_argument_error("resource times must be positive");
    }
  }

  [[nodiscard]] double evolution_time(int n_seq) const { return n_seq * tau; }
  [[nodiscard]] double cycle_time(int n_seq) const { return t_init + evolution_time(n_seq) + n_seq * t_meas; }
};

/// M = floor(T / (t_init + n_seq (tau + t_meas))).
[[nodiscard]] inline std::size_t repeats_for_budget(const ResourceModel& model, double total_time, int n_seq)
{
  model.validate();
  if (n_seq < 1) {
    throw invalid_argument_error("n_seq must be at least 1");
  }
  // Relative slack absorbs round-off when T is an exact multiple of a cycle.
  const double m = std::floor(total_time / model.cycle_time(n_seq) * (1.0 + 1e-12));
  if (!(m >= 1.0)) {
    throw budget_error("budget T = " + format_double(total_time) + " cannot fund one repetition of "
                       + std::to_string(n_seq) + " measurements (cycle " + format_double(model.cycle_time(n_seq))
                       + ")");
  }
  return static_cast<std::size_t>(m);
}

/// Inverse of the budget relation: n_seq = (T - M t_init) / (M (tau + t_meas)).
[[nodiscard]] inline double n_seq_for_budget(const ResourceModel& model, double total_time, std::size_t m_repeats)
{
  model.validate();
  if (m_repeats < 1) {
    throw invalid_argument_error("m_repeats must be at least 1");
  }
  const double m = static_cast<double>(m_repeats);
  return (total_time - m * model.t_init) / (m * (model.tau + model.t_meas));
}

struct ScalingCell
{
  double total_time = 0.0;
  int n_seq = 0;
  std::size_t m_repeats = 0;
  double delta_sq = 0.0;
  double std_error = 0.0;
  /// Non-empty when the cell was skipped, with the reason.
  std::string skipped;
};

struct CollapsePoint
{
  double total_time = 0.0;
  int n_seq = 0;
  double coordinate = 0.0;
  double delta_sq = 0.0;
};

struct ScalingResult
{
  std::vector<ScalingCell> cells;
  /// delta^2(n) = alpha(T) n^-beta(T) + epsilon(T) for each budget.
  std::vector<std::pair<double, FitResult>> per_budget;
  /// alpha(T) = c T^-nu; nu is stored in both `beta` and `nu`.
  FitResult nu_fit;
  double beta_mean = 0.0;
  std::vector<CollapsePoint> collapse;
  double spearman = 0.0;
  std::vector<std::string> report;
};

namespace detail {

/// Per-budget fits, nu from alpha(T) and the collapse coordinates
/// (J T)^-nu n^-beta_mean, computed from finished cells.
inline void analyse_scaling(ScalingResult& out, double coupling)
{
  std::map<double, std::pair<std::vector<double>, std::vector<double>>> by_budget;
  for (const auto& c : out.cells) {
    if (c.skipped.empty() && c.delta_sq > 0.0) {
      by_budget[c.total_time].first.push_back(c.n_seq);
      by_budget[c.total_time].second.push_back(c.delta_sq);
    }
  }
  std::vector<double> ts, alphas;
  double beta_sum = 0.0;
  for (const auto& [t, xy] : by_budget) {
    if (xy.first.size() < 4) {
      out.report.push_back("budget T = " + format_double(t) + " has fewer than four usable cells; not fitted");
      continue;
    }
    FitResult f = fit_power_law(xy.first, xy.second, true);
    if (!(f.alpha > 0.0)) {
      out.report.push_back("budget T = " + format_double(t) + " fitted a non-positive alpha; excluded from nu");
    } else {
      ts.push_back(t);
      alphas.push_back(f.alpha);
    }
    beta_sum += f.beta;
    out.per_budget.emplace_back(t, std::move(f));
  }
  if (out.per_budget.empty()) {
    out.report.push_back("no budget could be fitted");
    return;
  }
  out.beta_mean = beta_sum / static_cast<double>(out.per_budget.size());
  if (ts.size() >= 4) {
    out.nu_fit = fit_power_law(ts, alphas, false);
    out.nu_fit.nu = out.nu_fit.beta;
  } else {
    out.report.push_back("fewer than four fitted budgets; nu not determined");
    return;
  }
  std::vector<double> xs, ys;
  for (const auto& c : out.cells) {
    if (!c.skipped.empty() || !(c.delta_sq > 0.0)) {
      continue;
    }
    const double coord = std::pow(coupling * c.total_time, -out.nu_fit.nu) * std::pow(c.n_seq, -out.beta_mean);
    out.collapse.push_back({c.total_time, c.n_seq, coord, c.delta_sq});
    xs.push_back(coord);
    ys.push_back(c.delta_sq);
  }
  if (xs.size() >= 2) {
    out.spearman = seqmag::spearman(xs, ys);
  }
}

} // namespace detail

/// For every (T, n_seq): M from the budget, then delta^2 averaged over
/// `n_samples` datasets; fits per budget, nu from alpha(T), and the
/// universal-collapse coordinates. Cell (i, j) uses seed
/// derive_seed(derive_seed(seed, i), j).
[[nodiscard]] inline ScalingResult scaling_experiment(const SpinChainParams& params, const ResourceModel& model,
                                                      const std::vector<double>& budgets,
                                                      const std::vector<int>& n_seqs, std::size_t n_samples,
                                                      std::uint64_t seed, const GridSpec& grid = {},
                                                      unsigned threads = 1)
{
  model.validate();
  ScalingResult out;
  std::map<int, std::unique_ptr<LikelihoodGrid>> liks;
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    for (std::size_t j = 0; j < n_seqs.size(); ++j) {
      ScalingCell cell;
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
      auto& lik = liks[n_seqs[j]];
      const auto sched = MeasurementSchedule::uniform(n_seqs[j], model.tau);
      if (!lik) {
        lik = std::make_unique<LikelihoodGrid>(LikelihoodGrid::along_x(params, sched, grid, threads));
      }
      const auto avg = averaged_error(params, *lik, grid, cell.m_repeats, n_samples,
                                      derive_seed(derive_seed(seed, i), j), threads);
      cell.delta_sq = avg.mean;
      cell.std_error = avg.std_error;
      out.cells.push_back(cell);
    }
  }
  detail::analyse_scaling(out, params.coupling);
  return out;
}

/// CSV with columns (T, n_seq, M, delta_sq, std_error).
inline void write_csv(std::ostream& os, const std::vector<ScalingCell>& cells)
{
  CsvWriter w(os, {"T", "n_seq", "M", "delta_sq", "std_error"});
  for (const auto& c : cells) {
    if (c.skipped.empty()) {
      w.row(c.total_time, c.n_seq, c.m_repeats, c.delta_sq, c.std_error);
    }
  }
}

/// CSV with columns (T, n_seq, coordinate, delta_sq).
inline void write_csv(std::ostream& os, const std::vector<CollapsePoint>& pts)
{
  CsvWriter w(os, {"T", "n_seq", "coordinate", "delta_sq"});
  for (const auto& p : pts) {
    w.row(p.total_time, p.n_seq, p.coordinate, p.delta_sq);
  }
}

[[nodiscard]] inline json to_json(const FitResult& f)
{
  json j;
  j["alpha"] = f.alpha;
  j["beta"] = f.beta;
  j["epsilon"] = f.epsilon;
  if (std::isfinite(f.nu)) {
    j["nu"] = f.nu;
  }
  j["rss"] = f.rss;
  j["converged"] = f.converged;
  j["with_offset"] = f.with_offset;
  j["iterations"] = f.iterations;
  if (!f.note.empty()) {
    j["note"] = f.note;
  }
  return j;
}

} // namespace seqmag
