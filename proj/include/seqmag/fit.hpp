#pragma once

#include <seqmag/errors.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace seqmag {

/// y = alpha x^-beta + epsilon. For exponent-only fits epsilon is fixed at 0.
struct FitResult
{
  double alpha = 0.0;
  double beta = 0.0;
  double epsilon = 0.0;
  /// Exponent of alpha(T) ~ T^-nu, filled in by budget-scaling analyses.
  double nu = std::numeric_limits<double>::quiet_NaN();
  double rss = 0.0;
  bool converged = false;
  bool with_offset = true;
  int iterations = 0;
  std::vector<double> rss_history;
  std::string note;

  [[nodiscard]] double operator()(double x) const { return alpha * std::pow(x, -beta) + epsilon; }
};

enum class FitSpace
{
  /// Unweighted least squares on y.
  linear,
  /// Least squares on log y; diagnostics only.
  log
};

namespace detail {

struct PowerModel
{
  const std::vector<double>& x;
  const std::vector<double>& y;
  bool offset;
  FitSpace space;

  [[nodiscard]] int n_params() const { return offset ? 3 : 2; }

  [[nodiscard]] static double value(const Eigen::Vector3d& p, double xi) { return p(0) * std::pow(xi, -p(1)) + p(2); }

  // Residuals, or false if the model leaves its domain (log space needs m > 0).
  bool residuals(const Eigen::Vector3d& p, Eigen::VectorXd& r) const
  {
    r.resize(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double m = value(p, x[i]);
      if (space == FitSpace::log) {
        if (!(m > 0.0)) {
          return false;
        }
        r(static_cast<Eigen::Index>(i)) = std::log(m) - std::log(y[i]);
      } else {
        r(static_cast<Eigen::Index>(i)) = m - y[i];
      }
      if (!std::isfinite(r(static_cast<Eigen::Index>(i)))) {
        return false;
      }
    }
    return true;
  }

  [[nodiscard]] Eigen::MatrixXd jacobian(const Eigen::Vector3d& p) const
  {
    Eigen::MatrixXd j(static_cast<Eigen::Index>(x.size()), n_params());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const double xb = std::pow(x[i], -p(1));
      const double scale = space == FitSpace::log ? 1.0 / value(p, x[i]) : 1.0;
      j(row, 0) = xb * scale;
      j(row, 1) = -p(0) * xb * std::log(x[i]) * scale;
      if (offset) {
        j(row, 2) = scale;
      }
    }
    return j;
  }
};

} // namespace detail

/// Least-squares fit of alpha x^-beta (+ epsilon). Starts from a log-log
/// linear regression with epsilon = 0 and refines by damped Gauss-Newton
/// (Levenberg-Marquardt) steps that are accepted only when they lower the
/// residual; stops when the relative step drops below 1e-10 or after 200
/// iterations.
[[nodiscard]] inline FitResult fit_power_law(const std::vector<double>& x, const std::vector<double>& y,
                                             bool with_offset = true, FitSpace space = FitSpace::linear)
{
  if (x.size() != y.size()) {
    throw dimension_error("fit needs equally many x and y values");
  }
  if (x.size() < 4) {
    throw invalid_argument_error("power-law fit needs at least four points");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw invalid_argument_error("power-law fit needs finite positive x and y");
    }
  }
  FitResult out;
  out.with_offset = with_offset;

  const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
  if (*ymax - *ymin <= 1e-14 * std::abs(*ymax)) {
    out.alpha = *ymax;
    out.beta = 0.0;
    out.converged = false;
    out.note = "degenerate data: y is constant";
    return out;
  }

  // Log-log regression: log y = log alpha - beta log x.
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  if (!(std::abs(denom) > 0.0)) {
    out.note = "degenerate data: all x equal";
    out.alpha = std::exp(sy / n);
    return out;
  }
  const double slope = (n * sxy - sx * sy) / denom;
  Eigen::Vector3d p(std::exp((sy - slope * sx) / n), -slope, 0.0);

  const detail::PowerModel model{x, y, with_offset, space};
  Eigen::VectorXd r;
  if (!model.residuals(p, r)) {
    out.note = "initial guess outside the model domain";
    return out;
  }
  double rss = r.squaredNorm();
  out.rss_history.push_back(rss);
  double lambda = 1e-3;
  const int np = model.n_params();
  for (int it = 1; it <= 200; ++it) {
    out.iterations = it;
    const Eigen::MatrixXd j = model.jacobian(p);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd g = j.transpose() * r;
    bool accepted = false;
    Eigen::VectorXd step;
    while (lambda < 1e20) {
      Eigen::MatrixXd a = jtj;
      for (int k = 0; k < np; ++k) {
        a(k, k) += lambda * std::max(jtj(k, k), 1e-300);
      }
      step = a.ldlt().solve(-g);
      Eigen::Vector3d trial = p;
      trial.head(np) += step;
      Eigen::VectorXd rt;
      if (step.allFinite() && model.residuals(trial, rt) && rt.squaredNorm() < rss) {
        p = trial;
        r = rt;
        rss = rt.squaredNorm();
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 4.0;
    }
    out.rss_history.push_back(rss);
    if (!accepted) {
      // No descent direction left at working precision.
      out.converged = true;
      break;
    }
    // Relative step in units that rescale with y (alpha, epsilon) and in beta.
    const double amp_step = std::max(std::abs(step(0)), np == 3 ? std::abs(step(2)) : 0.0) / std::abs(p(0));
    const double exp_step = std::abs(step(1)) / (std::abs(p(1)) + 1.0);
    if (std::max(amp_step, exp_step) < 1e-10) {
      out.converged = true;
      break;
    }
  }
  out.alpha = p(0);
  out.beta = p(1);
  out.epsilon = with_offset ? p(2) : 0.0;
  out.rss = rss;
  if (!std::isfinite(out.beta)) {
    out.converged = false;
    out.note = "exponent diverged";
  } else if (!out.converged) {
    out.note = "iteration limit reached";
  }
  return out;
}

/// Ranks with ties sharing their mean rank (1-based).
[[nodiscard]] inline std::vector<double> ranks(const std::vector<double>& v)
{
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
      ++j;
    }
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      r[order[k]] = mean_rank;
    }
    i = j + 1;
  }
  return r;
}

[[nodiscard]] inline double pearson(const std::vector<double>& a, const std::vector<double>& b)
{
  if (a.size() != b.size() || a.size() < 2) {
    throw invalid_argument_error("correlation needs two equally long series of at least two values");
  }
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) {
    return 0.0;
  }
  return sab / std::sqrt(saa * sbb);
}

[[nodiscard]] inline double spearman(const std::vector<double>& a, const std::vector<double>& b)
{
  return pearson(ranks(a), ranks(b));
}

} // namespace seqmag
