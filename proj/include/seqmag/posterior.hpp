#pragma once

#include <seqmag/io.hpp>
#include <seqmag/parallel.hpp>
#include <seqmag/protocol.hpp>

#include <array>
#include <limits>
#include <map>
#include <mutex>
#include <span>

namespace seqmag {

/// Uniform grid over [lo, hi] with `points` nodes.
struct GridSpec
{
  double lo = -0.2;
  double hi = 0.2;
  int points = 401;

  void validate() const
  {
    if (!(hi > lo) || points < 2) {
      throw invalid_argument_error("grid needs hi > lo and at least two points");
    }
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;

  [[nodiscard]] double step() const { return (hi - lo) / (points - 1); }

  [[nodiscard]] std::vector<double> nodes() const
  {
    validate();
    // Offsets from the centre, so a symmetric interval yields exact mirror pairs.
    const double centre = 0.5 * (lo + hi);
    const double half = 0.5 * (hi - lo);
    const int m = points - 1;
    std::vector<double> x(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
      x[static_cast<std::size_t>(i)] = centre + half * static_cast<double>(2 * i - m) / m;
    }
    return x;
  }

  /// Trapezoidal quadrature weights.
  [[nodiscard]] std::vector<double> weights() const
  {
    std::vector<double> w(static_cast<std::size_t>(points), step());
    w.front() *= 0.5;
    w.back() *= 0.5;
    return w;
  }
};

struct GridSpec2D
{
  GridSpec x{-0.2, 0.2, 201};
  GridSpec z{-0.2, 0.2, 201};
};

/// Posterior density on a 1-D grid over B_x or a 2-D grid over (B_x, B_z).
/// 2-D values are stored x-major: index ix * nz + iz.
struct PosteriorGrid
{
  GridSpec x_spec;
  std::optional<GridSpec> z_spec;
  std::vector<double> x_axis;
  std::vector<double> z_axis;
  std::vector<double> log_likelihood;
  std::vector<double> probabilities;
  /// False when the data cannot distinguish B_x from -B_x (z-basis readout).
  bool sign_identifiable = true;

  [[nodiscard]] int dims() const { return z_spec ? 2 : 1; }
  [[nodiscard]] std::size_t size() const { return probabilities.size(); }

  [[nodiscard]] std::vector<double> weights() const
  {
    const auto wx = x_spec.weights();
    if (!z_spec) {
      return wx;
    }
    const auto wz = z_spec->weights();
    std::vector<double> w;
    w.reserve(wx.size() * wz.size());
    for (double a : wx) {
      for (double b : wz) {
        w.push_back(a * b);
      }
    }
    return w;
  }

  /// Trapezoidal integral of f(x[, z]) times the density.
  template <typename F>
  [[nodiscard]] double integrate(F&& f) const
  {
    const auto w = weights();
    double s = 0.0;
    if (!z_spec) {
      for (std::size_t i = 0; i < size(); ++i) {
        s += w[i] * probabilities[i] * f(x_axis[i], 0.0);
      }
      return s;
    }
    const std::size_t nz = z_axis.size();
    for (std::size_t i = 0; i < size(); ++i) {
      s += w[i] * probabilities[i] * f(x_axis[i / nz], z_axis[i % nz]);
    }
    return s;
  }

  [[nodiscard]] double total_mass() const
  {
    return integrate([](double, double) { return 1.0; });
  }

  [[nodiscard]] double mean() const
  {
    return integrate([](double x, double) { return x; });
  }

  [[nodiscard]] double variance() const
  {
    const double m = mean();
    return integrate([m](double x, double) { return (x - m) * (x - m); });
  }

  [[nodiscard]] double standard_deviation() const { return std::sqrt(variance()); }

  /// Moments of |B_x|, for posteriors whose sign is not identifiable.
  [[nodiscard]] double folded_mean() const
  {
    return integrate([](double x, double) { return std::abs(x); });
  }

  [[nodiscard]] double folded_variance() const
  {
    const double m = folded_mean();
    return integrate([m](double x, double) { return (std::abs(x) - m) * (std::abs(x) - m); });
  }

  [[nodiscard]] double folded_standard_deviation() const { return std::sqrt(folded_variance()); }

  [[nodiscard]] std::array<double, 2> mean_2d() const
  {
    return {integrate([](double x, double) { return x; }), integrate([](double, double z) { return z; })};
  }

  [[nodiscard]] Eigen::Matrix2d covariance_2d() const
  {
    const auto m = mean_2d();
    Eigen::Matrix2d c;
    c(0, 0) = integrate([&](double x, double) { return (x - m[0]) * (x - m[0]); });
    c(1, 1) = integrate([&](double, double z) { return (z - m[1]) * (z - m[1]); });
    c(0, 1) = c(1, 0) = integrate([&](double x, double z) { return (x - m[0]) * (z - m[1]); });
    return c;
  }
};

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline std::vector<std::uint64_t> distinct_indices(const TrajectoryDataset& ds)
{
  std::vector<std::uint64_t> idx;
  idx.reserve(ds.counts.size());
  for (const auto& [i, k] : ds.counts) {
    idx.push_back(i);
  }
  return idx;
}

} // namespace detail

/// Uniform-prior posterior from log-likelihood values on the grid.
[[nodiscard]] inline PosteriorGrid make_posterior(const GridSpec& x, const std::optional<GridSpec>& z,
                                                  std::vector<double> log_likelihood, bool sign_identifiable = true)
{
  x.validate();
  PosteriorGrid post;
  post.x_spec = x;
  post.z_spec = z;
  post.x_axis = x.nodes();
  if (z) {
    z->validate();
    post.z_axis = z->nodes();
  }
  const std::size_t n = post.x_axis.size() * (z ? post.z_axis.size() : 1);
  if (log_likelihood.size() != n) {
    throw dimension_error("log-likelihood size does not match the grid");
  }
  post.sign_identifiable = sign_identifiable;
  post.log_likelihood = std::move(log_likelihood);

  double top = detail::kNegInf;
  for (double v : post.log_likelihood) {
    if (!std::isnan(v)) {
      top = std::max(top, v);
    }
  }
  if (!std::isfinite(top)) {
    throw degenerate_posterior_error("every grid point has zero likelihood");
  }
  post.probabilities.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = post.log_likelihood[i];
    post.probabilities[i] = std::isfinite(v) ? std::exp(v - top) : 0.0;
  }
  const double mass = post.total_mass();
  if (!(mass > 0.0)) {
    throw degenerate_posterior_error("posterior mass vanishes under quadrature");
  }
  for (double& p : post.probabilities) {
    p /= mass;
  }
  return post;
}

/// sum over trajectories of log P(gamma | candidate), at the candidate
/// parameters given in full. Returns -infinity if any observation is impossible.
[[nodiscard]] inline double log_likelihood(const TrajectoryDataset& ds, const SpinChainParams& candidate,
                                           const MeasurementSchedule& schedule)
{
  if (ds.size() == 0) {
    return 0.0;
  }
  if (ds.n_seq != schedule.n_seq()) {
    throw invalid_argument_error("dataset trajectory length differs from the schedule");
  }
  const SequentialProbe probe(candidate, schedule.with_basis(ds.basis));
  const auto idx = detail::distinct_indices(ds);
  const auto lp = probe.log_probabilities(idx);
  double s = 0.0;
  std::size_t j = 0;
  for (const auto& [i, k] : ds.counts) {
    s += static_cast<double>(k) * lp[j++];
  }
  return s;
}

/// Log-likelihoods on a fixed set of candidate fields. Per-outcome log
/// probabilities are cached across calls, so repeated datasets drawn from
/// the same schedule only pay for outcome strings not seen before.
class LikelihoodGrid
{
public:
  LikelihoodGrid(const SpinChainParams& model, const MeasurementSchedule& schedule,
                 std::vector<std::array<double, 2>> candidates, unsigned threads = 1)
      : model_(model), schedule_(schedule), points_(std::move(candidates)), threads_(threads)
  {
    model_.validate();
    schedule_.validate(model_.n_sites);
    if (points_.empty()) {
      throw invalid_argument_error("likelihood grid needs at least one candidate");
    }
    const double bytes = static_cast<double>(points_.size()) * std::pow(4.0, model_.n_sites) * 8.0;
    keep_propagators_ = bytes < 256e6;
  }

  /// Candidates (B_x, model.field_z) for each node of a 1-D grid.
  static LikelihoodGrid along_x(const SpinChainParams& model, const MeasurementSchedule& schedule,
                                const GridSpec& grid, unsigned threads = 1)
  {
    std::vector<std::array<double, 2>> pts;
    for (double x : grid.nodes()) {
      pts.push_back({x, model.field_z});
    }
    return LikelihoodGrid(model, schedule, std::move(pts), threads);
  }

  /// Candidates (B_x, B_z), x-major.
  static LikelihoodGrid over_xz(const SpinChainParams& model, const MeasurementSchedule& schedule,
                                const GridSpec2D& grid, unsigned threads = 1)
  {
    std::vector<std::array<double, 2>> pts;
    const auto zs = grid.z.nodes();
    for (double x : grid.x.nodes()) {
      for (double z : zs) {
        pts.push_back({x, z});
      }
    }
    return LikelihoodGrid(model, schedule, std::move(pts), threads);
  }

  [[nodiscard]] const MeasurementSchedule& schedule() const { return schedule_; }
  [[nodiscard]] const SpinChainParams& model() const { return model_; }
  [[nodiscard]] std::size_t size() const { return points_.size(); }

  /// Summed log-likelihood of all datasets at every candidate.
  [[nodiscard]] std::vector<double> evaluate(std::span<const TrajectoryDataset* const> datasets)
  {
    std::lock_guard lock(*mutex_);
    for (const auto* ds : datasets) {
      if (ds->size() > 0 && ds->n_seq != schedule_.n_seq()) {
        throw invalid_argument_error("dataset trajectory length differs from the schedule");
      }
    }
    fill_cache(datasets);
    std::vector<double> ll(points_.size(), 0.0);
    for (const auto* ds : datasets) {
      for (const auto& [idx, k] : ds->counts) {
        const auto& lp = cache_.at(key(ds->basis, idx));
        const double w = static_cast<double>(k);
        for (std::size_t g = 0; g < ll.size(); ++g) {
          ll[g] += w * lp[g];
        }
      }
    }
    return ll;
  }

  [[nodiscard]] std::vector<double> evaluate(const TrajectoryDataset& ds)
  {
    const TrajectoryDataset* p = &ds;
    return evaluate(std::span<const TrajectoryDataset* const>(&p, 1));
  }

private:
  using Key = std::pair<int, std::uint64_t>;
  static Key key(Basis b, std::uint64_t idx) { return {b == Basis::Z ? 0 : 1, idx}; }

  SpinChainParams at(std::size_t g) const
  {
    SpinChainParams p = model_;
    p.field_x = points_[g][0];
    p.field_z = points_[g][1];
    return p;
  }

  std::shared_ptr<const Propagator> propagator(std::size_t g)
  {
    if (keep_propagators_ && props_[g]) {
      return props_[g];
    }
    auto prop = std::make_shared<const Propagator>(make_propagator(build_hamiltonian(at(g))));
    if (keep_propagators_) {
      props_[g] = prop;
    }
    return prop;
  }

  void fill_cache(std::span<const TrajectoryDataset* const> datasets)
  {
    std::array<std::vector<std::uint64_t>, 2> missing;
    for (const auto* ds : datasets) {
      auto& m = missing[ds->basis == Basis::Z ? 0 : 1];
      for (const auto& [idx, k] : ds->counts) {
        if (!cache_.contains(key(ds->basis, idx))) {
          m.push_back(idx);
        }
      }
    }
    for (auto& m : missing) {
      std::sort(m.begin(), m.end());
      m.erase(std::unique(m.begin(), m.end()), m.end());
    }
    if (missing[0].empty() && missing[1].empty()) {
      return;
    }
    if (keep_propagators_ && props_.empty()) {
      props_.resize(points_.size());
    }
    std::array<std::vector<std::vector<double>>, 2> fresh;
    for (int b = 0; b < 2; ++b) {
      fresh[b].assign(points_.size(), {});
    }
    parallel_for(points_.size(), threads_, [&](std::size_t g) {
      const auto prop = propagator(g);
      const SpinChainParams p = at(g);
      for (int b = 0; b < 2; ++b) {
        if (missing[b].empty()) {
          continue;
        }
        const SequentialProbe probe(p, schedule_.with_basis(b == 0 ? Basis::Z : Basis::X), prop);
        fresh[b][g] = probe.log_probabilities(missing[b]);
      }
    });
    for (int b = 0; b < 2; ++b) {
      for (std::size_t j = 0; j < missing[b].size(); ++j) {
        std::vector<double> row(points_.size());
        for (std::size_t g = 0; g < points_.size(); ++g) {
          row[g] = fresh[b][g][j];
        }
        cache_.emplace(Key{b, missing[b][j]}, std::move(row));
      }
    }
  }

  SpinChainParams model_;
  MeasurementSchedule schedule_;
  std::vector<std::array<double, 2>> points_;
  unsigned threads_ = 1;
  bool keep_propagators_ = false;
  std::vector<std::shared_ptr<const Propagator>> props_;
  std::map<Key, std::vector<double>> cache_;
  std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
};

/// Posterior over B_x with B_z and couplings fixed at the model values.
[[nodiscard]] inline PosteriorGrid posterior(const TrajectoryDataset& ds, LikelihoodGrid& lik, const GridSpec& grid)
{
  if (lik.size() != static_cast<std::size_t>(grid.points)) {
    throw dimension_error("likelihood grid does not match the posterior grid");
  }
  return make_posterior(grid, std::nullopt, lik.evaluate(ds), ds.basis != Basis::Z);
}

[[nodiscard]] inline PosteriorGrid posterior(const TrajectoryDataset& ds, const SpinChainParams& model,
                                             const MeasurementSchedule& schedule, const GridSpec& grid = {},
                                             unsigned threads = 1)
{
  auto lik = LikelihoodGrid::along_x(model, schedule, grid, threads);
  return posterior(ds, lik, grid);
}

/// Joint posterior over (B_x, B_z): the log-likelihoods of the z-basis and
/// x-basis halves add. Either half may be empty.
[[nodiscard]] inline PosteriorGrid posterior_2d(const DatasetPair& data, LikelihoodGrid& lik, const GridSpec2D& grid)
{
  if (lik.size() != static_cast<std::size_t>(grid.x.points) * static_cast<std::size_t>(grid.z.points)) {
    throw dimension_error("likelihood grid does not match the posterior grid");
  }
  const std::array<const TrajectoryDataset*, 2> both{&data.z, &data.x};
  return make_posterior(grid.x, grid.z, lik.evaluate(both), data.x.size() > 0);
}

[[nodiscard]] inline PosteriorGrid posterior_2d(const DatasetPair& data, const SpinChainParams& model,
                                                const MeasurementSchedule& schedule, const GridSpec2D& grid = {},
                                                unsigned threads = 1)
{
  auto lik = LikelihoodGrid::over_xz(model, schedule, grid, threads);
  return posterior_2d(data, lik, grid);
}

[[nodiscard]] inline PosteriorGrid single_trajectory_posterior(const Trajectory& t, const SpinChainParams& model,
                                                               const MeasurementSchedule& schedule,
                                                               const GridSpec& grid = {}, unsigned threads = 1)
{
  TrajectoryDataset ds;
  ds.basis = t.basis;
  ds.n_seq = t.length();
  ds.add(t);
  return posterior(ds, model, schedule.with_basis(t.basis), grid, threads);
}

/// Posterior moments against the true field.
struct ErrorMetrics
{
  double mean = 0.0;
  double variance = 0.0;
  double bias = 0.0;
  double delta_sq = 0.0;
  /// Moments were taken of |B_x| because the sign is not identifiable.
  bool folded = false;
};

enum class FoldMode
{
  automatic,
  never,
  always
};

/// delta^2 = (sigma^2 + bias^2) / B_true^2 on a 1-D posterior. With
/// FoldMode::automatic a posterior that cannot resolve the sign of B_x is
/// folded onto |B_x| and compared with |B_true|.
[[nodiscard]] inline ErrorMetrics error_metrics(const PosteriorGrid& post, double true_field,
                                                FoldMode fold = FoldMode::automatic)
{
  if (post.dims() != 1) {
    throw dimension_error("use the vector overload for 2-D posteriors");
  }
  if (true_field == 0.0) {
    throw numeric_error("relative error is undefined for a zero true field");
  }
  ErrorMetrics m;
  m.folded = fold == FoldMode::always || (fold == FoldMode::automatic && !post.sign_identifiable);
  const double target = m.folded ? std::abs(true_field) : true_field;
  m.mean = m.folded ? post.folded_mean() : post.mean();
  m.variance = std::max(0.0, m.folded ? post.folded_variance() : post.variance());
  m.bias = std::abs(m.mean - target);
  m.delta_sq = (m.variance + m.bias * m.bias) / (true_field * true_field);
  return m;
}

/// Vector version: sigma^2 is the trace of the covariance and the bias is
/// the Euclidean distance of the mean from the truth.
[[nodiscard]] inline ErrorMetrics error_metrics(const PosteriorGrid& post, const std::array<double, 2>& true_field)
{
  if (post.dims() != 2) {
    throw dimension_error("use the scalar overload for 1-D posteriors");
  }
  const double norm_sq = true_field[0] * true_field[0] + true_field[1] * true_field[1];
  if (norm_sq == 0.0) {
    throw numeric_error("relative error is undefined for a zero true field");
  }
  const auto mu = post.mean_2d();
  ErrorMetrics m;
  m.mean = std::hypot(mu[0], mu[1]);
  m.variance = std::max(0.0, post.covariance_2d().trace());
  m.bias = std::hypot(mu[0] - true_field[0], mu[1] - true_field[1]);
  m.delta_sq = (m.variance + m.bias * m.bias) / norm_sq;
  return m;
}

/// One field value drawn from a 1-D posterior by inverting its
/// piecewise-linear cumulative distribution.
[[nodiscard]] inline double sample_estimate(const PosteriorGrid& post, Rng& rng)
{
  if (post.dims() != 1) {
    throw dimension_error("posterior sampling is implemented for 1-D grids");
  }
  const double h = post.x_spec.step();
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < post.size(); ++i) {
    const double p0 = post.probabilities[i];
    const double p1 = post.probabilities[i + 1];
    const double cell = 0.5 * h * (p0 + p1);
    if (acc + cell >= u && cell > 0.0) {
      // Solve the quadratic for the position inside the trapezoid.
      const double r = u - acc;
      const double slope = (p1 - p0) / h;
      double s = 0.0;
      if (std::abs(slope) < 1e-300) {
        s = r / p0;
      } else {
        s = (-p0 + std::sqrt(std::max(0.0, p0 * p0 + 2.0 * slope * r))) / slope;
      }
      return post.x_axis[i] + std::clamp(s, 0.0, h);
    }
    acc += cell;
  }
  return post.x_axis.back();
}

/// Connected components of the set where the density is at least
/// `fraction` of its maximum (4-connectivity in 2-D).
[[nodiscard]] inline int count_regions_above(const PosteriorGrid& post, double fraction = 0.5)
{
  double top = 0.0;
  for (double p : post.probabilities) {
    top = std::max(top, p);
  }
  const double level = fraction * top;
  if (post.dims() == 1) {
    int regions = 0;
    bool inside = false;
    for (double p : post.probabilities) {
      const bool above = p >= level;
      if (above && !inside) {
        ++regions;
      }
      inside = above;
    }
    return regions;
  }
  const auto nx = static_cast<long>(post.x_axis.size());
  const auto nz = static_cast<long>(post.z_axis.size());
  std::vector<char> seen(post.size(), 0);
  int regions = 0;
  std::vector<long> stack;
  for (long start = 0; start < nx * nz; ++start) {
    if (seen[static_cast<std::size_t>(start)] || post.probabilities[static_cast<std::size_t>(start)] < level) {
      continue;
    }
    ++regions;
    stack.push_back(start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const long c = stack.back();
      stack.pop_back();
      const long ix = c / nz;
      const long iz = c % nz;
      const std::array<std::array<long, 2>, 4> nb{{{ix - 1, iz}, {ix + 1, iz}, {ix, iz - 1}, {ix, iz + 1}}};
      for (const auto& [a, b] : nb) {
        if (a < 0 || b < 0 || a >= nx || b >= nz) {
          continue;
        }
        const long k = a * nz + b;
        if (!seen[static_cast<std::size_t>(k)] && post.probabilities[static_cast<std::size_t>(k)] >= level) {
          seen[static_cast<std::size_t>(k)] = 1;
          stack.push_back(k);
        }
      }
    }
  }
  return regions;
}

/// Mean of delta^2 over independently generated datasets.
struct AveragedError
{
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> samples;
};

/// Sample k draws its dataset with seed derive_seed(seed, k); the data come
/// from `truth` and are scored with the grid's model.
[[nodiscard]] inline AveragedError averaged_error(const SpinChainParams& truth, LikelihoodGrid& lik,
                                                  const GridSpec& grid, std::size_t m_repeats,
                                                  std::size_t n_samples, std::uint64_t seed, unsigned threads = 1)
{
  if (n_samples < 1) {
    throw invalid_argument_error("n_samples must be at least 1");
  }
  const SequentialProbe probe(truth, lik.schedule());
  AveragedError out;
  out.samples.reserve(n_samples);
  for (std::size_t k = 0; k < n_samples; ++k) {
    const auto ds = sample_dataset(probe, m_repeats, derive_seed(seed, k), threads);
    out.samples.push_back(error_metrics(posterior(ds, lik, grid), truth.field_x).delta_sq);
  }
  double s = 0.0;
  for (double v : out.samples) {
    s += v;
  }
  out.mean = s / static_cast<double>(n_samples);
  if (n_samples > 1) {
    double ss = 0.0;
    for (double v : out.samples) {
      ss += (v - out.mean) * (v - out.mean);
    }
    out.std_error = std::sqrt(ss / static_cast<double>(n_samples - 1) / static_cast<double>(n_samples));
  }
  return out;
}

[[nodiscard]] inline AveragedError averaged_error(const SpinChainParams& params, const MeasurementSchedule& schedule,
                                                  std::size_t m_repeats, std::size_t n_samples, std::uint64_t seed,
                                                  const GridSpec& grid = {}, unsigned threads = 1)
{
  auto lik = LikelihoodGrid::along_x(params, schedule, grid, threads);
  return averaged_error(params, lik, grid, m_repeats, n_samples, seed, threads);
}

/// CSV with columns (B_x, density) or (B_x, B_z, density).
inline void write_csv(std::ostream& os, const PosteriorGrid& post)
{
  if (post.dims() == 1) {
    CsvWriter w(os, {"B_x", "density"});
    for (std::size_t i = 0; i < post.size(); ++i) {
      w.row(post.x_axis[i], post.probabilities[i]);
    }
    return;
  }
  CsvWriter w(os, {"B_x", "B_z", "density"});
  const std::size_t nz = post.z_axis.size();
  for (std::size_t i = 0; i < post.size(); ++i) {
    w.row(post.x_axis[i / nz], post.z_axis[i % nz], post.probabilities[i]);
  }
}

} // namespace seqmag
