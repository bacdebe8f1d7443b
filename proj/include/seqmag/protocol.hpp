#pragma once

// Sequential measurement engine: free evolution for tau_i, projective readout
// of one site, collapse, repeat, without re-initializing the probe.

#include <seqmag/measurement.hpp>
#include <seqmag/parallel.hpp>
#include <seqmag/propagator.hpp>
#include <seqmag/rng.hpp>

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace seqmag {

inline constexpr int kDefaultEnumerationCap = 20;
inline constexpr int kMaxTrajectoryLength = 64;
inline constexpr double kDefaultPruneThreshold = 1e-12;

struct MeasurementSchedule
{
  /// Free-evolution intervals tau_1..tau_n in units of 1/J.
  std::vector<double> intervals;
  Basis basis = Basis::Z;
  /// 1-based readout site; 0 selects the last site.
  int readout_site = 0;

  friend bool operator==(const MeasurementSchedule&, const MeasurementSchedule&) = default;

  static MeasurementSchedule uniform(int n_seq, double tau, Basis basis = Basis::Z)
  {
    if (n_seq < 1) {
      throw invalid_argument_error("n_seq must be at least 1");
    }
    return MeasurementSchedule{std::vector<double>(static_cast<std::size_t>(n_seq), tau), basis, 0};
  }

  [[nodiscard]] int n_seq() const { return static_cast<int>(intervals.size()); }
  [[nodiscard]] int site(int n_sites) const { return readout_site == 0 ? n_sites : readout_site; }

  void validate(int n_sites) const
  {
    if (intervals.empty()) {
      throw invalid_argument_error("schedule needs at least one interval");
    }
    for (double t : intervals) {
      if (!(t > 0.0) || !std::isfinite(t)) {
        throw invalid_argument_error("schedule intervals must be positive and finite");
      }
    }
    const int s = site(n_sites);
    if (s < 1 || s > n_sites) {
      throw invalid_argument_error("readout site out of range");
    }
  }

  [[nodiscard]] MeasurementSchedule with_basis(Basis b) const
  {
    MeasurementSchedule s = *this;
    s.basis = b;
    return s;
  }

  [[nodiscard]] MeasurementSchedule prefix(int n) const
  {
    MeasurementSchedule s = *this;
    s.intervals.resize(static_cast<std::size_t>(n));
    return s;
  }
};

/// Outcome index convention: the first outcome is the most significant bit,
/// up (or +) is 1.
[[nodiscard]] inline std::string outcome_label(std::uint64_t index, int n_seq, Basis basis)
{
  std::string s(static_cast<std::size_t>(n_seq), ' ');
  for (int i = 0; i < n_seq; ++i) {
    s[static_cast<std::size_t>(i)] = outcome_symbol(basis, ((index >> (n_seq - 1 - i)) & 1U) != 0);
  }
  return s;
}

[[nodiscard]] inline std::uint64_t outcome_index(std::string_view label)
{
  if (label.size() > static_cast<std::size_t>(kMaxTrajectoryLength)) {
    throw invalid_argument_error("outcome string longer than 64 symbols");
  }
  std::uint64_t idx = 0;
  for (char c : label) {
    idx <<= 1U;
    if (c == 'u' || c == '+') {
      idx |= 1U;
    } else if (c != 'd' && c != '-') {
      throw invalid_argument_error(std::string("invalid outcome symbol '") + c + "'");
    }
  }
  return idx;
}

struct Trajectory
{
  /// 1 = up (or +), 0 = down (or -), in measurement order.
  std::vector<std::uint8_t> outcomes;
  Basis basis = Basis::Z;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;

  [[nodiscard]] int length() const { return static_cast<int>(outcomes.size()); }

  [[nodiscard]] std::uint64_t index() const
  {
    std::uint64_t idx = 0;
    for (auto o : outcomes) {
      idx = (idx << 1U) | (o != 0 ? 1U : 0U);
    }
    return idx;
  }

  [[nodiscard]] std::string label() const { return outcome_label(index(), length(), basis); }
};

struct TrajectoryDistribution
{
  int n_seq = 0;
  Basis basis = Basis::Z;
  /// P_gamma indexed by outcome index; pruned leaves read 0.
  std::vector<double> probabilities;
  double pruned_mass = 0.0;
  SpinChainParams params;
  MeasurementSchedule schedule;

  [[nodiscard]] double total() const
  {
    double s = 0.0;
    for (double p : probabilities) {
      s += p;
    }
    return s;
  }

  [[nodiscard]] double probability(std::string_view label) const { return probabilities.at(outcome_index(label)); }

  [[nodiscard]] std::string label(std::uint64_t index) const { return outcome_label(index, n_seq, basis); }

  /// Distribution of the first n_seq - 1 outcomes.
  [[nodiscard]] TrajectoryDistribution marginal() const
  {
    if (n_seq < 2) {
      throw invalid_argument_error("marginal needs n_seq >= 2");
    }
    TrajectoryDistribution m;
    m.n_seq = n_seq - 1;
    m.basis = basis;
    m.params = params;
    m.schedule = schedule.prefix(n_seq - 1);
    m.pruned_mass = pruned_mass;
    m.probabilities.assign(probabilities.size() / 2, 0.0);
    for (std::size_t i = 0; i < m.probabilities.size(); ++i) {
      m.probabilities[i] = probabilities[2 * i] + probabilities[2 * i + 1];
    }
    return m;
  }
};

struct TrajectoryDataset
{
  std::vector<Trajectory> trajectories;
  std::uint64_t seed = 0;
  Basis basis = Basis::Z;
  int n_seq = 0;
  /// Occurrences of each distinct outcome index.
  std::map<std::uint64_t, std::size_t> counts;

  [[nodiscard]] std::size_t size() const { return trajectories.size(); }

  void add(Trajectory t)
  {
    ++counts[t.index()];
    trajectories.push_back(std::move(t));
  }
};

/// Dataset pair for two-component field estimation: half the repetitions
/// read out in the z basis, half in the x basis.
struct DatasetPair
{
  TrajectoryDataset z;
  TrajectoryDataset x;
};

/// Probe of fixed parameters and schedule. Diagonalizes once and caches the
/// eigenbasis phases per interval; all methods are const and thread-safe.
class SequentialProbe
{
public:
  SequentialProbe(const SpinChainParams& params, const MeasurementSchedule& schedule)
      : params_(params), schedule_(schedule)
  {
    params_.validate();
    schedule_.validate(params_.n_sites);
    prop_ = std::make_shared<const Propagator>(make_propagator(build_hamiltonian(params_)));
    init_phases();
  }

  SequentialProbe(const SpinChainParams& params, const MeasurementSchedule& schedule,
                  std::shared_ptr<const Propagator> prop)
      : params_(params), schedule_(schedule), prop_(std::move(prop))
  {
    schedule_.validate(params_.n_sites);
    init_phases();
  }

  [[nodiscard]] const SpinChainParams& params() const { return params_; }
  [[nodiscard]] const MeasurementSchedule& schedule() const { return schedule_; }
  [[nodiscard]] const Propagator& propagator() const { return *prop_; }
  [[nodiscard]] std::size_t readout_mask() const { return mask_; }

  [[nodiscard]] CVector initial_state() const { return PureState::all_down(params_.n_sites).amplitudes(); }

  /// Free evolution over interval i (0-based).
  void evolve_step(CVector& v, int i) const { prop_->apply_phases(v, phases_[static_cast<std::size_t>(i)]); }

  [[nodiscard]] double up_probability(const CVector& v) const
  {
    return detail::up_probability(v, mask_, schedule_.basis);
  }

  /// Probability tables for depths 1..n_max of the outcome tree, computed in
  /// one depth-first pass. Subtrees below a fixed split depth are independent
  /// work items so the result is identical for any thread count.
  [[nodiscard]] std::vector<TrajectoryDistribution> enumerate_levels(int n_max, double prune_threshold,
                                                                      unsigned threads = 1) const
  {
    if (n_max < 1 || n_max > schedule_.n_seq()) {
      throw invalid_argument_error("enumeration depth must lie in [1, n_seq]");
    }
    if (!(prune_threshold >= 0.0)) {
      throw invalid_argument_error("prune threshold must be non-negative");
    }
    std::vector<TrajectoryDistribution> levels(static_cast<std::size_t>(n_max));
    for (int d = 1; d <= n_max; ++d) {
      auto& L = levels[static_cast<std::size_t>(d - 1)];
      L.n_seq = d;
      L.basis = schedule_.basis;
      L.params = params_;
      L.schedule = schedule_.prefix(d);
      L.probabilities.assign(std::size_t{1} << d, 0.0);
    }

    // Breadth-first expansion down to the split depth.
    const int split = std::min(n_max, 4);
    std::vector<Node> frontier{Node{initial_state(), 1.0, 0}};
    std::vector<double> head_pruned(static_cast<std::size_t>(n_max), 0.0);
    for (int d = 0; d < split; ++d) {
      std::vector<Node> next;
      next.reserve(frontier.size() * 2);
      for (auto& node : frontier) {
        expand(node, d, levels, prune_threshold, head_pruned, [&](Node child) { next.push_back(std::move(child)); });
      }
      frontier = std::move(next);
    }

    // Depth-first below the split, one work item per frontier node.
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

  [[nodiscard]] TrajectoryDistribution enumerate(double prune_threshold, int cap = kDefaultEnumerationCap,
                                                 unsigned threads = 1) const
  {
    if (schedule_.n_seq() > cap) {
      throw capacity_error("n_seq = " + std::to_string(schedule_.n_seq()) + " exceeds the enumeration cap of "
                           + std::to_string(cap) + "; use Monte Carlo sampling instead");
    }
    auto levels = enumerate_levels(schedule_.n_seq(), prune_threshold, threads);
    return std::move(levels.back());
  }

  /// One protocol run drawn with the Born rule.
  [[nodiscard]] Trajectory sample(Rng& rng) const
  {
    if (schedule_.n_seq() > kMaxTrajectoryLength) {
      throw capacity_error("trajectories are limited to 64 measurements");
    }
    Trajectory t;
    t.basis = schedule_.basis;
    t.outcomes.reserve(static_cast<std::size_t>(schedule_.n_seq()));
    CVector v = initial_state();
    for (int i = 0; i < schedule_.n_seq(); ++i) {
      evolve_step(v, i);
      const double pu = up_probability(v);
      bool up = uniform01(rng) < pu;
      double p = up ? pu : 1.0 - pu;
      if (p <= kOutcomeFloor) {
        up = !up;
        p = 1.0 - p;
      }
      detail::collapse_in_place(v, mask_, schedule_.basis, up, p);
      t.outcomes.push_back(up ? 1 : 0);
    }
    return t;
  }

  /// log P_gamma for each distinct outcome index (all of length n_seq).
  /// Shared prefixes are propagated once; a step with probability below
  /// 1e-300 yields -infinity.
  [[nodiscard]] std::vector<double> log_probabilities(std::span<const std::uint64_t> sorted_indices) const
  {
    std::vector<double> out(sorted_indices.size(), 0.0);
    if (sorted_indices.empty()) {
      return out;
    }
    const int n = schedule_.n_seq();
    CVector v = initial_state();
    trie_descend(v, 0.0, 0, n, sorted_indices, 0, sorted_indices.size(), out);
    return out;
  }

  [[nodiscard]] double log_probability(const Trajectory& t) const
  {
    if (t.length() != schedule_.n_seq()) {
      throw invalid_argument_error("trajectory length differs from the schedule");
    }
    const std::uint64_t idx = t.index();
    return log_probabilities(std::span<const std::uint64_t>(&idx, 1))[0];
  }

private:
  struct Node
  {
    CVector state;
    double prob;
    std::uint64_t index;
  };

  void init_phases()
  {
    mask_ = site_mask(params_.n_sites, schedule_.site(params_.n_sites));
    phases_.reserve(schedule_.intervals.size());
    std::map<double, std::size_t> seen;
    for (double t : schedule_.intervals) {
      auto it = seen.find(t);
      if (it != seen.end()) {
        phases_.push_back(phases_[it->second]);
      } else {
        seen.emplace(t, phases_.size());
        phases_.push_back(prop_->phase_vector(t));
      }
    }
  }

  // Children of `node`, which holds the state after d measurements. Records
  // level d+1 probabilities and pruned mass, then hands expandable children
  // to `sink`.
  template <typename Sink>
  void expand(Node& node, int d, std::vector<TrajectoryDistribution>& levels, double prune,
              std::vector<double>& pruned, Sink&& sink) const
  {
    const int n_max = static_cast<int>(levels.size());
    evolve_step(node.state, d);
    const double pu = up_probability(node.state);
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
        // Too improbable to collapse onto; descendants count as pruned.
        for (int k = d + 1; k < n_max; ++k) {
          pruned[static_cast<std::size_t>(k)] += child_p;
        }
        continue;
      }
      CVector s = up ? std::move(node.state) : node.state;
      detail::collapse_in_place(s, mask_, schedule_.basis, up, p);
      sink(Node{std::move(s), child_p, child_idx});
    }
  }

  void descend(Node node, int d, int n_max, std::vector<TrajectoryDistribution>& levels, double prune,
               std::vector<double>& pruned) const
  {
    if (d >= n_max) {
      return;
    }
    expand(node, d, levels, prune, pruned, [&](Node child) { descend(std::move(child), d + 1, n_max, levels, prune, pruned); });
  }

  void trie_descend(const CVector& state, double logp, int d, int n, std::span<const std::uint64_t> idx,
                    std::size_t lo, std::size_t hi, std::vector<double>& out) const
  {
    if (d == n) {
      for (std::size_t k = lo; k < hi; ++k) {
        out[k] = logp;
      }
      return;
    }
    CVector evolved = state;
    evolve_step(evolved, d);
    const int shift = n - 1 - d;
    // Sorted ascending, so the down branch (bit 0) precedes the up branch.
    std::size_t mid = lo;
    while (mid < hi && ((idx[mid] >> shift) & 1U) == 0) {
      ++mid;
    }
    for (int o = 0; o <= 1; ++o) {
      const std::size_t a = o == 0 ? lo : mid;
      const std::size_t b = o == 0 ? mid : hi;
      if (a == b) {
        continue;
      }
      CVector child = evolved;
      detail::collapse_in_place(child, mask_, schedule_.basis, o == 1);
      const double p = child.squaredNorm();
      if (!(p >= 1e-300)) {
        for (std::size_t k = a; k < b; ++k) {
          out[k] = -std::numeric_limits<double>::infinity();
        }
        continue;
      }
      child /= std::sqrt(p);
      trie_descend(child, logp + std::log(p), d + 1, n, idx, a, b, out);
    }
  }

  SpinChainParams params_;
  MeasurementSchedule schedule_;
  std::shared_ptr<const Propagator> prop_;
  std::vector<CVector> phases_;
  std::size_t mask_ = 0;
};

/// (p_up, p_down) for one readout of `site` (1-based) in the given basis.
[[nodiscard]] inline std::pair<double, double> step_probabilities(const PureState& state, Basis basis, int site)
{
  if (site < 1 || site > state.n_sites()) {
    throw invalid_argument_error("readout site out of range");
  }
  const double pu = detail::up_probability(state.amplitudes(), site_mask(state.n_sites(), site), basis);
  return {pu, 1.0 - pu};
}

[[nodiscard]] inline TrajectoryDistribution enumerate_distribution(const SpinChainParams& params,
                                                                   const MeasurementSchedule& schedule,
                                                                   double prune_threshold = kDefaultPruneThreshold,
                                                                   int cap = kDefaultEnumerationCap,
                                                                   unsigned threads = 1)
{
  if (schedule.n_seq() > cap) {
    throw capacity_error("n_seq = " + std::to_string(schedule.n_seq()) + " exceeds the enumeration cap of "
                         + std::to_string(cap) + "; use Monte Carlo sampling instead");
  }
  return SequentialProbe(params, schedule).enumerate(prune_threshold, cap, threads);
}

[[nodiscard]] inline Trajectory sample_trajectory(const SpinChainParams& params, const MeasurementSchedule& schedule,
                                                  Rng& rng)
{
  return SequentialProbe(params, schedule).sample(rng);
}

/// M independent runs from fresh all-down initializations. Run k draws from
/// its own stream derived from (seed, k).
[[nodiscard]] inline TrajectoryDataset sample_dataset(const SequentialProbe& probe, std::size_t m_repeats,
                                                      std::uint64_t seed, unsigned threads = 1)
{
  if (m_repeats < 1) {
    throw invalid_argument_error("m_repeats must be at least 1");
  }
  std::vector<Trajectory> runs(m_repeats);
  parallel_for(m_repeats, threads, [&](std::size_t k) {
    Rng rng = make_rng(seed, k);
    runs[k] = probe.sample(rng);
  });
  TrajectoryDataset ds;
  ds.seed = seed;
  ds.basis = probe.schedule().basis;
  ds.n_seq = probe.schedule().n_seq();
  ds.trajectories.reserve(m_repeats);
  for (auto& t : runs) {
    ds.add(std::move(t));
  }
  return ds;
}

[[nodiscard]] inline TrajectoryDataset sample_dataset(const SpinChainParams& params,
                                                      const MeasurementSchedule& schedule, std::size_t m_repeats,
                                                      std::uint64_t seed, unsigned threads = 1)
{
  return sample_dataset(SequentialProbe(params, schedule), m_repeats, seed, threads);
}

/// Mixed-basis dataset: ceil(M/2) z-basis runs and floor(M/2) x-basis runs,
/// from independent seed streams.
[[nodiscard]] inline DatasetPair sample_dataset_pair(const SpinChainParams& params,
                                                     const MeasurementSchedule& schedule, std::size_t m_repeats,
                                                     std::uint64_t seed, unsigned threads = 1)
{
  if (m_repeats < 2) {
    throw invalid_argument_error("a mixed-basis dataset needs m_repeats >= 2");
  }
  const std::size_t mz = m_repeats - m_repeats / 2;
  const std::size_t mx = m_repeats / 2;
  const Propagator prop = make_propagator(build_hamiltonian(params));
  auto shared = std::make_shared<const Propagator>(prop);
  DatasetPair out;
  out.z = sample_dataset(SequentialProbe(params, schedule.with_basis(Basis::Z), shared), mz, derive_seed(seed, 0),
                         threads);
  out.x = sample_dataset(SequentialProbe(params, schedule.with_basis(Basis::X), shared), mx, derive_seed(seed, 1),
                         threads);
  return out;
}

} // namespace seqmag
