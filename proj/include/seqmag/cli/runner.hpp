#pragma once

#include <seqmag/cli/config.hpp>
#include <seqmag/cli/plot.hpp>
#include <seqmag/disorder.hpp>
#include <seqmag/magnetization.hpp>
#include <seqmag/open_system.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#ifndef SEQMAG_VERSION
#define SEQMAG_VERSION "unknown"
#endif

namespace seqmag::cli {

inline constexpr int kManifestVersion = 1;

struct RunOptions
{
  /// 0 defers to SEQMAG_THREADS, then 1.
  unsigned threads = 0;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  /// Directory against which relative input paths in the config resolve.
  std::filesystem::path base_dir = ".";
};

struct RunResult
{
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> files;
  double wall_seconds = 0.0;
  json summary;
};

namespace detail {

class OutputDir
{
public:
  explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  template <typename Fn>
  void write(const std::string& name, Fn&& fill)
  {
    if (name.find('/') != std::string::npos || name.find("..") != std::string::npos) {
      throw invalid_argument_error("output file name '" + name + "' leaves the output directory");
    }
    std::ostringstream os;
    fill(os);
    std::ofstream out(dir_ / name, std::ios::binary);
    out << os.str();
    if (!out) {
      throw error("cannot write " + (dir_ / name).string());
    }
    files_.push_back(name);
  }

  void write_text(const std::string& name, const std::string& text)
  {
    write(name, [&](std::ostream& os) { os << text; });
  }

  void plot(const std::string& csv_name, const PlotSpec& spec)
  {
    std::ifstream in(dir_ / csv_name);
    const CsvTable t = read_csv(in);
    const auto stem = csv_name.substr(0, csv_name.rfind('.'));
    write_text(stem + ".svg", render_svg(t, spec));
  }

  [[nodiscard]] const std::vector<std::string>& files() const { return files_; }
  [[nodiscard]] const std::filesystem::path& path() const { return dir_; }

private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

inline PlotSpec line_spec(std::string x, std::string y, std::string group, bool log_x, bool log_y, std::string title,
                          PlotType type = PlotType::line)
{
  PlotSpec s;
  s.type = type;
  s.x = std::move(x);
  s.y = {std::move(y)};
  s.group = std::move(group);
  s.log_x = log_x;
  s.log_y = log_y;
  s.title = std::move(title);
  return s;
}

inline json fit_or_note(const std::vector<double>& x, const std::vector<double>& y, bool offset)
{
  if (x.size() < 4) {
    return json{{"note", "fewer than four points; not fitted"}};
  }
  return to_json(fit_power_law(x, y, offset));
}

inline void run_fisher(const ExperimentConfig& c, unsigned threads, OutputDir& out, json& summary)
{
  const auto sites = c.fisher.sites.empty() ? std::vector<int>{c.chain.n_sites} : c.fisher.sites;
  std::vector<std::pair<int, std::vector<FisherResult>>> sweeps;
  for (int n : sites) {
    const auto params = c.chain_params(n);
    params.validate();
    sweeps.emplace_back(n, fisher_sweep(params, c.measurement_schedule(n, c.schedule.n_seq), c.fisher.delta_b,
                                        c.fisher.prune, threads));
  }
  out.write("fisher.csv", [&](std::ostream& os) {
    CsvWriter w(os, {"N", "n_seq", "F", "inv_F", "pruned_mass"});
    for (const auto& [n, sweep] : sweeps) {
      for (const auto& r : sweep) {
        w.row(n, r.n_seq, r.value, r.value > 0.0 ? 1.0 / r.value : std::numeric_limits<double>::infinity(),
              r.pruned_mass);
      }
    }
  });
  json fits = json::object();
  for (const auto& [n, sweep] : sweeps) {
    std::vector<double> x, y;
    std::vector<std::string> warnings;
    for (const auto& r : sweep) {
      if (r.value > 0.0) {
        x.push_back(r.n_seq);
        y.push_back(1.0 / r.value);
      }
      if (!r.warning.empty()) {
        warnings.push_back("n_seq = " + std::to_string(r.n_seq) + ": " + r.warning);
      }
    }
    json entry{{"inverse_fisher", fit_or_note(x, y, true)}};
    if (!warnings.empty()) {
      entry["warnings"] = warnings;
    }
    fits["N=" + std::to_string(n)] = entry;
  }
  summary["fits"] = fits;
  if (c.plot) {
    out.plot("fisher.csv", line_spec("n_seq", "inv_F", "N", false, true, "Inverse Fisher information"));
  }
}

inline void run_posterior(const ExperimentConfig& c, std::uint64_t seed, unsigned threads, OutputDir& out)
{
  const auto params = c.chain_params();
  params.validate();
  const auto& ns = c.posterior.n_seqs;
  std::vector<PosteriorGrid> posts;
  for (std::size_t j = 0; j < ns.size(); ++j) {
    const auto sched = c.measurement_schedule(c.chain.n_sites, ns[j]);
    const auto ds = sample_dataset(params, sched, c.posterior.m_repeats, derive_seed(derive_seed(seed, 0), j), threads);
    posts.push_back(posterior(ds, params, sched, c.grid, threads));
  }
  out.write("posterior.csv", [&](std::ostream& os) {
    CsvWriter w(os, {"n_seq", "B_x", "density"});
    for (std::size_t j = 0; j < ns.size(); ++j) {
      for (std::size_t i = 0; i < posts[j].x_axis.size(); ++i) {
        w.row(ns[j], posts[j].x_axis[i], posts[j].probabilities[i]);
      }
    }
  });
  out.write("posterior_summary.csv", [&](std::ostream& os) {
    CsvWriter w(os, {"n_seq", "mean", "std", "folded_mean", "folded_std", "sign_identifiable"});
    for (std::size_t j = 0; j < ns.size(); ++j) {
      w.row(ns[j], posts[j].mean(), posts[j].standard_deviation(), posts[j].folded_mean(),
            posts[j].folded_standard_deviation(), posts[j].sign_identifiable ? 1 : 0);
    }
  });
  if (!c.posterior.fields.empty()) {
    out.write("averaged_error.csv", [&](std::ostream& os) {
      CsvWriter w(os, {"B_x", "n_seq", "delta_sq", "std_error"});
      for (std::size_t j = 0; j < ns.size(); ++j) {
        const auto sched = c.measurement_schedule(c.chain.n_sites, ns[j]);
        auto lik = LikelihoodGrid::along_x(params, sched, c.grid, threads);
        for (std::size_t i = 0; i < c.posterior.fields.size(); ++i) {
          const double b = c.posterior.fields[i];
          const auto avg = averaged_error(params.with_field(b, params.field_z), lik, c.grid, c.posterior.m_repeats,
                                          c.posterior.samples, derive_seed(derive_seed(seed, i + 1), j), threads);
          w.row(b, ns[j], avg.mean, avg.std_error);
        }
      }
    });
  }
  if (c.plot) {
    out.plot("posterior.csv", line_spec("B_x", "density", "n_seq", false, false, "Posterior over B_x"));
  }
}

inline void run_posterior2d(const ExperimentConfig& c, std::uint64_t seed, unsigned threads, OutputDir& out)
{
  const auto params = c.chain_params();
  params.validate();
  const auto grid = c.grid_2d();
  out.write("posterior2d_summary.csv", [&](std::ostream& os) {
    CsvWriter w(os, {"n_seq", "mean_x", "mean_z", "det_cov", "regions", "regions_z_only"});
    for (std::size_t j = 0; j < c.posterior.n_seqs.size(); ++j) {
      const int n = c.posterior.n_seqs[j];
      const auto sched = c.measurement_schedule(c.chain.n_sites, n);
      const auto pair = sample_dataset_pair(params, sched, c.posterior.m_repeats, derive_seed(seed, j), threads);
      auto lik = LikelihoodGrid::over_xz(params, sched, grid, threads);
      const auto post = posterior_2d(pair, lik, grid);
      const auto z_only = posterior_2d(DatasetPair{pair.z, TrajectoryDataset{}}, lik, grid);
      const auto mean = post.mean_2d();
      const double det = post.covariance_2d().determinant();
      w.row(n, mean[0], mean[1], det, count_regions_above(post), count_regions_above(z_only));
      const std::string name = "posterior2d_n" + std::to_string(n) + ".csv";
      out.write(name, [&](std::ostream& f) { write_csv(f, post); });
      if (c.plot) {
        PlotSpec s = line_spec("B_x", "B_z", "", false, false, "Posterior, n_seq = " + std::to_string(n),
                               PlotType::heatmap);
        s.z = "density";
        out.plot(name, s);
      }
    }
  });
}

inline json scaling_summary(const ScalingResult& r, const std::vector<int>& ns)
{
  json j;
  json per = json::object();
  for (const auto& [t, f] : r.per_budget) {
    per[format_double(t)] = to_json(f);
  }
  j["per_budget"] = per;
  j["fit_domain_n_seq"] = ns;
  j["nu"] = to_json(r.nu_fit);
  j["beta_mean"] = r.beta_mean;
  j["spearman"] = r.spearman;
  j["report"] = r.report;
  return j;
}

inline void run_resource(const ExperimentConfig& c, std::uint64_t seed, unsigned threads, OutputDir& out,
                         json& summary)
{
  const auto params = c.chain_params();
  params.validate();
  const auto r = scaling_experiment(params, c.resource_model(), c.resource.budgets, c.resource.n_seqs,
                                    c.resource.samples, seed, c.grid, threads);
  out.write("scaling_cells.csv", [&](std::ostream& os) { write_csv(os, r.cells); });
  out.write("collapse.csv", [&](std::ostream& os) { write_csv(os, r.collapse); });
  summary["scaling"] = scaling_summary(r, c.resource.n_seqs);
  if (c.plot) {
    out.plot("scaling_cells.csv", line_spec("n_seq", "delta_sq", "T", false, true, "delta^2 against n_seq"));
    if (!r.collapse.empty()) {
      out.plot("collapse.csv",
               line_spec("coordinate", "delta_sq", "T", true, true, "Universal collapse", PlotType::scatter));
    }
  }
}

inline void run_collapse(const ExperimentConfig& c, OutputDir& out, json& summary)
{
  std::ifstream in(c.collapse_input);
  if (!in) {
    throw config_error("cannot read collapse input '" + c.collapse_input + "'");
  }
  const CsvTable t = read_csv(in);
  const auto ts = t.values("T");
  const auto ns = t.values("n_seq");
  const auto ds = t.values("delta_sq");
  ScalingResult r;
  std::set<int> used;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    ScalingCell cell;
    cell.total_time = ts[i];
    cell.n_seq = static_cast<int>(ns[i]);
    cell.delta_sq = ds[i];
    r.cells.push_back(cell);
    used.insert(cell.n_seq);
  }
  seqmag::detail::analyse_scaling(r, c.chain.coupling);
  out.write("collapse.csv", [&](std::ostream& os) { write_csv(os, r.collapse); });
  summary["scaling"] = scaling_summary(r, std::vector<int>(used.begin(), used.end()));
  if (c.plot && !r.collapse.empty()) {
    out.plot("collapse.csv",
             line_spec("coordinate", "delta_sq", "T", true, true, "Universal collapse", PlotType::scatter));
  }
}

inline void run_dephasing(const ExperimentConfig& c, unsigned threads, OutputDir& out, json& summary)
{
  const auto params = c.chain_params();
  params.validate();
  const auto rows = fisher_dephasing_sweep(params, c.measurement_schedule(c.chain.n_sites, c.schedule.n_seq),
                                           c.gammas, c.fisher.delta_b, c.fisher.prune, threads);
  out.write("dephasing.csv", [&](std::ostream& os) { write_csv(os, rows); });
  json fits = json::object();
  for (double g : c.gammas) {
    std::vector<double> x, y;
    for (const auto& r : rows) {
      if (r.gamma == g && r.fisher.value > 0.0) {
        x.push_back(r.fisher.n_seq);
        y.push_back(1.0 / r.fisher.value);
      }
    }
    fits["gamma=" + format_double(g)] = fit_or_note(x, y, false);
  }
  summary["inverse_fisher_fits"] = fits;
  if (c.plot) {
    out.plot("dephasing.csv", line_spec("n_seq", "F", "gamma", false, true, "Fisher information under dephasing"));
  }
}

inline void run_disorder(const ExperimentConfig& c, std::uint64_t seed, unsigned threads, OutputDir& out)
{
  const auto params = c.chain_params();
  params.validate();
  const auto sched = c.measurement_schedule(c.chain.n_sites, c.schedule.n_seq);
  std::vector<DisorderFisherRow> rows;
  for (double h : c.disorder.half_widths) {
    auto d = DisorderParams::isotropic(h, c.disorder.samples);
    const auto r = averaged_fisher_disorder(params, sched, d, seed, c.fisher.delta_b, c.fisher.prune, threads);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  out.write("disorder.csv", [&](std::ostream& os) { write_csv(os, rows); });
  if (c.plot) {
    out.plot("disorder.csv", line_spec("n_seq", "F_mean", "h_x", false, true, "Disorder-averaged Fisher information"));
  }
}

inline void run_misspecified(const ExperimentConfig& c, std::uint64_t seed, unsigned threads, OutputDir& out,
                             json& summary)
{
  const auto params = c.chain_params();
  params.validate();
  json per_h = json::object();
  std::vector<std::pair<double, MisspecifiedResult>> results;
  for (double h : c.disorder.half_widths) {
    auto d = DisorderParams::isotropic(h, c.disorder.samples);
    d.resample_per_trajectory = c.disorder.resample_per_trajectory;
    results.emplace_back(h, misspecified_bayes_experiment(params, c.resource_model(), d, c.resource.budgets,
                                                          c.resource.n_seqs, c.resource.samples, seed, c.grid,
                                                          threads));
  }
  out.write("misspecified.csv", [&](std::ostream& os) {
    CsvWriter w(os, {"h", "T", "n_seq", "M", "delta_sq", "std_error"});
    for (const auto& [h, r] : results) {
      for (const auto& cell : r.cells) {
        if (cell.skipped.empty()) {
          w.row(h, cell.total_time, cell.n_seq, cell.m_repeats, cell.delta_sq, cell.std_error);
        }
      }
    }
  });
  for (const auto& [h, r] : results) {
    json j;
    json per_n = json::object();
    for (const auto& [n, f] : r.per_n) {
      per_n["n_seq=" + std::to_string(n)] = to_json(f);
    }
    j["per_n"] = per_n;
    j["nu_mean"] = r.nu_mean;
    json common = json::object();
    for (const auto& [n, f] : r.per_n_common_nu) {
      common["n_seq=" + std::to_string(n)] = to_json(f);
    }
    j["per_n_common_nu"] = common;
    j["g_fit"] = to_json(r.g_fit);
    j["g_fit_free"] = to_json(r.g_fit_free);
    j["report"] = r.report;
    per_h["h=" + format_double(h)] = j;
  }
  summary["misspecified"] = per_h;
  if (c.plot) {
    out.plot("misspecified.csv", line_spec("T", "delta_sq", "n_seq", true, true, "Misspecified-model error",
                                           PlotType::scatter));
  }
}

inline void run_magnetization(const ExperimentConfig& c, OutputDir& out, json& summary)
{
  const auto params = c.chain_params();
  params.validate();
  const auto sites = c.magnetization.sites.empty() ? std::vector<int>{c.chain.n_sites} : c.magnetization.sites;
  std::vector<double> times;
  for (int i = 0; i < c.magnetization.points; ++i) {
    times.push_back(c.magnetization.t_max * i / (c.magnetization.points - 1));
  }
  std::vector<MagnetizationSeries> series;
  for (int s : sites) {
    series.push_back(magnetization_series(params, s, times));
  }
  out.write("magnetization.csv", [&](std::ostream& os) {
    CsvWriter w(os, {"t", "site", "m_z"});
    for (const auto& s : series) {
      for (std::size_t i = 0; i < s.times.size(); ++i) {
        w.row(s.times[i], s.site, s.values[i]);
      }
    }
  });
  json onsets = json::object();
  for (const auto& s : series) {
    const auto t = response_onset(s, 1e-3);
    onsets["site=" + std::to_string(s.site)] = t ? json(*t) : json(nullptr);
  }
  summary["response_onset_1e-3"] = onsets;
  if (c.plot) {
    out.plot("magnetization.csv", line_spec("t", "m_z", "site", false, false, "Site magnetization"));
  }
}

inline std::string utc_now()
{
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

} // namespace detail

/// Runs one experiment and writes its CSVs, plots, canonical config and
/// manifest into the output directory.
inline RunResult run_experiment(ExperimentConfig c, const RunOptions& opts, std::ostream& log)
{
  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  if (opts.seed) {
    c.seed = opts.seed;
  }
  if (!c.seed) {
    std::random_device rd;
    c.seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }
  result.seed = *c.seed;
  if (!opts.output_dir.empty()) {
    c.output_dir = opts.output_dir;
  }
  if (c.output_dir.empty()) {
    c.output_dir = "seqmag-out/" + to_string(c.kind);
  }
  if (!c.collapse_input.empty()) {
    std::filesystem::path p(c.collapse_input);
    c.collapse_input = std::filesystem::absolute(p.is_absolute() ? p : opts.base_dir / p).lexically_normal().string();
  }
  const unsigned threads = opts.threads > 0 ? opts.threads : default_threads();
  c.chain_params().validate();

  detail::OutputDir out(c.output_dir);
  result.output_dir = out.path();
  log << "seqmag " << to_string(c.kind) << ": seed " << result.seed << ", " << threads << " thread(s), output "
      << out.path().string() << '\n';

  json summary = json::object();
  switch (c.kind) {
  case ExperimentKind::fisher: detail::run_fisher(c, threads, out, summary); break;
  case ExperimentKind::posterior: detail::run_posterior(c, result.seed, threads, out); break;
  case ExperimentKind::posterior2d: detail::run_posterior2d(c, result.seed, threads, out); break;
  case ExperimentKind::resource: detail::run_resource(c, result.seed, threads, out, summary); break;
  case ExperimentKind::collapse: detail::run_collapse(c, out, summary); break;
  case ExperimentKind::dephasing: detail::run_dephasing(c, threads, out, summary); break;
  case ExperimentKind::disorder: detail::run_disorder(c, result.seed, threads, out); break;
  case ExperimentKind::misspecified: detail::run_misspecified(c, result.seed, threads, out, summary); break;
  case ExperimentKind::magnetization: detail::run_magnetization(c, out, summary); break;
  }
  if (!summary.empty()) {
    out.write_text("summary.json", summary.dump(2) + "\n");
  }
  out.write_text("config.yaml", to_yaml(c));
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json manifest;
  manifest["manifest_version"] = kManifestVersion;
  manifest["seqmag_version"] = SEQMAG_VERSION;
  manifest["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "."
                              + std::to_string(EIGEN_MINOR_VERSION);
  manifest["compiler"] = __VERSION__;
  manifest["started_utc"] = detail::utc_now();
  manifest["wall_time_seconds"] = result.wall_seconds;
  manifest["threads"] = threads;
  manifest["seed"] = result.seed;
  manifest["config"] = to_json(c);
  manifest["outputs"] = out.files();
  out.write_text("manifest.json", manifest.dump(2) + "\n");
  result.files = out.files();
  result.summary = std::move(summary);
  log << "wrote " << result.files.size() << " files in " << format_double(std::round(result.wall_seconds * 100) / 100)
      << " s\n";
  return result;
}

} // namespace seqmag::cli
