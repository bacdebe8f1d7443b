#pragma once

#include <seqmag/disorder.hpp>
#include <seqmag/io.hpp>

#include <yaml-cpp/yaml.h>

#include <array>
#include <charconv>
#include <functional>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace seqmag::cli {

/// Malformed or inconsistent experiment configuration. `line` is 1-based,
/// 0 when the problem has no single source line.
class config_error : public error
{
public:
  config_error(const std::string& what, int line = 0)
      : error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line)
  {
  }

  [[nodiscard]] int line() const { return line_; }

private:
  int line_;
};

enum class ExperimentKind
{
  fisher,
  posterior,
  posterior2d,
  resource,
  dephasing,
  disorder,
  misspecified,
  magnetization,
  collapse
};

inline constexpr std::array<std::pair<ExperimentKind, const char*>, 9> kKindNames{{
    {ExperimentKind::fisher, "fisher"},
    {ExperimentKind::posterior, "posterior"},
    {ExperimentKind::posterior2d, "posterior2d"},
    {ExperimentKind::resource, "resource"},
    {ExperimentKind::dephasing, "dephasing"},
    {ExperimentKind::disorder, "disorder"},
    {ExperimentKind::misspecified, "misspecified"},
    {ExperimentKind::magnetization, "magnetization"},
    {ExperimentKind::collapse, "collapse"},
}};

[[nodiscard]] inline std::string to_string(ExperimentKind k)
{
  for (const auto& [kind, name] : kKindNames) {
    if (kind == k) {
      return name;
    }
  }
  return "?";
}

/// Free-evolution interval: a fixed J tau, or J tau = N (per_site).
struct TauRule
{
  bool per_site = true;
  double value = 0.0;

  friend bool operator==(const TauRule&, const TauRule&) = default;

  [[nodiscard]] double resolve(int n_sites, double coupling) const
  {
    return per_site ? static_cast<double>(n_sites) / coupling : value;
  }
};

struct ChainSection
{
  int n_sites = 6;
  double coupling = 1.0;
  double field_x = 0.1;
  double field_z = 0.0;
  int max_sites = kDefaultMaxSites;

  friend bool operator==(const ChainSection&, const ChainSection&) = default;
};

struct ScheduleSection
{
  int n_seq = 10;
  TauRule tau;
  Basis basis = Basis::Z;
  int readout_site = 0;

  friend bool operator==(const ScheduleSection&, const ScheduleSection&) = default;
};

struct FisherSection
{
  double delta_b = kDefaultFisherStep;
  double prune = kDefaultPruneThreshold;
  /// Chain lengths swept by the fisher kind; empty means chain.n_sites.
  std::vector<int> sites;

  friend bool operator==(const FisherSection&, const FisherSection&) = default;
};

struct PosteriorSection
{
  std::size_t m_repeats = 1000;
  std::vector<int> n_seqs{1, 3, 5, 7};
  /// True B_x values for the averaged-error table; empty skips it.
  std::vector<double> fields;
  std::size_t samples = 20;

  friend bool operator==(const PosteriorSection&, const PosteriorSection&) = default;
};

struct ResourceSection
{
  double t_init = 600.0;
  double t_meas = 50.0;
  std::vector<double> budgets{1e5, 2e5, 4e5, 8e5, 1.6e6};
  std::vector<int> n_seqs{1, 2, 3, 4, 5, 6, 7, 8};
  std::size_t samples = 50;

  friend bool operator==(const ResourceSection&, const ResourceSection&) = default;
};

struct DisorderSection
{
  std::vector<double> half_widths{0.0, 0.01, 0.05, 0.1};
  std::size_t samples = 100;
  bool resample_per_trajectory = true;

  friend bool operator==(const DisorderSection&, const DisorderSection&) = default;
};

struct MagnetizationSection
{
  std::vector<int> sites;
  double t_max = 20.0;
  int points = 201;

  friend bool operator==(const MagnetizationSection&, const MagnetizationSection&) = default;
};

struct ExperimentConfig
{
  ExperimentKind kind = ExperimentKind::fisher;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  bool plot = true;
  ChainSection chain;
  ScheduleSection schedule;
  GridSpec grid;
  GridSpec grid_z{-0.2, 0.2, 201};
  FisherSection fisher;
  PosteriorSection posterior;
  ResourceSection resource;
  std::vector<double> gammas{0.0, 0.01, 0.05, 0.2};
  DisorderSection disorder;
  MagnetizationSection magnetization;
  /// Scaling-cell CSV re-analysed by the collapse kind.
  std::string collapse_input;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  [[nodiscard]] SpinChainParams chain_params() const { return chain_params(chain.n_sites); }

  [[nodiscard]] SpinChainParams chain_params(int n_sites) const
  {
    SpinChainParams p;
    p.n_sites = n_sites;
    p.coupling = chain.coupling;
    p.field_x = chain.field_x;
    p.field_z = chain.field_z;
    p.max_sites = chain.max_sites;
    return p;
  }

  [[nodiscard]] double tau(int n_sites) const { return schedule.tau.resolve(n_sites, chain.coupling); }

  [[nodiscard]] MeasurementSchedule measurement_schedule(int n_sites, int n_seq) const
  {
    auto s = MeasurementSchedule::uniform(n_seq, tau(n_sites), schedule.basis);
    s.readout_site = schedule.readout_site;
    return s;
  }

  [[nodiscard]] ResourceModel resource_model() const
  {
    return ResourceModel{resource.t_init, resource.t_meas, tau(chain.n_sites)};
  }

  [[nodiscard]] GridSpec2D grid_2d() const { return GridSpec2D{grid, grid_z}; }
};

namespace detail {

// Sections each kind accepts besides the top-level keys and `chain`.
inline const std::map<ExperimentKind, std::set<std::string>>& kind_sections()
{
  static const std::map<ExperimentKind, std::set<std::string>> m{
      {ExperimentKind::fisher, {"schedule", "fisher"}},
      {ExperimentKind::posterior, {"schedule", "grid", "posterior"}},
      {ExperimentKind::posterior2d, {"schedule", "grid", "grid_z", "posterior"}},
      {ExperimentKind::resource, {"schedule", "grid", "resource"}},
      {ExperimentKind::dephasing, {"schedule", "fisher", "dephasing"}},
      {ExperimentKind::disorder, {"schedule", "fisher", "disorder"}},
      {ExperimentKind::misspecified, {"schedule", "grid", "resource", "disorder"}},
      {ExperimentKind::magnetization, {"magnetization"}},
      {ExperimentKind::collapse, {"collapse"}},
  };
  return m;
}

inline int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

template <typename T>
T scalar(const YAML::Node& n, const std::string& name)
{
  if (!n.IsScalar()) {
    throw config_error("'" + name + "' must be a scalar", line_of(n));
  }
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw config_error("'" + name + "' has invalid value '" + n.Scalar() + "'", line_of(n));
  }
}

template <typename T>
std::vector<T> sequence(const YAML::Node& n, const std::string& name)
{
  if (!n.IsSequence()) {
    throw config_error("'" + name + "' must be a list", line_of(n));
  }
  std::vector<T> out;
  for (const auto& item : n) {
    out.push_back(scalar<T>(item, name));
  }
  return out;
}

// Visits every key of a mapping section, rejecting keys outside `allowed`.
template <typename Fn>
void each_key(const YAML::Node& section, const std::string& name, const std::set<std::string>& allowed, Fn&& fn)
{
  if (!section.IsMap()) {
    throw config_error("section '" + name + "' must be a mapping", line_of(section));
  }
  for (const auto& kv : section) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.contains(key)) {
      std::string list;
      for (const auto& a : allowed) {
        list += (list.empty() ? "" : ", ") + a;
      }
      throw config_error("unknown key '" + key + "' in " + name + " (expected one of: " + list + ")",
                         line_of(kv.first));
    }
    fn(key, kv.second);
  }
}

inline void read_grid(const YAML::Node& node, const std::string& name, GridSpec& g)
{
  each_key(node, name, {"lo", "hi", "points"}, [&](const std::string& k, const YAML::Node& v) {
    if (k == "lo") {
      g.lo = scalar<double>(v, k);
    } else if (k == "hi") {
      g.hi = scalar<double>(v, k);
    } else {
      g.points = scalar<int>(v, k);
    }
  });
  try {
    g.validate();
  } catch (const invalid_argument_error& e) {
    throw config_error(name + ": " + e.what(), line_of(node));
  }
}

inline void require(bool ok, const YAML::Node& n, const std::string& msg)
{
  if (!ok) {
    throw config_error(msg, line_of(n));
  }
}

inline ExperimentConfig parse_tree(const YAML::Node& root)
{
  if (!root.IsMap()) {
    throw config_error("configuration must be a mapping of keys", line_of(root));
  }
  ExperimentConfig c;
  const YAML::Node kind_node = root["kind"];
  if (!kind_node) {
    throw config_error("missing required key 'kind'", 1);
  }
  const auto kind_name = scalar<std::string>(kind_node, "kind");
  bool known = false;
  for (const auto& [k, name] : kKindNames) {
    if (kind_name == name) {
      c.kind = k;
      known = true;
    }
  }
  if (!known) {
    throw config_error("unknown experiment kind '" + kind_name + "'", line_of(kind_node));
  }

  std::set<std::string> allowed{"kind", "seed", "output_dir", "plot", "chain"};
  for (const auto& s : kind_sections().at(c.kind)) {
    allowed.insert(s);
  }
  each_key(root, "configuration for kind " + kind_name, allowed, [&](const std::string& key, const YAML::Node& v) {
    if (key == "kind") {
      return;
    }
    if (key == "seed") {
      c.seed = scalar<std::uint64_t>(v, key);
    } else if (key == "output_dir") {
      c.output_dir = scalar<std::string>(v, key);
    } else if (key == "plot") {
      c.plot = scalar<bool>(v, key);
    } else if (key == "chain") {
      each_key(v, "chain", {"n_sites", "coupling", "field_x", "field_z", "max_sites"},
               [&](const std::string& k, const YAML::Node& x) {
                 if (k == "n_sites") {
                   c.chain.n_sites = scalar<int>(x, k);
                 } else if (k == "coupling") {
                   c.chain.coupling = scalar<double>(x, k);
                   require(c.chain.coupling > 0.0, x, "coupling must be positive");
                 } else if (k == "field_x") {
                   c.chain.field_x = scalar<double>(x, k);
                 } else if (k == "field_z") {
                   c.chain.field_z = scalar<double>(x, k);
                 } else {
                   c.chain.max_sites = scalar<int>(x, k);
                 }
               });
    } else if (key == "schedule") {
      each_key(v, "schedule", {"n_seq", "tau", "basis", "readout_site"}, [&](const std::string& k, const YAML::Node& x) {
        if (k == "n_seq") {
          c.schedule.n_seq = scalar<int>(x, k);
          require(c.schedule.n_seq >= 1, x, "n_seq must be at least 1");
        } else if (k == "tau") {
          const auto s = scalar<std::string>(x, k);
          if (s == "N" || s == "N/J") {
            c.schedule.tau = TauRule{true, 0.0};
          } else {
            c.schedule.tau = TauRule{false, scalar<double>(x, k)};
            require(c.schedule.tau.value > 0.0, x, "tau must be positive or 'N'");
          }
        } else if (k == "basis") {
          const auto s = scalar<std::string>(x, k);
          require(s == "z" || s == "x", x, "basis must be 'z' or 'x'");
          c.schedule.basis = s == "z" ? Basis::Z : Basis::X;
        } else {
          c.schedule.readout_site = scalar<int>(x, k);
        }
      });
    } else if (key == "grid") {
      read_grid(v, "grid", c.grid);
    } else if (key == "grid_z") {
      read_grid(v, "grid_z", c.grid_z);
    } else if (key == "fisher") {
      each_key(v, "fisher", {"delta_b", "prune", "sites"}, [&](const std::string& k, const YAML::Node& x) {
        if (k == "delta_b") {
          c.fisher.delta_b = scalar<double>(x, k);
          require(c.fisher.delta_b > 0.0, x, "delta_b must be positive");
        } else if (k == "prune") {
          c.fisher.prune = scalar<double>(x, k);
          require(c.fisher.prune >= 0.0, x, "prune must be non-negative");
        } else {
          c.fisher.sites = sequence<int>(x, k);
        }
      });
    } else if (key == "posterior") {
      each_key(v, "posterior", {"m_repeats", "n_seqs", "fields", "samples"},
               [&](const std::string& k, const YAML::Node& x) {
                 if (k == "m_repeats") {
                   c.posterior.m_repeats = scalar<std::size_t>(x, k);
                   require(c.posterior.m_repeats >= 1, x, "m_repeats must be at least 1");
                 } else if (k == "n_seqs") {
                   c.posterior.n_seqs = sequence<int>(x, k);
                 } else if (k == "fields") {
                   c.posterior.fields = sequence<double>(x, k);
                 } else {
                   c.posterior.samples = scalar<std::size_t>(x, k);
                 }
               });
    } else if (key == "resource") {
      each_key(v, "resource", {"t_init", "t_meas", "budgets", "n_seqs", "samples"},
               [&](const std::string& k, const YAML::Node& x) {
                 if (k == "t_init") {
                   c.resource.t_init = scalar<double>(x, k);
                 } else if (k == "t_meas") {
                   c.resource.t_meas = scalar<double>(x, k);
                 } else if (k == "budgets") {
                   c.resource.budgets = sequence<double>(x, k);
                 } else if (k == "n_seqs") {
                   c.resource.n_seqs = sequence<int>(x, k);
                 } else {
                   c.resource.samples = scalar<std::size_t>(x, k);
                   require(c.resource.samples >= 1, x, "samples must be at least 1");
                 }
               });
    } else if (key == "dephasing") {
      each_key(v, "dephasing", {"gammas"}, [&](const std::string& k, const YAML::Node& x) {
        c.gammas = sequence<double>(x, k);
      });
    } else if (key == "disorder") {
      each_key(v, "disorder", {"half_widths", "samples", "resample_per_trajectory"},
               [&](const std::string& k, const YAML::Node& x) {
                 if (k == "half_widths") {
                   c.disorder.half_widths = sequence<double>(x, k);
                 } else if (k == "samples") {
                   c.disorder.samples = scalar<std::size_t>(x, k);
                   require(c.disorder.samples >= 1, x, "samples must be at least 1");
                 } else {
                   c.disorder.resample_per_trajectory = scalar<bool>(x, k);
                 }
               });
    } else if (key == "magnetization") {
      each_key(v, "magnetization", {"sites", "t_max", "points"}, [&](const std::string& k, const YAML::Node& x) {
        if (k == "sites") {
          c.magnetization.sites = sequence<int>(x, k);
        } else if (k == "t_max") {
          c.magnetization.t_max = scalar<double>(x, k);
          require(c.magnetization.t_max > 0.0, x, "t_max must be positive");
        } else {
          c.magnetization.points = scalar<int>(x, k);
          require(c.magnetization.points >= 2, x, "points must be at least 2");
        }
      });
    } else if (key == "collapse") {
      each_key(v, "collapse", {"input"}, [&](const std::string&, const YAML::Node& x) {
        c.collapse_input = scalar<std::string>(x, "input");
      });
    }
  });
  if (c.kind == ExperimentKind::collapse && c.collapse_input.empty()) {
    throw config_error("kind collapse needs collapse.input (a scaling-cell CSV)", 1);
  }
  return c;
}

inline std::string yaml_quote(const std::string& s)
{
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') {
      out += '\\';
    }
    out += ch;
  }
  return out + "\"";
}

template <typename T>
std::string flow_list(const std::vector<T>& v)
{
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) {
      out += ", ";
    }
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out + "]";
}

} // namespace detail

/// Parses configuration text. Every unknown key, misplaced section or
/// malformed value raises config_error with its line.
[[nodiscard]] inline ExperimentConfig parse_config(const std::string& text)
{
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw config_error(e.msg, e.mark.line + 1);
  }
  // A run manifest carries its configuration under "config".
  if (root.IsMap() && root["manifest_version"]) {
    const YAML::Node inner = root["config"];
    if (!inner) {
      throw config_error("manifest has no 'config' entry", 1);
    }
    return detail::parse_tree(inner);
  }
  return detail::parse_tree(root);
}

[[nodiscard]] inline ExperimentConfig load_config(const std::string& path)
{
  std::ifstream in(path);
  if (!in) {
    throw config_error("cannot read configuration file '" + path + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text of a configuration: every section used by its kind, with
/// all keys explicit. parse_config(to_yaml(c)) == c.
[[nodiscard]] inline std::string to_yaml(const ExperimentConfig& c)
{
  using detail::flow_list;
  const auto& sections = detail::kind_sections().at(c.kind);
  std::ostringstream o;
  o << "kind: " << to_string(c.kind) << '\n';
  if (c.seed) {
    o << "seed: " << *c.seed << '\n';
  }
  if (!c.output_dir.empty()) {
    o << "output_dir: " << detail::yaml_quote(c.output_dir) << '\n';
  }
  o << "plot: " << (c.plot ? "true" : "false") << '\n';
  o << "chain:\n"
    << "  n_sites: " << c.chain.n_sites << '\n'
    << "  coupling: " << format_double(c.chain.coupling) << '\n'
    << "  field_x: " << format_double(c.chain.field_x) << '\n'
    << "  field_z: " << format_double(c.chain.field_z) << '\n'
    << "  max_sites: " << c.chain.max_sites << '\n';
  if (sections.contains("schedule")) {
    o << "schedule:\n"
      << "  n_seq: " << c.schedule.n_seq << '\n'
      << "  tau: " << (c.schedule.tau.per_site ? std::string("N") : format_double(c.schedule.tau.value)) << '\n'
      << "  basis: " << (c.schedule.basis == Basis::Z ? "z" : "x") << '\n'
      << "  readout_site: " << c.schedule.readout_site << '\n';
  }
  const auto grid = [&](const char* name, const GridSpec& g) {
    o << name << ":\n"
      << "  lo: " << format_double(g.lo) << '\n'
      << "  hi: " << format_double(g.hi) << '\n'
      << "  points: " << g.points << '\n';
  };
  if (sections.contains("grid")) {
    grid("grid", c.grid);
  }
  if (sections.contains("grid_z")) {
    grid("grid_z", c.grid_z);
  }
  if (sections.contains("fisher")) {
    o << "fisher:\n"
      << "  delta_b: " << format_double(c.fisher.delta_b) << '\n'
      << "  prune: " << format_double(c.fisher.prune) << '\n'
      << "  sites: " << flow_list(c.fisher.sites) << '\n';
  }
  if (sections.contains("posterior")) {
    o << "posterior:\n"
      << "  m_repeats: " << c.posterior.m_repeats << '\n'
      << "  n_seqs: " << flow_list(c.posterior.n_seqs) << '\n'
      << "  fields: " << flow_list(c.posterior.fields) << '\n'
      << "  samples: " << c.posterior.samples << '\n';
  }
  if (sections.contains("resource")) {
    o << "resource:\n"
      << "  t_init: " << format_double(c.resource.t_init) << '\n'
      << "  t_meas: " << format_double(c.resource.t_meas) << '\n'
      << "  budgets: " << flow_list(c.resource.budgets) << '\n'
      << "  n_seqs: " << flow_list(c.resource.n_seqs) << '\n'
      << "  samples: " << c.resource.samples << '\n';
  }
  if (sections.contains("dephasing")) {
    o << "dephasing:\n"
      << "  gammas: " << flow_list(c.gammas) << '\n';
  }
  if (sections.contains("disorder")) {
    o << "disorder:\n"
      << "  half_widths: " << flow_list(c.disorder.half_widths) << '\n'
      << "  samples: " << c.disorder.samples << '\n'
      << "  resample_per_trajectory: " << (c.disorder.resample_per_trajectory ? "true" : "false") << '\n';
  }
  if (sections.contains("magnetization")) {
    o << "magnetization:\n"
      << "  sites: " << flow_list(c.magnetization.sites) << '\n'
      << "  t_max: " << format_double(c.magnetization.t_max) << '\n'
      << "  points: " << c.magnetization.points << '\n';
  }
  if (sections.contains("collapse")) {
    o << "collapse:\n"
      << "  input: " << detail::yaml_quote(c.collapse_input) << '\n';
  }
  return o.str();
}

/// The canonical configuration as a JSON tree with the same keys.
[[nodiscard]] inline json to_json(const ExperimentConfig& c)
{
  const YAML::Node root = YAML::Load(to_yaml(c));
  const std::function<json(const YAML::Node&)> convert = [&](const YAML::Node& n) -> json {
    if (n.IsMap()) {
      json j = json::object();
      for (const auto& kv : n) {
        j[kv.first.as<std::string>()] = convert(kv.second);
      }
      return j;
    }
    if (n.IsSequence()) {
      json j = json::array();
      for (const auto& item : n) {
        j.push_back(convert(item));
      }
      return j;
    }
    const std::string& s = n.Scalar();
    if (n.Tag() == "!") {
      return s;
    }
    if (s == "true" || s == "false") {
      return s == "true";
    }
    std::uint64_t u = 0;
    if (const auto r = std::from_chars(s.data(), s.data() + s.size(), u); r.ec == std::errc{} && r.ptr == s.data() + s.size()) {
      return u;
    }
    std::int64_t i = 0;
    if (const auto r = std::from_chars(s.data(), s.data() + s.size(), i); r.ec == std::errc{} && r.ptr == s.data() + s.size()) {
      return i;
    }
    double d = 0.0;
    if (const auto r = std::from_chars(s.data(), s.data() + s.size(), d); r.ec == std::errc{} && r.ptr == s.data() + s.size()) {
      return d;
    }
    return s;
  };
  return convert(root);
}

} // namespace seqmag::cli
