#pragma once

#include <seqmag/protocol.hpp>

#include <json.hpp>

#include <charconv>
#include <ostream>
#include <string>
#include <vector>

namespace seqmag {

using json = nlohmann::ordered_json;

/// Shortest decimal text that parses back to the same double.
[[nodiscard]] inline std::string format_double(double x)
{
  if (std::isnan(x)) {
    return "nan";
  }
  if (std::isinf(x)) {
    return x > 0 ? "inf" : "-inf";
  }
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// Minimal CSV emitter: a header row, then rows of preformatted cells.
class CsvWriter
{
public:
  CsvWriter(std::ostream& os, const std::vector<std::string>& header) : os_(os), width_(header.size())
  {
    row_strings(header);
  }

  template <typename... Cells>
  void row(const Cells&... cells)
  {
    static_assert(sizeof...(Cells) > 0);
    std::vector<std::string> out;
    (out.push_back(cell(cells)), ...);
    row_strings(out);
  }

  void row_strings(const std::vector<std::string>& cells)
  {
    if (cells.size() != width_) {
      throw invalid_argument_error("csv row width differs from header");
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) {
        os_ << ',';
      }
      os_ << cells[i];
    }
    os_ << '\n';
  }

private:
  static std::string cell(double x) { return format_double(x); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  template <typename I>
    requires std::is_integral_v<I>
  static std::string cell(I x)
  {
    return std::to_string(x);
  }

  std::ostream& os_;
  std::size_t width_;
};

[[nodiscard]] inline json to_json(const SpinChainParams& p)
{
  json j;
  j["n_sites"] = p.n_sites;
  j["coupling"] = p.coupling;
  j["field_x"] = p.field_x;
  j["field_z"] = p.field_z;
  json offs = json::array();
  for (const auto& o : p.bond_offsets) {
    offs.push_back(json::array({o.x, o.y, o.z}));
  }
  j["bond_offsets"] = offs;
  return j;
}

[[nodiscard]] inline json to_json(const MeasurementSchedule& s)
{
  json j;
  j["intervals"] = s.intervals;
  j["basis"] = to_string(s.basis);
  j["readout_site"] = s.readout_site;
  return j;
}

/// CSV with columns (outcome, probability).
inline void write_csv(std::ostream& os, const TrajectoryDistribution& d)
{
  CsvWriter w(os, {"outcome", "probability"});
  for (std::uint64_t i = 0; i < d.probabilities.size(); ++i) {
    w.row(d.label(i), d.probabilities[i]);
  }
}

/// CSV with columns (outcome, count), distinct outcomes only.
inline void write_csv(std::ostream& os, const TrajectoryDataset& ds)
{
  CsvWriter w(os, {"outcome", "count"});
  for (const auto& [idx, k] : ds.counts) {
    w.row(outcome_label(idx, ds.n_seq, ds.basis), k);
  }
}

[[nodiscard]] inline json to_json(const TrajectoryDistribution& d)
{
  json j;
  j["params"] = to_json(d.params);
  j["schedule"] = to_json(d.schedule);
  j["n_seq"] = d.n_seq;
  j["pruned_mass"] = d.pruned_mass;
  json probs = json::object();
  for (std::uint64_t i = 0; i < d.probabilities.size(); ++i) {
    probs[d.label(i)] = d.probabilities[i];
  }
  j["probabilities"] = probs;
  return j;
}

[[nodiscard]] inline json to_json(const TrajectoryDataset& ds, const SpinChainParams& params,
                                  const MeasurementSchedule& schedule)
{
  json j;
  j["params"] = to_json(params);
  j["schedule"] = to_json(schedule);
  j["seed"] = ds.seed;
  j["m_repeats"] = ds.size();
  json counts = json::object();
  for (const auto& [idx, k] : ds.counts) {
    counts[outcome_label(idx, ds.n_seq, ds.basis)] = k;
  }
  j["counts"] = counts;
  return j;
}

} // namespace seqmag
