#pragma once

#include <seqmag/cli/config.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace seqmag::cli {

/// Malformed CSV input; `line` is 1-based.
class csv_error : public error
{
public:
  csv_error(const std::string& what, int line) : error("line " + std::to_string(line) + ": " + what), line_(line) {}

  [[nodiscard]] int line() const { return line_; }

private:
  int line_;
};

/// Numeric table with a header row.
struct CsvTable
{
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const
  {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw csv_error("no column named '" + name + "'", 1);
    }
    return static_cast<std::size_t>(it - header.begin());
  }

  [[nodiscard]] std::vector<double> values(const std::string& name) const
  {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
      out.push_back(r[c]);
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line)
{
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

} // namespace detail

/// Reads a header row and numeric rows of the same width.
[[nodiscard]] inline CsvTable read_csv(std::istream& in)
{
  CsvTable t;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line == "\r") {
      continue;
    }
    auto cells = detail::split_csv_line(line);
    if (t.header.empty()) {
      for (const auto& c : cells) {
        if (c.empty()) {
          throw csv_error("empty column name in header", number);
        }
      }
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw csv_error("expected " + std::to_string(t.header.size()) + " fields, found " + std::to_string(cells.size()),
                      number);
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      double v = 0.0;
      const auto r = std::from_chars(c.data(), c.data() + c.size(), v);
      if (c.empty() || r.ec != std::errc{} || r.ptr != c.data() + c.size()) {
        throw csv_error("field '" + c + "' is not a number", number);
      }
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) {
    throw csv_error("file has no header row", std::max(number, 1));
  }
  if (t.rows.empty()) {
    throw csv_error("file has no data rows", number);
  }
  return t;
}

enum class PlotType
{
  line,
  scatter,
  heatmap
};

struct PlotSpec
{
  PlotType type = PlotType::line;
  std::string x;
  /// One series per column (line, scatter); the colour column of a heatmap
  /// is `z`.
  std::vector<std::string> y;
  std::string z;
  /// Splits the rows into one series per distinct value of this column.
  std::string group;
  bool log_x = false;
  bool log_y = false;
  std::string title;
  int width = 640;
  int height = 420;
};

/// Parses a plot spec file: type, x, y (name or list), z, group, log_x,
/// log_y, title, width, height.
[[nodiscard]] inline PlotSpec parse_plot_spec(const std::string& text)
{
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw config_error(e.msg, e.mark.line + 1);
  }
  PlotSpec s;
  detail::each_key(root, "plot spec", {"type", "x", "y", "z", "group", "log_x", "log_y", "title", "width", "height"},
                   [&](const std::string& k, const YAML::Node& v) {
                     if (k == "type") {
                       const auto t = detail::scalar<std::string>(v, k);
                       if (t == "line") {
                         s.type = PlotType::line;
                       } else if (t == "scatter") {
                         s.type = PlotType::scatter;
                       } else if (t == "heatmap") {
                         s.type = PlotType::heatmap;
                       } else {
                         throw config_error("type must be line, scatter or heatmap", detail::line_of(v));
                       }
                     } else if (k == "x") {
                       s.x = detail::scalar<std::string>(v, k);
                     } else if (k == "y") {
                       s.y = v.IsSequence() ? detail::sequence<std::string>(v, k)
                                            : std::vector<std::string>{detail::scalar<std::string>(v, k)};
                     } else if (k == "z") {
                       s.z = detail::scalar<std::string>(v, k);
                     } else if (k == "group") {
                       s.group = detail::scalar<std::string>(v, k);
                     } else if (k == "log_x") {
                       s.log_x = detail::scalar<bool>(v, k);
                     } else if (k == "log_y") {
                       s.log_y = detail::scalar<bool>(v, k);
                     } else if (k == "title") {
                       s.title = detail::scalar<std::string>(v, k);
                     } else if (k == "width") {
                       s.width = detail::scalar<int>(v, k);
                     } else {
                       s.height = detail::scalar<int>(v, k);
                     }
                   });
  if (s.x.empty() || s.y.empty()) {
    throw config_error("plot spec needs x and y", 1);
  }
  if (s.type == PlotType::heatmap && s.z.empty()) {
    throw config_error("heatmap spec needs z", 1);
  }
  if (s.width < 200 || s.height < 150) {
    throw config_error("plot must be at least 200 x 150", 1);
  }
  return s;
}

namespace detail {

inline std::string fmt(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string xml_escape(const std::string& s)
{
  std::string out;
  for (char ch : s) {
    switch (ch) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += ch;
    }
  }
  return out;
}

inline constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                     "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};

/// Piecewise-linear approximation of the viridis map, u in [0, 1].
inline std::string viridis(double u)
{
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {68, 1, 84},
      {59, 82, 139},
      {33, 145, 140},
      {94, 201, 98},
      {253, 231, 37},
  }};
  u = std::clamp(std::isfinite(u) ? u : 0.0, 0.0, 1.0);
  const double pos = u * 4.0;
  const auto i = std::min<std::size_t>(3, static_cast<std::size_t>(pos));
  const double f = pos - static_cast<double>(i);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x",
                static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
  return buf;
}

/// Axis mapping a data range onto pixels, linear or base-10 logarithmic.
struct Axis
{
  double lo = 0.0;
  double hi = 1.0;
  bool log = false;
  double p0 = 0.0;
  double p1 = 1.0;

  [[nodiscard]] double map(double v) const
  {
    const double a = log ? std::log10(lo) : lo;
    const double b = log ? std::log10(hi) : hi;
    const double x = log ? std::log10(v) : v;
    return p0 + (x - a) / (b - a) * (p1 - p0);
  }

  [[nodiscard]] std::vector<double> ticks() const
  {
    std::vector<double> out;
    if (log) {
      const bool narrow = std::log10(hi / lo) < 2.5;
      for (double e = std::floor(std::log10(lo)); e <= std::ceil(std::log10(hi)); e += 1.0) {
        for (double m : {1.0, 2.0, 5.0}) {
          const double t = m * std::pow(10.0, e);
          if ((m == 1.0 || narrow) && t >= lo * (1 - 1e-12) && t <= hi * (1 + 1e-12)) {
            out.push_back(t);
          }
        }
      }
      if (out.size() < 2) {
        out = {lo, hi};
      }
      return out;
    }
    const double raw = (hi - lo) / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
      if (m * mag >= raw) {
        step = m * mag;
        break;
      }
    }
    for (double t = std::ceil(lo / step - 1e-9) * step; t <= hi + step * 1e-9; t += step) {
      out.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    }
    return out;
  }
};

inline Axis make_axis(const std::vector<double>& v, bool log, double p0, double p1, const std::string& name)
{
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double x : v) {
    if (!std::isfinite(x) || (log && !(x > 0.0))) {
      continue;
    }
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (!(lo <= hi)) {
    throw csv_error("column '" + name + "' has no plottable values", 1);
  }
  if (lo == hi) {
    if (log) {
      lo /= 2.0;
      hi *= 2.0;
    } else {
      lo -= 0.5 * std::max(1.0, std::abs(lo));
      hi += 0.5 * std::max(1.0, std::abs(hi));
    }
  }
  return Axis{lo, hi, log, p0, p1};
}

struct Frame
{
  double left = 70.0;
  double right = 20.0;
  double top = 36.0;
  double bottom = 50.0;
};

inline void draw_axes(std::string& svg, const PlotSpec& spec, const Axis& ax, const Axis& ay, const std::string& xlabel,
                      const std::string& ylabel)
{
  svg += "<rect x=\"" + fmt(ax.p0) + "\" y=\"" + fmt(ay.p1) + "\" width=\"" + fmt(ax.p1 - ax.p0) + "\" height=\""
         + fmt(ay.p0 - ay.p1) + "\" fill=\"none\" stroke=\"#000\"/>\n";
  for (double t : ax.ticks()) {
    const double px = ax.map(t);
    svg += "<line x1=\"" + fmt(px) + "\" y1=\"" + fmt(ay.p0) + "\" x2=\"" + fmt(px) + "\" y2=\"" + fmt(ay.p0 + 5)
           + "\" stroke=\"#000\"/>\n";
    svg += "<text x=\"" + fmt(px) + "\" y=\"" + fmt(ay.p0 + 18) + "\" text-anchor=\"middle\">" + tick_label(t)
           + "</text>\n";
  }
  for (double t : ay.ticks()) {
    const double py = ay.map(t);
    svg += "<line x1=\"" + fmt(ax.p0 - 5) + "\" y1=\"" + fmt(py) + "\" x2=\"" + fmt(ax.p0) + "\" y2=\"" + fmt(py)
           + "\" stroke=\"#000\"/>\n";
    svg += "<text x=\"" + fmt(ax.p0 - 8) + "\" y=\"" + fmt(py + 4) + "\" text-anchor=\"end\">" + tick_label(t)
           + "</text>\n";
  }
  svg += "<text x=\"" + fmt(0.5 * (ax.p0 + ax.p1)) + "\" y=\"" + fmt(ay.p0 + 40)
         + "\" text-anchor=\"middle\">" + xml_escape(xlabel) + "</text>\n";
  svg += "<text x=\"16\" y=\"" + fmt(0.5 * (ay.p0 + ay.p1)) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
         + fmt(0.5 * (ay.p0 + ay.p1)) + ")\">" + xml_escape(ylabel) + "</text>\n";
  if (!spec.title.empty()) {
    svg += "<text x=\"" + fmt(0.5 * spec.width) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
           + xml_escape(spec.title) + "</text>\n";
  }
}

inline std::string header(const PlotSpec& spec)
{
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(spec.width) + "\" height=\""
         + std::to_string(spec.height) + "\" viewBox=\"0 0 " + std::to_string(spec.width) + " "
         + std::to_string(spec.height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n"
         + "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n";
}

inline std::string render_series(const CsvTable& t, const PlotSpec& spec)
{
  const Frame f;
  const auto xs = t.values(spec.x);
  std::vector<double> all_y;
  for (const auto& name : spec.y) {
    const auto v = t.values(name);
    all_y.insert(all_y.end(), v.begin(), v.end());
  }
  const Axis ax = make_axis(xs, spec.log_x, f.left, spec.width - f.right, spec.x);
  const Axis ay = make_axis(all_y, spec.log_y, spec.height - f.bottom, f.top, spec.y.front());

  // Series keyed by (y column, group value), in first-appearance order.
  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
  std::map<std::string, std::size_t> index;
  const std::size_t gcol = spec.group.empty() ? 0 : t.column(spec.group);
  for (const auto& name : spec.y) {
    const std::size_t ycol = t.column(name);
    for (const auto& r : t.rows) {
      std::string label = spec.y.size() > 1 || spec.group.empty() ? name : "";
      if (!spec.group.empty()) {
        label += (label.empty() ? "" : " ") + spec.group + "=" + tick_label(r[gcol]);
      }
      auto [it, fresh] = index.try_emplace(label, series.size());
      if (fresh) {
        series.emplace_back(label, std::vector<std::pair<double, double>>{});
      }
      const double x = r[t.column(spec.x)];
      const double y = r[ycol];
      if (std::isfinite(x) && std::isfinite(y) && (!spec.log_x || x > 0.0) && (!spec.log_y || y > 0.0)) {
        series[it->second].second.emplace_back(x, y);
      }
    }
  }

  std::string svg = header(spec);
  draw_axes(svg, spec, ax, ay, spec.x, spec.y.size() == 1 ? spec.y.front() : "");
  for (std::size_t s = 0; s < series.size(); ++s) {
    const std::string colour = kPalette[s % kPalette.size()];
    const auto& pts = series[s].second;
    if (spec.type == PlotType::line) {
      svg += "<polyline fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < pts.size(); ++i) {
        svg += (i > 0 ? " " : "") + fmt(ax.map(pts[i].first)) + "," + fmt(ay.map(pts[i].second));
      }
      svg += "\"/>\n";
    } else {
      for (const auto& [x, y] : pts) {
        svg += "<circle cx=\"" + fmt(ax.map(x)) + "\" cy=\"" + fmt(ay.map(y)) + "\" r=\"2.5\" fill=\"" + colour
               + "\"/>\n";
      }
    }
    if (series.size() > 1) {
      const double ly = f.top + 14.0 * static_cast<double>(s) + 10.0;
      svg += "<line x1=\"" + fmt(spec.width - f.right - 110) + "\" y1=\"" + fmt(ly) + "\" x2=\""
             + fmt(spec.width - f.right - 94) + "\" y2=\"" + fmt(ly) + "\" stroke=\"" + colour
             + "\" stroke-width=\"2\"/>\n";
      svg += "<text x=\"" + fmt(spec.width - f.right - 90) + "\" y=\"" + fmt(ly + 4) + "\">"
             + xml_escape(series[s].first) + "</text>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

inline std::string render_heatmap(const CsvTable& t, const PlotSpec& spec)
{
  Frame f;
  f.right = 90.0;
  const auto xs = t.values(spec.x);
  const auto ys = t.values(spec.y.front());
  const auto zs = t.values(spec.z);
  std::vector<double> ux = xs;
  std::vector<double> uy = ys;
  for (auto* u : {&ux, &uy}) {
    std::sort(u->begin(), u->end());
    u->erase(std::unique(u->begin(), u->end()), u->end());
    if (u->size() < 2) {
      throw csv_error("heatmap needs at least two distinct values per axis", 2);
    }
  }
  const auto half_step = [](const std::vector<double>& u, bool front) {
    return 0.5 * (front ? u[1] - u[0] : u[u.size() - 1] - u[u.size() - 2]);
  };
  Axis ax{ux.front() - half_step(ux, true), ux.back() + half_step(ux, false), false, f.left, spec.width - f.right};
  Axis ay{uy.front() - half_step(uy, true), uy.back() + half_step(uy, false), false, spec.height - f.bottom, f.top};
  double zlo = std::numeric_limits<double>::infinity();
  double zhi = -zlo;
  for (double z : zs) {
    if (std::isfinite(z)) {
      zlo = std::min(zlo, z);
      zhi = std::max(zhi, z);
    }
  }
  if (!(zlo <= zhi)) {
    throw csv_error("column '" + spec.z + "' has no finite values", 2);
  }
  const double zspan = zhi > zlo ? zhi - zlo : 1.0;

  std::string svg = header(spec);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto ix = static_cast<std::size_t>(std::lower_bound(ux.begin(), ux.end(), xs[i]) - ux.begin());
    const auto iy = static_cast<std::size_t>(std::lower_bound(uy.begin(), uy.end(), ys[i]) - uy.begin());
    const double x0 = ix == 0 ? ax.lo : 0.5 * (ux[ix - 1] + ux[ix]);
    const double x1 = ix + 1 == ux.size() ? ax.hi : 0.5 * (ux[ix] + ux[ix + 1]);
    const double y0 = iy == 0 ? ay.lo : 0.5 * (uy[iy - 1] + uy[iy]);
    const double y1 = iy + 1 == uy.size() ? ay.hi : 0.5 * (uy[iy] + uy[iy + 1]);
    svg += "<rect x=\"" + fmt(ax.map(x0)) + "\" y=\"" + fmt(ay.map(y1)) + "\" width=\""
           + fmt(ax.map(x1) - ax.map(x0)) + "\" height=\"" + fmt(ay.map(y0) - ay.map(y1)) + "\" fill=\""
           + viridis((zs[i] - zlo) / zspan) + "\" shape-rendering=\"crispEdges\"/>\n";
  }
  draw_axes(svg, spec, ax, ay, spec.x, spec.y.front());

  // Colour bar.
  const double bx = spec.width - f.right + 20.0;
  const int steps = 32;
  const double bh = (ay.p0 - ay.p1) / steps;
  for (int k = 0; k < steps; ++k) {
    svg += "<rect x=\"" + fmt(bx) + "\" y=\"" + fmt(ay.p1 + bh * k) + "\" width=\"14\" height=\"" + fmt(bh + 0.01)
           + "\" fill=\"" + viridis(1.0 - (k + 0.5) / steps) + "\" shape-rendering=\"crispEdges\"/>\n";
  }
  svg += "<rect x=\"" + fmt(bx) + "\" y=\"" + fmt(ay.p1) + "\" width=\"14\" height=\"" + fmt(ay.p0 - ay.p1)
         + "\" fill=\"none\" stroke=\"#000\"/>\n";
  svg += "<text x=\"" + fmt(bx + 18) + "\" y=\"" + fmt(ay.p1 + 4) + "\">" + tick_label(zhi) + "</text>\n";
  svg += "<text x=\"" + fmt(bx + 18) + "\" y=\"" + fmt(ay.p0 + 4) + "\">" + tick_label(zlo) + "</text>\n";
  svg += "<text x=\"" + fmt(bx + 7) + "\" y=\"" + fmt(ay.p1 - 8) + "\" text-anchor=\"middle\">"
         + xml_escape(spec.z) + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

} // namespace detail

/// SVG text of `table` drawn per `spec`; a pure function of its inputs.
[[nodiscard]] inline std::string render_svg(const CsvTable& table, const PlotSpec& spec)
{
  for (const auto& name : spec.y) {
    (void)table.column(name);
  }
  (void)table.column(spec.x);
  return spec.type == PlotType::heatmap ? detail::render_heatmap(table, spec) : detail::render_series(table, spec);
}

} // namespace seqmag::cli
