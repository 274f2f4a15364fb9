#pragma once

// Log-likelihood table and SVG scatter figures. Every figure is written
// with a CSV twin holding the plotted coordinates and colors.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "radflow/data.hpp"
#include "radflow/format.hpp"
#include "radflow/model.hpp"

namespace radflow {

// ---------------------------------------------------------------- table

struct LlResults {
  std::map<std::pair<Problem, ModelKind>, double> cells;  // mean test LL in nats

  void set(Problem p, ModelKind m, double ll) { cells[{p, m}] = ll; }
  std::optional<double> get(Problem p, ModelKind m) const {
    const auto it = cells.find({p, m});
    if (it == cells.end()) return std::nullopt;
    return it->second;
  }
  std::optional<double> gap(Problem p) const {
    const auto rad = get(p, ModelKind::kRad);
    const auto nvp = get(p, ModelKind::kRealNvp);
    if (!rad || !nvp) return std::nullopt;
    return *rad - *nvp;
  }
};

inline constexpr const char* kMissingCell = "—";

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// Aligned text table: one row per problem, RAD and Real NVP test LL and the
/// RAD minus Real NVP gap.
inline std::string ll_table(const LlResults& results) {
  const std::vector<std::string> header = {"problem", "rad", "realnvp", "gap"};
  std::vector<std::vector<std::string>> rows;
  for (const auto p : kAllProblems) {
    auto cell = [](std::optional<double> v) { return v ? fixed2(*v) : std::string(kMissingCell); };
    rows.push_back({to_string(p), cell(results.get(p, ModelKind::kRad)), cell(results.get(p, ModelKind::kRealNvp)),
                    cell(results.gap(p))});
  }
  // Column widths count code points so the dash marker aligns.
  auto width = [](const std::string& s) {
    std::size_t n = 0;
    for (const unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
  };
  std::vector<std::size_t> widths(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    widths[c] = width(header[c]);
    for (const auto& r : rows) widths[c] = std::max(widths[c], width(r[c]));
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      const std::string pad(widths[c] - width(r[c]), ' ');
      out << (c == 0 ? r[c] + pad : "  " + pad + r[c]);
    }
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return out.str();
}

inline std::string ll_table_csv(const LlResults& results) {
  std::ostringstream out;
  out << "problem,rad,realnvp,gap\n";
  auto cell = [](std::optional<double> v) { return v ? format_double(*v) : std::string(kMissingCell); };
  for (const auto p : kAllProblems) {
    out << to_string(p) << ',' << cell(results.get(p, ModelKind::kRad)) << ','
        << cell(results.get(p, ModelKind::kRealNvp)) << ',' << cell(results.gap(p)) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------- figures

enum class FigureKind { kSamples, kGaussianization, kFolding, kData };

inline std::string to_string(FigureKind k) {
  switch (k) {
    case FigureKind::kSamples: return "samples";
    case FigureKind::kGaussianization: return "gaussianization";
    case FigureKind::kFolding: return "folding";
    case FigureKind::kData: return "data";
  }
  return "?";
}

inline FigureKind parse_figure_kind(const std::string& s) {
  for (const auto k : {FigureKind::kSamples, FigureKind::kGaussianization, FigureKind::kFolding, FigureKind::kData}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown figure kind '" + s + "' (expected samples, gaussianization, folding or data)");
}

struct Range {
  double lo = -1.0;
  double hi = 1.0;
};

struct FigureSpec {
  FigureKind kind = FigureKind::kSamples;
  double point_size = 1.5;
  std::optional<Range> x_range;  // fitted to the points when absent
  std::optional<Range> y_range;
};

inline constexpr const char* kBranchColors[] = {"#000000", "#d62728", "#2ca02c", "#1f77b4"};  // index = label, 0 = out of band

struct Polyline {
  std::vector<Point> points;
  bool dashed = false;
};

struct Figure {
  std::string title;
  FigureSpec spec;
  std::vector<Point> points;
  std::vector<std::string> colors;  // one per point
  std::vector<double> circles;      // radii around the origin
  std::vector<Polyline> lines;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline Range fit_range(const std::vector<Point>& pts, int axis) {
  if (pts.empty()) return {};
  double lo = pts.front()[axis];
  double hi = lo;
  for (const auto& p : pts) {
    if (!std::isfinite(p[axis])) continue;
    lo = std::min(lo, p[axis]);
    hi = std::max(hi, p[axis]);
  }
  const double pad = std::max(0.05 * (hi - lo), 1e-6);
  return {lo - pad, hi + pad};
}

}  // namespace detail

inline std::string render_svg(const Figure& fig) {
  constexpr double size = 480.0;
  constexpr double margin = 24.0;
  std::vector<Point> extent = fig.points;
  for (const double r : fig.circles) {
    extent.push_back({-r, -r});
    extent.push_back({r, r});
  }
  const Range xr = fig.spec.x_range.value_or(detail::fit_range(extent, 0));
  const Range yr = fig.spec.y_range.value_or(detail::fit_range(extent, 1));
  const double span = size - 2 * margin;
  auto px = [&](double x) { return margin + (x - xr.lo) / (xr.hi - xr.lo) * span; };
  auto py = [&](double y) { return size - margin - (y - yr.lo) / (yr.hi - yr.lo) * span; };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << ' ' << size << "\">\n"
      << "<title>" << fig.title << "</title>\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << size << "\" height=\"" << size << "\" fill=\"#ffffff\"/>\n"
      << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << span << "\" height=\"" << span
      << "\" fill=\"none\" stroke=\"#999999\" stroke-width=\"0.5\"/>\n";
  out << "<g stroke=\"#444444\" stroke-width=\"0.8\" fill=\"none\">\n";
  for (const double r : fig.circles) {
    out << "<ellipse cx=\"" << detail::num(px(0)) << "\" cy=\"" << detail::num(py(0)) << "\" rx=\""
        << detail::num(r / (xr.hi - xr.lo) * span) << "\" ry=\"" << detail::num(r / (yr.hi - yr.lo) * span)
        << "\"/>\n";
  }
  for (const auto& line : fig.lines) {
    out << "<polyline points=\"";
    for (std::size_t i = 0; i < line.points.size(); ++i) {
      out << (i ? " " : "") << detail::num(px(line.points[i][0])) << ',' << detail::num(py(line.points[i][1]));
    }
    out << '"' << (line.dashed ? " stroke-dasharray=\"4 3\"" : "") << "/>\n";
  }
  out << "</g>\n<g stroke=\"none\">\n";
  for (std::size_t i = 0; i < fig.points.size(); ++i) {
    const auto& p = fig.points[i];
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) continue;
    out << "<circle cx=\"" << detail::num(px(p[0])) << "\" cy=\"" << detail::num(py(p[1])) << "\" r=\""
        << detail::num(fig.spec.point_size) << "\" fill=\"" << fig.colors[i] << "\"/>\n";
  }
  out << "</g>\n</svg>\n";
  return out.str();
}

inline std::string render_csv(const Figure& fig) {
  std::ostringstream out;
  out << "x,y,color\n";
  for (std::size_t i = 0; i < fig.points.size(); ++i) {
    out << format_double(fig.points[i][0]) << ',' << format_double(fig.points[i][1]) << ',' << fig.colors[i] << '\n';
  }
  return out.str();
}

/// Writes <dir>/figures/<stem>.svg and its CSV twin; returns the SVG path.
inline std::filesystem::path write_figure(const std::filesystem::path& dir, const std::string& stem,
                                          const Figure& fig) {
  const auto figures = dir / "figures";
  std::filesystem::create_directories(figures);
  const auto svg_path = figures / (stem + ".svg");
  std::ofstream svg(svg_path, std::ios::binary);
  svg << render_svg(fig);
  std::ofstream csv(figures / (stem + ".csv"), std::ios::binary);
  csv << render_csv(fig);
  if (!svg || !csv) throw std::runtime_error("cannot write figure " + svg_path.string());
  return svg_path;
}

/// Color as a pure function of input-space position: x drives red, y blue.
inline std::string position_color(const Point& p) {
  auto channel = [](double v) { return static_cast<int>(std::lround(255.0 * (0.5 + 0.5 * std::tanh(v / 3.0)))); };
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", channel(p[0]), 96, channel(p[1]));
  return buf;
}

inline Figure data_figure(const std::vector<Point>& data, const std::string& title) {
  Figure fig;
  fig.title = title;
  fig.spec.kind = FigureKind::kData;
  fig.points = data;
  fig.colors.assign(data.size(), "#1f77b4");
  return fig;
}

template <typename Rng>
Figure samples_figure(const FlowModel& model, std::size_t n, Rng& rng) {
  Figure fig;
  fig.title = "model samples";
  fig.spec.kind = FigureKind::kSamples;
  for (const auto& s : model.sample(n, rng)) fig.points.push_back({s.x[0], s.x[1]});
  fig.colors.assign(fig.points.size(), "#1f77b4");
  return fig;
}

/// Final latent of every data point, colored by where it started, over the
/// standard normal level circles at radii 1, 2 and 3.
inline Figure gaussianization_figure(const FlowModel& model, const std::vector<Point>& data) {
  Figure fig;
  fig.title = "gaussianization";
  fig.spec.kind = FigureKind::kGaussianization;
  fig.circles = {1.0, 2.0, 3.0};
  for (const auto& x : data) {
    const auto t = model.trace(x);
    fig.points.push_back({t.latent()[0], t.latent()[1]});
    fig.colors.push_back(position_color(x));
  }
  return fig;
}

struct FoldingFigures {
  Figure input;
  Figure output;
};

/// Points entering and leaving RAD layer `layer`, colored by branch label
/// where the folded coordinate lands in the band and black elsewhere. The
/// output side carries dashed guides at the band edges.
inline FoldingFigures folding_figures(const FlowModel& model, const std::vector<Point>& data, std::size_t layer) {
  if (layer >= model.layers().size()) throw StructuralFault("folding: layer index out of range");
  const auto* rad = std::get_if<RadCoupling>(&model.layers()[layer]);
  if (rad == nullptr) throw StructuralFault("folding: layer " + std::to_string(layer) + " is not a RAD layer");
  if (model.dim() != 2) throw StructuralFault("folding: only 2-D models are supported");
  FoldingFigures figs;
  figs.input.title = "layer " + std::to_string(layer) + " input";
  figs.output.title = "layer " + std::to_string(layer) + " output";
  figs.input.spec.kind = figs.output.spec.kind = FigureKind::kFolding;
  double pass_lo = std::numeric_limits<double>::infinity();
  double pass_hi = -pass_lo;
  const std::size_t pass = rad->split().pass[0];
  for (const auto& x : data) {
    const auto t = model.trace(x);
    const auto& in = layer == 0 ? t.x : t.layers[layer - 1].z;
    const auto& rec = t.layers[layer];
    const std::string color = rec.in_band[0] ? kBranchColors[rec.k[0]] : kBranchColors[0];
    figs.input.points.push_back({in[0], in[1]});
    figs.input.colors.push_back(color);
    figs.output.points.push_back({rec.z[0], rec.z[1]});
    figs.output.colors.push_back(color);
    pass_lo = std::min(pass_lo, in[pass]);
    pass_hi = std::max(pass_hi, in[pass]);
  }
  if (!data.empty()) {
    // Band half-width alpha2 * beta as a function of the pass-through value.
    Polyline upper{{}, true};
    Polyline lower{{}, true};
    const std::size_t steps = 200;
    for (std::size_t i = 0; i <= steps; ++i) {
      const double v = pass_lo + (pass_hi - pass_lo) * static_cast<double>(i) / steps;
      const double band = rad->fold_params<double>(model.params(), std::vector<double>{v})[0].band();
      if (pass == 0) {
        upper.points.push_back({v, band});
        lower.points.push_back({v, -band});
      } else {
        upper.points.push_back({band, v});
        lower.points.push_back({-band, v});
      }
    }
    figs.output.lines = {upper, lower};
  }
  return figs;
}

}  // namespace radflow
