#pragma once

// The six 2-D toy problems, their mixture-density oracles and a plain CSV
// format ("x,y" per line, no header).

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "radflow/format.hpp"

namespace radflow {

enum class Problem { kGridGmm, kRingGmm, kTwoMoons, kTwoCircles, kSpiral, kManyMoons };

inline constexpr std::array<Problem, 6> kAllProblems = {Problem::kGridGmm,    Problem::kRingGmm, Problem::kTwoMoons,
                                                        Problem::kTwoCircles, Problem::kSpiral,  Problem::kManyMoons};

inline std::string to_string(Problem p) {
  switch (p) {
    case Problem::kGridGmm: return "grid-gmm";
    case Problem::kRingGmm: return "ring-gmm";
    case Problem::kTwoMoons: return "two-moons";
    case Problem::kTwoCircles: return "two-circles";
    case Problem::kSpiral: return "spiral";
    case Problem::kManyMoons: return "many-moons";
  }
  return "?";
}

inline Problem parse_problem(const std::string& name) {
  for (const auto p : kAllProblems) {
    if (to_string(p) == name) return p;
  }
  throw std::invalid_argument("unknown problem '" + name +
                              "' (expected grid-gmm, ring-gmm, two-moons, two-circles, spiral or many-moons)");
}

using Point = std::array<double, 2>;

struct SampleBatch {
  std::vector<Point> points;
  std::vector<int> labels;  // mixture component, moon or circle index; empty when loaded from CSV
};

struct DatasetSpec {
  Problem problem = Problem::kGridGmm;
  std::size_t n = 10000;
  std::uint64_t seed = 0;
  std::optional<double> noise;  // overrides the problem's default noise scale

  double noise_scale() const;
};

inline double default_noise(Problem p) {
  switch (p) {
    case Problem::kGridGmm:
    case Problem::kRingGmm: return 0.1;
    case Problem::kSpiral: return 0.01;
    default: return 0.05;
  }
}

inline double DatasetSpec::noise_scale() const { return noise.value_or(default_noise(problem)); }

inline constexpr double kRingRadius = 3.0;
inline constexpr int kRingComponents = 8;
inline constexpr int kGridSide = 5;
inline constexpr double kGridSpacing = 2.0;
inline constexpr double kInnerCircleRadius = 0.5;
inline constexpr int kManyMoonsCount = 6;

inline Point grid_mean(int component) {
  const int half = kGridSide / 2;
  return {kGridSpacing * (component / kGridSide - half), kGridSpacing * (component % kGridSide - half)};
}

inline Point ring_mean(int component) {
  const double angle = 2.0 * std::numbers::pi * component / kRingComponents;
  return {kRingRadius * std::cos(angle), kRingRadius * std::sin(angle)};
}

/// Noise-free point on moon 0 (upper arc) or moon 1 (lower, shifted arc),
/// t in [0, pi].
inline Point two_moons_point(int moon, double t) {
  if (moon == 0) return {std::cos(t), std::sin(t)};
  return {1.0 - std::cos(t), 0.5 - std::sin(t)};
}

inline Point circle_point(int circle, double t) {
  const double r = circle == 0 ? 1.0 : kInnerCircleRadius;
  return {r * std::cos(t), r * std::sin(t)};
}

/// Spiral at u in [0, 1]: t = 3 pi sqrt(u), (t cos t, t sin t) / (3 pi).
inline Point spiral_point(double u) {
  const double t = 3.0 * std::numbers::pi * std::sqrt(u);
  return {t * std::cos(t) / (3.0 * std::numbers::pi), t * std::sin(t) / (3.0 * std::numbers::pi)};
}

/// Unit half-moon j, rotated by 2 pi j / 6 and centered on the radius-3 ring.
inline Point many_moons_point(int moon, double t) {
  const double angle = 2.0 * std::numbers::pi * moon / kManyMoonsCount;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double ax = std::cos(t);
  const double ay = std::sin(t);
  return {kRingRadius * c + c * ax - s * ay, kRingRadius * s + s * ax + c * ay};
}

inline SampleBatch generate(const DatasetSpec& spec) {
  const double sigma = spec.noise_scale();
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("generate: noise scale must be >= 0");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto pick = [&](int count) { return std::uniform_int_distribution<int>(0, count - 1)(rng); };

  SampleBatch batch;
  batch.points.reserve(spec.n);
  batch.labels.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Point p{};
    int label = 0;
    switch (spec.problem) {
      case Problem::kGridGmm:
        label = pick(kGridSide * kGridSide);
        p = grid_mean(label);
        break;
      case Problem::kRingGmm:
        label = pick(kRingComponents);
        p = ring_mean(label);
        break;
      case Problem::kTwoMoons:
        label = pick(2);
        p = two_moons_point(label, std::numbers::pi * unit(rng));
        break;
      case Problem::kTwoCircles:
        label = pick(2);
        p = circle_point(label, 2.0 * std::numbers::pi * unit(rng));
        break;
      case Problem::kSpiral:
        p = spiral_point(unit(rng));
        break;
      case Problem::kManyMoons:
        label = pick(kManyMoonsCount);
        p = many_moons_point(label, std::numbers::pi * unit(rng));
        break;
    }
    p[0] += sigma * normal(rng);
    p[1] += sigma * normal(rng);
    batch.points.push_back(p);
    batch.labels.push_back(label);
  }
  return batch;
}

/// Log-density of the isotropic mixture with equal weights.
inline double mixture_log_density(const Point& x, const std::vector<Point>& means, double sigma) {
  const double log_norm = -std::log(2.0 * std::numbers::pi * sigma * sigma) - std::log(static_cast<double>(means.size()));
  double m = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(means.size());
  for (const auto& mu : means) {
    const double dx = x[0] - mu[0];
    const double dy = x[1] - mu[1];
    terms.push_back(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    m = std::max(m, terms.back());
  }
  double sum = 0.0;
  for (const double t : terms) sum += std::exp(t - m);
  return log_norm + m + std::log(sum);
}

inline std::vector<Point> mixture_means(Problem p) {
  std::vector<Point> means;
  if (p == Problem::kGridGmm) {
    for (int c = 0; c < kGridSide * kGridSide; ++c) means.push_back(grid_mean(c));
  } else if (p == Problem::kRingGmm) {
    for (int c = 0; c < kRingComponents; ++c) means.push_back(ring_mean(c));
  }
  return means;
}

/// Mean log-density of `points` under the true data distribution, for the
/// two Gaussian mixtures; nullopt for the other problems.
inline std::optional<double> true_log_likelihood(const DatasetSpec& spec, const std::vector<Point>& points) {
  const auto means = mixture_means(spec.problem);
  if (means.empty()) return std::nullopt;
  if (points.empty()) return 0.0;
  const double sigma = spec.noise_scale();
  double total = 0.0;
  for (const auto& x : points) total += mixture_log_density(x, means, sigma);
  return total / static_cast<double>(points.size());
}

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_csv(std::ostream& out, const std::vector<Point>& points) {
  for (const auto& p : points) out << format_double(p[0]) << ',' << format_double(p[1]) << '\n';
}

inline std::vector<Point> read_csv(std::istream& in) {
  std::vector<Point> points;
  std::string line;
  std::size_t line_no = 0;
  auto parse = [&](std::string_view field) {
    double v = 0.0;
    const auto r = std::from_chars(field.data(), field.data() + field.size(), v);
    if (r.ec != std::errc() || r.ptr != field.data() + field.size()) {
      throw CsvError("line " + std::to_string(line_no) + ": bad number '" + std::string(field) + "'");
    }
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw CsvError("line " + std::to_string(line_no) + ": expected two comma-separated values");
    }
    const std::string_view view(line);
    points.push_back({parse(view.substr(0, comma)), parse(view.substr(comma + 1))});
  }
  return points;
}

inline void save_csv(const std::vector<Point>& points, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write " + path);
  write_csv(out, points);
  if (!out) throw CsvError("write failed for " + path);
}

inline std::vector<Point> load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path);
  try {
    return read_csv(in);
  } catch (const CsvError& e) {
    throw CsvError(path + ": " + e.what());
  }
}

}  // namespace radflow
