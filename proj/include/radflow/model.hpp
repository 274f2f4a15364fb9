#pragma once

// A stack of coupling layers over a standard normal base density.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <utility>
#include <vector>

#include "radflow/autodiff.hpp"
#include "radflow/coupling.hpp"
#include "radflow/fold.hpp"

namespace radflow {

enum class ModelKind { kRad, kRealNvp };

inline std::string to_string(ModelKind kind) { return kind == ModelKind::kRad ? "rad" : "realnvp"; }

inline ModelKind parse_model_kind(const std::string& name) {
  if (name == "rad") return ModelKind::kRad;
  if (name == "realnvp") return ModelKind::kRealNvp;
  throw std::invalid_argument("unknown model kind '" + name + "' (expected rad or realnvp)");
}

using Layer = std::variant<AffineCoupling, RadCoupling>;

struct LayerRecord {
  std::vector<double> z;  // output of the layer
  std::vector<int> k;
  std::vector<bool> in_band;
  double pseudo_log_jac = 0.0;
};

struct InferenceTrace {
  std::vector<double> x;
  std::vector<LayerRecord> layers;
  double total_log_prob = 0.0;

  const std::vector<double>& latent() const& { return layers.empty() ? x : layers.back().z; }
  std::vector<double> latent() && { return layers.empty() ? std::move(x) : std::move(layers.back().z); }
};

struct Sample {
  std::vector<double> x;
  std::vector<std::vector<int>> k;  // sampled labels per layer (empty for affine layers)
  std::vector<double> z;            // base draw
};

/// Standard normal log-density.
template <typename T>
T standard_normal_log_density(std::span<const T> z) {
  T acc = -0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi);
  for (const auto& v : z) acc = acc - 0.5 * v * v;
  return acc;
}

class FlowModel {
 public:
  FlowModel() = default;
  explicit FlowModel(std::size_t dim) : dim_(dim) {}

  /// `layers` coupling layers of one kind with alternating splits.
  static FlowModel make(ModelKind kind, std::size_t dim, std::size_t layers, std::size_t hidden) {
    FlowModel model(dim);
    for (std::size_t l = 0; l < layers; ++l) {
      if (kind == ModelKind::kRad) {
        model.add_rad_layer(alternate_split(l, dim), hidden);
      } else {
        model.add_affine_layer(alternate_split(l, dim), hidden);
      }
    }
    return model;
  }

  void add_rad_layer(Split split, std::size_t hidden) {
    check_split(split);
    RadCoupling layer(std::move(split), hidden, params_.size());
    params_.resize(params_.size() + layer.param_count(), 0.0);
    layers_.emplace_back(std::move(layer));
  }

  void add_affine_layer(Split split, std::size_t hidden) {
    check_split(split);
    AffineCoupling layer(std::move(split), hidden, params_.size());
    params_.resize(params_.size() + layer.param_count(), 0.0);
    layers_.emplace_back(std::move(layer));
  }

  template <typename Rng>
  void initialize(Rng& rng) {
    for (const auto& layer : layers_) std::visit([&](const auto& l) { l.initialize(params_, rng); }, layer);
  }

  std::size_t dim() const { return dim_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  std::size_t rad_fold_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) {
      if (const auto* rad = std::get_if<RadCoupling>(&layer)) n += rad->split().transform.size();
    }
    return n;
  }

  /// Log-density under an arbitrary parameter vector of scalar type T.
  template <typename T>
  T log_prob(std::span<const T> theta, std::span<const double> x, InferenceTrace* trace = nullptr) const {
    if (x.size() != dim_) throw StructuralFault("log_prob: point has wrong dimension");
    std::vector<T> current(x.begin(), x.end());
    T total = 0.0;
    if (trace != nullptr) {
      trace->x.assign(x.begin(), x.end());
      trace->layers.clear();
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto result = std::visit(
          [&](const auto& layer) { return layer.template forward<T, T>(theta, std::span<const T>(current)); },
          layers_[l]);
      if (!std::isfinite(value_of(result.pseudo_log_jac))) {
        throw NumericFault("log_prob: non-finite pseudo-log-Jacobian at layer " + std::to_string(l));
      }
      for (const auto& v : result.z) {
        if (!std::isfinite(value_of(v))) throw NumericFault("log_prob: non-finite latent at layer " + std::to_string(l));
      }
      total = total + result.pseudo_log_jac;
      if (trace != nullptr) {
        LayerRecord rec;
        for (const auto& v : result.z) rec.z.push_back(value_of(v));
        rec.k = result.k;
        rec.in_band = result.in_band;
        rec.pseudo_log_jac = value_of(result.pseudo_log_jac);
        trace->layers.push_back(std::move(rec));
      }
      current = std::move(result.z);
    }
    total = total + standard_normal_log_density(std::span<const T>(current));
    if (trace != nullptr) trace->total_log_prob = value_of(total);
    return total;
  }

  double log_prob(std::span<const double> x) const { return log_prob<double>(params_, x); }

  InferenceTrace trace(std::span<const double> x) const {
    InferenceTrace t;
    log_prob<double>(params_, x, &t);
    return t;
  }

  /// Maps a base point back to data space along the given branch labels.
  std::vector<double> invert(std::span<const double> z, const std::vector<std::vector<int>>& k) const {
    if (k.size() != layers_.size()) throw StructuralFault("invert: need one label vector per layer");
    std::vector<double> current(z.begin(), z.end());
    const std::span<const double> theta(params_);
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (const auto* rad = std::get_if<RadCoupling>(&layers_[l])) {
        current = rad->inverse<double>(theta, current, k[l]);
      } else {
        current = std::get<AffineCoupling>(layers_[l]).inverse<double>(theta, current);
      }
    }
    return current;
  }

  /// Ancestral sampling: z from the base, then each layer inverted from the
  /// top, drawing branch labels from the gating network.
  template <typename Rng>
  Sample sample_one(Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    Sample s;
    s.z.resize(dim_);
    for (auto& v : s.z) v = normal(rng);
    s.k.assign(layers_.size(), {});
    std::vector<double> current = s.z;
    const std::span<const double> theta(params_);
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (const auto* rad = std::get_if<RadCoupling>(&layers_[l])) {
        s.k[l] = rad->sample_branch(theta, current, rng);
        current = rad->inverse<double>(theta, current, s.k[l]);
      } else {
        current = std::get<AffineCoupling>(layers_[l]).inverse<double>(theta, current);
      }
    }
    s.x = std::move(current);
    return s;
  }

  template <typename Rng>
  std::vector<Sample> sample(std::size_t n, Rng& rng) const {
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample_one(rng));
    return out;
  }

 private:
  void check_split(const Split& split) const {
    std::vector<int> seen(dim_, 0);
    for (const auto i : split.pass) {
      if (i >= dim_) throw StructuralFault("split index out of range");
      ++seen[i];
    }
    for (const auto i : split.transform) {
      if (i >= dim_) throw StructuralFault("split index out of range");
      ++seen[i];
    }
    for (const int c : seen) {
      if (c != 1) throw StructuralFault("split must partition the coordinates");
    }
    if (split.pass.empty() || split.transform.empty()) throw StructuralFault("split halves must be non-empty");
  }

  std::size_t dim_ = 0;
  std::vector<Layer> layers_;
  std::vector<double> params_;
};

/// Mixture-sum evaluation: enumerates every branch-label path through the
/// RAD layers and adds up each component's density at x. Components have
/// disjoint supports, so exactly one path contributes; the result must agree
/// with the direct search evaluation of FlowModel::log_prob.
inline double brute_force_log_prob(const FlowModel& model, std::span<const double> x,
                                   std::size_t max_paths = 100000) {
  const std::size_t folds = model.rad_fold_count();
  std::size_t paths = 1;
  for (std::size_t i = 0; i < folds; ++i) {
    paths *= 3;
    if (paths > max_paths) throw StructuralFault("brute_force_log_prob: too many mixture paths");
  }
  const auto theta = model.params();
  const auto& layers = model.layers();

  // Component density along a fixed path: each fold is evaluated with the
  // linear piece belonging to the path's label, and the component is zero
  // unless the input lies in that label's partition set.
  auto component_log_density = [&](std::vector<int> labels, double& log_density) -> bool {
    std::vector<double> current(x.begin(), x.end());
    double acc = 0.0;
    std::size_t cursor = 0;
    for (const auto& layer : layers) {
      if (const auto* affine = std::get_if<AffineCoupling>(&layer)) {
        const auto r = affine->forward<double, double>(theta, std::span<const double>(current));
        acc += r.pseudo_log_jac;
        current = r.z;
        continue;
      }
      const auto& rad = std::get<RadCoupling>(layer);
      const auto x1 = detail::gather<double>(std::span<const double>(current), rad.split().pass);
      const auto params = rad.fold_params(theta, std::span<const double>(x1));
      std::vector<double> next = current;
      for (std::size_t j = 0; j < rad.split().transform.size(); ++j) {
        const int label = labels[cursor++];
        const auto& p = params[j];
        const double xi = current[rad.split().transform[j]];
        const double b = p.beta;
        const bool in_set = (label == 1 && xi < -b) || (label == 2 && xi >= -b && xi <= b) || (label == 3 && xi > b);
        if (!in_set) return false;
        double z = 0.0;
        double slope = 0.0;
        bool outer = false;
        if (label == 2) {
          slope = p.alpha2;
          z = -p.alpha2 * xi;
        } else if (label == 3) {
          const double knot = b + 2.0 * p.alpha2 * b / p.alpha3;
          outer = xi > knot;
          slope = outer ? p.alpha3 * p.edge_prob_high : p.alpha3;
          z = outer ? p.alpha2 * b + slope * (xi - knot) : -p.alpha2 * b + slope * (xi - b);
        } else {
          const double knot = b + 2.0 * p.alpha2 * b / p.alpha1;
          outer = xi < -knot;
          slope = outer ? p.alpha1 * p.edge_prob_low : p.alpha1;
          z = outer ? -p.alpha2 * b + slope * (xi + knot) : p.alpha2 * b + slope * (xi + b);
        }
        double log_gate = 0.0;
        if (!outer) {
          const auto s = rad.gate_logits(theta, std::span<const double>(x1), j, z, p);
          double m = std::max({s[0], s[1], s[2]});
          const double lse = m + std::log(std::exp(s[0] - m) + std::exp(s[1] - m) + std::exp(s[2] - m));
          log_gate = std::max(s[label - 1] - lse, std::log(kGateEpsilon));
        }
        acc += std::log(slope) + log_gate;
        next[rad.split().transform[j]] = z;
      }
      current = std::move(next);
    }
    acc += standard_normal_log_density(std::span<const double>(current));
    log_density = acc;
    return true;
  };

  std::vector<double> contributions;
  std::vector<int> labels(folds, 1);
  for (std::size_t path = 0; path < paths; ++path) {
    std::size_t code = path;
    for (std::size_t i = 0; i < folds; ++i) {
      labels[i] = 1 + static_cast<int>(code % 3);
      code /= 3;
    }
    double ld = 0.0;
    if (component_log_density(labels, ld)) contributions.push_back(ld);
  }
  if (contributions.empty()) return -std::numeric_limits<double>::infinity();
  double m = contributions.front();
  for (const double c : contributions) m = std::max(m, c);
  double total = 0.0;
  for (const double c : contributions) total += std::exp(c - m);
  return m + std::log(total);
}

struct Grid2D {
  double lo = -6.0;
  double hi = 6.0;
  std::size_t points = 400;  // per axis
};

/// Square grid wide enough to hold the model's mass: 1.5 times the largest
/// coordinate among `samples` draws, and never narrower than the default.
template <typename Rng>
Grid2D covering_grid(const FlowModel& model, Rng& rng, std::size_t samples = 4000, std::size_t points = 400) {
  double r = Grid2D{}.hi;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto s = model.sample_one(rng);
    for (const double v : s.x) r = std::max(r, 1.5 * std::abs(v));
  }
  return Grid2D{-r, r, points};
}

/// Trapezoidal integral of exp(log_prob) over a square grid (2-D models).
inline double total_mass(const FlowModel& model, const Grid2D& grid) {
  if (model.dim() != 2) throw StructuralFault("total_mass: only 2-D models are supported");
  if (grid.points < 2) throw StructuralFault("total_mass: need at least two grid points per axis");
  const double h = (grid.hi - grid.lo) / static_cast<double>(grid.points - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < grid.points; ++i) {
    const double wx = (i == 0 || i + 1 == grid.points) ? 0.5 : 1.0;
    const double x0 = grid.lo + h * static_cast<double>(i);
    for (std::size_t j = 0; j < grid.points; ++j) {
      const double wy = (j == 0 || j + 1 == grid.points) ? 0.5 : 1.0;
      const double pt[2] = {x0, grid.lo + h * static_cast<double>(j)};
      total += wx * wy * std::exp(model.log_prob(pt));
    }
  }
  return total * h * h;
}

}  // namespace radflow
