#pragma once

// Coupling layers. Both kinds pass the coordinates in `split.pass` through
// unchanged and transform the coordinates in `split.transform` with
// parameters computed from the pass-through part.

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "radflow/autodiff.hpp"
#include "radflow/fold.hpp"
#include "radflow/mlp.hpp"

namespace radflow {

struct Split {
  std::vector<std::size_t> pass;
  std::vector<std::size_t> transform;

  bool operator==(const Split&) const = default;
};

/// Even layers transform the second half of the coordinates, odd layers the
/// first half.
inline Split alternate_split(std::size_t layer_index, std::size_t dim) {
  if (dim < 2) throw StructuralFault("alternate_split: dimension must be at least 2");
  const std::size_t half = dim / 2;
  Split split;
  for (std::size_t i = 0; i < dim; ++i) {
    const bool second_half = i >= half;
    const bool transformed = (layer_index % 2 == 0) ? second_half : !second_half;
    (transformed ? split.transform : split.pass).push_back(i);
  }
  return split;
}

template <typename T>
struct LayerResult {
  std::vector<T> z;
  std::vector<int> k;  // one label per transformed coordinate; empty for affine layers
  T pseudo_log_jac = 0.0;
  std::vector<bool> in_band;
};

namespace detail {

template <typename T, typename In>
std::vector<T> gather(std::span<const In> x, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (const auto i : idx) out.push_back(T(x[i]));
  return out;
}

}  // namespace detail

/// Real NVP affine coupling: z2 = x2 * exp(s(x1)) + t(x1).
class AffineCoupling {
 public:
  AffineCoupling() = default;
  AffineCoupling(Split split, std::size_t hidden, std::size_t offset) : split_(std::move(split)), hidden_(hidden) {
    const auto n1 = split_.pass.size();
    const auto n2 = split_.transform.size();
    scale_net_ = Mlp({n1, hidden, n2}, OutputHead::kScaledTanh, offset);
    shift_net_ = Mlp({n1, hidden, n2}, OutputHead::kLinear, offset + scale_net_.param_count());
  }

  const Split& split() const { return split_; }
  std::size_t hidden() const { return hidden_; }
  const Mlp& scale_net() const { return scale_net_; }
  const Mlp& shift_net() const { return shift_net_; }
  std::size_t param_count() const { return scale_net_.param_count() + shift_net_.param_count(); }

  template <typename Rng>
  void initialize(std::span<double> theta, Rng& rng) const {
    scale_net_.initialize(theta, rng, true);
    shift_net_.initialize(theta, rng, true);
  }

  template <typename T, typename In>
  LayerResult<T> forward(std::span<const T> theta, std::span<const In> x) const {
    using std::exp;
    const auto x1 = detail::gather<T>(x, split_.pass);
    const auto s = scale_net_.forward<T, T>(theta, std::span<const T>(x1));
    const auto t = shift_net_.forward<T, T>(theta, std::span<const T>(x1));
    LayerResult<T> out;
    out.z.assign(x.begin(), x.end());
    for (std::size_t j = 0; j < split_.transform.size(); ++j) {
      const auto i = split_.transform[j];
      out.z[i] = T(x[i]) * exp(s[j]) + t[j];
      out.pseudo_log_jac = out.pseudo_log_jac + s[j];
    }
    return out;
  }

  template <typename T>
  std::vector<T> inverse(std::span<const T> theta, std::span<const T> z) const {
    using std::exp;
    const auto z1 = detail::gather<T>(z, split_.pass);
    const auto s = scale_net_.forward<T, T>(theta, std::span<const T>(z1));
    const auto t = shift_net_.forward<T, T>(theta, std::span<const T>(z1));
    std::vector<T> x(z.begin(), z.end());
    for (std::size_t j = 0; j < split_.transform.size(); ++j) {
      const auto i = split_.transform[j];
      x[i] = (z[i] - t[j]) * exp(-s[j]);
    }
    return x;
  }

 private:
  Split split_;
  std::size_t hidden_ = 0;
  Mlp scale_net_;
  Mlp shift_net_;
};

/// Coupling whose transformed coordinates go through a conditioned fold.
class RadCoupling {
 public:
  static constexpr double kLogSlopeBound = 3.0;

  RadCoupling() = default;
  RadCoupling(Split split, std::size_t hidden, std::size_t offset) : split_(std::move(split)), hidden_(hidden) {
    const auto n1 = split_.pass.size();
    const auto n2 = split_.transform.size();
    conditioner_ = Mlp({n1, hidden, 4 * n2}, OutputHead::kLinear, offset);
    std::size_t cursor = offset + conditioner_.param_count();
    for (std::size_t j = 0; j < n2; ++j) {
      gates_.emplace_back(Mlp({n1 + 1, hidden, 3}, OutputHead::kLinear, cursor));
      cursor += gates_.back().net().param_count();
    }
  }

  const Split& split() const { return split_; }
  std::size_t hidden() const { return hidden_; }
  const Mlp& conditioner() const { return conditioner_; }
  const std::vector<GatingHead>& gates() const { return gates_; }

  std::size_t param_count() const {
    std::size_t n = conditioner_.param_count();
    for (const auto& g : gates_) n += g.net().param_count();
    return n;
  }

  template <typename Rng>
  void initialize(std::span<double> theta, Rng& rng) const {
    conditioner_.initialize(theta, rng, true);
    for (const auto& g : gates_) g.net().initialize(theta, rng, true);
  }

  /// Maps raw conditioner outputs (a1, a2, a3, b) to a valid fold:
  /// a_k -> exp(3 tanh(a_k)), b -> softplus(b) + beta_min.
  template <typename T>
  static FoldParams<T> fold_from_raw(std::span<const T> raw) {
    using std::exp;
    using std::tanh;
    FoldParams<T> p;
    p.alpha1 = exp(kLogSlopeBound * tanh(raw[0]));
    p.alpha2 = exp(kLogSlopeBound * tanh(raw[1]));
    p.alpha3 = exp(kLogSlopeBound * tanh(raw[2]));
    p.beta = softplus(raw[3]) + kBetaMin;
    return p;
  }

  /// Fold parameters (including edge probabilities) per transformed
  /// coordinate, conditioned on the pass-through part.
  template <typename T>
  std::vector<FoldParams<T>> fold_params(std::span<const T> theta, std::span<const T> x1) const {
    const auto raw = conditioner_.forward<T, T>(theta, x1);
    std::vector<FoldParams<T>> out;
    out.reserve(split_.transform.size());
    for (std::size_t j = 0; j < split_.transform.size(); ++j) {
      auto p = fold_from_raw<T>(std::span<const T>(raw).subspan(4 * j, 4));
      const auto [low, high] = edge_probs(gates_[j], theta, x1, p);
      p.edge_prob_low = low;
      p.edge_prob_high = high;
      out.push_back(p);
    }
    return out;
  }

  /// Corrected gating logits for transformed coordinate j at folded value u.
  template <typename T>
  std::array<T, 3> gate_logits(std::span<const T> theta, std::span<const T> x1, std::size_t j, const T& u,
                               const FoldParams<T>& p) const {
    return corrected_logits(gates_[j].raw_logits(theta, x1, u), u, p);
  }

  template <typename T, typename In>
  LayerResult<T> forward(std::span<const T> theta, std::span<const In> x) const {
    const auto x1 = detail::gather<T>(x, split_.pass);
    const std::span<const T> ctx(x1);
    const auto raw = conditioner_.forward<T, T>(theta, ctx);
    LayerResult<T> out;
    out.z.assign(x.begin(), x.end());
    for (std::size_t j = 0; j < split_.transform.size(); ++j) {
      const auto i = split_.transform[j];
      // Only a point on an outer piece depends on that side's edge
      // probability, so at most one of the two is evaluated.
      auto p = fold_from_raw<T>(std::span<const T>(raw).subspan(4 * j, 4));
      const double xv = value_of(x[i]);
      if (xv > value_of(p.outer_knot_high())) {
        p.edge_prob_high = edge_prob_high(gates_[j], theta, ctx, p);
      } else if (xv < -value_of(p.outer_knot_low())) {
        p.edge_prob_low = edge_prob_low(gates_[j], theta, ctx, p);
      }
      const auto f = fold_forward(T(x[i]), p);
      T gate = 0.0;
      if (f.in_band) gate = gating_log_prob(gate_logits(theta, ctx, j, f.z, p), f.branch, true);
      out.z[i] = f.z;
      out.k.push_back(f.branch);
      out.in_band.push_back(f.in_band);
      out.pseudo_log_jac = out.pseudo_log_jac + f.log_slope + gate;
    }
    return out;
  }

  template <typename T>
  std::vector<T> inverse(std::span<const T> theta, std::span<const T> z, std::span<const int> k) const {
    if (k.size() != split_.transform.size()) throw StructuralFault("RadCoupling::inverse: label count mismatch");
    const auto z1 = detail::gather<T>(z, split_.pass);
    const auto params = fold_params(theta, std::span<const T>(z1));
    std::vector<T> x(z.begin(), z.end());
    for (std::size_t j = 0; j < split_.transform.size(); ++j) {
      const auto i = split_.transform[j];
      x[i] = fold_inverse(z[i], k[j], params[j]);
    }
    return x;
  }

  /// Branch probabilities p(k | z) for transformed coordinate j; one-hot on
  /// the forced branch outside the band.
  std::array<double, 3> branch_probs(std::span<const double> theta, std::span<const double> z, std::size_t j,
                                     const FoldParams<double>& p) const {
    const auto z1 = detail::gather<double>(z, split_.pass);
    const double u = z[split_.transform[j]];
    const double band = p.band();
    if (u > band) return {0.0, 0.0, 1.0};
    if (u < -band) return {1.0, 0.0, 0.0};
    const auto s = gate_logits(theta, std::span<const double>(z1), j, u, p);
    std::array<double, 3> probs;
    for (std::size_t b = 0; b < 3; ++b) probs[b] = std::exp(log_softmax_at(std::span<const double>(s), b));
    return probs;
  }

  /// Draws one branch label per transformed coordinate from p(k | z).
  template <typename Rng>
  std::vector<int> sample_branch(std::span<const double> theta, std::span<const double> z, Rng& rng) const {
    const auto z1 = detail::gather<double>(z, split_.pass);
    const auto params = fold_params(theta, std::span<const double>(z1));
    std::vector<int> k;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t j = 0; j < split_.transform.size(); ++j) {
      const auto probs = branch_probs(theta, z, j, params[j]);
      const double draw = unit(rng);
      int label = 3;
      if (draw < probs[0]) {
        label = 1;
      } else if (draw < probs[0] + probs[1]) {
        label = 2;
      }
      k.push_back(label);
    }
    return k;
  }

 private:
  Split split_;
  std::size_t hidden_ = 0;
  Mlp conditioner_;
  std::vector<GatingHead> gates_;
};

}  // namespace radflow
