#pragma once

// The scalar piecewise-linear fold with three branches.
//
//             branch 1                branch 2          branch 3
//   ... outer-left | inner-left | center (-a2 x) | inner-right | outer-right ...
//      -K1        -b          +b          +K3
//
// with inner knots +-b, outer knots K_k = (1 + 2 a2 / a_k) b, and the band
// [-a2 b, +a2 b] as the region of the output covered three times. Outer
// pieces have slope a_k * edge_prob so that the pseudo-log-Jacobian
// (log |slope| + gating log-probability) is continuous at the band edges.
//
// Note on constants: the outer knots use the factor 2 (the value at which the
// inner pieces actually reach the far band edge), and the center branch
// inverts as x = -z / a2. Both follow from requiring f to be continuous and
// the inverse to be consistent with the forward map.

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>

#include "radflow/autodiff.hpp"
#include "radflow/mlp.hpp"

namespace radflow {

inline constexpr double kGateEpsilon = 1e-6;
inline constexpr double kBetaMin = 1e-3;

/// Parameters of one fold. `edge_prob_low` is p(k=1 | z=-a2 b) and
/// `edge_prob_high` is p(k=3 | z=+a2 b).
template <typename T>
struct FoldParams {
  T alpha1 = 1.0;
  T alpha2 = 1.0;
  T alpha3 = 1.0;
  T beta = 1.0;
  T edge_prob_low = 1.0;
  T edge_prob_high = 1.0;

  T band() const { return alpha2 * beta; }
  /// Magnitude of the left outer knot (located at -outer_knot_low()).
  T outer_knot_low() const { return (1.0 + 2.0 * alpha2 / alpha1) * beta; }
  T outer_knot_high() const { return (1.0 + 2.0 * alpha2 / alpha3) * beta; }
  double max_slope() const {
    const double a = value_of(alpha1) > value_of(alpha2) ? value_of(alpha1) : value_of(alpha2);
    return a > value_of(alpha3) ? a : value_of(alpha3);
  }

  void validate() const {
    if (!(value_of(alpha1) > 0 && value_of(alpha2) > 0 && value_of(alpha3) > 0)) {
      throw StructuralFault("FoldParams: slopes must be positive");
    }
    if (!(value_of(beta) >= kBetaMin)) throw StructuralFault("FoldParams: beta below minimum");
    for (const double p : {value_of(edge_prob_low), value_of(edge_prob_high)}) {
      if (!(p >= kGateEpsilon && p <= 1.0)) throw StructuralFault("FoldParams: edge probability outside [eps, 1]");
    }
  }
};

template <typename T>
struct FoldResult {
  T z;
  int branch;
  T log_slope;
  bool in_band;
};

/// Set identification: 1 + [x >= -b] + [x > b]; the center set [-b, b] is
/// closed.
template <typename X, typename T>
int branch_id(const X& x, const FoldParams<T>& p) {
  const double xv = value_of(x);
  const double b = value_of(p.beta);
  return 1 + (xv >= -b ? 1 : 0) + (xv > b ? 1 : 0);
}

/// Five-piece forward map. Ties at outer knots go to the inner piece.
template <typename T>
FoldResult<T> fold_forward(const T& x, const FoldParams<T>& p) {
  using std::log;
  const double xv = value_of(x);
  if (!std::isfinite(xv)) throw NumericFault("fold_forward: non-finite input");
  const int branch = branch_id(x, p);
  const T band = p.band();
  switch (branch) {
    case 2:
      return {-(p.alpha2 * x), 2, log(p.alpha2), true};
    case 3: {
      const T knot = p.outer_knot_high();
      if (xv <= value_of(knot)) return {p.alpha3 * (x - p.beta) - band, 3, log(p.alpha3), true};
      const T slope = p.alpha3 * p.edge_prob_high;
      return {slope * (x - knot) + band, 3, log(slope), false};
    }
    default: {
      const T knot = p.outer_knot_low();
      if (xv >= -value_of(knot)) return {p.alpha1 * (x + p.beta) + band, 1, log(p.alpha1), true};
      const T slope = p.alpha1 * p.edge_prob_low;
      return {slope * (x + knot) - band, 1, log(slope), false};
    }
  }
}

/// Inverse of one branch. Outside the band only the unique covering branch
/// is accepted.
template <typename Z, typename T>
auto fold_inverse(const Z& z, int branch, const FoldParams<T>& p) {
  using R = std::conditional_t<std::is_same_v<Z, Var> || std::is_same_v<T, Var>, Var, double>;
  const double zv = value_of(z);
  const R band = p.band();
  const double bv = value_of(band);
  if (zv > bv) {
    if (branch != 3) {
      throw StructuralFault("fold_inverse: z=" + std::to_string(zv) + " above the band requires branch 3, got " +
                            std::to_string(branch));
    }
    return R((R(z) - band) / (p.alpha3 * p.edge_prob_high) + p.outer_knot_high());
  }
  if (zv < -bv) {
    if (branch != 1) {
      throw StructuralFault("fold_inverse: z=" + std::to_string(zv) + " below the band requires branch 1, got " +
                            std::to_string(branch));
    }
    return R((R(z) + band) / (p.alpha1 * p.edge_prob_low) - p.outer_knot_low());
  }
  switch (branch) {
    case 1:
      return R((R(z) - band) / p.alpha1 - p.beta);
    case 2:
      return R(-(R(z) / p.alpha2));
    case 3:
      return R((R(z) + band) / p.alpha3 + p.beta);
    default:
      throw StructuralFault("fold_inverse: branch must be 1, 2 or 3");
  }
}

/// Boundary-corrected gating logits at folded coordinate u (inside the band).
///
/// With t = raw + log(alpha), the pair (1,2) of t is blended towards its mean
/// as u -> +a2 b and the pair (2,3) as u -> -a2 b, using raised-cosine
/// weights. At the band edges this gives exactly
///   s2 + log a2 = s3 + log a3   (u = -a2 b, fold point x = +b)
///   s1 + log a1 = s2 + log a2   (u = +a2 b, fold point x = -b).
template <typename T>
std::array<T, 3> corrected_logits(const std::array<T, 3>& raw, const T& u, const FoldParams<T>& p) {
  using std::cos;
  using std::log;
  const T band = p.band();
  const double bv = value_of(band);
  const double uv = value_of(u);
  if (!(std::abs(uv) <= bv * (1.0 + 1e-9) + 1e-12)) {
    throw StructuralFault("corrected_logits: folded coordinate outside the band");
  }
  const std::array<T, 3> log_alpha = {log(p.alpha1), log(p.alpha2), log(p.alpha3)};
  std::array<T, 3> t;
  for (int i = 0; i < 3; ++i) t[i] = raw[i] + log_alpha[i];

  constexpr double pi = std::numbers::pi;
  const T w_plus = 0.5 * (1.0 + cos(pi * (u - band) / (2.0 * band)));
  const T w_minus = 0.5 * (1.0 + cos(pi * (u + band) / (2.0 * band)));
  const T half_12 = 0.5 * (t[1] - t[0]);  // (t . Omega_12)_1, negated for entry 2
  const T half_23 = 0.5 * (t[2] - t[1]);  // (t . Omega_23)_2, negated for entry 3

  std::array<T, 3> s;
  s[0] = t[0] + w_plus * half_12 - log_alpha[0];
  s[1] = t[1] - w_plus * half_12 + w_minus * half_23 - log_alpha[1];
  s[2] = t[2] - w_minus * half_23 - log_alpha[2];
  return s;
}

/// log p(branch | z). Out of the band the branch is forced and the
/// probability is one.
template <typename T>
T gating_log_prob(const std::array<T, 3>& s, int branch, bool in_band) {
  if (branch < 1 || branch > 3) throw StructuralFault("gating_log_prob: branch must be 1, 2 or 3");
  if (!in_band) return T(0.0);
  const T lp = log_softmax_at(std::span<const T>(s), static_cast<std::size_t>(branch - 1));
  return clamp_below(lp, std::log(kGateEpsilon));
}

/// Out-of-band overload: checks the forced branch for the side of the band.
template <typename T>
T gating_log_prob_outside(const T& z, int branch, const FoldParams<T>& p) {
  const double zv = value_of(z);
  if (std::abs(zv) <= value_of(p.band())) throw StructuralFault("gating_log_prob: z lies inside the band");
  const int forced = zv > 0 ? 3 : 1;
  if (branch != forced) {
    throw StructuralFault("gating_log_prob: out-of-band z requires branch " + std::to_string(forced));
  }
  return T(0.0);
}

/// Network producing raw branch logits from (context..., folded coordinate).
class GatingHead {
 public:
  GatingHead() = default;
  explicit GatingHead(Mlp net) : net_(std::move(net)) {
    if (net_.output_size() != 3) throw StructuralFault("GatingHead: logit net must output 3 values");
  }

  const Mlp& net() const { return net_; }
  std::size_t context_size() const { return net_.input_size() - 1; }

  template <typename T, typename C>
  std::array<T, 3> raw_logits(std::span<const T> theta, std::span<const C> context, const T& u) const {
    std::vector<T> input;
    input.reserve(context.size() + 1);
    for (const auto& c : context) input.push_back(T(c));
    input.push_back(u);
    const auto out = net_.forward<T, T>(theta, std::span<const T>(input));
    return {out[0], out[1], out[2]};
  }

 private:
  Mlp net_;
};

/// p(1 | z = -a2 b), clamped to [eps, 1].
template <typename T, typename C>
T edge_prob_low(const GatingHead& head, std::span<const T> theta, std::span<const C> context,
                const FoldParams<T>& p) {
  using std::exp;
  const T u = -p.band();
  const auto s = corrected_logits(head.raw_logits(theta, context, u), u, p);
  return clamp_below(exp(log_softmax_at(std::span<const T>(s), 0)), kGateEpsilon);
}

/// p(3 | z = +a2 b), clamped to [eps, 1].
template <typename T, typename C>
T edge_prob_high(const GatingHead& head, std::span<const T> theta, std::span<const C> context,
                 const FoldParams<T>& p) {
  using std::exp;
  const T u = p.band();
  const auto s = corrected_logits(head.raw_logits(theta, context, u), u, p);
  return clamp_below(exp(log_softmax_at(std::span<const T>(s), 2)), kGateEpsilon);
}

/// Both band-edge probabilities; these set the outer slopes of the fold.
template <typename T, typename C>
std::pair<T, T> edge_probs(const GatingHead& head, std::span<const T> theta, std::span<const C> context,
                           const FoldParams<T>& p) {
  return {edge_prob_low(head, theta, context, p), edge_prob_high(head, theta, context, p)};
}

}  // namespace radflow
