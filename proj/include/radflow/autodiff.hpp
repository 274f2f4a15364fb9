#pragma once

// Reverse-mode automatic differentiation over scalar computation graphs.
//
// A Tape records every scalar operation as a node holding its value and the
// local partial derivatives with respect to its parents. Var is a lightweight
// handle (value + node index + owning tape). Constants carry no node and are
// skipped when recording, so data inputs never inflate the graph.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace radflow {

/// Raised when the computation graph is used inconsistently.
class StructuralFault : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a numerical computation produced a non-finite value.
class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OpKind : std::uint8_t {
  kParameter,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kExp,
  kLog,
  kTanh,
  kCos,
  kSoftplus,
  kRelu,
  kMax,
  kLogSoftmax,
  kAffine,
  kCustom,
};

class Tape;

inline constexpr std::uint32_t kNoNode = std::numeric_limits<std::uint32_t>::max();

struct Var {
  double value = 0.0;
  std::uint32_t id = kNoNode;
  Tape* tape = nullptr;

  Var() = default;
  Var(double v) : value(v) {}  // NOLINT: implicit lift of constants
  Var(double v, std::uint32_t node, Tape* t) : value(v), id(node), tape(t) {}

  bool is_constant() const { return id == kNoNode; }
};

class Tape {
 public:
  Tape() = default;

  std::size_t size() const { return nodes_.size(); }
  double value(std::uint32_t node) const { return nodes_.at(node).value; }
  OpKind kind(std::uint32_t node) const { return nodes_.at(node).kind; }
  std::size_t parameter_count() const { return param_nodes_.size(); }

  void clear() {
    nodes_.clear();
    edge_count_ = 0;
    param_nodes_.clear();
    param_slots_.clear();
  }

  /// Drops every node recorded after the first `nodes` (parameters included
  /// only if they were registered after that point).
  void truncate(std::size_t nodes) {
    if (nodes > nodes_.size()) throw StructuralFault("truncate: tape is shorter than requested size");
    nodes_.resize(nodes);
    edge_count_ = nodes == 0 ? 0 : nodes_.back().edge_end;
    while (!param_nodes_.empty() && param_nodes_.back() >= nodes) {
      param_nodes_.pop_back();
      param_slots_.pop_back();
    }
  }

  std::uint32_t record(OpKind kind, std::span<const std::uint32_t> parents,
                       std::span<const double> partials, double value) {
    if (parents.size() != partials.size()) {
      throw StructuralFault("record: parents and partials differ in length");
    }
    const auto next = static_cast<std::uint32_t>(nodes_.size());
    for (const auto p : parents) {
      if (p >= next) {
        throw StructuralFault("record: parent index " + std::to_string(p) +
                              " is not on the tape");
      }
    }
    for (std::size_t i = 0; i < parents.size(); ++i) add_edge(parents[i], partials[i]);
    return finish(kind, value);
  }

  // Unchecked recording used by the arithmetic operators; parents come from
  // live Vars and are therefore already on this tape.
  std::uint32_t push1(OpKind kind, std::uint32_t a, double da, double value) {
    add_edge(a, da);
    return finish(kind, value);
  }
  std::uint32_t push2(OpKind kind, std::uint32_t a, double da, std::uint32_t b, double db, double value) {
    Edge* e = edge_space(2);
    e[0] = {a, da};
    e[1] = {b, db};
    edge_count_ += 2;
    return finish(kind, value);
  }

  /// Appends one edge of the node currently being built; close it with
  /// finish().
  void add_edge(std::uint32_t parent, double partial) {
    *edge_space(1) = {parent, partial};
    ++edge_count_;
  }

  struct Edge {
    std::uint32_t parent;
    double partial;
  };

  /// Room for `n` more edges of the node being built. Write them, then call
  /// commit_edges with the number actually used.
  Edge* edge_space(std::size_t n) {
    if (edge_count_ + n > edges_.size()) edges_.resize(std::max<std::size_t>(2 * edges_.size(), edge_count_ + n + 1024));
    return edges_.data() + edge_count_;
  }
  void commit_edges(std::size_t n) { edge_count_ += n; }

  std::uint32_t finish(OpKind kind, double value) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back({value, static_cast<std::uint32_t>(edge_count_), kind});
    return id;
  }

  /// Registers a trainable leaf bound to `slot` in the caller's flat
  /// parameter vector.
  Var parameter(double value, std::size_t slot) {
    const auto id = finish(OpKind::kParameter, value);
    param_nodes_.push_back(id);
    param_slots_.push_back(slot);
    return Var(value, id, this);
  }

  /// Creates one leaf per entry of `values`, slots 0..n-1.
  std::vector<Var> parameters(std::span<const double> values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out.push_back(parameter(values[i], i));
    return out;
  }

  /// Adjoint of every node up to `root` with respect to `root`.
  const std::vector<double>& adjoints(std::uint32_t root) const {
    if (root >= nodes_.size()) throw StructuralFault("backward: root is not on the tape");
    adjoint_.assign(root + 1, 0.0);
    adjoint_[root] = 1.0;
    for (std::uint32_t i = root + 1; i-- > 0;) {
      const double a = adjoint_[i];
      if (a == 0.0) continue;
      const std::uint32_t first = i == 0 ? 0 : nodes_[i - 1].edge_end;
      for (std::uint32_t e = first; e < nodes_[i].edge_end; ++e) {
        adjoint_[edges_[e].parent] += a * edges_[e].partial;
      }
    }
    return adjoint_;
  }

  /// Accumulates d(root)/d(parameter) into `grad[slot]` for every registered
  /// parameter. Non-parameter adjoints are discarded.
  void backward(const Var& root, std::span<double> grad) const {
    if (root.is_constant()) return;
    if (root.tape != this) throw StructuralFault("backward: root belongs to another tape");
    const auto& adj = adjoints(root.id);
    for (std::size_t i = 0; i < param_nodes_.size(); ++i) {
      const auto node = param_nodes_[i];
      if (node > root.id) continue;
      const auto slot = param_slots_[i];
      if (slot >= grad.size()) throw StructuralFault("backward: gradient slot out of range");
      grad[slot] += adj[node];
    }
  }

  std::vector<double> backward(const Var& root, std::size_t num_params) const {
    std::vector<double> grad(num_params, 0.0);
    backward(root, grad);
    return grad;
  }

 private:
  struct Node {
    double value;
    std::uint32_t edge_end;  // one past this node's last edge
    OpKind kind;
  };

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;  // capacity; live edges are [0, edge_count_)
  std::size_t edge_count_ = 0;
  std::vector<std::uint32_t> param_nodes_;
  std::vector<std::size_t> param_slots_;
  mutable std::vector<double> adjoint_;
};

namespace detail {

inline Var unary(OpKind kind, const Var& a, double value, double da) {
  if (a.is_constant()) return Var(value);
  return Var(value, a.tape->push1(kind, a.id, da, value), a.tape);
}

inline Var binary(OpKind kind, const Var& a, const Var& b, double value, double da, double db) {
  if (a.is_constant()) return unary(kind, b, value, db);
  if (b.is_constant()) return unary(kind, a, value, da);
  if (a.tape != b.tape) throw StructuralFault("operands live on different tapes");
  return Var(value, a.tape->push2(kind, a.id, da, b.id, db, value), a.tape);
}

}  // namespace detail

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value; }

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary(OpKind::kAdd, a, b, a.value + b.value, 1.0, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return detail::binary(OpKind::kSub, a, b, a.value - b.value, 1.0, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(OpKind::kMul, a, b, a.value * b.value, b.value, a.value);
}
inline Var operator/(const Var& a, const Var& b) {
  const double q = a.value / b.value;
  return detail::binary(OpKind::kDiv, a, b, q, 1.0 / b.value, -q / b.value);
}
inline Var operator-(const Var& a) { return detail::unary(OpKind::kNeg, a, -a.value, -1.0); }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline Var exp(const Var& a) {
  const double e = std::exp(a.value);
  return detail::unary(OpKind::kExp, a, e, e);
}
inline Var log(const Var& a) {
  return detail::unary(OpKind::kLog, a, std::log(a.value), 1.0 / a.value);
}
inline Var tanh(const Var& a) {
  const double t = std::tanh(a.value);
  return detail::unary(OpKind::kTanh, a, t, 1.0 - t * t);
}
inline Var cos(const Var& a) {
  return detail::unary(OpKind::kCos, a, std::cos(a.value), -std::sin(a.value));
}

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline Var softplus(const Var& a) {
  const double sig = 1.0 / (1.0 + std::exp(-a.value));
  return detail::unary(OpKind::kSoftplus, a, softplus(a.value), sig);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline Var relu(const Var& a) {
  return a.value > 0.0 ? detail::unary(OpKind::kRelu, a, a.value, 1.0) : Var(0.0);
}

/// max(a, floor) with the floor treated as a constant.
inline double clamp_below(double a, double floor) { return a < floor ? floor : a; }
inline Var clamp_below(const Var& a, double floor) { return a.value < floor ? Var(floor) : a; }

/// bias + sum_i w[i] * x[i], recorded as a single node.
inline double affine_sum(std::span<const double> w, std::span<const double> x, double bias) {
  double acc = bias;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * x[i];
  return acc;
}

namespace detail {

inline void join_tape(Tape*& tape, const Var& v) {
  if (v.is_constant()) return;
  if (tape == nullptr) {
    tape = v.tape;
  } else if (tape != v.tape) {
    throw StructuralFault("affine_sum: operands live on different tapes");
  }
}

}  // namespace detail

/// Tape version of affine_sum, recorded as one node with an edge per
/// non-constant operand. With `rectify` the node computes max(0, affine) and
/// nothing is recorded for an inactive unit.
template <typename W, typename X, typename B>
  requires(std::is_same_v<W, Var> || std::is_same_v<X, Var> || std::is_same_v<B, Var>)
Var affine_sum(std::span<const W> w, std::span<const X> x, const B& bias, bool rectify = false) {
  Tape* tape = nullptr;
  if constexpr (std::is_same_v<B, Var>) detail::join_tape(tape, bias);
  for (std::size_t i = 0; tape == nullptr && i < w.size(); ++i) {
    if constexpr (std::is_same_v<W, Var>) detail::join_tape(tape, w[i]);
    if constexpr (std::is_same_v<X, Var>) detail::join_tape(tape, x[i]);
  }
  double acc = value_of(bias);
  if (tape == nullptr) {
    for (std::size_t i = 0; i < w.size(); ++i) acc += value_of(w[i]) * value_of(x[i]);
    return Var(rectify ? relu(acc) : acc);
  }
  Tape::Edge* edges = tape->edge_space(2 * w.size() + 1);
  std::size_t n = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double wv = value_of(w[i]);
    const double xv = value_of(x[i]);
    acc += wv * xv;
    if constexpr (std::is_same_v<W, Var>) {
      if (!w[i].is_constant()) {
        if (w[i].tape != tape) throw StructuralFault("affine_sum: operands live on different tapes");
        edges[n++] = {w[i].id, xv};
      }
    }
    if constexpr (std::is_same_v<X, Var>) {
      if (!x[i].is_constant()) {
        if (x[i].tape != tape) throw StructuralFault("affine_sum: operands live on different tapes");
        edges[n++] = {x[i].id, wv};
      }
    }
  }
  if constexpr (std::is_same_v<B, Var>) {
    if (!bias.is_constant()) edges[n++] = {bias.id, 1.0};
  }
  if (rectify && !(acc > 0.0)) return Var(0.0);
  tape->commit_edges(n);
  return Var(acc, tape->finish(OpKind::kAffine, acc), tape);
}

inline double affine_sum(std::span<const double> w, std::span<const double> x, double bias, bool rectify) {
  const double acc = affine_sum(w, x, bias);
  return rectify ? relu(acc) : acc;
}

/// Numerically stable log-softmax of a small vector, evaluated at `index`.
inline double log_softmax_at(std::span<const double> s, std::size_t index) {
  double m = s[0];
  for (const double v : s) m = v > m ? v : m;
  double total = 0.0;
  for (const double v : s) total += std::exp(v - m);
  return s[index] - m - std::log(total);
}

inline Var log_softmax_at(std::span<const Var> s, std::size_t index) {
  double m = s[0].value;
  for (const auto& v : s) m = v.value > m ? v.value : m;
  double total = 0.0;
  for (const auto& v : s) total += std::exp(v.value - m);
  const double lse = m + std::log(total);
  const double out = s[index].value - lse;
  Tape* tape = nullptr;
  for (const auto& v : s) {
    if (!v.is_constant()) tape = v.tape;
  }
  if (tape == nullptr) return Var(out);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].is_constant()) continue;
    tape->add_edge(s[i].id, (i == index ? 1.0 : 0.0) - std::exp(s[i].value - lse));
  }
  return Var(out, tape->finish(OpKind::kLogSoftmax, out), tape);
}

/// Outcome of a central finite-difference comparison.
struct GradientCheck {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t excluded = 0;  // coordinates whose stencil crossed a knot
};

/// Compares `analytic` against central differences of `loss` at `params`.
/// `stencil_changes_branch(params, i, step)` may flag coordinates whose
/// stencil crosses a non-differentiable point; those are excluded.
///
/// The error is |a - c| / (|a| + |c|). A difference quotient cannot resolve
/// derivatives much below its own rounding noise, about eps * |loss| / step,
/// so the denominator never drops below 1e4 times that noise.
inline GradientCheck finite_diff_check(
    const std::function<double(std::span<const double>)>& loss, std::span<const double> params,
    std::span<const double> analytic, double step,
    const std::function<bool(std::span<const double>, std::size_t, double)>& stencil_changes_branch = {}) {
  if (analytic.size() != params.size()) throw StructuralFault("finite_diff_check: size mismatch");
  std::vector<double> work(params.begin(), params.end());
  const double center = loss(work);
  if (!std::isfinite(center)) throw NumericFault("finite_diff_check: non-finite loss at the base point");
  const double floor = 1e4 * std::numeric_limits<double>::epsilon() * (std::abs(center) + 1.0) / step;
  GradientCheck result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (stencil_changes_branch && stencil_changes_branch(params, i, step)) {
      ++result.excluded;
      continue;
    }
    work[i] = params[i] + step;
    const double up = loss(work);
    work[i] = params[i] - step;
    const double down = loss(work);
    work[i] = params[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericFault("finite_diff_check: non-finite loss at coordinate " + std::to_string(i));
    }
    const double central = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[i] - central) / std::max(std::abs(analytic[i]) + std::abs(central), floor);
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace radflow
