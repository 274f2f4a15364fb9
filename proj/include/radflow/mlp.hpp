#pragma once

// Dense rectifier networks evaluated over a flat parameter vector.
//
// An Mlp owns only its shape and its offset into the model's flat parameter
// vector, so the same network evaluates on plain doubles (inference) or on
// tape variables (training) without copying weights.

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "radflow/autodiff.hpp"

namespace radflow {

enum class OutputHead { kLinear, kScaledTanh };

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> sizes, OutputHead head, std::size_t offset = 0)
      : sizes_(std::move(sizes)), head_(head), offset_(offset) {
    if (sizes_.size() < 2) throw StructuralFault("Mlp: need at least input and output sizes");
    for (const auto n : sizes_) {
      if (n == 0) throw StructuralFault("Mlp: layer sizes must be positive");
    }
  }

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  OutputHead head() const { return head_; }
  std::size_t offset() const { return offset_; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }

  /// Σ (n_i * n_{i+1} + n_{i+1}) over consecutive layer pairs.
  std::size_t weight_count() const {
    std::size_t total = 0;
    for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) total += sizes_[i] * sizes_[i + 1] + sizes_[i + 1];
    return total;
  }

  /// Weights plus the scalar output scale of a scaled-tanh head.
  std::size_t param_count() const { return weight_count() + (head_ == OutputHead::kScaledTanh ? 1 : 0); }

  std::size_t scale_index() const { return offset_ + weight_count(); }

  template <typename T, typename In>
  std::vector<T> forward(std::span<const T> theta, std::span<const In> input) const {
    if (input.size() != input_size()) {
      throw StructuralFault("Mlp::forward: input has " + std::to_string(input.size()) +
                            " entries, expected " + std::to_string(input_size()));
    }
    if (offset_ + param_count() > theta.size()) throw StructuralFault("Mlp::forward: parameter vector too short");

    // Hidden activations live in per-thread scratch space; only the output
    // vector is allocated.
    thread_local std::vector<T> scratch_a;
    thread_local std::vector<T> scratch_b;
    scratch_a.assign(input.begin(), input.end());
    std::vector<T> current;
    std::size_t cursor = offset_;
    const std::size_t last = sizes_.size() - 2;
    for (std::size_t layer = 0; layer + 1 < sizes_.size(); ++layer) {
      const std::size_t n_in = sizes_[layer];
      const std::size_t n_out = sizes_[layer + 1];
      const auto weights = theta.subspan(cursor, n_in * n_out);
      const auto biases = theta.subspan(cursor + n_in * n_out, n_out);
      cursor += n_in * n_out + n_out;
      const std::span<const T> in(scratch_a);
      auto& out = layer == last ? current : scratch_b;
      out.clear();
      out.reserve(n_out);
      for (std::size_t j = 0; j < n_out; ++j) {
        out.push_back(affine_sum(weights.subspan(j * n_in, n_in), in, biases[j], layer != last));
      }
      if (layer != last) std::swap(scratch_a, scratch_b);
    }
    if (head_ == OutputHead::kScaledTanh) {
      using std::tanh;
      const T& scale = theta[scale_index()];
      for (auto& v : current) v = scale * tanh(v);
    }
    return current;
  }

  /// Glorot-uniform weights, zero biases, unit output scale. With
  /// `zero_last` the final layer starts at zero.
  template <typename Rng>
  void initialize(std::span<double> theta, Rng& rng, bool zero_last) const {
    std::size_t cursor = offset_;
    for (std::size_t layer = 0; layer + 1 < sizes_.size(); ++layer) {
      const std::size_t n_in = sizes_[layer];
      const std::size_t n_out = sizes_[layer + 1];
      const bool is_last = layer + 2 == sizes_.size();
      const double bound = std::sqrt(6.0 / static_cast<double>(n_in + n_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = 0; i < n_in * n_out; ++i) {
        theta[cursor + i] = (is_last && zero_last) ? 0.0 : dist(rng);
      }
      for (std::size_t i = 0; i < n_out; ++i) theta[cursor + n_in * n_out + i] = 0.0;
      cursor += n_in * n_out + n_out;
    }
    if (head_ == OutputHead::kScaledTanh) theta[scale_index()] = 1.0;
  }

 private:
  std::vector<std::size_t> sizes_;
  OutputHead head_ = OutputHead::kLinear;
  std::size_t offset_ = 0;
};

}  // namespace radflow
