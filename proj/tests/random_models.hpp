#pragma once

// Random parameterizations shared by the model-level tests.

#include <algorithm>
#include <cmath>
#include <random>

#include "radflow/model.hpp"

namespace radflow::testing {

// Glorot init, outer slopes scaled so that uniform gating leaves the tails
// unstretched (a1 = a3 = 3), then Gaussian noise: `bias_sd` on every output
// bias, `weight_sd` on everything else. Without the tail adjustment each
// fold widens the tails threefold and a 6-layer model leaves most of its
// mass outside any practical quadrature box.
inline void randomize_moderate(FlowModel& model, std::mt19937_64& rng, double bias_sd = 0.1,
                               double weight_sd = 0.01) {
  model.initialize(rng);
  auto theta = model.params();
  std::normal_distribution<double> weight_noise(0.0, weight_sd);
  for (auto& v : theta) v += weight_noise(rng);
  std::normal_distribution<double> bias_noise(0.0, bias_sd);
  auto perturb_output_bias = [&](const Mlp& net) {
    const std::size_t end = net.offset() + net.weight_count();
    for (std::size_t i = end - net.output_size(); i < end; ++i) theta[i] += bias_noise(rng);
  };
  const double tail_raw = std::atanh(std::log(3.0) / RadCoupling::kLogSlopeBound);
  for (const auto& layer : model.layers()) {
    if (const auto* rad = std::get_if<RadCoupling>(&layer)) {
      const auto& c = rad->conditioner();
      const std::size_t bias = c.offset() + c.weight_count() - c.output_size();
      for (std::size_t j = 0; j < c.output_size() / 4; ++j) {
        theta[bias + 4 * j] += tail_raw;
        theta[bias + 4 * j + 2] += tail_raw;
      }
      perturb_output_bias(c);
      for (const auto& g : rad->gates()) perturb_output_bias(g.net());
    } else {
      const auto& a = std::get<AffineCoupling>(layer);
      perturb_output_bias(a.scale_net());
      perturb_output_bias(a.shift_net());
    }
  }
}

}  // namespace radflow::testing
