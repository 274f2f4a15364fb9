#pragma once

// Maximum-likelihood training with Adam on minibatches drawn with
// replacement from a fixed training set.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "radflow/adam.hpp"
#include "radflow/autodiff.hpp"
#include "radflow/checkpoint.hpp"
#include "radflow/data.hpp"
#include "radflow/format.hpp"
#include "radflow/model.hpp"

namespace radflow {

inline constexpr std::size_t kRadHidden = 8;
inline constexpr std::size_t kBaselineHiddenRatio = 7;

inline std::size_t default_hidden(ModelKind kind) {
  return kind == ModelKind::kRad ? kRadHidden : kBaselineHiddenRatio * kRadHidden;
}

struct TrainConfig {
  ModelKind model = ModelKind::kRad;
  Problem problem = Problem::kGridGmm;
  std::size_t layers = 6;
  std::size_t hidden = 0;  // 0 picks the per-model default
  std::size_t steps = 50000;
  std::size_t batch = 500;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t train_size = 10000;
  std::size_t test_size = 10000;
  std::size_t log_every = 1000;
  double grad_clip = 100.0;     // global-norm bound; 0 disables
  std::optional<double> noise;  // overrides the problem's default noise scale
  std::string output_dir;       // empty: nothing is written

  std::size_t resolved_hidden() const { return hidden == 0 ? default_hidden(model) : hidden; }

  void validate() const {
    if (layers == 0 || steps == 0 || batch == 0 || train_size == 0 || test_size == 0 || log_every == 0) {
      throw std::invalid_argument("train config: layers, steps, batch, sizes and log interval must be positive");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw std::invalid_argument("train config: learning rate must be positive");
    }
    if (!(grad_clip >= 0.0)) throw std::invalid_argument("train config: grad clip must be >= 0");
    if (noise && !(*noise >= 0.0 && std::isfinite(*noise))) {
      throw std::invalid_argument("train config: noise must be finite and >= 0");
    }
  }
};

/// Independent streams derived from the run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream * 0xD1B54A32D192ED03ULL + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { kTrainData = 1, kTestData = 2, kInit = 3, kBatches = 4 };

inline DatasetSpec train_data_spec(const TrainConfig& c) {
  return {c.problem, c.train_size, derive_seed(c.seed, kTrainData), c.noise};
}

inline DatasetSpec test_data_spec(const TrainConfig& c) {
  return {c.problem, c.test_size, derive_seed(c.seed, kTestData), c.noise};
}

/// Mean log-density over `points`, summed in order.
inline double mean_log_prob(const FlowModel& model, const std::vector<Point>& points) {
  if (points.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : points) total += model.log_prob(p);
  return total / static_cast<double>(points.size());
}

/// Mean test log-likelihood on a fresh n-point batch of `problem`.
inline double evaluate(const FlowModel& model, Problem problem, std::size_t n, std::uint64_t seed) {
  return mean_log_prob(model, generate({problem, n, seed, std::nullopt}).points);
}

struct TrainRecord {
  std::size_t step = 0;
  double train_ll = 0.0;
  double test_ll = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::size_t param_count = 0;
  std::string checkpoint_path;
};

/// Log CSV without wall time, so reruns produce identical bytes.
inline void write_train_log(std::ostream& out, const TrainLog& log) {
  out << "step,train_ll,test_ll\n";
  for (const auto& r : log.records) {
    out << r.step << ',' << format_double(r.train_ll) << ',' << format_double(r.test_ll) << '\n';
  }
}

inline void write_timing(std::ostream& out, const TrainLog& log) {
  out << "step,wall_seconds\n";
  for (const auto& r : log.records) out << r.step << ',' << r.wall_seconds << '\n';
}

inline std::vector<TrainRecord> read_train_log(std::istream& in) {
  std::vector<TrainRecord> records;
  std::string line;
  if (!std::getline(in, line) || line != "step,train_ll,test_ll") throw CsvError("train log: missing header");
  while (std::getline(in, line)) {
    TrainRecord r;
    std::istringstream ls(line);
    char c1 = 0;
    char c2 = 0;
    if (!(ls >> r.step >> c1 >> r.train_ll >> c2 >> r.test_ll) || c1 != ',' || c2 != ',') {
      throw CsvError("train log: malformed row '" + line + "'");
    }
    records.push_back(r);
  }
  return records;
}

/// Raised when a step or an evaluation meets a non-finite log-density; the
/// parameters from before that point are saved first. Indices refer to the
/// training batch, or to the evaluated data set when logging failed.
class TrainingAborted : public NumericFault {
 public:
  TrainingAborted(const std::string& what, std::size_t step, std::vector<std::size_t> indices)
      : NumericFault(what), step_(step), indices_(std::move(indices)) {}
  std::size_t step() const { return step_; }
  const std::vector<std::size_t>& batch_indices() const { return indices_; }

 private:
  std::size_t step_;
  std::vector<std::size_t> indices_;
};

struct TrainResult {
  FlowModel model;
  TrainLog log;
};

inline FlowModel make_model(const TrainConfig& config, std::uint64_t init_seed) {
  auto model = FlowModel::make(config.model, 2, config.layers, config.resolved_hidden());
  std::mt19937_64 rng(init_seed);
  model.initialize(rng);
  return model;
}

/// Accumulates the gradient of the batch's summed log-density into `grad`
/// (one short tape per point, added in batch order) and returns the sum.
/// Indices of points whose density is not finite go to `bad`.
inline double batch_log_prob_gradient(const FlowModel& model, const std::vector<Point>& data,
                                      std::span<const std::size_t> batch, Tape& tape, std::span<double> grad,
                                      std::vector<std::size_t>& bad) {
  tape.clear();
  const auto theta = tape.parameters(model.params());
  const std::span<const Var> vars(theta);
  const std::size_t mark = tape.size();
  double total = 0.0;
  for (const auto index : batch) {
    tape.truncate(mark);
    try {
      const Var lp = model.log_prob<Var>(vars, data[index]);
      if (!std::isfinite(lp.value)) {
        bad.push_back(index);
        continue;
      }
      tape.backward(lp, grad);
      total += lp.value;
    } catch (const NumericFault&) {
      bad.push_back(index);
    }
  }
  return total;
}

/// Rescales `grad` in place so its Euclidean norm is at most `bound`
/// (0 disables); returns the norm before clipping.
inline double clip_by_global_norm(std::span<double> grad, double bound) {
  double norm2 = 0.0;
  for (const double g : grad) norm2 += g * g;
  const double norm = std::sqrt(norm2);
  if (bound > 0.0 && norm > bound) {
    for (auto& g : grad) g *= bound / norm;
  }
  return norm;
}

inline TrainResult train(const TrainConfig& config, const std::function<void(const TrainRecord&)>& on_record = {}) {
  config.validate();
  const auto train_data = generate(train_data_spec(config)).points;
  const auto test_data = generate(test_data_spec(config)).points;
  TrainResult result{make_model(config, derive_seed(config.seed, kInit)), {}};
  auto& model = result.model;
  auto& log = result.log;
  log.param_count = model.param_count();

  std::filesystem::path out_dir;
  if (!config.output_dir.empty()) {
    out_dir = config.output_dir;
    std::filesystem::create_directories(out_dir);
  }

  std::mt19937_64 batch_rng(derive_seed(config.seed, kBatches));
  std::uniform_int_distribution<std::size_t> pick(0, train_data.size() - 1);
  AdamState adam(model.param_count(), config.learning_rate);
  Tape tape;
  std::vector<double> grad(model.param_count());
  std::vector<std::size_t> batch(config.batch);
  std::vector<std::size_t> bad;
  const auto start = std::chrono::steady_clock::now();

  auto abort = [&](std::size_t step, std::string what, std::vector<std::size_t> indices) {
    for (std::size_t i = 0; i < indices.size() && i < 20; ++i) what += ' ' + std::to_string(indices[i]);
    if (!out_dir.empty()) {
      const auto path = (out_dir / "last_good.ckpt").string();
      save_checkpoint(path, model);
      what += "; last good parameters saved to " + path;
    }
    throw TrainingAborted(what, step, std::move(indices));
  };

  auto evaluate_set = [&](std::size_t step, const std::vector<Point>& data, const char* name) {
    double ll = std::numeric_limits<double>::quiet_NaN();
    try {
      ll = mean_log_prob(model, data);
    } catch (const NumericFault&) {
    }
    if (std::isfinite(ll)) return ll;
    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < data.size(); ++i) {
      try {
        if (std::isfinite(model.log_prob(data[i]))) continue;
      } catch (const NumericFault&) {
      }
      indices.push_back(i);
    }
    abort(step, "training aborted at step " + std::to_string(step) + ": non-finite log-density at " + name +
                    " indices",
          std::move(indices));
    return ll;
  };

  auto record = [&](std::size_t step) {
    TrainRecord r;
    r.step = step;
    r.train_ll = evaluate_set(step, train_data, "training set");
    r.test_ll = evaluate_set(step, test_data, "test set");
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.records.push_back(r);
    if (on_record) on_record(r);
  };

  record(0);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (auto& i : batch) i = pick(batch_rng);
    std::fill(grad.begin(), grad.end(), 0.0);
    bad.clear();
    batch_log_prob_gradient(model, train_data, batch, tape, grad, bad);
    for (auto& g : grad) g *= -1.0 / static_cast<double>(config.batch);
    const double norm = clip_by_global_norm(grad, config.grad_clip);
    if (!bad.empty() || !std::isfinite(norm)) {
      abort(step,
            "training aborted at step " + std::to_string(step) + ": non-finite " +
                (bad.empty() ? "gradient" : "log-density at batch indices"),
            bad);
    }
    adam_step(model.params(), grad, adam);
    if (step % config.log_every == 0 || step == config.steps) record(step);
  }

  if (!out_dir.empty()) {
    log.checkpoint_path = (out_dir / "model.ckpt").string();
    save_checkpoint(log.checkpoint_path, model);
    std::ofstream csv(out_dir / "train_log.csv");
    write_train_log(csv, log);
    std::ofstream timing(out_dir / "timing.csv");
    write_timing(timing, log);
    if (!csv || !timing) throw std::runtime_error("train: cannot write logs under " + out_dir.string());
  }
  return result;
}

}  // namespace radflow
