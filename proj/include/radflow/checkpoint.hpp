#pragma once

// Plain-text model container. Layer kinds, splits and sizes come first, then
// one parameter per line in the shortest form that reads back to the
// identical double.
//
//   radflow-checkpoint 1
//   dim 2
//   layers 2
//   rad 8 pass 0 transform 1
//   realnvp 56 pass 1 transform 0
//   params 2652
//   ...

#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "radflow/format.hpp"
#include "radflow/model.hpp"

namespace radflow {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_checkpoint(std::ostream& out, const FlowModel& model) {
  out << "radflow-checkpoint " << kCheckpointVersion << '\n';
  out << "dim " << model.dim() << '\n';
  out << "layers " << model.layers().size() << '\n';
  for (const auto& layer : model.layers()) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          out << (std::is_same_v<L, RadCoupling> ? "rad" : "realnvp") << ' ' << l.hidden() << " pass";
          for (const auto i : l.split().pass) out << ' ' << i;
          out << " transform";
          for (const auto i : l.split().transform) out << ' ' << i;
          out << '\n';
        },
        layer);
  }
  out << "params " << model.param_count() << '\n';
  for (const double v : model.params()) out << format_double(v) << '\n';
}

inline FlowModel read_checkpoint(std::istream& in) {
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "radflow-checkpoint") throw CheckpointError("checkpoint: missing header");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  std::size_t dim = 0;
  std::size_t count = 0;
  if (!(in >> word >> dim) || word != "dim") throw CheckpointError("checkpoint: missing dim");
  if (!(in >> word >> count) || word != "layers") throw CheckpointError("checkpoint: missing layer count");
  std::getline(in, word);
  FlowModel model(dim);
  for (std::size_t l = 0; l < count; ++l) {
    std::string line;
    if (!std::getline(in, line)) throw CheckpointError("checkpoint: truncated layer list");
    std::istringstream ls(line);
    std::string kind;
    std::size_t hidden = 0;
    if (!(ls >> kind >> hidden >> word) || word != "pass") {
      throw CheckpointError("checkpoint: malformed layer line '" + line + "'");
    }
    Split split;
    auto* target = &split.pass;
    while (ls >> word) {
      if (word == "transform") {
        target = &split.transform;
        continue;
      }
      target->push_back(static_cast<std::size_t>(std::stoul(word)));
    }
    try {
      if (kind == "rad") {
        model.add_rad_layer(std::move(split), hidden);
      } else if (kind == "realnvp") {
        model.add_affine_layer(std::move(split), hidden);
      } else {
        throw CheckpointError("checkpoint: unknown layer kind '" + kind + "'");
      }
    } catch (const StructuralFault& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
  }
  std::size_t n = 0;
  if (!(in >> word >> n) || word != "params") throw CheckpointError("checkpoint: missing parameter count");
  if (n != model.param_count()) {
    throw CheckpointError("checkpoint: expected " + std::to_string(model.param_count()) + " parameters, found " +
                          std::to_string(n));
  }
  auto params = model.params();
  for (std::size_t i = 0; i < n; ++i) {
    if (!(in >> word)) throw CheckpointError("checkpoint: truncated at parameter " + std::to_string(i));
    char* end = nullptr;
    params[i] = std::strtod(word.c_str(), &end);
    if (end == word.c_str() || *end != '\0') throw CheckpointError("checkpoint: bad number '" + word + "'");
  }
  return model;
}

inline void save_checkpoint(const std::string& path, const FlowModel& model) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path);
  write_checkpoint(out, model);
  if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

inline FlowModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace radflow
