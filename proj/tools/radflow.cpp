// radflow command-line entry point.
//
//   radflow <command> [flags]   commands: gen-data train eval sample viz repro
//
// Every flag may also come from --config FILE (key=value lines, keys are the
// flag names without dashes); flags on the command line win. Exit codes: 0
// success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "radflow/checkpoint.hpp"
#include "radflow/data.hpp"
#include "radflow/model.hpp"
#include "radflow/report.hpp"
#include "radflow/train.hpp"

namespace fs = std::filesystem;
using namespace radflow;

namespace {

constexpr const char* kVersion = "0.1.0";

const std::vector<std::string> kProblemNames = {"grid-gmm",    "ring-gmm", "two-moons",
                                                "two-circles", "spiral",   "many-moons"};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return entries;
}

// Splices config-file entries in front of the command-line flags of the
// subcommand, skipping keys the command line already sets.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string config_path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config_path.empty() || rest.size() < 2) return rest;
  auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    return std::any_of(rest.begin() + 2, rest.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::vector<std::string> out(rest.begin(), rest.begin() + 2);
  for (const auto& [key, value] : read_config(config_path)) {
    if (key == "config") throw UsageError("config files cannot include other config files");
    if (given(key)) continue;
    out.push_back("--" + key);
    out.push_back(value);
  }
  out.insert(out.end(), rest.begin() + 2, rest.end());
  return out;
}

void write_manifest(const fs::path& dir, const CLI::App& command,
                    const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.txt");
  out << "command=" << command.get_name() << '\n';
  for (const auto* opt : command.get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames()[0] == "help") continue;
    std::string value = opt->count() > 0 ? opt->as<std::string>() : opt->get_default_str();
    out << opt->get_lnames()[0] << '=' << value << '\n';
  }
  for (const auto& [k, v] : extra) out << k << '=' << v << '\n';
  out << "radflow_version=" << kVersion << '\n';
  out << "compiler=" << __VERSION__ << '\n';
  out << "cplusplus=" << __cplusplus << '\n';
  if (!out) throw std::runtime_error("cannot write manifest under " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void add_train_flags(CLI::App* cmd, TrainConfig& c, std::string& model, std::string& problem) {
  cmd->add_option("--model", model, "rad or realnvp")->check(CLI::IsMember({"rad", "realnvp"}))->capture_default_str();
  cmd->add_option("--problem", problem, "toy problem")->check(CLI::IsMember(kProblemNames))->capture_default_str();
  cmd->add_option("--layers", c.layers, "coupling layers")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--hidden", c.hidden, "hidden units (0: 8 for rad, 56 for realnvp)")->capture_default_str();
  cmd->add_option("--steps", c.steps, "optimizer steps")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--batch", c.batch, "minibatch size")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--learning-rate", c.learning_rate, "Adam step size")->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--grad-clip", c.grad_clip, "global gradient-norm bound, 0 disables")->capture_default_str();
  cmd->add_option("--noise", c.noise, "data noise scale (default per problem)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--log-every", c.log_every, "steps between evaluations")->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--train-size", c.train_size, "training set size")->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--test-size", c.test_size, "held-out set size")->check(CLI::PositiveNumber)
      ->capture_default_str();
}

std::vector<std::pair<std::string, std::string>> describe(const TrainConfig& c) {
  return {{"model", to_string(c.model)},
          {"problem", to_string(c.problem)},
          {"layers", std::to_string(c.layers)},
          {"hidden", std::to_string(c.resolved_hidden())},
          {"steps", std::to_string(c.steps)},
          {"batch", std::to_string(c.batch)},
          {"learning-rate", format_double(c.learning_rate)},
          {"grad-clip", format_double(c.grad_clip)},
          {"log-every", std::to_string(c.log_every)},
          {"train-size", std::to_string(c.train_size)},
          {"test-size", std::to_string(c.test_size)},
          {"seed", std::to_string(c.seed)}};
}

std::string describe_text(const TrainConfig& c) {
  std::string s;
  for (const auto& [k, v] : describe(c)) s += k + '=' + v + '\n';
  if (c.noise) s += "noise=" + format_double(*c.noise) + '\n';
  return s;
}

// Trains one configuration into `dir`, or reuses a finished run there whose
// recorded configuration matches.
TrainLog train_or_resume(const TrainConfig& c, const fs::path& dir, std::ostream& progress) {
  const std::string config_text = describe_text(c);
  const auto done = dir / "config.txt";
  if (fs::exists(done) && read_text(done) == config_text && fs::exists(dir / "model.ckpt") &&
      fs::exists(dir / "train_log.csv")) {
    std::ifstream in(dir / "train_log.csv");
    TrainLog log;
    log.records = read_train_log(in);
    log.checkpoint_path = (dir / "model.ckpt").string();
    log.param_count = load_checkpoint(log.checkpoint_path).param_count();
    progress << "  reusing " << dir.string() << '\n';
    return log;
  }
  fs::remove(done);
  TrainConfig run = c;
  run.output_dir = dir.string();
  auto result = train(run, [&](const TrainRecord& r) {
    if (r.step == run.steps || r.step % (10 * run.log_every) == 0) {
      progress << "  step " << r.step << " train " << fixed2(r.train_ll) << " test " << fixed2(r.test_ll) << " ("
               << static_cast<long>(r.wall_seconds) << " s)\n"
               << std::flush;
    }
  });
  write_text(done, config_text);
  return result.log;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw UsageError("--seeds expects a comma-separated list of non-negative integers");
    }
    seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw UsageError("--seeds is empty");
  return seeds;
}

}  // namespace

int run(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  try {
    args = expand_config(args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  CLI::App app{"RAD and Real NVP normalizing flows on 2-D toy problems"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_version_flag("--version", kVersion);

  std::uint64_t seed = 0;
  std::string out = "out";
  std::string model_name = "rad";
  std::string problem_name = "grid-gmm";
  std::string checkpoint;
  std::size_t n = 10000;
  std::optional<double> noise;
  TrainConfig train_config;
  std::string kind_name = "samples";
  std::size_t layer = 0;
  std::string seeds_text = "0,1,2";
  std::vector<std::string> problems = kProblemNames;
  std::vector<std::string> models = {"rad", "realnvp"};

  auto shared = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "random seed")->capture_default_str();
    cmd->add_option("--out", out, "output directory")->capture_default_str();
    cmd->add_option("--config", "key=value file with defaults for these flags");
  };

  auto* gen = app.add_subcommand("gen-data", "write a toy data set as CSV");
  shared(gen);
  gen->add_option("--problem", problem_name)->check(CLI::IsMember(kProblemNames))->capture_default_str();
  gen->add_option("--n", n, "number of points")->capture_default_str();
  gen->add_option("--noise", noise, "noise scale (default per problem)");

  auto* train_cmd = app.add_subcommand("train", "train one model");
  shared(train_cmd);
  add_train_flags(train_cmd, train_config, model_name, problem_name);

  auto* eval = app.add_subcommand("eval", "mean log-likelihood of a checkpoint on held-out data");
  shared(eval);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--problem", problem_name)->check(CLI::IsMember(kProblemNames))->capture_default_str();
  eval->add_option("--n", n, "held-out points")->capture_default_str();

  auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  shared(sample);
  sample->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  sample->add_option("--n", n, "number of samples")->capture_default_str();

  auto* viz = app.add_subcommand("viz", "export a figure (SVG plus CSV) under OUT/figures");
  shared(viz);
  viz->add_option("--checkpoint", checkpoint, "model checkpoint (not needed for data)")->check(CLI::ExistingFile);
  viz->add_option("--kind", kind_name, "samples, gaussianization, folding or data")
      ->check(CLI::IsMember({"samples", "gaussianization", "folding", "data"}))
      ->capture_default_str();
  viz->add_option("--problem", problem_name)->check(CLI::IsMember(kProblemNames))->capture_default_str();
  viz->add_option("--layer", layer, "RAD layer for folding figures")->capture_default_str();
  viz->add_option("--n", n, "points to plot")->capture_default_str();

  auto* repro = app.add_subcommand("repro", "train both models on every problem and tabulate test LL");
  repro->add_option("--out", out, "output directory")->capture_default_str();
  repro->add_option("--config", "key=value file with defaults for these flags");
  repro->add_option("--seeds", seeds_text, "comma-separated run seeds")->capture_default_str();
  repro->add_option("--problems", problems, "subset of problems")->check(CLI::IsMember(kProblemNames))
      ->delimiter(',')
      ->capture_default_str();
  repro->add_option("--models", models, "subset of models")->check(CLI::IsMember({"rad", "realnvp"}))
      ->delimiter(',')
      ->capture_default_str();
  add_train_flags(repro, train_config, model_name, problem_name);
  repro->remove_option(repro->get_option("--model"));
  repro->remove_option(repro->get_option("--problem"));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const fs::path out_dir(out);
    train_config.seed = seed;
    train_config.model = parse_model_kind(model_name);
    train_config.problem = parse_problem(problem_name);

    if (gen->parsed()) {
      const DatasetSpec spec{train_config.problem, n, seed, noise};
      const auto batch = generate(spec);
      fs::create_directories(out_dir);
      save_csv(batch.points, (out_dir / "data.csv").string());
      write_manifest(out_dir, *gen, {{"noise-resolved", format_double(spec.noise_scale())}});
      std::cout << "wrote " << batch.points.size() << " points to " << (out_dir / "data.csv").string() << '\n';
    } else if (train_cmd->parsed()) {
      train_config.output_dir = out_dir.string();
      const auto probe = make_model(train_config, 0);
      std::cout << to_string(train_config.model) << " on " << to_string(train_config.problem) << ": "
                << probe.param_count() << " parameters\n";
      write_manifest(out_dir, *train_cmd,
                     {{"hidden-resolved", std::to_string(train_config.resolved_hidden())},
                      {"param-count", std::to_string(probe.param_count())}});
      const auto result = train(train_config, [](const TrainRecord& r) {
        std::cout << "step " << r.step << " train_ll " << fixed2(r.train_ll) << " test_ll " << fixed2(r.test_ll)
                  << '\n'
                  << std::flush;
      });
      std::cout << "checkpoint " << result.log.checkpoint_path << '\n';
    } else if (eval->parsed()) {
      const auto model = load_checkpoint(checkpoint);
      TrainConfig c = train_config;
      c.test_size = n;
      const auto data = generate(test_data_spec(c)).points;
      const double ll = mean_log_prob(model, data);
      const auto oracle = true_log_likelihood(test_data_spec(c), data);
      fs::create_directories(out_dir);
      std::ostringstream text;
      text << "problem=" << problem_name << "\nseed=" << seed << "\nn=" << n << "\ntest_ll=" << format_double(ll)
           << '\n';
      if (oracle) text << "true_ll=" << format_double(*oracle) << '\n';
      write_text(out_dir / "eval.txt", text.str());
      write_manifest(out_dir, *eval);
      std::cout << text.str();
    } else if (sample->parsed()) {
      const auto model = load_checkpoint(checkpoint);
      std::mt19937_64 rng(seed);
      const auto fig = samples_figure(model, n, rng);
      fs::create_directories(out_dir);
      save_csv(fig.points, (out_dir / "samples.csv").string());
      write_figure(out_dir, "samples", fig);
      write_manifest(out_dir, *sample);
      std::cout << "wrote " << fig.points.size() << " samples to " << (out_dir / "samples.csv").string() << '\n';
    } else if (viz->parsed()) {
      const auto kind = parse_figure_kind(kind_name);
      std::mt19937_64 rng(seed);
      const auto data = generate({train_config.problem, n, derive_seed(seed, kTestData), std::nullopt}).points;
      if (kind == FigureKind::kData) {
        write_figure(out_dir, "data-" + problem_name, data_figure(data, problem_name));
      } else {
        if (checkpoint.empty()) throw UsageError("--checkpoint is required for " + kind_name + " figures");
        const auto model = load_checkpoint(checkpoint);
        if (kind == FigureKind::kSamples) {
          write_figure(out_dir, "samples", samples_figure(model, n, rng));
        } else if (kind == FigureKind::kGaussianization) {
          write_figure(out_dir, "gaussianization-" + problem_name, gaussianization_figure(model, data));
        } else {
          const auto figs = folding_figures(model, data, layer);
          const std::string stem = "folding-" + problem_name + "-layer" + std::to_string(layer);
          write_figure(out_dir, stem + "-input", figs.input);
          write_figure(out_dir, stem + "-output", figs.output);
        }
      }
      write_manifest(out_dir, *viz);
      std::cout << "figures written under " << (out_dir / "figures").string() << '\n';
    } else if (repro->parsed()) {
      const auto seeds = parse_seeds(seeds_text);
      write_manifest(out_dir, *repro);
      std::ofstream results(out_dir / "results.csv");
      results << "problem,model,seed,param_count,train_ll,test_ll,true_ll\n";
      std::map<std::pair<Problem, ModelKind>, std::vector<double>> test_lls;
      for (const auto s : seeds) {
        for (const auto& pname : problems) {
          for (const auto& mname : models) {
            TrainConfig c = train_config;
            c.seed = s;
            c.problem = parse_problem(pname);
            c.model = parse_model_kind(mname);
            std::cout << pname << ' ' << mname << " seed " << s << '\n' << std::flush;
            const auto dir = out_dir / "runs" / pname / mname / ("seed" + std::to_string(s));
            const auto log = train_or_resume(c, dir, std::cout);
            const auto& last = log.records.back();
            const auto spec = test_data_spec(c);
            const auto oracle = true_log_likelihood(spec, generate(spec).points);
            results << pname << ',' << mname << ',' << s << ',' << log.param_count << ','
                    << format_double(last.train_ll) << ',' << format_double(last.test_ll) << ','
                    << (oracle ? format_double(*oracle) : std::string(kMissingCell)) << '\n'
                    << std::flush;
            test_lls[{c.problem, c.model}].push_back(last.test_ll);
          }
        }
      }
      LlResults table;
      for (const auto& [key, values] : test_lls) table.set(key.first, key.second, median(values));
      write_text(out_dir / "table.txt", ll_table(table));
      write_text(out_dir / "table.csv", ll_table_csv(table));
      // Figures from the first seed's models.
      for (const auto& pname : problems) {
        const auto p = parse_problem(pname);
        for (const auto& mname : models) {
          const auto dir = out_dir / "runs" / pname / mname / ("seed" + std::to_string(seeds.front()));
          const auto model = load_checkpoint((dir / "model.ckpt").string());
          std::mt19937_64 rng(seeds.front());
          write_figure(out_dir, pname + "-" + mname + "-samples", samples_figure(model, 2000, rng));
          const auto data = generate({p, 2000, derive_seed(seeds.front(), kTestData), std::nullopt}).points;
          write_figure(out_dir, pname + "-" + mname + "-gaussianization", gaussianization_figure(model, data));
        }
      }
      std::cout << '\n' << ll_table(table);
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

int main(int argc, char** argv) { return run(argc, argv); }
