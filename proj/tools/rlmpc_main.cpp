// Command-line entry point: train, resume or evaluate a learning run.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "rlmpc/agents.hpp"
#include "rlmpc/config.hpp"
#include "rlmpc/harness.hpp"

namespace {

enum Exit { ok = 0, usage = 1, diverged = 2 };

void print_theta(const rlmpc::nmpc::ThetaVector& theta) {
  std::cout << "theta:";
  for (double v : theta.values) std::cout << ' ' << v;
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rlmpc;

  CLI::App app{"Learning-based tuning of a mobile-robot NMPC (ES, deep ES, RDES, GES)."};
  std::optional<std::string> algo;
  std::optional<int> episodes;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> config_path;
  std::optional<std::string> out;
  std::optional<std::string> resume_dir;
  bool eval_only = false;

  app.add_option("--algo", algo, "Learning rule: " + agents::valid_algorithm_names());
  app.add_option("--episodes", episodes, "Number of training episodes")->check(CLI::PositiveNumber);
  app.add_option("--steps", steps, "Environment steps per episode")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--config", config_path, "INI configuration file");
  app.add_option("--out", out, "Output directory");
  app.add_option("--resume", resume_dir, "Continue the run stored in this directory");
  app.add_flag("--eval-only", eval_only,
               "Run one greedy episode without learning (theta from --resume's checkpoint if given)");
  CLI11_PARSE(app, argc, argv);

  try {
    if (algo && !agents::parse_algorithm(*algo)) {
      std::cerr << "error: unknown algorithm '" << *algo
                << "'; valid algorithms: " << agents::valid_algorithm_names() << '\n';
      return usage;
    }

    if (resume_dir && !eval_only) {
      if (algo || steps || seed || config_path || out) {
        std::cerr << "error: --resume only accepts --episodes; the run's config-echo is reused\n";
        return usage;
      }
      const harness::TrainingLog log = harness::resume(*resume_dir, episodes);
      std::cout << "resumed " << *resume_dir << ": " << log.episodes.size() << " episode(s) run\n";
      print_theta(log.final_theta);
      if (log.diverged) {
        std::cerr << "halted: " << log.halt_reason << '\n';
        return diverged;
      }
      return ok;
    }

    harness::RunConfig config;
    if (config_path) {
      config = harness::load_config(*config_path);
    } else if (resume_dir) {
      config = harness::load_config(std::filesystem::path(*resume_dir) / "config-echo");
    }
    if (algo) config.algorithm = *agents::parse_algorithm(*algo);
    if (episodes) config.episodes = *episodes;
    if (steps) config.steps = *steps;
    if (seed) config.seed = *seed;
    if (out) config.output_dir = *out;
    if (config.output_dir.empty()) {
      std::cerr << "error: no output directory (use --out or [run] output_dir)\n";
      return usage;
    }
    config.validate();

    if (eval_only) {
      std::optional<nmpc::ThetaVector> theta;
      if (resume_dir) theta = harness::checkpoint_theta(*resume_dir);
      const harness::EpisodeLog log = harness::evaluate(config, theta);
      std::cout << "evaluation: stage cost sum " << log.summary.stage_cost_sum << ", static error "
                << log.summary.static_error << ", min clearance " << log.summary.min_clearance << '\n';
      return ok;
    }

    const harness::TrainingLog log = harness::train(config);
    std::cout << "trained " << log.episodes.size() << " episode(s) with "
              << agents::algorithm_name(config.algorithm) << " into " << config.output_dir << '\n';
    print_theta(log.final_theta);
    if (log.diverged) {
      std::cerr << "halted: " << log.halt_reason << '\n';
      return diverged;
    }
    return ok;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  }
}
