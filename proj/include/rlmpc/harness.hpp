#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlmpc/agents.hpp"
#include "rlmpc/config.hpp"
#include "rlmpc/function_approx.hpp"
#include "rlmpc/nmpc.hpp"
#include "rlmpc/world.hpp"

namespace rlmpc::harness {

/// One environment step. NaN marks quantities that were not computed.
struct StepRecord {
  int episode = 0;
  int step = 0;
  world::RobotState s;
  world::ControlInput a;
  double stage_cost = 0.0;
  double td_error = 0.0;
  double q = 0.0;
  double q_next = 0.0;
  int nlp_solves = 0;
  int nlp_iterations = 0;
  double wall_ms = 0.0;
  /// theta (and w for GES) after this step's update.
  nmpc::ThetaVector theta;
  std::optional<nmpc::ThetaGradient> w;
  /// An OCP solve did not converge; the update was skipped.
  bool solver_failure = false;
  /// theta changed through a learning update this step.
  bool updated = false;
};

struct EpisodeSummary {
  int episode = 0;
  double stage_cost_sum = 0.0;
  /// ||s_K - s_ref||_2 over (x, y, phi).
  double static_error = 0.0;
  double min_clearance = 0.0;
  /// Largest obstacle value Xi over every visited state; > 0 is a collision.
  double max_obstacle_value = 0.0;
  int solver_failures = 0;
  world::RobotState final_state;
};

struct EpisodeLog {
  std::vector<StepRecord> steps;
  EpisodeSummary summary;
  bool complete = false;
};

/// Raised when |delta| exceeds the configured threshold or theta stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int episode, int step)
      : std::runtime_error(what), episode_(episode), step_(step) {}
  int episode() const { return episode_; }
  int step() const { return step_; }

 private:
  int episode_;
  int step_;
};

/**
 * Agent, world and random stream of one run. Episodes start from the
 * scenario's initial state with a cold-started controller; all learning state
 * persists across episodes and is captured by save_checkpoint.
 */
class Trainer {
 public:
  explicit Trainer(RunConfig config);

  /// Runs the next episode with exploration and learning. On divergence the
  /// partial log is kept in last_partial() and DivergenceError is thrown.
  EpisodeLog run_episode();
  /// Greedy rollout with the current theta, no learning, no exploration.
  EpisodeLog evaluate();

  const RunConfig& config() const { return config_; }
  const nmpc::ThetaVector& theta() const { return theta_; }
  const nmpc::ThetaGradient& w() const { return w_; }
  const fa::QNetwork& network() const { return network_; }
  const fa::ReplayBuffer& buffer() const { return buffer_; }
  int next_episode() const { return next_episode_; }
  std::int64_t global_step() const { return global_step_; }
  std::int64_t total_solves() const { return controller_.solve_count(); }
  const EpisodeLog& last_partial() const { return partial_; }

  void save_checkpoint(std::ostream& out) const;
  /// Restores the learning state; the config must match the one that wrote it.
  void load_checkpoint(std::istream& in);

 private:
  EpisodeLog rollout(bool learn);

  RunConfig config_;
  world::Scenario scenario_;
  nmpc::Controller controller_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
  nmpc::ThetaVector theta_;
  nmpc::ThetaGradient w_;
  fa::QNetwork network_;
  fa::AdamState adam_;
  fa::ReplayBuffer buffer_;
  int next_episode_ = 0;
  std::int64_t global_step_ = 0;
  EpisodeLog partial_;
};

/// Appends rows to episodes.csv, theta.csv and summary.csv in a run directory.
class CsvSink {
 public:
  /// Fresh files with headers, or (resume) the existing files truncated to
  /// rows of episodes before first_episode.
  CsvSink(const std::filesystem::path& directory, bool resume, int first_episode = 0);

  void write(const EpisodeLog& log);
  void flush();

  static const char* episodes_header();
  static const char* theta_header();
  static const char* summary_header();

 private:
  std::ofstream episodes_;
  std::ofstream theta_;
  std::ofstream summary_;
};

struct TrainingLog {
  std::vector<EpisodeLog> episodes;
  /// theta at the end of each completed episode.
  std::vector<nmpc::ThetaVector> theta_trajectory;
  nmpc::ThetaVector final_theta;
  bool diverged = false;
  std::string halt_reason;
};

/**
 * Runs config.episodes episodes. With a nonempty output_dir, writes
 * config-echo, the CSV logs, checkpoint.txt (every checkpoint_every episodes
 * and on exit) and, on a divergence halt, divergence.txt.
 */
TrainingLog train(const RunConfig& config);
/// Continues the run in directory from its checkpoint up to `episodes` episodes.
TrainingLog resume(const std::filesystem::path& directory, std::optional<int> episodes = std::nullopt);
/// One greedy episode; writes the CSV logs when output_dir is set.
EpisodeLog evaluate(const RunConfig& config, std::optional<nmpc::ThetaVector> theta = std::nullopt);

/// Theta stored in a run directory's checkpoint.
nmpc::ThetaVector checkpoint_theta(const std::filesystem::path& directory);

}  // namespace rlmpc::harness
