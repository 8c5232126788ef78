#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rlmpc/agents.hpp"
#include "rlmpc/nlp.hpp"
#include "rlmpc/nmpc.hpp"
#include "rlmpc/world.hpp"

namespace rlmpc::harness {

/// Exponent of the exploration decay: environment steps over the whole run, or episode number.
enum class ExplorationIndex { global, episode };

/**
 * Everything that determines a training run. Defaults are the standard
 * controller and algorithm configuration on the reference scenario.
 *
 * File form (INI, every key optional):
 *   [run]    episodes steps seed checkpoint_every output_dir
 *   [world]  scenario (reference|desk preset applied first) start target reference_input
 *            obstacles ("x y, x y, ...") obstacle_diameter robot_diameter x_bounds y_bounds
 *            v_bounds nu_bounds sampling_period cost_weights distance_threshold safe_distance
 *            collision_penalty
 *   [nmpc]   horizon discount slack_weights terminal_slack_weights wrap_heading
 *            solver_tolerance solver_max_iterations
 *   [agent]  algorithm alpha beta theta_init w_init exploration_decay exploration_scale
 *            exploration_index reset_w_each_episode divergence_threshold
 *   [nn]     hidden zeta minibatch buffer_capacity
 * Vectors are whitespace separated.
 */
struct RunConfig {
  agents::Algorithm algorithm = agents::Algorithm::ges;
  int episodes = 300;
  int steps = 129;
  std::uint64_t seed = 0;
  int checkpoint_every = 10;
  std::string output_dir;

  std::string scenario_name = "reference";
  world::Scenario scenario = world::Scenario::reference();

  int horizon = 10;
  double discount = 0.97;
  std::vector<double> slack_weights{100.0, 100.0, 100.0, 100.0};
  std::vector<double> terminal_slack_weights{100.0, 100.0, 100.0, 100.0};
  bool wrap_heading = false;
  nlp::SolverOptions solver;

  /// alpha = 0 freezes theta (TD errors are still logged).
  double alpha = 1e-7;
  double beta = 1e-8;
  nmpc::ThetaVector theta_init = nmpc::ThetaVector::initial();
  double w_init = 1e-4;
  nmpc::Exploration exploration;
  ExplorationIndex exploration_index = ExplorationIndex::global;
  bool reset_w_each_episode = false;
  double divergence_threshold = 1e6;

  std::vector<int> hidden{64, 64};
  double zeta = 1e-2;
  int minibatch = 128;
  std::size_t buffer_capacity = 0;

  nmpc::NmpcConfig nmpc_config() const;
  /// Throws std::invalid_argument naming the offending key.
  void validate() const;
};

/// Throws std::runtime_error on unknown sections or keys and on unparsable values.
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);
/// Writes every key; parse_config of the output reproduces the config exactly.
void write_config(std::ostream& out, const RunConfig& config);

}  // namespace rlmpc::harness
