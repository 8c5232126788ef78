#pragma once

#include <random>
#include <vector>

#include "rlmpc/function_approx.hpp"
#include "rlmpc/nmpc.hpp"
#include "rlmpc/world.hpp"

namespace rlmpc::testing {

// Closed-loop rollouts on the desk scenario with exploration and per-episode
// theta perturbations; targets are the exact action values Q_theta(s, a).
inline fa::ReplayBuffer closed_loop_buffer(std::size_t records, unsigned seed = 2024) {
  const world::Scenario scenario = world::Scenario::desk();
  nmpc::Controller controller(nmpc::NmpcConfig::from_scenario(scenario));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> perturb(0.8, 1.2);
  const nmpc::Exploration exploration{.decay = 0.99, .scale_fraction = 0.5};
  fa::ReplayBuffer buffer;
  while (buffer.size() < records) {
    nmpc::ThetaVector theta = nmpc::ThetaVector::initial();
    for (double& v : theta.values) v *= perturb(rng);
    world::RobotState s = scenario.start;
    std::vector<world::ControlInput> plan;
    for (int k = 0; k < 60 && buffer.size() < records; ++k) {
      const nmpc::QEvaluation greedy = controller.policy(s, theta, plan);
      const Eigen::Vector2d noise(normal(rng), normal(rng));
      const world::ControlInput a = nmpc::explore_action(greedy.first_input(), k % 20, noise,
                                                         exploration, scenario.action_bounds);
      const nmpc::QEvaluation q = controller.evaluate_q(s, a, theta, plan);
      if (q.converged()) buffer.push({s, a, theta, q.value()});
      plan = nmpc::shift_inputs(greedy.inputs());
      s = world::step_rk4(s, a, scenario.sampling_period);
    }
  }
  return buffer;
}

inline double target_variance(const fa::ReplayBuffer& buffer) {
  double mean = 0.0;
  for (std::size_t i = 0; i < buffer.size(); ++i) mean += buffer[i].q;
  mean /= static_cast<double>(buffer.size());
  double var = 0.0;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    var += (buffer[i].q - mean) * (buffer[i].q - mean);
  }
  return var / static_cast<double>(buffer.size());
}

inline fa::QNetwork desk_network(bool theta_input = true) {
  const world::Scenario sc = world::Scenario::desk();
  return fa::QNetwork(sc.state_bounds, sc.action_bounds, nmpc::ThetaVector::initial(), theta_input);
}

}  // namespace rlmpc::testing
