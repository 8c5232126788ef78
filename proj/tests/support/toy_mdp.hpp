#pragma once

// Two-state, two-action MDP with one-hot (exact) linear Q features, used to
// check the gradient-TD kernels against an exactly solved projected Bellman
// system. Taking action a moves to state a; the target policy always picks
// action 0; transitions are swept cyclically, so the behavior distribution is
// uniform over the four (s, a) pairs.

#include <Eigen/Dense>
#include <cmath>

#include "rlmpc/agents.hpp"

namespace rlmpc::testing {

struct ToyMdp {
  double discount = 0.9;
  double cost[2][2] = {{1.0, 2.0}, {0.5, 3.0}};

  static Eigen::Vector4d feature(int s, int a) { return Eigen::Vector4d::Unit(2 * s + a); }
  static Eigen::Vector4d next_feature(int a) { return feature(a, 0); }

  double delta(const Eigen::Vector4d& theta, int s, int a) const {
    return cost[s][a] + discount * theta.dot(next_feature(a)) - theta.dot(feature(s, a));
  }

  // Solution of E[phi (phi - gamma phi+)'] theta = E[phi l] under the uniform sweep.
  Eigen::Vector4d fixed_point() const {
    Eigen::Matrix4d a = Eigen::Matrix4d::Zero();
    Eigen::Vector4d b = Eigen::Vector4d::Zero();
    for (int s = 0; s < 2; ++s) {
      for (int act = 0; act < 2; ++act) {
        const Eigen::Vector4d phi = feature(s, act);
        a += phi * (phi - discount * next_feature(act)).transpose() / 4.0;
        b += phi * cost[s][act] / 4.0;
      }
    }
    return a.fullPivLu().solve(b);
  }

  double mspbe(const Eigen::Vector4d& theta) const {
    Eigen::VectorXd deltas(4);
    Eigen::MatrixXd features(4, 4);
    for (int i = 0; i < 4; ++i) {
      deltas[i] = delta(theta, i / 2, i % 2);
      features.col(i) = feature(i / 2, i % 2);
    }
    return agents::mspbe_estimate(deltas, features);
  }
};

struct GtdRun {
  Eigen::Vector4d theta;
  double mspbe = 0.0;
};

// GES on the toy MDP from theta = 0 and w = w_init with the given step sizes.
inline GtdRun run_gradient_td(const ToyMdp& mdp, long updates, double alpha, double beta,
                              double w_init) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(4, w_init);
  for (long k = 0; k < updates; ++k) {
    const int s = static_cast<int>(k % 4) / 2;
    const int a = static_cast<int>(k % 2);
    agents::gradient_td_step(theta, w, mdp.delta(theta, s, a), ToyMdp::feature(s, a),
                             ToyMdp::next_feature(a), mdp.discount, alpha, beta);
  }
  GtdRun run;
  run.theta = theta;
  run.mspbe = mdp.mspbe(run.theta);
  return run;
}

// Off-policy "theta -> 2 theta" pair: only the transition from the state with
// feature 1 to the state with feature 2 is ever sampled, with zero cost.
// Returns |theta_final| / |theta_0| for the semi-gradient rule.
inline double semi_gradient_inflation(long updates, double alpha, double discount = 0.9) {
  Eigen::VectorXd theta = Eigen::VectorXd::Ones(1);
  const Eigen::VectorXd phi = Eigen::VectorXd::Ones(1);
  const Eigen::VectorXd phi_next = Eigen::VectorXd::Constant(1, 2.0);
  for (long k = 0; k < updates; ++k) {
    const double delta = discount * theta.dot(phi_next) - theta.dot(phi);
    agents::semi_gradient_step(theta, delta, phi, alpha);
  }
  return std::abs(theta[0]);
}

}  // namespace rlmpc::testing
