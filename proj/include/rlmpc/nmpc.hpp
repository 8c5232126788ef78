#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "rlmpc/nlp.hpp"
#include "rlmpc/world.hpp"

namespace rlmpc::nmpc {

using world::ControlInput;
using world::RobotState;

using ThetaGradient = Eigen::Matrix<double, 9, 1>;

/// Tunable controller parameters in the fixed order
/// (x, y, phi, v, nu, x_f, y_f, phi_f, c); gradients use the same order.
struct ThetaVector {
  enum Index : int { x = 0, y, phi, v, nu, x_f, y_f, phi_f, c };
  static constexpr int size = 9;

  std::array<double, size> values{};

  double& operator[](int i) { return values[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return values[static_cast<std::size_t>(i)]; }

  ThetaGradient vector() const { return ThetaGradient(values.data()); }
  static ThetaVector from(const ThetaGradient& v);
  /// [1 1 0.05 0.05 0.05 1 1 0.1 0.001]
  static ThetaVector initial();
  static std::string_view name(int i);

  bool finite() const;
  bool operator==(const ThetaVector&) const = default;
};

struct NmpcConfig {
  int horizon = 10;
  double discount = 0.97;
  double sampling_period = 0.2;
  world::ActionBounds action_bounds;
  world::StateBounds state_bounds;
  /// Stage slack weights, one per obstacle.
  std::vector<double> slack_weights;
  /// Terminal slack weights, one per obstacle.
  std::vector<double> terminal_slack_weights;
  std::vector<world::Obstacle> obstacles;
  RobotState reference_state;
  ControlInput reference_input;
  /// Wrap the heading residual to (-pi, pi] before squaring.
  bool wrap_heading = false;

  /// Controller for a scenario with every slack weight set to slack_weight.
  static NmpcConfig from_scenario(const world::Scenario& scenario, double slack_weight = 100.0);
  void validate() const;
};

/**
 * The parametrized OCP over z = (x_0..x_N, u_0..u_{N-1}, sigma_0..sigma_N):
 *
 *   min  sum_i gamma^i (L(x_i, u_i) + omega' sigma_i) + gamma^N (V(x_N) + omega_f' sigma_N)
 *   s.t. x_0 = s,  x_{i+1} = f(x_i, u_i),  [u_0 = a]
 *        Xi_n(x_i) + theta_c - sigma_{i,n} <= 0,  sigma >= 0
 *        x_i in S (i >= 1),  u_i in A
 *
 * with L, V diagonal quadratics whose weights are squared components of theta.
 * The parameter vector is (s, theta[, a]).
 */
class OcpProblem final : public nlp::NlpProblem {
 public:
  OcpProblem(NmpcConfig config, const RobotState& s, const ThetaVector& theta,
             std::optional<ControlInput> fixed_first_input);

  int num_variables() const override { return n_; }
  int num_equalities() const override;
  int num_inequalities() const override;
  Eigen::VectorXd lower_bounds() const override;
  Eigen::VectorXd upper_bounds() const override;

  double objective(const Eigen::VectorXd& z, const Eigen::VectorXd& p) const override;
  Eigen::VectorXd objective_gradient(const Eigen::VectorXd& z,
                                     const Eigen::VectorXd& p) const override;
  Eigen::VectorXd equalities(const Eigen::VectorXd& z, const Eigen::VectorXd& p) const override;
  Eigen::MatrixXd equality_jacobian(const Eigen::VectorXd& z,
                                    const Eigen::VectorXd& p) const override;
  Eigen::VectorXd inequalities(const Eigen::VectorXd& z, const Eigen::VectorXd& p) const override;
  Eigen::MatrixXd inequality_jacobian(const Eigen::VectorXd& z,
                                      const Eigen::VectorXd& p) const override;
  Eigen::MatrixXd lagrangian_hessian(const Eigen::VectorXd& z, const Eigen::VectorXd& p,
                                     double objective_factor, const Eigen::VectorXd& eq_mult,
                                     const Eigen::VectorXd& ineq_mult) const override;

  const NmpcConfig& config() const { return config_; }
  const Eigen::VectorXd& parameter() const { return parameter_; }
  RobotState initial_state() const;
  ThetaVector theta() const;
  std::optional<ControlInput> fixed_first_input() const;

  int horizon() const { return config_.horizon; }
  int num_obstacles() const { return static_cast<int>(config_.obstacles.size()); }
  int state_index(int i) const { return 3 * i; }
  int input_index(int i) const { return 3 * (config_.horizon + 1) + 2 * i; }
  int slack_index(int i, int obstacle) const {
    return 3 * (config_.horizon + 1) + 2 * config_.horizon + i * num_obstacles() + obstacle;
  }

  RobotState state(const Eigen::VectorXd& z, int i) const;
  ControlInput input(const Eigen::VectorXd& z, int i) const;

  /**
   * Primal starting point: inputs (shifted from a previous solution when given,
   * zero otherwise; u_0 = a when fixed) rolled out through the model from s,
   * slacks at max(0, Xi + theta_c).
   */
  Eigen::VectorXd initial_guess(const std::vector<ControlInput>& inputs = {}) const;

 private:
  double heading_residual(double phi) const;

  NmpcConfig config_;
  world::DiscreteDynamics model_;
  Eigen::VectorXd parameter_;
  bool fixed_ = false;
  int n_ = 0;
};

/// build_ocp in the controller's vocabulary.
std::shared_ptr<OcpProblem> build_ocp(const NmpcConfig& config, const RobotState& s,
                                      const ThetaVector& theta,
                                      std::optional<ControlInput> fixed_first_input = std::nullopt);

/**
 * Gradient of the Lagrangian with respect to theta at the primal-dual point of
 * a converged solve; no re-solve. Throws std::invalid_argument otherwise.
 */
ThetaGradient sensitivity(const OcpProblem& problem, const nlp::NlpSolution& solution,
                          const ThetaVector& theta);

/// Result of one OCP solve at (s[, a]).
class QEvaluation {
 public:
  QEvaluation(std::shared_ptr<const OcpProblem> problem, nlp::NlpSolution solution);

  double value() const { return solution_.objective; }
  bool converged() const { return solution_.converged(); }
  const nlp::NlpSolution& solution() const { return solution_; }
  const OcpProblem& problem() const { return *problem_; }
  ControlInput first_input() const { return first_; }
  ControlInput second_input() const { return second_; }
  /// The predicted input sequence u_0..u_{N-1}.
  std::vector<ControlInput> inputs() const;
  /// Sensitivity with respect to theta, computed on first use.
  const ThetaGradient& gradient() const;

 private:
  std::shared_ptr<const OcpProblem> problem_;
  nlp::NlpSolution solution_;
  ControlInput first_;
  ControlInput second_;
  mutable std::optional<ThetaGradient> gradient_;
};

/**
 * Solves the OCP for action values and policies and counts the solves.
 * Holds solver workspace; one instance per concurrent activity.
 */
class Controller {
 public:
  explicit Controller(NmpcConfig config, nlp::SolverOptions options = {});

  /// Q_theta(s, a): OCP value with u_0 = a, where a must lie in the action box.
  QEvaluation evaluate_q(const RobotState& s, const ControlInput& a, const ThetaVector& theta,
                         const std::vector<ControlInput>& warm_inputs = {});
  /// Greedy policy: OCP with u_0 free; value is V_theta(s).
  QEvaluation policy(const RobotState& s, const ThetaVector& theta,
                     const std::vector<ControlInput>& warm_inputs = {});

  const NmpcConfig& config() const { return config_; }
  const nlp::SolverOptions& solver_options() const { return solver_.options(); }
  std::int64_t solve_count() const { return solves_; }
  std::int64_t iteration_count() const { return iterations_; }
  void reset_counters();

 private:
  QEvaluation solve(std::shared_ptr<OcpProblem> problem, const std::vector<ControlInput>& warm);

  NmpcConfig config_;
  nlp::InteriorPointSolver solver_;
  std::int64_t solves_ = 0;
  std::int64_t iterations_ = 0;
};

QEvaluation evaluate_q(const NmpcConfig& config, const RobotState& s, const ControlInput& a,
                       const ThetaVector& theta);
QEvaluation policy(const NmpcConfig& config, const RobotState& s, const ThetaVector& theta);

/// Exploration noise law: perturbation c_eps^k * scale * noise.
struct Exploration {
  double decay = 0.99;
  /// Per-dimension noise scale as a fraction of the action half-width.
  double scale_fraction = 0.1;

  void validate() const;
};

/// greedy + decay^k * scale (.) noise, clipped to the action box.
ControlInput explore_action(const ControlInput& greedy, std::int64_t k, const Eigen::Vector2d& noise,
                            const Exploration& exploration, const world::ActionBounds& bounds);

/// Inputs u_1..u_{N-1} of a previous solution followed by a repeat of u_{N-1}.
std::vector<ControlInput> shift_inputs(const std::vector<ControlInput>& inputs);

}  // namespace rlmpc::nmpc
