#pragma once

#include <array>
#include <numbers>
#include <vector>

#include <Eigen/Core>

namespace rlmpc::world {

/// Planar pose of the diff-drive robot: position [m] and heading [rad].
struct RobotState {
  double x = 0.0;
  double y = 0.0;
  double phi = 0.0;

  Eigen::Vector3d vector() const { return {x, y, phi}; }
  static RobotState from(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }
  bool operator==(const RobotState&) const = default;
};

/// Linear speed v [m/s] and angular rate nu [rad/s].
struct ControlInput {
  double v = 0.0;
  double nu = 0.0;

  Eigen::Vector2d vector() const { return {v, nu}; }
  static ControlInput from(const Eigen::Vector2d& u) { return {u[0], u[1]}; }
  bool operator==(const ControlInput&) const = default;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;

  bool contains(double value) const { return lower <= value && value <= upper; }
  double clamp(double value) const;
  double half_width() const { return 0.5 * (upper - lower); }
};

struct ActionBounds {
  Interval v{-0.6, 0.6};
  Interval nu{-std::numbers::pi / 2.0, std::numbers::pi / 2.0};

  bool contains(const ControlInput& u) const { return v.contains(u.v) && nu.contains(u.nu); }
  ControlInput clip(const ControlInput& u) const { return {v.clamp(u.v), nu.clamp(u.nu)}; }
  void validate() const;
};

/// Box over (x, y); the heading is unbounded.
struct StateBounds {
  Interval x{-9.0, 12.0};
  Interval y{-9.0, 12.0};

  bool contains(const RobotState& s) const { return x.contains(s.x) && y.contains(s.y); }
  void validate() const;
};

/// Circular obstacle; the keep-out circle has diameter robot_diameter + diameter.
struct Obstacle {
  double x = 0.0;
  double y = 0.0;
  double diameter = 2.0;
  double robot_diameter = 0.5;

  double safety_radius() const { return 0.5 * (diameter + robot_diameter); }
  void validate() const;
};

struct StageCostParams {
  /// Diagonal of the tracking weight matrix over (x, y, phi).
  std::array<double, 3> weights{1.0, 1.0, 0.1};
  double distance_threshold = 1.5;
  double safe_distance = 0.35;
  double penalty = 50.0;

  void validate() const;
};

/// Complete description of the tracking and obstacle-avoidance task.
struct Scenario {
  RobotState start{-2.5, 1.5, 0.0};
  RobotState target{8.5, 2.0, std::numbers::pi / 2.0};
  ControlInput reference_input{0.0, 0.0};
  std::vector<Obstacle> obstacles;
  StateBounds state_bounds;
  ActionBounds action_bounds;
  StageCostParams stage_cost;
  double sampling_period = 0.2;

  /// Start, target and bounds of the reference task. Four obstacles straddle the
  /// straight route; the first sits on it and forces a detour.
  static Scenario reference();
  /// Shorter variant (target 5 m from the start) reachable within 60 steps.
  static Scenario desk();
  void validate() const;
};

/// (x', y', phi') = (v cos phi, v sin phi, nu)
RobotState dynamics_continuous(const RobotState& s, const ControlInput& u);

/// Classical four-stage Runge-Kutta step with u held constant.
RobotState step_rk4(const RobotState& s, const ControlInput& u, double sampling_period);

/**
 * Closed form of the RK4 step for the unicycle. Because phi' = nu is constant
 * over the step, every stage angle is explicit and the step collapses to
 *
 *   x+ = x + h/6 v (cos phi + 4 cos(phi + h nu / 2) + cos(phi + h nu))
 *   y+ = y + h/6 v (sin phi + 4 sin(phi + h nu / 2) + sin(phi + h nu))
 *   phi+ = phi + h nu
 *
 * which is what the controller differentiates.
 */
class DiscreteDynamics {
 public:
  /// Ordering of the differentiation variables: (x, y, phi, v, nu).
  using Jacobian = Eigen::Matrix<double, 3, 5>;
  using Hessian = Eigen::Matrix<double, 5, 5>;

  explicit DiscreteDynamics(double sampling_period);

  RobotState step(const RobotState& s, const ControlInput& u) const;
  Jacobian jacobian(const RobotState& s, const ControlInput& u) const;
  /// sum_k weights[k] * d^2 step_k / d(s, u)^2
  Hessian weighted_hessian(const RobotState& s, const ControlInput& u,
                           const Eigen::Vector3d& weights) const;

  double sampling_period() const { return h_; }

 private:
  double h_;
};

/// 1 - 4 |p - c|^2 / (d_rob + d_obs)^2: positive inside the keep-out circle.
double obstacle_value(const RobotState& s, const Obstacle& obstacle);

/// Sum over obstacles of penalty * max(0, obstacle_value + safe_distance).
double collision_penalty(const RobotState& s, const StageCostParams& params,
                         const std::vector<Obstacle>& obstacles);

/**
 * RL stage cost: |s - target|_W^2 + |u|_2 within distance_threshold of the
 * target, |s - target|_W^2 + collision penalty otherwise.
 */
double rl_stage_cost(const RobotState& s, const ControlInput& u, const RobotState& target,
                     const StageCostParams& params, const std::vector<Obstacle>& obstacles);

/// Euclidean distance over (x, y, phi).
double state_distance(const RobotState& a, const RobotState& b);

/// Smallest distance to a keep-out circle boundary; negative inside a circle.
double min_clearance(const RobotState& s, const std::vector<Obstacle>& obstacles);

}  // namespace rlmpc::world
