#include "rlmpc/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rlmpc::world {

double Interval::clamp(double value) const { return std::clamp(value, lower, upper); }

void ActionBounds::validate() const {
  if (!(v.lower < v.upper) || !(nu.lower < nu.upper)) {
    throw std::invalid_argument("action bounds must be nonempty boxes");
  }
}

void StateBounds::validate() const {
  if (!(x.lower < x.upper) || !(y.lower < y.upper)) {
    throw std::invalid_argument("state bounds must be nonempty boxes");
  }
}

void Obstacle::validate() const {
  if (!(diameter > 0) || !(robot_diameter > 0)) {
    throw std::invalid_argument("obstacle and robot diameters must be positive");
  }
}

void StageCostParams::validate() const {
  if (!(distance_threshold > 0)) throw std::invalid_argument("distance threshold must be > 0");
  if (!(safe_distance >= 0)) throw std::invalid_argument("safe distance must be >= 0");
  if (!(penalty >= 0)) throw std::invalid_argument("penalty weight must be >= 0");
  for (double w : weights) {
    if (!(w >= 0)) throw std::invalid_argument("stage cost weights must be >= 0");
  }
}

Scenario Scenario::reference() {
  Scenario scenario;
  scenario.obstacles = {{1.5, 1.2}, {4.0, 4.2}, {4.5, -1.0}, {7.0, 4.6}};
  return scenario;
}

Scenario Scenario::desk() {
  Scenario scenario;
  scenario.target = {2.5, 2.0, std::numbers::pi / 2.0};
  scenario.obstacles = {{0.0, 1.2}, {2.5, 4.6}, {3.0, -1.5}, {-1.5, -1.6}};
  return scenario;
}

void Scenario::validate() const {
  state_bounds.validate();
  action_bounds.validate();
  stage_cost.validate();
  for (const auto& o : obstacles) o.validate();
  if (!(sampling_period > 0)) throw std::invalid_argument("sampling period must be > 0");
}

RobotState dynamics_continuous(const RobotState& s, const ControlInput& u) {
  return {u.v * std::cos(s.phi), u.v * std::sin(s.phi), u.nu};
}

RobotState step_rk4(const RobotState& s, const ControlInput& u, double sampling_period) {
  if (!(sampling_period > 0)) throw std::invalid_argument("sampling period must be > 0");
  const double h = sampling_period;
  auto shifted = [&](const RobotState& k, double scale) {
    return RobotState{s.x + scale * k.x, s.y + scale * k.y, s.phi + scale * k.phi};
  };
  const RobotState k1 = dynamics_continuous(s, u);
  const RobotState k2 = dynamics_continuous(shifted(k1, h / 2), u);
  const RobotState k3 = dynamics_continuous(shifted(k2, h / 2), u);
  const RobotState k4 = dynamics_continuous(shifted(k3, h), u);
  return {s.x + h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x),
          s.y + h / 6 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y),
          s.phi + h / 6 * (k1.phi + 2 * k2.phi + 2 * k3.phi + k4.phi)};
}

DiscreteDynamics::DiscreteDynamics(double sampling_period) : h_(sampling_period) {
  if (!(sampling_period > 0)) throw std::invalid_argument("sampling period must be > 0");
}

RobotState DiscreteDynamics::step(const RobotState& s, const ControlInput& u) const {
  const double a2 = s.phi + 0.5 * h_ * u.nu;
  const double a4 = s.phi + h_ * u.nu;
  const double c = std::cos(s.phi) + 4 * std::cos(a2) + std::cos(a4);
  const double sn = std::sin(s.phi) + 4 * std::sin(a2) + std::sin(a4);
  const double k = h_ / 6;
  return {s.x + k * u.v * c, s.y + k * u.v * sn, s.phi + h_ * u.nu};
}

namespace {

// C = cos phi + 4 cos a2 + cos a4, S likewise, and their derivatives in (phi, nu).
struct AngleSums {
  double c, s;
  double c_phi, c_nu, s_phi, s_nu;
  double c_phiphi, c_phinu, c_nunu;
  double s_phiphi, s_phinu, s_nunu;
};

AngleSums angle_sums(double phi, double nu, double h) {
  const double a2 = phi + 0.5 * h * nu;
  const double a4 = phi + h * nu;
  const double cos0 = std::cos(phi), sin0 = std::sin(phi);
  const double cos2 = std::cos(a2), sin2 = std::sin(a2);
  const double cos4 = std::cos(a4), sin4 = std::sin(a4);
  AngleSums r{};
  r.c = cos0 + 4 * cos2 + cos4;
  r.s = sin0 + 4 * sin2 + sin4;
  r.c_phi = -r.s;
  r.s_phi = r.c;
  r.c_nu = -(2 * h * sin2 + h * sin4);
  r.s_nu = 2 * h * cos2 + h * cos4;
  r.c_phiphi = -r.c;
  r.s_phiphi = -r.s;
  r.c_phinu = -(2 * h * cos2 + h * cos4);
  r.s_phinu = -(2 * h * sin2 + h * sin4);
  r.c_nunu = -h * h * (cos2 + cos4);
  r.s_nunu = -h * h * (sin2 + sin4);
  return r;
}

}  // namespace

DiscreteDynamics::Jacobian DiscreteDynamics::jacobian(const RobotState& s,
                                                      const ControlInput& u) const {
  const AngleSums a = angle_sums(s.phi, u.nu, h_);
  const double k = h_ / 6;
  Jacobian j = Jacobian::Zero();
  j(0, 0) = 1.0;
  j(0, 2) = k * u.v * a.c_phi;
  j(0, 3) = k * a.c;
  j(0, 4) = k * u.v * a.c_nu;
  j(1, 1) = 1.0;
  j(1, 2) = k * u.v * a.s_phi;
  j(1, 3) = k * a.s;
  j(1, 4) = k * u.v * a.s_nu;
  j(2, 2) = 1.0;
  j(2, 4) = h_;
  return j;
}

DiscreteDynamics::Hessian DiscreteDynamics::weighted_hessian(
    const RobotState& s, const ControlInput& u, const Eigen::Vector3d& weights) const {
  const AngleSums a = angle_sums(s.phi, u.nu, h_);
  const double k = h_ / 6;
  const double wx = weights[0] * k;
  const double wy = weights[1] * k;
  // Only (phi, v, nu) = indices (2, 3, 4) carry curvature; phi+ is linear.
  Hessian hess = Hessian::Zero();
  hess(2, 2) = u.v * (wx * a.c_phiphi + wy * a.s_phiphi);
  hess(2, 3) = wx * a.c_phi + wy * a.s_phi;
  hess(2, 4) = u.v * (wx * a.c_phinu + wy * a.s_phinu);
  hess(3, 4) = wx * a.c_nu + wy * a.s_nu;
  hess(4, 4) = u.v * (wx * a.c_nunu + wy * a.s_nunu);
  hess(3, 2) = hess(2, 3);
  hess(4, 2) = hess(2, 4);
  hess(4, 3) = hess(3, 4);
  return hess;
}

double obstacle_value(const RobotState& s, const Obstacle& obstacle) {
  const double dx = s.x - obstacle.x;
  const double dy = s.y - obstacle.y;
  const double d = obstacle.robot_diameter + obstacle.diameter;
  return 1.0 - 4.0 * (dx * dx + dy * dy) / (d * d);
}

double collision_penalty(const RobotState& s, const StageCostParams& params,
                         const std::vector<Obstacle>& obstacles) {
  double total = 0.0;
  for (const auto& o : obstacles) {
    total += params.penalty * std::max(0.0, obstacle_value(s, o) + params.safe_distance);
  }
  return total;
}

double state_distance(const RobotState& a, const RobotState& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                   (a.phi - b.phi) * (a.phi - b.phi));
}

double rl_stage_cost(const RobotState& s, const ControlInput& u, const RobotState& target,
                     const StageCostParams& params, const std::vector<Obstacle>& obstacles) {
  const double ex = s.x - target.x;
  const double ey = s.y - target.y;
  const double ephi = s.phi - target.phi;
  const double tracking = params.weights[0] * ex * ex + params.weights[1] * ey * ey +
                          params.weights[2] * ephi * ephi;
  if (state_distance(s, target) < params.distance_threshold) {
    return tracking + std::hypot(u.v, u.nu);
  }
  return tracking + collision_penalty(s, params, obstacles);
}

double min_clearance(const RobotState& s, const std::vector<Obstacle>& obstacles) {
  double clearance = std::numeric_limits<double>::infinity();
  for (const auto& o : obstacles) {
    clearance = std::min(clearance, std::hypot(s.x - o.x, s.y - o.y) - o.safety_radius());
  }
  return clearance;
}

}  // namespace rlmpc::world
