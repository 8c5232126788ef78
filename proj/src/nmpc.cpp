#include "rlmpc/nmpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace rlmpc::nmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kThetaOffset = 3;
constexpr int kInputOffset = kThetaOffset + ThetaVector::size;

constexpr std::array<std::string_view, ThetaVector::size> kThetaNames = {
    "theta_x", "theta_y", "theta_phi", "theta_v", "theta_nu",
    "theta_xf", "theta_yf", "theta_phif", "theta_c"};

double wrap_angle(double a) {
  const double two_pi = 2 * std::numbers::pi;
  double r = std::remainder(a, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  return r;
}

ThetaVector theta_from(const VectorXd& p) {
  ThetaVector t;
  for (int j = 0; j < ThetaVector::size; ++j) t[j] = p[kThetaOffset + j];
  return t;
}

double safety_diameter_sq(const world::Obstacle& o) {
  const double d = o.robot_diameter + o.diameter;
  return d * d;
}

}  // namespace

ThetaVector ThetaVector::from(const ThetaGradient& v) {
  ThetaVector t;
  for (int j = 0; j < size; ++j) t[j] = v[j];
  return t;
}

ThetaVector ThetaVector::initial() {
  return {{1.0, 1.0, 0.05, 0.05, 0.05, 1.0, 1.0, 0.1, 0.001}};
}

std::string_view ThetaVector::name(int i) {
  if (i < 0 || i >= size) throw std::out_of_range("theta index out of range");
  return kThetaNames[static_cast<std::size_t>(i)];
}

bool ThetaVector::finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

NmpcConfig NmpcConfig::from_scenario(const world::Scenario& scenario, double slack_weight) {
  NmpcConfig config;
  config.sampling_period = scenario.sampling_period;
  config.action_bounds = scenario.action_bounds;
  config.state_bounds = scenario.state_bounds;
  config.obstacles = scenario.obstacles;
  config.slack_weights.assign(scenario.obstacles.size(), slack_weight);
  config.terminal_slack_weights.assign(scenario.obstacles.size(), slack_weight);
  config.reference_state = scenario.target;
  config.reference_input = scenario.reference_input;
  return config;
}

void NmpcConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (!(discount > 0 && discount < 1)) throw std::invalid_argument("discount must lie in (0, 1)");
  if (!(sampling_period > 0)) throw std::invalid_argument("sampling period must be > 0");
  action_bounds.validate();
  state_bounds.validate();
  if (slack_weights.size() != obstacles.size() ||
      terminal_slack_weights.size() != obstacles.size()) {
    throw std::invalid_argument("slack weight count must match the obstacle count");
  }
  for (double w : slack_weights) {
    if (!(w >= 0)) throw std::invalid_argument("slack weights must be >= 0");
  }
  for (double w : terminal_slack_weights) {
    if (!(w >= 0)) throw std::invalid_argument("terminal slack weights must be >= 0");
  }
  for (const auto& o : obstacles) o.validate();
}

OcpProblem::OcpProblem(NmpcConfig config, const RobotState& s, const ThetaVector& theta,
                       std::optional<ControlInput> fixed_first_input)
    : config_(std::move(config)), model_(config_.sampling_period) {
  config_.validate();
  if (!theta.finite()) throw std::invalid_argument("theta must be finite");
  fixed_ = fixed_first_input.has_value();
  parameter_.resize(kInputOffset + (fixed_ ? 2 : 0));
  parameter_.head<3>() = s.vector();
  parameter_.segment<ThetaVector::size>(kThetaOffset) = theta.vector();
  if (fixed_) parameter_.tail<2>() = fixed_first_input->vector();
  const int horizon = config_.horizon;
  n_ = 3 * (horizon + 1) + 2 * horizon + (horizon + 1) * num_obstacles();
}

int OcpProblem::num_equalities() const { return 3 * (config_.horizon + 1) + (fixed_ ? 2 : 0); }

int OcpProblem::num_inequalities() const { return (config_.horizon + 1) * num_obstacles(); }

RobotState OcpProblem::initial_state() const { return RobotState::from(parameter_.head<3>()); }

ThetaVector OcpProblem::theta() const { return theta_from(parameter_); }

std::optional<ControlInput> OcpProblem::fixed_first_input() const {
  if (!fixed_) return std::nullopt;
  return ControlInput::from(parameter_.tail<2>());
}

RobotState OcpProblem::state(const VectorXd& z, int i) const {
  return RobotState::from(z.segment<3>(state_index(i)));
}

ControlInput OcpProblem::input(const VectorXd& z, int i) const {
  return ControlInput::from(z.segment<2>(input_index(i)));
}

double OcpProblem::heading_residual(double phi) const {
  const double e = phi - config_.reference_state.phi;
  return config_.wrap_heading ? wrap_angle(e) : e;
}

VectorXd OcpProblem::lower_bounds() const {
  VectorXd lb = VectorXd::Constant(n_, -kInf);
  for (int i = 1; i <= config_.horizon; ++i) {
    lb[state_index(i)] = config_.state_bounds.x.lower;
    lb[state_index(i) + 1] = config_.state_bounds.y.lower;
  }
  for (int i = fixed_ ? 1 : 0; i < config_.horizon; ++i) {
    lb[input_index(i)] = config_.action_bounds.v.lower;
    lb[input_index(i) + 1] = config_.action_bounds.nu.lower;
  }
  lb.tail(num_inequalities()).setZero();
  return lb;
}

VectorXd OcpProblem::upper_bounds() const {
  VectorXd ub = VectorXd::Constant(n_, kInf);
  for (int i = 1; i <= config_.horizon; ++i) {
    ub[state_index(i)] = config_.state_bounds.x.upper;
    ub[state_index(i) + 1] = config_.state_bounds.y.upper;
  }
  for (int i = fixed_ ? 1 : 0; i < config_.horizon; ++i) {
    ub[input_index(i)] = config_.action_bounds.v.upper;
    ub[input_index(i) + 1] = config_.action_bounds.nu.upper;
  }
  return ub;
}

double OcpProblem::objective(const VectorXd& z, const VectorXd& p) const {
  const ThetaVector t = theta_from(p);
  const RobotState& ref = config_.reference_state;
  const ControlInput& uref = config_.reference_input;
  const int horizon = config_.horizon;
  const int no = num_obstacles();
  double total = 0.0;
  double g = 1.0;
  for (int i = 0; i <= horizon; ++i) {
    const RobotState x = state(z, i);
    const double ex = x.x - ref.x, ey = x.y - ref.y, ep = heading_residual(x.phi);
    double stage = 0.0;
    if (i < horizon) {
      const ControlInput u = input(z, i);
      const double ev = u.v - uref.v, en = u.nu - uref.nu;
      stage = t[ThetaVector::x] * t[ThetaVector::x] * ex * ex +
              t[ThetaVector::y] * t[ThetaVector::y] * ey * ey +
              t[ThetaVector::phi] * t[ThetaVector::phi] * ep * ep +
              t[ThetaVector::v] * t[ThetaVector::v] * ev * ev +
              t[ThetaVector::nu] * t[ThetaVector::nu] * en * en;
      for (int n = 0; n < no; ++n) stage += config_.slack_weights[n] * z[slack_index(i, n)];
    } else {
      stage = t[ThetaVector::x_f] * t[ThetaVector::x_f] * ex * ex +
              t[ThetaVector::y_f] * t[ThetaVector::y_f] * ey * ey +
              t[ThetaVector::phi_f] * t[ThetaVector::phi_f] * ep * ep;
      for (int n = 0; n < no; ++n) stage += config_.terminal_slack_weights[n] * z[slack_index(i, n)];
    }
    total += g * stage;
    g *= config_.discount;
  }
  return total;
}

VectorXd OcpProblem::objective_gradient(const VectorXd& z, const VectorXd& p) const {
  const ThetaVector t = theta_from(p);
  const RobotState& ref = config_.reference_state;
  const ControlInput& uref = config_.reference_input;
  const int horizon = config_.horizon;
  const int no = num_obstacles();
  VectorXd grad = VectorXd::Zero(n_);
  double g = 1.0;
  for (int i = 0; i <= horizon; ++i) {
    const RobotState x = state(z, i);
    const bool terminal = i == horizon;
    const double wx = terminal ? t[ThetaVector::x_f] : t[ThetaVector::x];
    const double wy = terminal ? t[ThetaVector::y_f] : t[ThetaVector::y];
    const double wp = terminal ? t[ThetaVector::phi_f] : t[ThetaVector::phi];
    const int si = state_index(i);
    grad[si] = 2 * g * wx * wx * (x.x - ref.x);
    grad[si + 1] = 2 * g * wy * wy * (x.y - ref.y);
    grad[si + 2] = 2 * g * wp * wp * heading_residual(x.phi);
    if (!terminal) {
      const ControlInput u = input(z, i);
      const int ui = input_index(i);
      grad[ui] = 2 * g * t[ThetaVector::v] * t[ThetaVector::v] * (u.v - uref.v);
      grad[ui + 1] = 2 * g * t[ThetaVector::nu] * t[ThetaVector::nu] * (u.nu - uref.nu);
    }
    const auto& omega = terminal ? config_.terminal_slack_weights : config_.slack_weights;
    for (int n = 0; n < no; ++n) grad[slack_index(i, n)] = g * omega[n];
    g *= config_.discount;
  }
  return grad;
}

VectorXd OcpProblem::equalities(const VectorXd& z, const VectorXd& p) const {
  VectorXd c(num_equalities());
  c.head<3>() = z.segment<3>(0) - p.head<3>();
  for (int i = 0; i < config_.horizon; ++i) {
    const RobotState next = model_.step(state(z, i), input(z, i));
    c.segment<3>(3 * (i + 1)) = z.segment<3>(state_index(i + 1)) - next.vector();
  }
  if (fixed_) c.tail<2>() = z.segment<2>(input_index(0)) - p.tail<2>();
  return c;
}

MatrixXd OcpProblem::equality_jacobian(const VectorXd& z, const VectorXd&) const {
  MatrixXd j = MatrixXd::Zero(num_equalities(), n_);
  j.block<3, 3>(0, 0).setIdentity();
  for (int i = 0; i < config_.horizon; ++i) {
    const auto d = model_.jacobian(state(z, i), input(z, i));
    const int row = 3 * (i + 1);
    j.block<3, 3>(row, state_index(i + 1)).setIdentity();
    j.block<3, 3>(row, state_index(i)) = -d.leftCols<3>();
    j.block<3, 2>(row, input_index(i)) = -d.rightCols<2>();
  }
  if (fixed_) j.block<2, 2>(num_equalities() - 2, input_index(0)).setIdentity();
  return j;
}

VectorXd OcpProblem::inequalities(const VectorXd& z, const VectorXd& p) const {
  const double theta_c = p[kThetaOffset + ThetaVector::c];
  const int no = num_obstacles();
  VectorXd c(num_inequalities());
  for (int i = 0; i <= config_.horizon; ++i) {
    const RobotState x = state(z, i);
    for (int n = 0; n < no; ++n) {
      c[i * no + n] =
          world::obstacle_value(x, config_.obstacles[n]) + theta_c - z[slack_index(i, n)];
    }
  }
  return c;
}

MatrixXd OcpProblem::inequality_jacobian(const VectorXd& z, const VectorXd&) const {
  const int no = num_obstacles();
  MatrixXd j = MatrixXd::Zero(num_inequalities(), n_);
  for (int i = 0; i <= config_.horizon; ++i) {
    const RobotState x = state(z, i);
    for (int n = 0; n < no; ++n) {
      const auto& o = config_.obstacles[n];
      const double scale = -8.0 / safety_diameter_sq(o);
      const int row = i * no + n;
      j(row, state_index(i)) = scale * (x.x - o.x);
      j(row, state_index(i) + 1) = scale * (x.y - o.y);
      j(row, slack_index(i, n)) = -1.0;
    }
  }
  return j;
}

MatrixXd OcpProblem::lagrangian_hessian(const VectorXd& z, const VectorXd& p,
                                        double objective_factor, const VectorXd& eq_mult,
                                        const VectorXd& ineq_mult) const {
  const ThetaVector t = theta_from(p);
  const int horizon = config_.horizon;
  const int no = num_obstacles();
  MatrixXd h = MatrixXd::Zero(n_, n_);
  double g = objective_factor;
  for (int i = 0; i <= horizon; ++i) {
    const bool terminal = i == horizon;
    const int si = state_index(i);
    const double wx = terminal ? t[ThetaVector::x_f] : t[ThetaVector::x];
    const double wy = terminal ? t[ThetaVector::y_f] : t[ThetaVector::y];
    const double wp = terminal ? t[ThetaVector::phi_f] : t[ThetaVector::phi];
    h(si, si) += 2 * g * wx * wx;
    h(si + 1, si + 1) += 2 * g * wy * wy;
    h(si + 2, si + 2) += 2 * g * wp * wp;
    if (!terminal) {
      const int ui = input_index(i);
      h(ui, ui) += 2 * g * t[ThetaVector::v] * t[ThetaVector::v];
      h(ui + 1, ui + 1) += 2 * g * t[ThetaVector::nu] * t[ThetaVector::nu];
    }
    g *= config_.discount;
  }

  // Dynamics rows are x_{i+1} - F(x_i, u_i), so their curvature enters negated.
  for (int i = 0; i < horizon; ++i) {
    const Eigen::Vector3d lambda = eq_mult.segment<3>(3 * (i + 1));
    const auto block = model_.weighted_hessian(state(z, i), input(z, i), lambda);
    const std::array<int, 5> idx = {state_index(i), state_index(i) + 1, state_index(i) + 2,
                                    input_index(i), input_index(i) + 1};
    for (int a = 0; a < 5; ++a) {
      for (int b = 0; b < 5; ++b) h(idx[a], idx[b]) -= block(a, b);
    }
  }

  for (int i = 0; i <= horizon; ++i) {
    const int si = state_index(i);
    for (int n = 0; n < no; ++n) {
      const double curvature = -8.0 / safety_diameter_sq(config_.obstacles[n]) * ineq_mult[i * no + n];
      h(si, si) += curvature;
      h(si + 1, si + 1) += curvature;
    }
  }
  return h;
}

VectorXd OcpProblem::initial_guess(const std::vector<ControlInput>& inputs) const {
  const int horizon = config_.horizon;
  const int no = num_obstacles();
  const double theta_c = parameter_[kThetaOffset + ThetaVector::c];
  VectorXd z = VectorXd::Zero(n_);
  RobotState x = initial_state();
  for (int i = 0; i <= horizon; ++i) {
    z.segment<3>(state_index(i)) = x.vector();
    for (int n = 0; n < no; ++n) {
      z[slack_index(i, n)] = std::max(0.0, world::obstacle_value(x, config_.obstacles[n]) + theta_c);
    }
    if (i == horizon) break;
    ControlInput u;
    if (!inputs.empty()) u = inputs[std::min<std::size_t>(i, inputs.size() - 1)];
    u = config_.action_bounds.clip(u);
    if (i == 0 && fixed_) u = ControlInput::from(parameter_.tail<2>());
    z.segment<2>(input_index(i)) = u.vector();
    x = model_.step(x, u);
  }
  return z;
}

std::shared_ptr<OcpProblem> build_ocp(const NmpcConfig& config, const RobotState& s,
                                      const ThetaVector& theta,
                                      std::optional<ControlInput> fixed_first_input) {
  return std::make_shared<OcpProblem>(config, s, theta, fixed_first_input);
}

ThetaGradient sensitivity(const OcpProblem& problem, const nlp::NlpSolution& solution,
                          const ThetaVector& theta) {
  if (!solution.converged()) {
    throw std::invalid_argument("sensitivity requires a converged primal-dual solution");
  }
  const VectorXd& z = solution.primal;
  if (z.size() != problem.num_variables() ||
      solution.inequality_multipliers.size() != problem.num_inequalities()) {
    throw std::invalid_argument("solution dimensions do not match the problem");
  }
  const NmpcConfig& config = problem.config();
  const RobotState& ref = config.reference_state;
  const ControlInput& uref = config.reference_input;
  const int horizon = config.horizon;

  ThetaGradient grad = ThetaGradient::Zero();
  double g = 1.0;
  for (int i = 0; i <= horizon; ++i) {
    const RobotState x = problem.state(z, i);
    double ep = x.phi - ref.phi;
    if (config.wrap_heading) ep = wrap_angle(ep);
    const double ex2 = (x.x - ref.x) * (x.x - ref.x);
    const double ey2 = (x.y - ref.y) * (x.y - ref.y);
    if (i < horizon) {
      const ControlInput u = problem.input(z, i);
      grad[ThetaVector::x] += 2 * g * theta[ThetaVector::x] * ex2;
      grad[ThetaVector::y] += 2 * g * theta[ThetaVector::y] * ey2;
      grad[ThetaVector::phi] += 2 * g * theta[ThetaVector::phi] * ep * ep;
      grad[ThetaVector::v] += 2 * g * theta[ThetaVector::v] * (u.v - uref.v) * (u.v - uref.v);
      grad[ThetaVector::nu] += 2 * g * theta[ThetaVector::nu] * (u.nu - uref.nu) * (u.nu - uref.nu);
    } else {
      grad[ThetaVector::x_f] += 2 * g * theta[ThetaVector::x_f] * ex2;
      grad[ThetaVector::y_f] += 2 * g * theta[ThetaVector::y_f] * ey2;
      grad[ThetaVector::phi_f] += 2 * g * theta[ThetaVector::phi_f] * ep * ep;
    }
    g *= config.discount;
  }
  grad[ThetaVector::c] = solution.inequality_multipliers.sum();
  return grad;
}

QEvaluation::QEvaluation(std::shared_ptr<const OcpProblem> problem, nlp::NlpSolution solution)
    : problem_(std::move(problem)), solution_(std::move(solution)) {
  const auto& bounds = problem_->config().action_bounds;
  first_ = bounds.clip(problem_->input(solution_.primal, 0));
  second_ = bounds.clip(problem_->input(solution_.primal, std::min(1, problem_->horizon() - 1)));
}

std::vector<ControlInput> QEvaluation::inputs() const {
  std::vector<ControlInput> u;
  u.reserve(static_cast<std::size_t>(problem_->horizon()));
  for (int i = 0; i < problem_->horizon(); ++i) u.push_back(problem_->input(solution_.primal, i));
  return u;
}

const ThetaGradient& QEvaluation::gradient() const {
  if (!gradient_) gradient_ = sensitivity(*problem_, solution_, problem_->theta());
  return *gradient_;
}

Controller::Controller(NmpcConfig config, nlp::SolverOptions options)
    : config_(std::move(config)), solver_(options) {
  config_.validate();
}

QEvaluation Controller::solve(std::shared_ptr<OcpProblem> problem,
                              const std::vector<ControlInput>& warm) {
  nlp::PrimalDualPoint guess;
  guess.primal = problem->initial_guess(warm);
  nlp::NlpSolution solution = solver_.solve(*problem, problem->parameter(), guess);
  ++solves_;
  iterations_ += solution.iterations;
  return QEvaluation(std::move(problem), std::move(solution));
}

QEvaluation Controller::evaluate_q(const RobotState& s, const ControlInput& a,
                                   const ThetaVector& theta,
                                   const std::vector<ControlInput>& warm_inputs) {
  if (!config_.action_bounds.contains(a)) {
    throw std::invalid_argument("action-value evaluation requires an action inside the box");
  }
  return solve(build_ocp(config_, s, theta, a), warm_inputs);
}

QEvaluation Controller::policy(const RobotState& s, const ThetaVector& theta,
                               const std::vector<ControlInput>& warm_inputs) {
  return solve(build_ocp(config_, s, theta), warm_inputs);
}

void Controller::reset_counters() {
  solves_ = 0;
  iterations_ = 0;
}

QEvaluation evaluate_q(const NmpcConfig& config, const RobotState& s, const ControlInput& a,
                       const ThetaVector& theta) {
  Controller controller(config);
  return controller.evaluate_q(s, a, theta);
}

QEvaluation policy(const NmpcConfig& config, const RobotState& s, const ThetaVector& theta) {
  Controller controller(config);
  return controller.policy(s, theta);
}

void Exploration::validate() const {
  if (!(decay > 0 && decay < 1)) throw std::invalid_argument("exploration decay must lie in (0, 1)");
  if (!(scale_fraction >= 0)) throw std::invalid_argument("exploration scale must be >= 0");
}

ControlInput explore_action(const ControlInput& greedy, std::int64_t k, const Eigen::Vector2d& noise,
                            const Exploration& exploration, const world::ActionBounds& bounds) {
  exploration.validate();
  if (k < 0) throw std::invalid_argument("exploration step index must be >= 0");
  const double magnitude = std::pow(exploration.decay, static_cast<double>(k));
  const ControlInput raw{
      greedy.v + magnitude * exploration.scale_fraction * bounds.v.half_width() * noise[0],
      greedy.nu + magnitude * exploration.scale_fraction * bounds.nu.half_width() * noise[1]};
  return bounds.clip(raw);
}

std::vector<ControlInput> shift_inputs(const std::vector<ControlInput>& inputs) {
  if (inputs.empty()) return {};
  std::vector<ControlInput> shifted(inputs.begin() + 1, inputs.end());
  shifted.push_back(inputs.back());
  return shifted;
}

}  // namespace rlmpc::nmpc
