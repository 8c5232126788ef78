#pragma once

#include <optional>
#include <string_view>

#include <Eigen/Core>

namespace rlmpc::nlp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/**
 * Smooth constrained nonlinear program
 *
 *   min  f(x; p)
 *   s.t. c_E(x; p)  = 0
 *        c_I(x; p) <= 0
 *        lb <= x <= ub
 *
 * The parameter vector p carries exogenous data. All callbacks must be
 * deterministic, and constraint dimensions must not change over the lifetime
 * of the problem.
 */
class NlpProblem {
 public:
  virtual ~NlpProblem() = default;

  virtual int num_variables() const = 0;
  virtual int num_equalities() const = 0;
  virtual int num_inequalities() const = 0;

  /// Lower variable bounds; -inf entries are unbounded. Defaults to all -inf.
  virtual VectorXd lower_bounds() const;
  /// Upper variable bounds; +inf entries are unbounded. Defaults to all +inf.
  virtual VectorXd upper_bounds() const;

  virtual double objective(const VectorXd& x, const VectorXd& p) const = 0;
  virtual VectorXd objective_gradient(const VectorXd& x,
                                      const VectorXd& p) const = 0;

  virtual VectorXd equalities(const VectorXd& x, const VectorXd& p) const = 0;
  /// Rows are constraints, columns are variables.
  virtual MatrixXd equality_jacobian(const VectorXd& x,
                                     const VectorXd& p) const = 0;

  virtual VectorXd inequalities(const VectorXd& x, const VectorXd& p) const = 0;
  virtual MatrixXd inequality_jacobian(const VectorXd& x,
                                       const VectorXd& p) const = 0;

  /**
   * Hessian of objective_factor * f + eq_mult' c_E + ineq_mult' c_I with
   * respect to x. Full symmetric matrix.
   */
  virtual MatrixXd lagrangian_hessian(const VectorXd& x, const VectorXd& p,
                                      double objective_factor,
                                      const VectorXd& eq_mult,
                                      const VectorXd& ineq_mult) const = 0;
};

/// Primal variables together with every multiplier of the problem.
struct PrimalDualPoint {
  VectorXd primal;
  VectorXd equality_multipliers;
  /// mu >= 0, one per inequality c_I(x) <= 0
  VectorXd inequality_multipliers;
  /// >= 0, nonzero only for finite lower bounds
  VectorXd lower_bound_multipliers;
  /// >= 0, nonzero only for finite upper bounds
  VectorXd upper_bound_multipliers;
};

enum class SolveStatus { converged, max_iterations, infeasible, numerical_failure };

std::string_view to_string(SolveStatus status);

struct NlpSolution : PrimalDualPoint {
  double objective = 0.0;
  SolveStatus status = SolveStatus::numerical_failure;
  int iterations = 0;
  double kkt_residual = 0.0;

  bool converged() const { return status == SolveStatus::converged; }
};

struct SolverOptions {
  double tolerance = 1e-8;
  int max_iterations = 200;
  /// Use the multipliers of the guess (when present) in addition to its primal.
  bool warm_start = false;

  void validate() const;
};

/**
 * Max of the stationarity, constraint-violation and complementarity infinity
 * norms at a candidate primal-dual point. Negative multipliers count as
 * violation. Zero exactly at a KKT point.
 */
double kkt_residual(const NlpProblem& problem, const VectorXd& parameter,
                    const PrimalDualPoint& candidate);

/**
 * Primal-dual interior-point method with a monotone barrier schedule,
 * fraction-to-boundary rule, l1-merit backtracking line search and inertia
 * correction of the KKT matrix. Inequalities are handled through slacks;
 * an elastic feasibility phase classifies locally infeasible problems.
 *
 * Holds mutable workspace, so one instance per concurrent activity.
 */
class InteriorPointSolver {
 public:
  explicit InteriorPointSolver(SolverOptions options = {});

  NlpSolution solve(const NlpProblem& problem, const VectorXd& parameter,
                    const std::optional<PrimalDualPoint>& guess = std::nullopt);

  const SolverOptions& options() const { return options_; }
  void set_options(const SolverOptions& options);

  /// Regularization used in the last inertia correction (0 if none needed).
  double last_hessian_regularization() const { return last_delta_w_; }

 private:
  NlpSolution solve_impl(const NlpProblem& problem, const VectorXd& parameter,
                         const std::optional<PrimalDualPoint>& guess,
                         bool allow_feasibility_phase);

  SolverOptions options_;
  double last_delta_w_ = 0.0;
};

NlpSolution solve_nlp(const NlpProblem& problem, const VectorXd& parameter,
                      const std::optional<PrimalDualPoint>& guess = std::nullopt,
                      const SolverOptions& options = {});

}  // namespace rlmpc::nlp
