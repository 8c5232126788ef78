#include "rlmpc/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <lapacke.h>

namespace rlmpc::nlp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Barrier schedule and line-search constants.
constexpr double kBarrierInit = 0.1;
constexpr double kBarrierLinearDecrease = 0.2;
constexpr double kBarrierSuperlinearPower = 1.5;
constexpr double kBarrierErrorFactor = 10.0;
constexpr double kMultiplierSafeguard = 1e10;
constexpr double kArmijo = 1e-4;
constexpr double kColdBoundPush = 1e-2;
constexpr double kWarmBoundPush = 1e-10;
constexpr double kFirstRegularization = 1e-8;
constexpr double kMaxRegularization = 1e40;
constexpr int kStallLimit = 5;

struct Inertia {
  int positive = 0;
  int negative = 0;
  int zero = 0;
};

// Bunch-Kaufman LDL' of a dense symmetric matrix, used for its inertia.
class SymmetricIndefiniteFactor {
 public:
  Inertia factor(const MatrixXd& matrix) {
    const auto n = static_cast<lapack_int>(matrix.rows());
    lu_ = matrix;
    pivots_.resize(static_cast<std::size_t>(n));
    Inertia inertia;
    if (n == 0) return inertia;
    const lapack_int info =
        LAPACKE_dsytrf(LAPACK_COL_MAJOR, 'L', n, lu_.data(), n, pivots_.data());
    if (info < 0) throw std::logic_error("dsytrf: invalid argument");
    singular_ = info > 0;
    constexpr double zero_pivot = 1e-14;
    for (lapack_int k = 0; k < n;) {
      if (pivots_[k] > 0) {
        const double d = lu_(k, k);
        if (std::abs(d) <= zero_pivot) {
          ++inertia.zero;
        } else if (d > 0) {
          ++inertia.positive;
        } else {
          ++inertia.negative;
        }
        ++k;
      } else {
        const double a = lu_(k, k);
        const double b = lu_(k + 1, k);
        const double c = lu_(k + 1, k + 1);
        const double det = a * c - b * b;
        if (det < 0) {
          ++inertia.positive;
          ++inertia.negative;
        } else if (det > 0) {
          (a + c > 0 ? inertia.positive : inertia.negative) += 2;
        } else {
          ++inertia.zero;
          ++((a + c) >= 0 ? inertia.positive : inertia.negative);
        }
        k += 2;
      }
    }
    if (singular_ && inertia.zero == 0) inertia.zero = 1;
    return inertia;
  }

  VectorXd solve(const VectorXd& rhs) const {
    VectorXd x = rhs;
    const auto n = static_cast<lapack_int>(lu_.rows());
    if (n == 0) return x;
    const lapack_int info = LAPACKE_dsytrs(LAPACK_COL_MAJOR, 'L', n, 1, lu_.data(),
                                           n, pivots_.data(), x.data(), n);
    if (info != 0) throw std::logic_error("dsytrs failed");
    return x;
  }

 private:
  MatrixXd lu_;
  std::vector<lapack_int> pivots_;
  bool singular_ = false;
};

struct Evaluation {
  double f = 0.0;
  VectorXd grad;
  VectorXd ce;
  MatrixXd je;
  VectorXd ci;
  MatrixXd ji;
};

Evaluation evaluate(const NlpProblem& problem, const VectorXd& x,
                    const VectorXd& p) {
  Evaluation e;
  e.f = problem.objective(x, p);
  e.grad = problem.objective_gradient(x, p);
  e.ce = problem.equalities(x, p);
  e.je = problem.equality_jacobian(x, p);
  e.ci = problem.inequalities(x, p);
  e.ji = problem.inequality_jacobian(x, p);
  return e;
}

double norm_inf(const VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
}

double violation(const VectorXd& ce, const VectorXd& ci) {
  double v = norm_inf(ce);
  for (Eigen::Index j = 0; j < ci.size(); ++j) v = std::max(v, ci[j]);
  return v;
}

// The residual formula shared by kkt_residual and the solver's termination test.
double residual_from(const Evaluation& e, const VectorXd& lb, const VectorXd& ub,
                     const PrimalDualPoint& z) {
  const VectorXd& x = z.primal;
  VectorXd stationarity = e.grad;
  if (e.ce.size() > 0) stationarity += e.je.transpose() * z.equality_multipliers;
  if (e.ci.size() > 0) stationarity += e.ji.transpose() * z.inequality_multipliers;
  stationarity -= z.lower_bound_multipliers;
  stationarity += z.upper_bound_multipliers;

  double r = norm_inf(stationarity);
  r = std::max(r, violation(e.ce, e.ci));
  for (Eigen::Index j = 0; j < e.ci.size(); ++j) {
    const double mu = z.inequality_multipliers[j];
    r = std::max(r, std::abs(mu * e.ci[j]));
    r = std::max(r, -mu);
  }
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double zl = z.lower_bound_multipliers[i];
    const double zu = z.upper_bound_multipliers[i];
    if (std::isfinite(lb[i])) {
      r = std::max(r, lb[i] - x[i]);
      r = std::max(r, std::abs(zl * (x[i] - lb[i])));
    } else {
      r = std::max(r, std::abs(zl));
    }
    if (std::isfinite(ub[i])) {
      r = std::max(r, x[i] - ub[i]);
      r = std::max(r, std::abs(zu * (ub[i] - x[i])));
    } else {
      r = std::max(r, std::abs(zu));
    }
    r = std::max(r, std::max(-zl, -zu));
  }
  return r;
}

void check_dimensions(const NlpProblem& problem, const PrimalDualPoint& z) {
  const auto n = problem.num_variables();
  if (z.primal.size() != n || z.equality_multipliers.size() != problem.num_equalities() ||
      z.inequality_multipliers.size() != problem.num_inequalities() ||
      z.lower_bound_multipliers.size() != n || z.upper_bound_multipliers.size() != n) {
    throw std::invalid_argument("primal-dual point dimensions do not match problem");
  }
}

bool has_full_multipliers(const NlpProblem& problem, const PrimalDualPoint& z) {
  const auto n = problem.num_variables();
  return z.equality_multipliers.size() == problem.num_equalities() &&
         z.inequality_multipliers.size() == problem.num_inequalities() &&
         z.lower_bound_multipliers.size() == n && z.upper_bound_multipliers.size() == n;
}

// min sum(p + n) + sum(t)  s.t.  c_E(x) - p + n = 0,  c_I(x) - t <= 0,  p, n, t >= 0
class ElasticProblem final : public NlpProblem {
 public:
  explicit ElasticProblem(const NlpProblem& inner)
      : inner_(inner),
        n_(inner.num_variables()),
        me_(inner.num_equalities()),
        mi_(inner.num_inequalities()) {}

  int num_variables() const override { return n_ + 2 * me_ + mi_; }
  int num_equalities() const override { return me_; }
  int num_inequalities() const override { return mi_; }

  VectorXd lower_bounds() const override {
    VectorXd lb = VectorXd::Zero(num_variables());
    lb.head(n_) = inner_.lower_bounds();
    return lb;
  }
  VectorXd upper_bounds() const override {
    VectorXd ub = VectorXd::Constant(num_variables(), kInf);
    ub.head(n_) = inner_.upper_bounds();
    return ub;
  }

  double objective(const VectorXd& x, const VectorXd&) const override {
    return x.tail(2 * me_ + mi_).sum();
  }
  VectorXd objective_gradient(const VectorXd&, const VectorXd&) const override {
    VectorXd g = VectorXd::Zero(num_variables());
    g.tail(2 * me_ + mi_).setOnes();
    return g;
  }
  VectorXd equalities(const VectorXd& x, const VectorXd& p) const override {
    return inner_.equalities(x.head(n_), p) - x.segment(n_, me_) + x.segment(n_ + me_, me_);
  }
  MatrixXd equality_jacobian(const VectorXd& x, const VectorXd& p) const override {
    MatrixXd j = MatrixXd::Zero(me_, num_variables());
    j.leftCols(n_) = inner_.equality_jacobian(x.head(n_), p);
    j.middleCols(n_, me_) = -MatrixXd::Identity(me_, me_);
    j.middleCols(n_ + me_, me_) = MatrixXd::Identity(me_, me_);
    return j;
  }
  VectorXd inequalities(const VectorXd& x, const VectorXd& p) const override {
    return inner_.inequalities(x.head(n_), p) - x.tail(mi_);
  }
  MatrixXd inequality_jacobian(const VectorXd& x, const VectorXd& p) const override {
    MatrixXd j = MatrixXd::Zero(mi_, num_variables());
    j.leftCols(n_) = inner_.inequality_jacobian(x.head(n_), p);
    j.rightCols(mi_) = -MatrixXd::Identity(mi_, mi_);
    return j;
  }
  MatrixXd lagrangian_hessian(const VectorXd& x, const VectorXd& p, double,
                              const VectorXd& eq_mult,
                              const VectorXd& ineq_mult) const override {
    MatrixXd h = MatrixXd::Zero(num_variables(), num_variables());
    h.topLeftCorner(n_, n_) = inner_.lagrangian_hessian(x.head(n_), p, 0.0, eq_mult, ineq_mult);
    return h;
  }

  VectorXd initial_point(const VectorXd& x, const VectorXd& p) const {
    VectorXd z(num_variables());
    z.head(n_) = x;
    const VectorXd ce = inner_.equalities(x, p);
    const VectorXd ci = inner_.inequalities(x, p);
    for (int j = 0; j < me_; ++j) {
      z[n_ + j] = std::max(ce[j], 0.0) + 1.0;
      z[n_ + me_ + j] = std::max(-ce[j], 0.0) + 1.0;
    }
    for (int j = 0; j < mi_; ++j) z[n_ + 2 * me_ + j] = std::max(ci[j], 0.0) + 1.0;
    return z;
  }

 private:
  const NlpProblem& inner_;
  int n_;
  int me_;
  int mi_;
};

}  // namespace

VectorXd NlpProblem::lower_bounds() const {
  return VectorXd::Constant(num_variables(), -kInf);
}

VectorXd NlpProblem::upper_bounds() const {
  return VectorXd::Constant(num_variables(), kInf);
}

std::string_view to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::converged:
      return "converged";
    case SolveStatus::max_iterations:
      return "max-iterations";
    case SolveStatus::infeasible:
      return "infeasible";
    case SolveStatus::numerical_failure:
      return "numerical-failure";
  }
  return "unknown";
}

void SolverOptions::validate() const {
  if (!(tolerance > 0)) throw std::invalid_argument("solver tolerance must be positive");
  if (max_iterations < 1) throw std::invalid_argument("max iterations must be >= 1");
}

double kkt_residual(const NlpProblem& problem, const VectorXd& parameter,
                    const PrimalDualPoint& candidate) {
  check_dimensions(problem, candidate);
  const Evaluation e = evaluate(problem, candidate.primal, parameter);
  return residual_from(e, problem.lower_bounds(), problem.upper_bounds(), candidate);
}

InteriorPointSolver::InteriorPointSolver(SolverOptions options) : options_(options) {
  options_.validate();
}

void InteriorPointSolver::set_options(const SolverOptions& options) {
  options.validate();
  options_ = options;
}

NlpSolution InteriorPointSolver::solve(const NlpProblem& problem,
                                       const VectorXd& parameter,
                                       const std::optional<PrimalDualPoint>& guess) {
  return solve_impl(problem, parameter, guess, true);
}

NlpSolution InteriorPointSolver::solve_impl(const NlpProblem& problem,
                                            const VectorXd& parameter,
                                            const std::optional<PrimalDualPoint>& guess,
                                            bool allow_feasibility_phase) {
  const int n = problem.num_variables();
  const int me = problem.num_equalities();
  const int mi = problem.num_inequalities();
  const VectorXd lb = problem.lower_bounds();
  const VectorXd ub = problem.upper_bounds();
  if (lb.size() != n || ub.size() != n) {
    throw std::invalid_argument("bound dimensions do not match problem");
  }
  if (guess && guess->primal.size() != n) {
    throw std::invalid_argument("initial guess dimension does not match problem");
  }

  const double tol = options_.tolerance;
  const double tau_min = tol / 10.0;
  const bool warm = options_.warm_start && guess && has_full_multipliers(problem, *guess);

  std::vector<int> lower_idx;
  std::vector<int> upper_idx;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(lb[i])) lower_idx.push_back(i);
    if (std::isfinite(ub[i])) upper_idx.push_back(i);
  }

  NlpSolution result;
  result.primal = guess ? guess->primal : VectorXd::Zero(n);
  result.equality_multipliers = VectorXd::Zero(me);
  result.inequality_multipliers = VectorXd::Zero(mi);
  result.lower_bound_multipliers = VectorXd::Zero(n);
  result.upper_bound_multipliers = VectorXd::Zero(n);

  for (int i = 0; i < n; ++i) {
    if (lb[i] > ub[i]) {
      result.status = SolveStatus::infeasible;
      result.primal = result.primal.cwiseMax(lb).cwiseMin(ub);
      result.objective = problem.objective(result.primal, parameter);
      result.kkt_residual = kInf;
      return result;
    }
  }

  // Initial primal point strictly inside the bounds.
  VectorXd x = result.primal;
  const double push = warm ? kWarmBoundPush : kColdBoundPush;
  for (int i = 0; i < n; ++i) {
    const bool has_l = std::isfinite(lb[i]);
    const bool has_u = std::isfinite(ub[i]);
    if (has_l && has_u) {
      const double width = ub[i] - lb[i];
      const double pl = std::min(push * std::max(1.0, std::abs(lb[i])), push * width);
      const double pu = std::min(push * std::max(1.0, std::abs(ub[i])), push * width);
      x[i] = width > 0 ? std::clamp(x[i], lb[i] + pl, ub[i] - pu) : lb[i];
    } else if (has_l) {
      x[i] = std::max(x[i], lb[i] + push * std::max(1.0, std::abs(lb[i])));
    } else if (has_u) {
      x[i] = std::min(x[i], ub[i] - push * std::max(1.0, std::abs(ub[i])));
    }
  }

  VectorXd s(mi);
  {
    const VectorXd ci = problem.inequalities(x, parameter);
    for (int j = 0; j < mi; ++j) {
      s[j] = std::max(-ci[j], push * std::max(1.0, std::abs(ci[j])));
    }
  }

  VectorXd lam = VectorXd::Zero(me);
  VectorXd mu = VectorXd::Ones(mi);
  VectorXd zl = VectorXd::Zero(n);
  VectorXd zu = VectorXd::Zero(n);
  for (int i : lower_idx) zl[i] = 1.0;
  for (int i : upper_idx) zu[i] = 1.0;
  double tau = kBarrierInit;

  if (warm) {
    constexpr double floor = 1e-14;
    lam = guess->equality_multipliers;
    mu = guess->inequality_multipliers.cwiseMax(floor);
    for (int i : lower_idx) zl[i] = std::max(guess->lower_bound_multipliers[i], floor);
    for (int i : upper_idx) zu[i] = std::max(guess->upper_bound_multipliers[i], floor);
    double total = 0.0;
    int count = 0;
    for (int j = 0; j < mi; ++j, ++count) total += mu[j] * s[j];
    for (int i : lower_idx) total += zl[i] * (x[i] - lb[i]), ++count;
    for (int i : upper_idx) total += zu[i] * (ub[i] - x[i]), ++count;
    tau = count > 0 ? std::clamp(total / count, tau_min, kBarrierInit) : tau_min;
  }

  double penalty = 1.0;
  double delta_w_last = 0.0;
  int stall_count = 0;
  SymmetricIndefiniteFactor factor;
  MatrixXd kkt(n + me, n + me);

  auto finish = [&](SolveStatus status, int iterations, const Evaluation& e) {
    result.primal = x;
    result.equality_multipliers = lam;
    result.inequality_multipliers = mu;
    result.lower_bound_multipliers = zl;
    result.upper_bound_multipliers = zu;
    result.objective = e.f;
    result.status = status;
    result.iterations = iterations;
    result.kkt_residual = residual_from(e, lb, ub, result);
    last_delta_w_ = delta_w_last;
    return result;
  };

  // Minimizes the l1 infeasibility. Returns an infeasible result when that
  // minimum stays positive, the restarted solve when a feasible point is found
  // and restart is requested, and nothing otherwise.
  auto run_feasibility_phase = [&](int iterations_so_far,
                                   bool restart_when_feasible) -> std::optional<NlpSolution> {
    ElasticProblem elastic(problem);
    SolverOptions phase_options = options_;
    phase_options.warm_start = false;
    phase_options.max_iterations = std::max(options_.max_iterations, 200);
    InteriorPointSolver phase_solver(phase_options);
    const NlpSolution phase = phase_solver.solve_impl(
        elastic, parameter, PrimalDualPoint{elastic.initial_point(x, parameter), {}, {}, {}, {}},
        false);
    const double threshold = std::max(1e-6, 100.0 * tol);
    const VectorXd x_feasible = phase.primal.head(n);
    const int total = iterations_so_far + phase.iterations;
    if (phase.converged() && phase.objective > threshold) {
      x = x_feasible;
      const Evaluation e = evaluate(problem, x, parameter);
      NlpSolution out = finish(SolveStatus::infeasible, total, e);
      return out;
    }
    if (!phase.converged() || !restart_when_feasible) return std::nullopt;
    InteriorPointSolver restart(options_);
    NlpSolution out = restart.solve_impl(
        problem, parameter, PrimalDualPoint{x_feasible, {}, {}, {}, {}}, false);
    out.iterations += total;
    last_delta_w_ = restart.last_delta_w_;
    return out;
  };

  for (int iter = 0;; ++iter) {
    const Evaluation e = evaluate(problem, x, parameter);
    if (!std::isfinite(e.f) || !e.grad.allFinite() || !e.ce.allFinite() || !e.ci.allFinite()) {
      return finish(SolveStatus::numerical_failure, iter, e);
    }

    PrimalDualPoint current{x, lam, mu, zl, zu};
    const double optimality = residual_from(e, lb, ub, current);
    if (optimality <= tol) return finish(SolveStatus::converged, iter, e);

    const double infeasibility = violation(e.ce, e.ci);
    if (iter >= options_.max_iterations) {
      if (allow_feasibility_phase && infeasibility > tol) {
        if (auto out = run_feasibility_phase(iter, false);
            out && out->status == SolveStatus::infeasible) {
          return *out;
        }
      }
      return finish(SolveStatus::max_iterations, iter, e);
    }

    VectorXd dl = VectorXd::Ones(n);
    VectorXd du = VectorXd::Ones(n);
    for (int i : lower_idx) dl[i] = x[i] - lb[i];
    for (int i : upper_idx) du[i] = ub[i] - x[i];

    VectorXd multiplier_terms = e.grad;
    if (me > 0) multiplier_terms += e.je.transpose() * lam;
    if (mi > 0) multiplier_terms += e.ji.transpose() * mu;

    // Barrier subproblem error; tighten the barrier while it is small enough.
    auto barrier_error = [&](double t) {
      double err = std::max(norm_inf(e.ce), norm_inf(e.ci + s));
      err = std::max(err, norm_inf(multiplier_terms - zl + zu));
      for (int j = 0; j < mi; ++j) err = std::max(err, std::abs(s[j] * mu[j] - t));
      for (int i : lower_idx) err = std::max(err, std::abs(dl[i] * zl[i] - t));
      for (int i : upper_idx) err = std::max(err, std::abs(du[i] * zu[i] - t));
      return err;
    };
    while (tau > tau_min && barrier_error(tau) <= kBarrierErrorFactor * tau) {
      tau = std::max(tau_min, std::min(kBarrierLinearDecrease * tau,
                                       std::pow(tau, kBarrierSuperlinearPower)));
    }

    const MatrixXd hessian = problem.lagrangian_hessian(x, parameter, 1.0, lam, mu);
    VectorXd sigma_x = VectorXd::Zero(n);
    for (int i : lower_idx) sigma_x[i] += zl[i] / dl[i];
    for (int i : upper_idx) sigma_x[i] += zu[i] / du[i];
    const VectorXd sigma_s = mu.cwiseQuotient(s);

    MatrixXd condensed = hessian;
    condensed.diagonal() += sigma_x;
    if (mi > 0) {
      condensed.noalias() += e.ji.transpose() * sigma_s.asDiagonal() * e.ji;
    }

    VectorXd rhs(n + me);
    {
      VectorXd rd = multiplier_terms;
      for (int i : lower_idx) rd[i] -= tau / dl[i];
      for (int i : upper_idx) rd[i] += tau / du[i];
      if (mi > 0) {
        const VectorXd v = (VectorXd::Constant(mi, tau) + mu.cwiseProduct(e.ci)).cwiseQuotient(s);
        rd += e.ji.transpose() * v;
      }
      rhs.head(n) = -rd;
      rhs.tail(me) = -e.ce;
    }

    // Inertia correction: want (n, me, 0).
    double delta_w = 0.0;
    double delta_c = 0.0;
    bool factored = false;
    for (int attempt = 0; attempt < 200; ++attempt) {
      kkt.topLeftCorner(n, n) = condensed;
      kkt.topLeftCorner(n, n).diagonal().array() += delta_w;
      kkt.bottomLeftCorner(me, n) = e.je;
      kkt.topRightCorner(n, me) = e.je.transpose();
      kkt.bottomRightCorner(me, me) = MatrixXd::Identity(me, me) * (-delta_c);
      const Inertia inertia = factor.factor(kkt);
      if (inertia.positive == n && inertia.negative == me && inertia.zero == 0) {
        factored = true;
        break;
      }
      if (inertia.zero > 0 && delta_c == 0.0 && me > 0) {
        delta_c = 1e-8 * std::pow(tau, 0.25);
        continue;
      }
      if (delta_w == 0.0) {
        delta_w = delta_w_last == 0.0 ? kFirstRegularization
                                      : std::max(kFirstRegularization, delta_w_last / 4.0);
      } else {
        delta_w *= 2.0;
      }
      if (delta_w > kMaxRegularization) break;
    }
    if (!factored) return finish(SolveStatus::numerical_failure, iter, e);
    if (delta_w > 0.0) delta_w_last = delta_w;

    const VectorXd step = factor.solve(rhs);
    if (!step.allFinite()) return finish(SolveStatus::numerical_failure, iter, e);
    const VectorXd dx = step.head(n);
    const VectorXd dlam = step.tail(me);
    VectorXd ds(mi);
    VectorXd dmu(mi);
    if (mi > 0) {
      const VectorXd jdx = e.ji * dx;
      ds = -(e.ci + s) - jdx;
      dmu = (VectorXd::Constant(mi, tau) + mu.cwiseProduct(e.ci)).cwiseQuotient(s) +
            sigma_s.cwiseProduct(jdx);
    }
    VectorXd dzl = VectorXd::Zero(n);
    VectorXd dzu = VectorXd::Zero(n);
    for (int i : lower_idx) dzl[i] = tau / dl[i] - zl[i] - zl[i] / dl[i] * dx[i];
    for (int i : upper_idx) dzu[i] = tau / du[i] - zu[i] + zu[i] / du[i] * dx[i];

    // Fraction to boundary.
    const double keep = std::max(0.99, 1.0 - tau);
    double alpha_primal = 1.0;
    double alpha_dual = 1.0;
    for (int i : lower_idx) {
      if (dx[i] < 0) alpha_primal = std::min(alpha_primal, -keep * dl[i] / dx[i]);
      if (dzl[i] < 0) alpha_dual = std::min(alpha_dual, -keep * zl[i] / dzl[i]);
    }
    for (int i : upper_idx) {
      if (dx[i] > 0) alpha_primal = std::min(alpha_primal, keep * du[i] / dx[i]);
      if (dzu[i] < 0) alpha_dual = std::min(alpha_dual, -keep * zu[i] / dzu[i]);
    }
    for (int j = 0; j < mi; ++j) {
      if (ds[j] < 0) alpha_primal = std::min(alpha_primal, -keep * s[j] / ds[j]);
      if (dmu[j] < 0) alpha_dual = std::min(alpha_dual, -keep * mu[j] / dmu[j]);
    }

    // l1 merit line search on the barrier problem.
    auto barrier_value = [&](double f, const VectorXd& xx, const VectorXd& ss) {
      double value = f;
      for (int i : lower_idx) value -= tau * std::log(xx[i] - lb[i]);
      for (int i : upper_idx) value -= tau * std::log(ub[i] - xx[i]);
      for (int j = 0; j < mi; ++j) value -= tau * std::log(ss[j]);
      return value;
    };
    auto constraint_l1 = [&](const VectorXd& ce, const VectorXd& ci, const VectorXd& ss) {
      return (me > 0 ? ce.lpNorm<1>() : 0.0) + (mi > 0 ? (ci + ss).lpNorm<1>() : 0.0);
    };

    const double theta0 = constraint_l1(e.ce, e.ci, s);
    const double phi_b0 = barrier_value(e.f, x, s);
    double slope_b = e.grad.dot(dx);
    for (int i : lower_idx) slope_b -= tau * dx[i] / dl[i];
    for (int i : upper_idx) slope_b += tau * dx[i] / du[i];
    for (int j = 0; j < mi; ++j) slope_b -= tau * ds[j] / s[j];
    double curvature = dx.dot((hessian + MatrixXd(sigma_x.asDiagonal())) * dx);
    if (mi > 0) curvature += ds.dot(sigma_s.cwiseProduct(ds));
    curvature = std::max(curvature, 0.0);
    if (theta0 > 0.0) {
      const double required = (slope_b + 0.5 * curvature) / (0.9 * theta0);
      if (penalty < required) penalty = required + 1.0;
    }
    const double phi0 = phi_b0 + penalty * theta0;
    const double slope = slope_b - penalty * theta0;

    double alpha = alpha_primal;
    bool accepted = false;
    VectorXd x_trial;
    VectorXd s_trial;
    for (int ls = 0; ls < 60 && alpha > 1e-16; ++ls, alpha *= 0.5) {
      x_trial = x + alpha * dx;
      s_trial = s + alpha * ds;
      const double f_trial = problem.objective(x_trial, parameter);
      const VectorXd ce_trial = problem.equalities(x_trial, parameter);
      const VectorXd ci_trial = problem.inequalities(x_trial, parameter);
      if (!std::isfinite(f_trial) || !ce_trial.allFinite() || !ci_trial.allFinite()) continue;
      const double phi_trial = barrier_value(f_trial, x_trial, s_trial) +
                               penalty * constraint_l1(ce_trial, ci_trial, s_trial);
      if (phi_trial <= phi0 + kArmijo * alpha * slope + 10.0 * kEps * std::abs(phi0)) {
        accepted = true;
        break;
      }
    }

    const double step_size = std::max(norm_inf(dx), norm_inf(ds));
    const double scale = 1.0 + std::max(norm_inf(x), norm_inf(s));
    if (!accepted && step_size <= 10.0 * kEps * scale) {
      alpha = alpha_primal;
      x_trial = x + alpha * dx;
      s_trial = s + alpha * ds;
      accepted = true;
    }

    if (!accepted) {
      if (allow_feasibility_phase && infeasibility > tol) {
        if (auto out = run_feasibility_phase(iter, true)) return *out;
      }
      return finish(SolveStatus::numerical_failure, iter, e);
    }

    x = x_trial;
    s = s_trial;
    lam += alpha * dlam;
    mu += alpha_dual * dmu;
    zl += alpha_dual * dzl;
    zu += alpha_dual * dzu;

    // Keep the bound multipliers within a factor of their barrier estimates.
    for (int i : lower_idx) {
      const double d = x[i] - lb[i];
      zl[i] = std::clamp(zl[i], tau / (kMultiplierSafeguard * d), kMultiplierSafeguard * tau / d);
    }
    for (int i : upper_idx) {
      const double d = ub[i] - x[i];
      zu[i] = std::clamp(zu[i], tau / (kMultiplierSafeguard * d), kMultiplierSafeguard * tau / d);
    }
    for (int j = 0; j < mi; ++j) {
      mu[j] = std::clamp(mu[j], tau / (kMultiplierSafeguard * s[j]),
                         kMultiplierSafeguard * tau / s[j]);
    }

    if (infeasibility > tol && alpha * step_size <= 1e-8 * scale) {
      ++stall_count;
    } else {
      stall_count = 0;
    }
    if (stall_count >= kStallLimit && allow_feasibility_phase) {
      if (auto out = run_feasibility_phase(iter + 1, true)) return *out;
      allow_feasibility_phase = false;
    }
  }
}

NlpSolution solve_nlp(const NlpProblem& problem, const VectorXd& parameter,
                      const std::optional<PrimalDualPoint>& guess,
                      const SolverOptions& options) {
  InteriorPointSolver solver(options);
  return solver.solve(problem, parameter, guess);
}

}  // namespace rlmpc::nlp
