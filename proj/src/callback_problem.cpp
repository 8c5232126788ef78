#include "rlmpc/callback_problem.hpp"

#include <limits>
#include <stdexcept>

namespace rlmpc::nlp {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

VectorXd central_difference_gradient(const std::function<double(const VectorXd&)>& f,
                                     const VectorXd& x, double step) {
  VectorXd g(x.size());
  VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

MatrixXd central_difference_jacobian(const std::function<VectorXd(const VectorXd&)>& f,
                                     const VectorXd& x, double step) {
  const VectorXd f0 = f(x);
  MatrixXd j(f0.size(), x.size());
  VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const VectorXd up = f(probe);
    probe[i] = x[i] - step;
    const VectorXd down = f(probe);
    probe[i] = x[i];
    j.col(i) = (up - down) / (2.0 * step);
  }
  return j;
}

CallbackProblem::CallbackProblem(int num_variables, int num_equalities, int num_inequalities)
    : n_(num_variables),
      me_(num_equalities),
      mi_(num_inequalities),
      lower_(VectorXd::Constant(num_variables, -kInf)),
      upper_(VectorXd::Constant(num_variables, kInf)) {
  if (n_ < 1 || me_ < 0 || mi_ < 0) throw std::invalid_argument("invalid problem dimensions");
  ce_ = [me = me_](const VectorXd&, const VectorXd&) { return VectorXd::Zero(me); };
  ci_ = [mi = mi_](const VectorXd&, const VectorXd&) { return VectorXd::Zero(mi); };
}

CallbackProblem& CallbackProblem::set_objective(Scalar f, Vector gradient) {
  f_ = std::move(f);
  grad_ = std::move(gradient);
  return *this;
}

CallbackProblem& CallbackProblem::set_equalities(Vector c, Matrix jacobian) {
  ce_ = std::move(c);
  je_ = std::move(jacobian);
  return *this;
}

CallbackProblem& CallbackProblem::set_inequalities(Vector c, Matrix jacobian) {
  ci_ = std::move(c);
  ji_ = std::move(jacobian);
  return *this;
}

CallbackProblem& CallbackProblem::set_bounds(VectorXd lower, VectorXd upper) {
  if (lower.size() != n_ || upper.size() != n_) {
    throw std::invalid_argument("bound dimensions do not match problem");
  }
  lower_ = std::move(lower);
  upper_ = std::move(upper);
  return *this;
}

CallbackProblem& CallbackProblem::set_hessian(
    std::function<MatrixXd(const VectorXd&, const VectorXd&, double, const VectorXd&,
                           const VectorXd&)>
        hessian) {
  hessian_ = std::move(hessian);
  return *this;
}

double CallbackProblem::objective(const VectorXd& x, const VectorXd& p) const {
  if (!f_) throw std::logic_error("objective callback not set");
  return f_(x, p);
}

VectorXd CallbackProblem::objective_gradient(const VectorXd& x, const VectorXd& p) const {
  if (grad_) return grad_(x, p);
  return central_difference_gradient([&](const VectorXd& y) { return objective(y, p); }, x);
}

VectorXd CallbackProblem::equalities(const VectorXd& x, const VectorXd& p) const {
  return ce_(x, p);
}

MatrixXd CallbackProblem::equality_jacobian(const VectorXd& x, const VectorXd& p) const {
  if (je_) return je_(x, p);
  if (me_ == 0) return MatrixXd::Zero(0, n_);
  return central_difference_jacobian([&](const VectorXd& y) { return ce_(y, p); }, x);
}

VectorXd CallbackProblem::inequalities(const VectorXd& x, const VectorXd& p) const {
  return ci_(x, p);
}

MatrixXd CallbackProblem::inequality_jacobian(const VectorXd& x, const VectorXd& p) const {
  if (ji_) return ji_(x, p);
  if (mi_ == 0) return MatrixXd::Zero(0, n_);
  return central_difference_jacobian([&](const VectorXd& y) { return ci_(y, p); }, x);
}

VectorXd CallbackProblem::lagrangian_gradient(const VectorXd& x, const VectorXd& p,
                                              double objective_factor,
                                              const VectorXd& eq_mult,
                                              const VectorXd& ineq_mult) const {
  VectorXd g = objective_factor * objective_gradient(x, p);
  if (me_ > 0) g += equality_jacobian(x, p).transpose() * eq_mult;
  if (mi_ > 0) g += inequality_jacobian(x, p).transpose() * ineq_mult;
  return g;
}

MatrixXd CallbackProblem::lagrangian_hessian(const VectorXd& x, const VectorXd& p,
                                             double objective_factor,
                                             const VectorXd& eq_mult,
                                             const VectorXd& ineq_mult) const {
  if (hessian_) return hessian_(x, p, objective_factor, eq_mult, ineq_mult);
  MatrixXd h = central_difference_jacobian(
      [&](const VectorXd& y) {
        return lagrangian_gradient(y, p, objective_factor, eq_mult, ineq_mult);
      },
      x, 1e-5);
  return 0.5 * (h + h.transpose());
}

}  // namespace rlmpc::nlp
