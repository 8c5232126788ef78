#pragma once

#include <functional>

#include "rlmpc/nlp.hpp"

namespace rlmpc::nlp {

/**
 * NlpProblem assembled from callbacks. Any derivative callback left empty
 * falls back to central finite differences; intended for tests and quick
 * experiments, not for the controller (which supplies analytic derivatives).
 */
class CallbackProblem final : public NlpProblem {
 public:
  using Scalar = std::function<double(const VectorXd&, const VectorXd&)>;
  using Vector = std::function<VectorXd(const VectorXd&, const VectorXd&)>;
  using Matrix = std::function<MatrixXd(const VectorXd&, const VectorXd&)>;

  CallbackProblem(int num_variables, int num_equalities, int num_inequalities);

  CallbackProblem& set_objective(Scalar f, Vector gradient = {});
  CallbackProblem& set_equalities(Vector c, Matrix jacobian = {});
  CallbackProblem& set_inequalities(Vector c, Matrix jacobian = {});
  CallbackProblem& set_bounds(VectorXd lower, VectorXd upper);
  /// Optional exact Hessian of the Lagrangian.
  CallbackProblem& set_hessian(
      std::function<MatrixXd(const VectorXd&, const VectorXd&, double, const VectorXd&,
                             const VectorXd&)>
          hessian);

  int num_variables() const override { return n_; }
  int num_equalities() const override { return me_; }
  int num_inequalities() const override { return mi_; }
  VectorXd lower_bounds() const override { return lower_; }
  VectorXd upper_bounds() const override { return upper_; }

  double objective(const VectorXd& x, const VectorXd& p) const override;
  VectorXd objective_gradient(const VectorXd& x, const VectorXd& p) const override;
  VectorXd equalities(const VectorXd& x, const VectorXd& p) const override;
  MatrixXd equality_jacobian(const VectorXd& x, const VectorXd& p) const override;
  VectorXd inequalities(const VectorXd& x, const VectorXd& p) const override;
  MatrixXd inequality_jacobian(const VectorXd& x, const VectorXd& p) const override;
  MatrixXd lagrangian_hessian(const VectorXd& x, const VectorXd& p, double objective_factor,
                              const VectorXd& eq_mult,
                              const VectorXd& ineq_mult) const override;

 private:
  VectorXd lagrangian_gradient(const VectorXd& x, const VectorXd& p, double objective_factor,
                               const VectorXd& eq_mult, const VectorXd& ineq_mult) const;

  int n_;
  int me_;
  int mi_;
  VectorXd lower_;
  VectorXd upper_;
  Scalar f_;
  Vector grad_;
  Vector ce_;
  Matrix je_;
  Vector ci_;
  Matrix ji_;
  std::function<MatrixXd(const VectorXd&, const VectorXd&, double, const VectorXd&,
                         const VectorXd&)>
      hessian_;
};

/// Central-difference gradient of a scalar function.
VectorXd central_difference_gradient(const std::function<double(const VectorXd&)>& f,
                                     const VectorXd& x, double step = 1e-6);

/// Central-difference Jacobian of a vector function.
MatrixXd central_difference_jacobian(const std::function<VectorXd(const VectorXd&)>& f,
                                     const VectorXd& x, double step = 1e-6);

}  // namespace rlmpc::nlp
