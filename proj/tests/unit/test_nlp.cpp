#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "rlmpc/callback_problem.hpp"
#include "rlmpc/nlp.hpp"

using namespace rlmpc::nlp;

namespace {

const VectorXd kNoParameter = VectorXd::Zero(0);

// min x^2  s.t.  1 - x <= 0
CallbackProblem square_above_one() {
  CallbackProblem problem(1, 0, 1);
  problem
      .set_objective([](const VectorXd& x, const VectorXd&) { return x[0] * x[0]; },
                     [](const VectorXd& x, const VectorXd&) { return VectorXd::Constant(1, 2 * x[0]); })
      .set_inequalities(
          [](const VectorXd& x, const VectorXd&) { return VectorXd::Constant(1, 1.0 - x[0]); },
          [](const VectorXd&, const VectorXd&) { return MatrixXd::Constant(1, 1, -1.0); })
      .set_hessian([](const VectorXd&, const VectorXd&, double of, const VectorXd&,
                      const VectorXd&) { return MatrixXd::Constant(1, 1, 2.0 * of); });
  return problem;
}

// min 1/2 |x|^2  s.t.  A x = b
CallbackProblem min_norm(const MatrixXd& a, const VectorXd& b) {
  const int n = static_cast<int>(a.cols());
  CallbackProblem problem(n, static_cast<int>(a.rows()), 0);
  problem
      .set_objective([](const VectorXd& x, const VectorXd&) { return 0.5 * x.squaredNorm(); },
                     [](const VectorXd& x, const VectorXd&) { return x; })
      .set_equalities([a, b](const VectorXd& x, const VectorXd&) { return VectorXd(a * x - b); },
                      [a](const VectorXd&, const VectorXd&) { return a; })
      .set_hessian([n](const VectorXd&, const VectorXd&, double of, const VectorXd&,
                       const VectorXd&) { return MatrixXd(of * MatrixXd::Identity(n, n)); });
  return problem;
}

// Hock-Schittkowski 71 with scaled objective c * f.
CallbackProblem hs71(double c = 1.0) {
  CallbackProblem problem(4, 1, 1);
  problem
      .set_objective(
          [c](const VectorXd& x, const VectorXd&) {
            return c * (x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2]);
          },
          [c](const VectorXd& x, const VectorXd&) {
            VectorXd g(4);
            g << x[3] * (2 * x[0] + x[1] + x[2]), x[0] * x[3], x[0] * x[3] + 1,
                x[0] * (x[0] + x[1] + x[2]);
            return VectorXd(c * g);
          })
      .set_equalities(
          [](const VectorXd& x, const VectorXd&) {
            return VectorXd::Constant(1, x.squaredNorm() - 40.0);
          },
          [](const VectorXd& x, const VectorXd&) { return MatrixXd(2.0 * x.transpose()); })
      .set_inequalities(
          [](const VectorXd& x, const VectorXd&) {
            return VectorXd::Constant(1, 25.0 - x[0] * x[1] * x[2] * x[3]);
          },
          [](const VectorXd& x, const VectorXd&) {
            MatrixXd j(1, 4);
            j << -x[1] * x[2] * x[3], -x[0] * x[2] * x[3], -x[0] * x[1] * x[3],
                -x[0] * x[1] * x[2];
            return j;
          })
      .set_bounds(VectorXd::Constant(4, 1.0), VectorXd::Constant(4, 5.0));
  return problem;
}

// Nonconvex objective on a box: min -(x0^2 + x1^2) + x0 x1, -1 <= x <= 2.
CallbackProblem concave_box() {
  CallbackProblem problem(2, 0, 0);
  problem
      .set_objective(
          [](const VectorXd& x, const VectorXd&) {
            return -(x[0] * x[0] + x[1] * x[1]) + 0.5 * x[0] * x[1];
          },
          [](const VectorXd& x, const VectorXd&) {
            VectorXd g(2);
            g << -2 * x[0] + 0.5 * x[1], -2 * x[1] + 0.5 * x[0];
            return g;
          })
      .set_hessian([](const VectorXd&, const VectorXd&, double of, const VectorXd&,
                      const VectorXd&) {
        MatrixXd h(2, 2);
        h << -2, 0.5, 0.5, -2;
        return MatrixXd(of * h);
      })
      .set_bounds(VectorXd::Constant(2, -1.0), VectorXd::Constant(2, 2.0));
  return problem;
}

// Parametric Rosenbrock inside a disc: p = (a, radius^2).
CallbackProblem rosenbrock_disc() {
  CallbackProblem problem(2, 0, 1);
  problem
      .set_objective(
          [](const VectorXd& x, const VectorXd& p) {
            return std::pow(p[0] - x[0], 2) + 100 * std::pow(x[1] - x[0] * x[0], 2);
          },
          [](const VectorXd& x, const VectorXd& p) {
            VectorXd g(2);
            g << -2 * (p[0] - x[0]) - 400 * x[0] * (x[1] - x[0] * x[0]),
                200 * (x[1] - x[0] * x[0]);
            return g;
          })
      .set_inequalities(
          [](const VectorXd& x, const VectorXd& p) {
            return VectorXd::Constant(1, x.squaredNorm() - p[1]);
          },
          [](const VectorXd& x, const VectorXd&) { return MatrixXd(2.0 * x.transpose()); });
  return problem;
}

}  // namespace

TEST_CASE("square above one: solution, multiplier and objective") {
  const auto problem = square_above_one();
  const auto sol = solve_nlp(problem, kNoParameter);
  REQUIRE(sol.converged());
  CHECK(sol.primal[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(sol.inequality_multipliers[0] == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(sol.kkt_residual <= 1e-8);
}

TEST_CASE("square above one as a variable bound reports the bound multiplier") {
  CallbackProblem problem(1, 0, 0);
  problem
      .set_objective([](const VectorXd& x, const VectorXd&) { return x[0] * x[0]; },
                     [](const VectorXd& x, const VectorXd&) { return VectorXd::Constant(1, 2 * x[0]); })
      .set_bounds(VectorXd::Constant(1, 1.0), VectorXd::Constant(1, INFINITY));
  const auto sol = solve_nlp(problem, kNoParameter);
  REQUIRE(sol.converged());
  CHECK(sol.primal[0] >= 1.0);
  CHECK(sol.primal[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(sol.lower_bound_multipliers[0] == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("minimum-norm point on a hyperplane matches the dense KKT solve") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  MatrixXd a(1, 3);
  VectorXd b(1);
  for (int i = 0; i < 3; ++i) a(0, i) = normal(rng);
  b[0] = normal(rng);

  // Oracle: [I A'; A 0] [x; lambda] = [0; b]
  MatrixXd k = MatrixXd::Zero(4, 4);
  k.topLeftCorner(3, 3).setIdentity();
  k.topRightCorner(3, 1) = a.transpose();
  k.bottomLeftCorner(1, 3) = a;
  VectorXd rhs = VectorXd::Zero(4);
  rhs[3] = b[0];
  const VectorXd oracle = k.fullPivLu().solve(rhs);

  const auto problem = min_norm(a, b);
  const auto sol = solve_nlp(problem, kNoParameter);
  REQUIRE(sol.converged());
  for (int i = 0; i < 3; ++i) CHECK(sol.primal[i] == doctest::Approx(oracle[i]).epsilon(1e-9));
  CHECK(sol.equality_multipliers[0] == doctest::Approx(oracle[3]).epsilon(1e-8));
}

TEST_CASE("empty feasible set is reported infeasible") {
  SUBCASE("as inequalities") {
    CallbackProblem problem(1, 0, 2);
    problem.set_objective([](const VectorXd& x, const VectorXd&) { return x[0]; })
        .set_inequalities([](const VectorXd& x, const VectorXd&) {
          VectorXd c(2);
          c << 1.0 - x[0], x[0];
          return c;
        });
    const auto sol = solve_nlp(problem, kNoParameter);
    CHECK(sol.status == SolveStatus::infeasible);
  }
  SUBCASE("as crossed bounds") {
    CallbackProblem problem(1, 0, 0);
    problem.set_objective([](const VectorXd& x, const VectorXd&) { return x[0]; })
        .set_bounds(VectorXd::Constant(1, 1.0), VectorXd::Constant(1, 0.0));
    CHECK(solve_nlp(problem, kNoParameter).status == SolveStatus::infeasible);
  }
  SUBCASE("as inconsistent equalities") {
    CallbackProblem problem(2, 2, 0);
    problem.set_objective([](const VectorXd& x, const VectorXd&) { return x.squaredNorm(); })
        .set_equalities([](const VectorXd& x, const VectorXd&) {
          VectorXd c(2);
          c << x[0] + x[1] - 1.0, x[0] * x[0] + x[1] * x[1] + 1.0;
          return c;
        });
    CHECK(solve_nlp(problem, kNoParameter).status == SolveStatus::infeasible);
  }
}

TEST_CASE("kkt residual") {
  const auto problem = square_above_one();
  PrimalDualPoint exact{VectorXd::Constant(1, 1.0), VectorXd(0), VectorXd::Constant(1, 2.0),
                        VectorXd::Zero(1), VectorXd::Zero(1)};
  CHECK(kkt_residual(problem, kNoParameter, exact) == 0.0);

  // Stationarity 2(1.001) - 2 and complementarity 2 * (1 - 1.001) are both 2e-3.
  PrimalDualPoint perturbed = exact;
  perturbed.primal[0] += 1e-3;
  const double r = kkt_residual(problem, kNoParameter, perturbed);
  CHECK(r > 1e-4);
  CHECK(r == doctest::Approx(2e-3).epsilon(1e-9));

  CallbackProblem quadratic(2, 0, 0);
  quadratic.set_objective(
      [](const VectorXd& x, const VectorXd&) {
        return std::pow(x[0] - 1.0, 2) + 3.0 * std::pow(x[1] + 2.0, 2);
      },
      [](const VectorXd& x, const VectorXd&) {
        VectorXd g(2);
        g << 2.0 * (x[0] - 1.0), 6.0 * (x[1] + 2.0);
        return g;
      });
  PrimalDualPoint minimizer{VectorXd::Zero(2), VectorXd(0), VectorXd(0), VectorXd::Zero(2),
                            VectorXd::Zero(2)};
  minimizer.primal << 1.0, -2.0;
  CHECK(kkt_residual(quadratic, kNoParameter, minimizer) == 0.0);

  PrimalDualPoint wrong_size = minimizer;
  wrong_size.primal = VectorXd::Zero(3);
  CHECK_THROWS_AS(kkt_residual(quadratic, kNoParameter, wrong_size), std::invalid_argument);
}

TEST_CASE("hs71 reaches the published optimum") {
  const auto problem = hs71();
  VectorXd x0(4);
  x0 << 1, 5, 5, 1;
  const auto sol = solve_nlp(problem, kNoParameter, PrimalDualPoint{x0, {}, {}, {}, {}});
  REQUIRE(sol.converged());
  CHECK(sol.objective == doctest::Approx(17.0140173).epsilon(1e-8));
  CHECK(kkt_residual(problem, kNoParameter, sol) <= 1e-8);
  for (int i = 0; i < 4; ++i) {
    CHECK(sol.primal[i] >= 1.0);
    CHECK(sol.primal[i] <= 5.0);
  }
}

TEST_CASE("nonconvex box problem needs and gets Hessian regularization") {
  const auto problem = concave_box();
  InteriorPointSolver solver;
  VectorXd x0(2);
  x0 << 0.3, -0.2;
  const auto sol = solver.solve(problem, kNoParameter, PrimalDualPoint{x0, {}, {}, {}, {}});
  REQUIRE(sol.converged());
  CHECK(solver.last_hessian_regularization() > 0.0);
  CHECK(sol.kkt_residual <= 1e-8);
  // Vertex (2, -1) is the global minimizer; any returned point must be a KKT vertex.
  CHECK(std::abs(std::abs(sol.primal[0] - 0.5) - 1.5) < 1e-6);
  CHECK(std::abs(std::abs(sol.primal[1] - 0.5) - 1.5) < 1e-6);
}

TEST_CASE("converged solves satisfy the KKT tolerance across a corpus") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uniform(0.5, 2.0);
  const auto rosen = rosenbrock_disc();
  int converged = 0;
  for (int k = 0; k < 20; ++k) {
    VectorXd p(2);
    p << uniform(rng), uniform(rng);
    const auto sol = solve_nlp(rosen, p);
    if (!sol.converged()) continue;
    ++converged;
    CHECK(kkt_residual(rosen, p, sol) <= 1e-8);
    CHECK(sol.inequality_multipliers.minCoeff() >= 0.0);
    const VectorXd c = rosen.inequalities(sol.primal, p);
    CHECK(std::abs(sol.inequality_multipliers[0] * c[0]) <= 1e-8);
  }
  CHECK(converged == 20);
}

TEST_CASE("warm start from the returned solution converges immediately") {
  SUBCASE("hs71") {
    const auto problem = hs71();
    VectorXd x0(4);
    x0 << 1, 5, 5, 1;
    const auto cold = solve_nlp(problem, kNoParameter, PrimalDualPoint{x0, {}, {}, {}, {}});
    REQUIRE(cold.converged());
    SolverOptions warm_options;
    warm_options.warm_start = true;
    const auto warm = solve_nlp(problem, kNoParameter, cold, warm_options);
    REQUIRE(warm.converged());
    CHECK(warm.iterations <= 3);
    CHECK(std::abs(warm.objective - cold.objective) <= 1e-10);
  }
  SUBCASE("rosenbrock disc") {
    const auto problem = rosenbrock_disc();
    VectorXd p(2);
    p << 1.0, 0.8;
    const auto cold = solve_nlp(problem, p);
    REQUIRE(cold.converged());
    SolverOptions warm_options;
    warm_options.warm_start = true;
    const auto warm = solve_nlp(problem, p, cold, warm_options);
    REQUIRE(warm.converged());
    CHECK(warm.iterations <= 3);
    CHECK(std::abs(warm.objective - cold.objective) <= 1e-10);
  }
}

TEST_CASE("objective scaling scales value and multipliers, not the primal") {
  VectorXd x0(4);
  x0 << 1, 5, 5, 1;
  const auto base = solve_nlp(hs71(1.0), kNoParameter, PrimalDualPoint{x0, {}, {}, {}, {}});
  REQUIRE(base.converged());
  for (double c : {0.5, 3.0, 20.0}) {
    const auto scaled = solve_nlp(hs71(c), kNoParameter, PrimalDualPoint{x0, {}, {}, {}, {}});
    REQUIRE(scaled.converged());
    CHECK(scaled.objective == doctest::Approx(c * base.objective).epsilon(1e-8));
    CHECK((scaled.primal - base.primal).lpNorm<Eigen::Infinity>() <= 1e-7);
    CHECK(scaled.equality_multipliers[0] ==
          doctest::Approx(c * base.equality_multipliers[0]).epsilon(1e-6));
    CHECK(scaled.inequality_multipliers[0] ==
          doctest::Approx(c * base.inequality_multipliers[0]).epsilon(1e-6));
  }
}

TEST_CASE("invalid inputs are rejected") {
  const auto problem = square_above_one();
  CHECK_THROWS_AS(solve_nlp(problem, kNoParameter, PrimalDualPoint{VectorXd::Zero(2), {}, {}, {}, {}}),
                  std::invalid_argument);
  SolverOptions bad;
  bad.tolerance = 0.0;
  CHECK_THROWS_AS(InteriorPointSolver{bad}, std::invalid_argument);
  bad = SolverOptions{};
  bad.max_iterations = 0;
  CHECK_THROWS_AS(InteriorPointSolver{bad}, std::invalid_argument);
}

TEST_CASE("iteration cap is reported as max-iterations") {
  SolverOptions options;
  options.max_iterations = 2;
  VectorXd x0(4);
  x0 << 1, 5, 5, 1;
  const auto sol = solve_nlp(hs71(), kNoParameter, PrimalDualPoint{x0, {}, {}, {}, {}}, options);
  CHECK(sol.status == SolveStatus::max_iterations);
  CHECK(sol.iterations == 2);
}
