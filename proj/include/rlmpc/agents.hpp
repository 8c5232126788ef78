#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "rlmpc/function_approx.hpp"
#include "rlmpc/nmpc.hpp"

namespace rlmpc::agents {

using nmpc::ThetaGradient;
using nmpc::ThetaVector;

enum class Algorithm { es, deep_es, rdes, ges };

std::string_view algorithm_name(Algorithm algorithm);
/// Accepts "es", "deep-es", "rdes", "ges".
std::optional<Algorithm> parse_algorithm(std::string_view name);
/// Comma-separated list of accepted names, for diagnostics.
std::string valid_algorithm_names();

/// GES and ES evaluate the OCP at s and s+; RDES and deep ES only at s.
int solves_per_step(Algorithm algorithm);
/// RDES and deep ES bootstrap from the network.
bool uses_network(Algorithm algorithm);

struct TdSample {
  double stage_cost = 0.0;
  double q = 0.0;
  double q_next = 0.0;
  ThetaGradient phi = ThetaGradient::Zero();
  /// Gradient at (s+, a+); required by GES only.
  std::optional<ThetaGradient> phi_next;
  double discount = 0.97;

  /// Throws std::invalid_argument on non-finite entries.
  void validate() const;
};

/// delta = l + gamma Q+ - Q
double td_error(const TdSample& sample);

/// theta + alpha delta phi
ThetaVector es_update(const ThetaVector& theta, double delta, const ThetaGradient& phi,
                      double alpha);

struct GesState {
  ThetaVector theta = ThetaVector::initial();
  ThetaGradient w = ThetaGradient::Constant(1e-4);
  double alpha = 1e-7;
  double beta = 1e-8;

  void validate() const;
};

/**
 * Gradient-TD step, both vectors computed from the pre-update values:
 *   theta += alpha (delta phi - gamma (w'phi) phi+)
 *   w     += beta (delta - phi'w) phi
 * Throws std::invalid_argument when the sample has no phi+.
 */
GesState ges_update(const GesState& state, const TdSample& sample);

/// Dimension-free kernels behind es_update and ges_update.
void semi_gradient_step(Eigen::Ref<Eigen::VectorXd> theta, double delta,
                        const Eigen::Ref<const Eigen::VectorXd>& phi, double alpha);
void gradient_td_step(Eigen::Ref<Eigen::VectorXd> theta, Eigen::Ref<Eigen::VectorXd> w,
                      double delta, const Eigen::Ref<const Eigen::VectorXd>& phi,
                      const Eigen::Ref<const Eigen::VectorXd>& phi_next, double discount,
                      double alpha, double beta);

/// Q+ for RDES: the network evaluated at (s+, u1*, theta).
double rdes_subsequent_value(const fa::QNetwork& network, const world::RobotState& s_next,
                             const world::ControlInput& a_next, const ThetaVector& theta);

/**
 * Plug-in E[delta phi]' (E[phi phi'] + ridge I)^-1 E[delta phi] over the
 * batch. Throws std::invalid_argument on an empty batch or ridge <= 0 and
 * std::runtime_error when the regularized matrix is still not positive definite.
 */
double mspbe_estimate(const std::vector<TdSample>& batch, double ridge = 1e-8);
/// Same estimate from raw (delta, feature) pairs of any feature width.
double mspbe_estimate(const Eigen::Ref<const Eigen::VectorXd>& deltas,
                      const Eigen::Ref<const Eigen::MatrixXd>& features, double ridge = 1e-8);

}  // namespace rlmpc::agents
