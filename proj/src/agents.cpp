#include "rlmpc/agents.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace rlmpc::agents {

namespace {

constexpr std::array<std::pair<Algorithm, std::string_view>, 4> kNames{{
    {Algorithm::es, "es"},
    {Algorithm::deep_es, "deep-es"},
    {Algorithm::rdes, "rdes"},
    {Algorithm::ges, "ges"},
}};

}  // namespace

std::string_view algorithm_name(Algorithm algorithm) {
  for (const auto& [a, name] : kNames) {
    if (a == algorithm) return name;
  }
  throw std::invalid_argument("unknown algorithm");
}

std::optional<Algorithm> parse_algorithm(std::string_view name) {
  for (const auto& [a, n] : kNames) {
    if (n == name) return a;
  }
  return std::nullopt;
}

std::string valid_algorithm_names() {
  std::string out;
  for (const auto& [a, name] : kNames) {
    if (!out.empty()) out += ", ";
    out += name;
  }
  return out;
}

int solves_per_step(Algorithm algorithm) {
  return algorithm == Algorithm::es || algorithm == Algorithm::ges ? 2 : 1;
}

bool uses_network(Algorithm algorithm) {
  return algorithm == Algorithm::rdes || algorithm == Algorithm::deep_es;
}

void TdSample::validate() const {
  if (!std::isfinite(stage_cost) || !std::isfinite(q) || !std::isfinite(q_next) ||
      !std::isfinite(discount) || !phi.allFinite() || (phi_next && !phi_next->allFinite())) {
    throw std::invalid_argument("TD sample has non-finite entries");
  }
}

double td_error(const TdSample& sample) {
  return sample.stage_cost + sample.discount * sample.q_next - sample.q;
}

void semi_gradient_step(Eigen::Ref<Eigen::VectorXd> theta, double delta,
                        const Eigen::Ref<const Eigen::VectorXd>& phi, double alpha) {
  if (phi.size() != theta.size()) throw std::invalid_argument("feature width mismatch");
  // Same association as gradient_td_step, so w = 0 reproduces this bitwise.
  for (Eigen::Index j = 0; j < theta.size(); ++j) theta[j] += alpha * (delta * phi[j]);
}

void gradient_td_step(Eigen::Ref<Eigen::VectorXd> theta, Eigen::Ref<Eigen::VectorXd> w,
                      double delta, const Eigen::Ref<const Eigen::VectorXd>& phi,
                      const Eigen::Ref<const Eigen::VectorXd>& phi_next, double discount,
                      double alpha, double beta) {
  if (phi.size() != theta.size() || phi_next.size() != theta.size() || w.size() != theta.size()) {
    throw std::invalid_argument("feature width mismatch");
  }
  double w_phi = 0.0;
  for (Eigen::Index j = 0; j < w.size(); ++j) w_phi += w[j] * phi[j];
  const double correction = discount * w_phi;
  const double w_gain = beta * (delta - w_phi);
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    theta[j] += alpha * (delta * phi[j] - correction * phi_next[j]);
    w[j] += w_gain * phi[j];
  }
}

ThetaVector es_update(const ThetaVector& theta, double delta, const ThetaGradient& phi,
                      double alpha) {
  if (!(alpha > 0)) throw std::invalid_argument("step size alpha must be > 0");
  Eigen::VectorXd t = theta.vector();
  semi_gradient_step(t, delta, phi, alpha);
  return ThetaVector::from(t);
}

void GesState::validate() const {
  if (!(alpha > 0) || !(beta > 0)) throw std::invalid_argument("GES step sizes must be > 0");
  if (!w.allFinite()) throw std::invalid_argument("GES auxiliary vector must be finite");
  if (!theta.finite()) throw std::invalid_argument("theta must be finite");
}

GesState ges_update(const GesState& state, const TdSample& sample) {
  if (!sample.phi_next) throw std::invalid_argument("GES update needs the gradient at s+");
  GesState next = state;
  Eigen::VectorXd theta = state.theta.vector();
  Eigen::VectorXd w = state.w;
  gradient_td_step(theta, w, td_error(sample), sample.phi, *sample.phi_next, sample.discount,
                   state.alpha, state.beta);
  next.theta = ThetaVector::from(theta);
  next.w = w;
  return next;
}

double rdes_subsequent_value(const fa::QNetwork& network, const world::RobotState& s_next,
                             const world::ControlInput& a_next, const ThetaVector& theta) {
  return network.value(s_next, a_next, theta);
}

double mspbe_estimate(const Eigen::Ref<const Eigen::VectorXd>& deltas,
                      const Eigen::Ref<const Eigen::MatrixXd>& features, double ridge) {
  if (deltas.size() == 0) throw std::invalid_argument("MSPBE needs a nonempty batch");
  if (features.cols() != deltas.size()) throw std::invalid_argument("batch size mismatch");
  if (!(ridge > 0)) throw std::invalid_argument("ridge must be > 0");
  const double n = static_cast<double>(deltas.size());
  const Eigen::VectorXd g = features * deltas / n;
  Eigen::MatrixXd c = features * features.transpose() / n;
  c.diagonal().array() += ridge;
  const Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success || !c.allFinite()) {
    throw std::runtime_error("feature covariance is singular");
  }
  return std::max(0.0, g.dot(llt.solve(g)));
}

double mspbe_estimate(const std::vector<TdSample>& batch, double ridge) {
  Eigen::VectorXd deltas(static_cast<Eigen::Index>(batch.size()));
  Eigen::MatrixXd features(ThetaVector::size, deltas.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(i);
    deltas[j] = td_error(batch[i]);
    features.col(j) = batch[i].phi;
  }
  return mspbe_estimate(deltas, features, ridge);
}

}  // namespace rlmpc::agents
