#include "rlmpc/function_approx.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace rlmpc::fa {

namespace {

constexpr const char* kMlpTag = "rlmpc-mlp";
constexpr const char* kBufferTag = "rlmpc-replay";
constexpr const char* kAdamTag = "rlmpc-adam";
constexpr const char* kQNetworkTag = "rlmpc-qnet";
constexpr int kFormatVersion = 1;

// tanh through the vectorized exp: (1 - e^{-2|z|}) / (1 + e^{-2|z|}) with the sign of z.
MatrixXd tanh_of(const MatrixXd& z) {
  const Eigen::ArrayXXd t = (-2.0 * z.array().abs()).exp();
  return ((1.0 - t) / (1.0 + t)) * z.array().sign();
}

void expect_header(std::istream& in, const std::string& tag) {
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != tag) {
    throw std::runtime_error("expected '" + tag + "' header in checkpoint");
  }
  if (version != kFormatVersion) {
    throw std::runtime_error(tag + ": unsupported format version " + std::to_string(version));
  }
}

template <typename T>
T read(std::istream& in, const char* what) {
  T value;
  if (!(in >> value)) throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
  return value;
}

double read_double(std::istream& in) {
  // operator>> rejects "nan" and "inf"; go through strtod instead.
  std::string token = read<std::string>(in, "number");
  std::size_t used = 0;
  const double v = std::stod(token, &used);
  if (used != token.size()) throw std::runtime_error("malformed number in checkpoint: " + token);
  return v;
}

// Enough digits for doubles to survive a text round trip unchanged.
class FullPrecision {
 public:
  explicit FullPrecision(std::ostream& out) : out_(out), old_(out.precision(17)) {}
  ~FullPrecision() { out_.precision(old_); }
  FullPrecision(const FullPrecision&) = delete;
  FullPrecision& operator=(const FullPrecision&) = delete;

 private:
  std::ostream& out_;
  std::streamsize old_;
};

void write_vector(std::ostream& out, const VectorXd& v) {
  out << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << v[i];
  out << '\n';
}

VectorXd read_vector(std::istream& in) {
  const auto n = read<Eigen::Index>(in, "vector size");
  if (n < 0) throw std::runtime_error("negative vector size in checkpoint");
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = read_double(in);
  return v;
}

}  // namespace

Mlp::Mlp(int input_width, std::vector<int> hidden, Activation activation)
    : input_width_(input_width), hidden_(std::move(hidden)), activation_(activation) {
  if (input_width_ < 1) throw std::invalid_argument("input width must be >= 1");
  int in = input_width_;
  for (int width : hidden_) {
    if (width < 1) throw std::invalid_argument("hidden widths must be >= 1");
    layers_.push_back({MatrixXd::Zero(width, in), VectorXd::Zero(width)});
    in = width;
  }
  layers_.push_back({MatrixXd::Zero(1, in), VectorXd::Zero(1)});
  offset_ = VectorXd::Zero(input_width_);
  scale_ = VectorXd::Ones(input_width_);
}

void Mlp::initialize(std::mt19937_64& rng) {
  for (auto& layer : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weights.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < layer.weights.cols(); ++j) {
      for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) layer.weights(i, j) = dist(rng);
    }
    layer.bias.setZero();
  }
}

void Mlp::set_normalization(VectorXd offset, VectorXd scale) {
  if (offset.size() != input_width_ || scale.size() != input_width_) {
    throw std::invalid_argument("normalization width does not match the network input");
  }
  if ((scale.array() <= 0).any()) throw std::invalid_argument("normalization scales must be > 0");
  offset_ = std::move(offset);
  scale_ = std::move(scale);
}

MatrixXd Mlp::normalize(const MatrixXd& inputs) const {
  if (inputs.rows() != input_width_) throw std::invalid_argument("input width mismatch");
  return (inputs.colwise() - offset_).array().colwise() / scale_.array();
}

double Mlp::forward(const VectorXd& input) const { return forward_batch(input)[0]; }

VectorXd Mlp::forward_batch(const MatrixXd& inputs) const {
  MatrixXd a = normalize(inputs);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    MatrixXd z = (layers_[l].weights * a).colwise() + layers_[l].bias;
    a = activation_ == Activation::tanh ? tanh_of(z) : z;
  }
  const Layer& out = layers_.back();
  return ((out.weights * a).colwise() + out.bias).transpose();
}

double Mlp::loss(const MatrixXd& inputs, const VectorXd& targets) const {
  return (forward_batch(inputs) - targets).squaredNorm() / static_cast<double>(targets.size());
}

double Mlp::loss_and_gradient(const MatrixXd& inputs, const VectorXd& targets,
                              VectorXd& gradient) const {
  const Eigen::Index batch = inputs.cols();
  if (targets.size() != batch || batch == 0) throw std::invalid_argument("batch size mismatch");

  std::vector<MatrixXd> activations;
  activations.reserve(layers_.size());
  activations.push_back(normalize(inputs));
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    MatrixXd z = (layers_[l].weights * activations.back()).colwise() + layers_[l].bias;
    activations.push_back(activation_ == Activation::tanh ? tanh_of(z) : z);
  }
  const Layer& out = layers_.back();
  const Eigen::RowVectorXd prediction = (out.weights * activations.back()).colwise() + out.bias;
  const Eigen::RowVectorXd residual = prediction - targets.transpose();
  const double loss = residual.squaredNorm() / static_cast<double>(batch);

  gradient.resize(num_parameters());
  MatrixXd delta = 2.0 / static_cast<double>(batch) * residual;
  // Walk layers backwards, writing each gradient block at its flat offset.
  std::vector<Eigen::Index> offsets(layers_.size());
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    offsets[l] = offset;
    offset += layers_[l].weights.size() + layers_[l].bias.size();
  }
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const MatrixXd gw = delta * activations[l].transpose();
    const VectorXd gb = delta.rowwise().sum();
    gradient.segment(offsets[l], gw.size()) = Eigen::Map<const VectorXd>(gw.data(), gw.size());
    gradient.segment(offsets[l] + gw.size(), gb.size()) = gb;
    if (l == 0) break;
    MatrixXd back = layers_[l].weights.transpose() * delta;
    if (activation_ == Activation::tanh) {
      back.array() *= 1.0 - activations[l].array().square();
    }
    delta = std::move(back);
  }
  return loss;
}

int Mlp::num_parameters() const {
  Eigen::Index n = 0;
  for (const auto& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return static_cast<int>(n);
}

VectorXd Mlp::parameters() const {
  VectorXd flat(num_parameters());
  Eigen::Index at = 0;
  for (const auto& layer : layers_) {
    flat.segment(at, layer.weights.size()) =
        Eigen::Map<const VectorXd>(layer.weights.data(), layer.weights.size());
    at += layer.weights.size();
    flat.segment(at, layer.bias.size()) = layer.bias;
    at += layer.bias.size();
  }
  return flat;
}

void Mlp::set_parameters(const VectorXd& flat) {
  if (flat.size() != num_parameters()) throw std::invalid_argument("parameter count mismatch");
  Eigen::Index at = 0;
  for (auto& layer : layers_) {
    Eigen::Map<VectorXd>(layer.weights.data(), layer.weights.size()) =
        flat.segment(at, layer.weights.size());
    at += layer.weights.size();
    layer.bias = flat.segment(at, layer.bias.size());
    at += layer.bias.size();
  }
}

void Mlp::save(std::ostream& out) const {
  const FullPrecision precision(out);
  out << kMlpTag << ' ' << kFormatVersion << '\n';
  out << "activation " << (activation_ == Activation::tanh ? "tanh" : "identity") << '\n';
  out << "shape " << hidden_.size() + 2 << ' ' << input_width_;
  for (int h : hidden_) out << ' ' << h;
  out << " 1\n";
  write_vector(out, offset_);
  write_vector(out, scale_);
  write_vector(out, parameters());
}

Mlp Mlp::load(std::istream& in) {
  expect_header(in, kMlpTag);
  if (read<std::string>(in, "activation key") != "activation") {
    throw std::runtime_error("malformed network checkpoint: missing activation");
  }
  const auto act = read<std::string>(in, "activation");
  if (act != "tanh" && act != "identity") throw std::runtime_error("unknown activation " + act);
  if (read<std::string>(in, "shape key") != "shape") {
    throw std::runtime_error("malformed network checkpoint: missing shape");
  }
  const auto count = read<std::size_t>(in, "layer count");
  if (count < 2 || count > 64) throw std::runtime_error("malformed network shape");
  std::vector<int> widths(count);
  for (int& w : widths) w = read<int>(in, "layer width");
  if (widths.size() < 2 || widths.back() != 1) throw std::runtime_error("malformed network shape");
  std::vector<int> hidden(widths.begin() + 1, widths.end() - 1);
  Mlp mlp(widths.front(), hidden, act == "tanh" ? Activation::tanh : Activation::identity);
  VectorXd offset = read_vector(in);
  VectorXd scale = read_vector(in);
  mlp.set_normalization(std::move(offset), std::move(scale));
  mlp.set_parameters(read_vector(in));
  return mlp;
}

void AdamState::validate() const {
  if (!(step_size > 0)) throw std::invalid_argument("Adam step size must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw std::invalid_argument("Adam decay rates must lie in [0, 1)");
  }
  if (!(epsilon > 0)) throw std::invalid_argument("Adam floor must be > 0");
}

void adam_step(VectorXd& parameters, const VectorXd& gradient, AdamState& state) {
  if (gradient.size() != parameters.size()) throw std::invalid_argument("gradient size mismatch");
  if (state.first_moment.size() == 0) {
    state.first_moment = VectorXd::Zero(parameters.size());
    state.second_moment = VectorXd::Zero(parameters.size());
  }
  if (state.first_moment.size() != parameters.size()) {
    throw std::invalid_argument("Adam moments do not match the parameter count");
  }
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * gradient;
  state.second_moment =
      state.beta2 * state.second_moment + (1 - state.beta2) * gradient.cwiseAbs2();
  const double t = static_cast<double>(state.step);
  const double c1 = 1 - std::pow(state.beta1, t);
  const double c2 = 1 - std::pow(state.beta2, t);
  parameters.array() -= state.step_size * (state.first_moment.array() / c1) /
                        ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

void ReplayBuffer::push(const Transition& t) {
  if (!std::isfinite(t.q)) throw std::invalid_argument("replay target must be finite");
  if (capacity_ > 0 && records_.size() == capacity_) records_.pop_front();
  records_.push_back(t);
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, std::mt19937_64& rng) const {
  if (n == 0 || records_.size() < n) {
    throw std::length_error("replay buffer holds fewer records than the mini-batch size");
  }
  std::uniform_int_distribution<std::size_t> pick(0, records_.size() - 1);
  std::vector<std::size_t> indices;
  indices.reserve(n);
  std::unordered_set<std::size_t> seen;
  while (indices.size() < n) {
    const std::size_t i = pick(rng);
    if (seen.insert(i).second) indices.push_back(i);
  }
  return indices;
}

void ReplayBuffer::save(std::ostream& out) const {
  const FullPrecision precision(out);
  out << kBufferTag << ' ' << kFormatVersion << '\n';
  out << capacity_ << ' ' << records_.size() << '\n';
  for (const auto& t : records_) {
    out << t.s.x << ' ' << t.s.y << ' ' << t.s.phi << ' ' << t.a.v << ' ' << t.a.nu;
    for (double v : t.theta.values) out << ' ' << v;
    out << ' ' << t.q << '\n';
  }
}

ReplayBuffer ReplayBuffer::load(std::istream& in) {
  expect_header(in, kBufferTag);
  const auto capacity = read<std::size_t>(in, "buffer capacity");
  const auto count = read<std::size_t>(in, "buffer size");
  ReplayBuffer buffer(capacity);
  for (std::size_t r = 0; r < count; ++r) {
    Transition t;
    t.s.x = read_double(in);
    t.s.y = read_double(in);
    t.s.phi = read_double(in);
    t.a.v = read_double(in);
    t.a.nu = read_double(in);
    for (double& v : t.theta.values) v = read_double(in);
    t.q = read_double(in);
    buffer.push(t);
  }
  return buffer;
}

QNetwork::QNetwork(const world::StateBounds& states, const world::ActionBounds& actions,
                   const nmpc::ThetaVector& theta_init, bool theta_input, std::vector<int> hidden)
    : theta_input_(theta_input), mlp_(input_width(theta_input), std::move(hidden)) {
  const int width = input_width(theta_input);
  VectorXd offset = VectorXd::Zero(width);
  VectorXd scale = VectorXd::Ones(width);
  auto box = [&](int i, const world::Interval& range) {
    offset[i] = 0.5 * (range.lower + range.upper);
    scale[i] = range.half_width();
  };
  box(0, states.x);
  box(1, states.y);
  scale[2] = std::numbers::pi;
  box(3, actions.v);
  box(4, actions.nu);
  if (theta_input) {
    // Small initial entries such as theta_c would otherwise be blown up by the
    // magnitude scaling once learning moves them.
    for (int j = 0; j < nmpc::ThetaVector::size; ++j) {
      scale[5 + j] = std::max(std::abs(theta_init[j]), 0.1);
    }
  }
  mlp_.set_normalization(std::move(offset), std::move(scale));
}

VectorXd QNetwork::features(const world::RobotState& s, const world::ControlInput& a,
                            const nmpc::ThetaVector& theta) const {
  VectorXd f(input_width(theta_input_));
  f.head<5>() << s.x, s.y, s.phi, a.v, a.nu;
  if (theta_input_) f.tail<nmpc::ThetaVector::size>() = theta.vector();
  return f;
}

MatrixXd QNetwork::features(const ReplayBuffer& buffer,
                            const std::vector<std::size_t>& indices) const {
  MatrixXd f(input_width(theta_input_), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t c = 0; c < indices.size(); ++c) {
    const Transition& t = buffer[indices[c]];
    f.col(static_cast<Eigen::Index>(c)) = features(t.s, t.a, t.theta);
  }
  return f;
}

double QNetwork::value(const world::RobotState& s, const world::ControlInput& a,
                       const nmpc::ThetaVector& theta) const {
  return mlp_.forward(features(s, a, theta));
}

void QNetwork::save(std::ostream& out) const {
  out << kQNetworkTag << ' ' << kFormatVersion << ' ' << (theta_input_ ? 1 : 0) << '\n';
  mlp_.save(out);
}

QNetwork QNetwork::load(std::istream& in) {
  expect_header(in, kQNetworkTag);
  QNetwork q;
  q.theta_input_ = read<int>(in, "theta input flag") != 0;
  q.mlp_ = Mlp::load(in);
  if (q.mlp_.input_width() != input_width(q.theta_input_)) {
    throw std::runtime_error("network input width does not match its theta-input flag");
  }
  return q;
}

std::optional<double> train_minibatch(const ReplayBuffer& buffer, QNetwork& network,
                                      AdamState& adam, std::size_t n, std::mt19937_64& rng) {
  if (n == 0) throw std::invalid_argument("mini-batch size must be >= 1");
  if (buffer.size() < n) return std::nullopt;
  const auto indices = buffer.sample_indices(n, rng);
  const MatrixXd inputs = network.features(buffer, indices);
  VectorXd targets(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) targets[static_cast<Eigen::Index>(i)] = buffer[indices[i]].q;
  VectorXd gradient;
  const double loss = network.mlp().loss_and_gradient(inputs, targets, gradient);
  VectorXd params = network.mlp().parameters();
  adam_step(params, gradient, adam);
  network.mlp().set_parameters(params);
  return loss;
}

double buffer_loss(const ReplayBuffer& buffer, const QNetwork& network) {
  if (buffer.size() == 0) throw std::invalid_argument("empty replay buffer");
  std::vector<std::size_t> all(buffer.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  VectorXd targets(static_cast<Eigen::Index>(all.size()));
  for (std::size_t i = 0; i < all.size(); ++i) targets[static_cast<Eigen::Index>(i)] = buffer[i].q;
  return network.mlp().loss(network.features(buffer, all), targets);
}

void save_adam(std::ostream& out, const AdamState& state) {
  const FullPrecision precision(out);
  out << kAdamTag << ' ' << kFormatVersion << '\n';
  out << state.step_size << ' ' << state.beta1 << ' ' << state.beta2 << ' ' << state.epsilon
      << ' ' << state.step << '\n';
  write_vector(out, state.first_moment);
  write_vector(out, state.second_moment);
}

AdamState load_adam(std::istream& in) {
  expect_header(in, kAdamTag);
  AdamState s;
  s.step_size = read_double(in);
  s.beta1 = read_double(in);
  s.beta2 = read_double(in);
  s.epsilon = read_double(in);
  s.step = read<std::int64_t>(in, "Adam step");
  s.first_moment = read_vector(in);
  s.second_moment = read_vector(in);
  if (s.first_moment.size() != s.second_moment.size()) {
    throw std::runtime_error("Adam moment sizes differ in checkpoint");
  }
  return s;
}

}  // namespace rlmpc::fa
