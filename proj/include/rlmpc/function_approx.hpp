#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "rlmpc/nmpc.hpp"
#include "rlmpc/world.hpp"

namespace rlmpc::fa {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { tanh, identity };

struct Layer {
  MatrixXd weights;  // out x in
  VectorXd bias;
};

/**
 * Fully connected network with scalar linear output. Inputs are mapped by
 * (input - offset) / scale before the first layer; hidden layers use the
 * selected activation; the last layer is linear.
 */
class Mlp {
 public:
  Mlp() = default;
  /// All weights and biases zero, identity normalization.
  Mlp(int input_width, std::vector<int> hidden, Activation activation = Activation::tanh);

  /// Uniform fan-in initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
  void initialize(std::mt19937_64& rng);
  void set_normalization(VectorXd offset, VectorXd scale);

  double forward(const VectorXd& input) const;
  /// One input per column.
  VectorXd forward_batch(const MatrixXd& inputs) const;
  /// Mean squared error over the batch and its gradient in parameter order.
  double loss_and_gradient(const MatrixXd& inputs, const VectorXd& targets, VectorXd& gradient) const;
  double loss(const MatrixXd& inputs, const VectorXd& targets) const;

  /// Flattened parameters: per layer, weights column-major then bias.
  VectorXd parameters() const;
  void set_parameters(const VectorXd& flat);
  int num_parameters() const;

  int input_width() const { return input_width_; }
  const std::vector<int>& hidden() const { return hidden_; }
  Activation activation() const { return activation_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const VectorXd& input_offset() const { return offset_; }
  const VectorXd& input_scale() const { return scale_; }

  void save(std::ostream& out) const;
  static Mlp load(std::istream& in);

 private:
  MatrixXd normalize(const MatrixXd& inputs) const;

  int input_width_ = 0;
  std::vector<int> hidden_;
  Activation activation_ = Activation::tanh;
  std::vector<Layer> layers_;
  VectorXd offset_;
  VectorXd scale_;
};

struct AdamState {
  double step_size = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  VectorXd first_moment;
  VectorXd second_moment;

  void validate() const;
};

/// In-place adaptive-moment step; moments are sized on first use.
void adam_step(VectorXd& parameters, const VectorXd& gradient, AdamState& state);

/// Replay record {s, a, theta, Q_theta(s, a)}.
struct Transition {
  world::RobotState s;
  world::ControlInput a;
  nmpc::ThetaVector theta;
  double q = 0.0;
};

/// FIFO store of transitions; capacity 0 means unbounded.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

  void push(const Transition& t);
  std::size_t size() const { return records_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return records_[i]; }
  void clear() { records_.clear(); }

  /// n distinct indices drawn uniformly; throws std::length_error when size() < n.
  std::vector<std::size_t> sample_indices(std::size_t n, std::mt19937_64& rng) const;

  void save(std::ostream& out) const;
  static ReplayBuffer load(std::istream& in);

 private:
  std::size_t capacity_;
  std::deque<Transition> records_;
};

/**
 * Approximator Q_NN(s, a, theta) of the action value. Without theta input it
 * sees only (s, a), which is the deep Expected Sarsa baseline.
 */
class QNetwork {
 public:
  QNetwork() = default;
  /// Network with normalization derived from the scenario boxes and theta_init.
  QNetwork(const world::StateBounds& states, const world::ActionBounds& actions,
           const nmpc::ThetaVector& theta_init, bool theta_input = true,
           std::vector<int> hidden = {64, 64});

  static int input_width(bool theta_input) { return theta_input ? 14 : 5; }
  VectorXd features(const world::RobotState& s, const world::ControlInput& a,
                    const nmpc::ThetaVector& theta) const;
  MatrixXd features(const ReplayBuffer& buffer, const std::vector<std::size_t>& indices) const;

  double value(const world::RobotState& s, const world::ControlInput& a,
               const nmpc::ThetaVector& theta) const;

  bool theta_input() const { return theta_input_; }
  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }

  void save(std::ostream& out) const;
  static QNetwork load(std::istream& in);

 private:
  bool theta_input_ = true;
  Mlp mlp_;
};

/**
 * One Adam step on the mean squared loss of a uniformly drawn mini-batch of
 * n records. Returns the pre-step loss, or nullopt (and no change) when the
 * buffer holds fewer than n records.
 */
std::optional<double> train_minibatch(const ReplayBuffer& buffer, QNetwork& network,
                                      AdamState& adam, std::size_t n, std::mt19937_64& rng);

/// Mean squared error of the network over every record of the buffer.
double buffer_loss(const ReplayBuffer& buffer, const QNetwork& network);

void save_adam(std::ostream& out, const AdamState& state);
AdamState load_adam(std::istream& in);

}  // namespace rlmpc::fa
