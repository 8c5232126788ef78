#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "rlmpc/function_approx.hpp"
#include "rlmpc/nmpc.hpp"
#include "support/closed_loop_data.hpp"

using namespace rlmpc;
using namespace rlmpc::fa;
using rlmpc::testing::desk_network;

namespace {

Transition make_transition(double q, double offset = 0.0) {
  Transition t;
  t.s = {offset, 1.0 + offset, 0.5};
  t.a = {0.1, -0.2};
  t.theta = nmpc::ThetaVector::initial();
  t.q = q;
  return t;
}

}  // namespace

TEST_CASE("forward pass of trivial networks") {
  Mlp net(14, {64, 64});
  const VectorXd input = VectorXd::LinSpaced(14, -3.0, 5.0);
  CHECK(net.forward(input) == 0.0);
  CHECK(net.num_parameters() == 14 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
  net.layers().back().bias[0] = 2.75;
  CHECK(net.forward(input) == 2.75);
  CHECK(net.forward(VectorXd::Zero(14)) == 2.75);
  CHECK_THROWS_AS(net.forward(VectorXd::Zero(5)), std::invalid_argument);
}

TEST_CASE("hidden activation is tanh") {
  // One hidden unit passing its input through; the output reads it back.
  Mlp net(1, {1});
  net.layers()[0].weights(0, 0) = 1.0;
  net.layers()[1].weights(0, 0) = 1.0;
  for (double z : {0.0, 1e-300, -1e-12, 1e-5, 0.3, -0.9, 2.0, -19.0, 40.0, 800.0, -1e308}) {
    const double expected = std::tanh(z);
    CHECK(std::abs(net.forward(VectorXd::Constant(1, z)) - expected) <= 1e-15);
  }
  CHECK(net.forward(VectorXd::Constant(1, 0.0)) == 0.0);
  CHECK(net.forward(VectorXd::Constant(1, 800.0)) == 1.0);
  CHECK(net.forward(VectorXd::Constant(1, -800.0)) == -1.0);
}

TEST_CASE("backpropagated gradients match finite differences") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  for (const std::vector<int>& hidden : {std::vector<int>{5, 4}, std::vector<int>{64, 64}}) {
    Mlp net(14, hidden);
    net.initialize(rng);
    VectorXd offset(14), scale(14);
    for (int i = 0; i < 14; ++i) {
      offset[i] = normal(rng);
      scale[i] = 0.5 + std::abs(normal(rng));
    }
    net.set_normalization(offset, scale);
    // Nonzero biases so their gradients are exercised away from zero.
    VectorXd params = net.parameters();
    for (auto& p : params) p += 0.1 * normal(rng);
    net.set_parameters(params);

    MatrixXd inputs(14, 16);
    for (auto& v : inputs.reshaped()) v = 2.0 * normal(rng);
    VectorXd targets(16);
    for (auto& v : targets) v = 3.0 * normal(rng);

    VectorXd grad;
    net.loss_and_gradient(inputs, targets, grad);
    std::uniform_int_distribution<int> pick(0, net.num_parameters() - 1);
    const double h = 1e-6;
    for (int trial = 0; trial < 10; ++trial) {
      const int j = pick(rng);
      VectorXd up = params, down = params;
      up[j] += h;
      down[j] -= h;
      Mlp a = net, b = net;
      a.set_parameters(up);
      b.set_parameters(down);
      const double fd = (a.loss(inputs, targets) - b.loss(inputs, targets)) / (2 * h);
      CHECK(std::abs(grad[j] - fd) <= 1e-5 * std::max(std::abs(fd), 1e-3));
    }
  }
}

TEST_CASE("replay buffer") {
  ReplayBuffer buffer(3);
  buffer.push(make_transition(1.0, 0.0));
  CHECK(buffer.size() == 1);
  CHECK(buffer[0].q == 1.0);
  CHECK(buffer[0].s.y == 1.0);
  CHECK(buffer[0].theta == nmpc::ThetaVector::initial());
  for (int i = 1; i <= 3; ++i) buffer.push(make_transition(1.0 + i, i));
  CHECK(buffer.size() == 3);
  CHECK(buffer[0].q == 2.0);
  CHECK(buffer[2].q == 4.0);
  CHECK_THROWS_AS(buffer.push(make_transition(std::nan(""))), std::invalid_argument);

  std::mt19937_64 a(5), b(5);
  CHECK_THROWS_AS(buffer.sample_indices(4, a), std::length_error);
  ReplayBuffer big;
  for (int i = 0; i < 500; ++i) big.push(make_transition(i, 0.01 * i));
  const auto first = big.sample_indices(128, a);
  const auto second = big.sample_indices(128, b);
  CHECK(first == second);
  std::vector<std::size_t> sorted = first;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());

  std::stringstream ss;
  big.save(ss);
  const ReplayBuffer restored = ReplayBuffer::load(ss);
  REQUIRE(restored.size() == big.size());
  for (std::size_t i = 0; i < big.size(); ++i) {
    CHECK(restored[i].q == big[i].q);
    CHECK(restored[i].s == big[i].s);
    CHECK(restored[i].theta == big[i].theta);
  }
}

TEST_CASE("training refuses an undersized buffer") {
  ReplayBuffer buffer;
  for (int i = 0; i < 10; ++i) buffer.push(make_transition(i));
  QNetwork net = desk_network();
  const VectorXd before = net.mlp().parameters();
  AdamState adam;
  std::mt19937_64 rng(1);
  CHECK_FALSE(train_minibatch(buffer, net, adam, 11, rng).has_value());
  CHECK(net.mlp().parameters() == before);
  CHECK(adam.step == 0);
}

TEST_CASE("a network already at the target stays put") {
  ReplayBuffer buffer;
  for (int i = 0; i < 8; ++i) buffer.push(make_transition(4.5));
  QNetwork net = desk_network();
  net.mlp().layers().back().bias[0] = 4.5;
  const VectorXd before = net.mlp().parameters();
  AdamState adam;
  std::mt19937_64 rng(1);
  const auto loss = train_minibatch(buffer, net, adam, 4, rng);
  REQUIRE(loss.has_value());
  CHECK(*loss == 0.0);
  CHECK((net.mlp().parameters() - before).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("one step moves a linear model toward its target") {
  Mlp linear(3, {}, Activation::identity);
  std::mt19937_64 rng(4);
  linear.initialize(rng);
  MatrixXd x(3, 1);
  x << 0.3, -1.0, 2.0;
  const VectorXd target = VectorXd::Constant(1, 7.0);
  const double before = std::abs(linear.forward(x.col(0)) - 7.0);
  VectorXd grad;
  linear.loss_and_gradient(x, target, grad);
  VectorXd p = linear.parameters();
  AdamState adam;
  adam_step(p, grad, adam);
  linear.set_parameters(p);
  CHECK(std::abs(linear.forward(x.col(0)) - 7.0) < before);
}

TEST_CASE("adam matches its update formula") {
  VectorXd p(2);
  p << 1.0, -2.0;
  VectorXd g(2);
  g << 0.5, -4.0;
  AdamState adam;
  adam_step(p, g, adam);
  // After one step the bias-corrected ratio is sign(g), so each weight moves by
  // step_size * |g| / (|g| + eps).
  CHECK(p[0] == doctest::Approx(1.0 - 1e-2 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(-2.0 + 1e-2 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
  CHECK(adam.step == 1);

  std::stringstream ss;
  save_adam(ss, adam);
  const AdamState back = load_adam(ss);
  CHECK(back.step == 1);
  CHECK(back.first_moment == adam.first_moment);
  CHECK(back.second_moment == adam.second_moment);
  CHECK_THROWS_AS(AdamState{.step_size = 0.0}.validate(), std::invalid_argument);
}

TEST_CASE("theta ablation ignores theta") {
  QNetwork ablated = desk_network(false);
  std::mt19937_64 rng(3);
  ablated.mlp().initialize(rng);
  nmpc::ThetaVector other = nmpc::ThetaVector::initial();
  for (double& v : other.values) v *= 3.0;
  const world::RobotState s{0.3, 1.1, 0.4};
  const world::ControlInput a{0.2, -0.1};
  CHECK(ablated.mlp().input_width() == 5);
  CHECK(ablated.value(s, a, nmpc::ThetaVector::initial()) == ablated.value(s, a, other));

  QNetwork full = desk_network(true);
  full.mlp().initialize(rng);
  CHECK(full.mlp().input_width() == 14);
  CHECK(full.value(s, a, nmpc::ThetaVector::initial()) != full.value(s, a, other));
}

TEST_CASE("network checkpoint round trip") {
  QNetwork net = desk_network();
  std::mt19937_64 rng(8);
  net.mlp().initialize(rng);
  std::stringstream ss;
  net.save(ss);
  const QNetwork back = QNetwork::load(ss);
  CHECK(back.theta_input());
  CHECK(back.mlp().parameters() == net.mlp().parameters());
  CHECK(back.mlp().input_scale() == net.mlp().input_scale());
  const world::RobotState s{1.0, 2.0, 0.3};
  CHECK(back.value(s, {0.1, 0.2}, nmpc::ThetaVector::initial()) ==
        net.value(s, {0.1, 0.2}, nmpc::ThetaVector::initial()));

  std::stringstream bad("rlmpc-qnet 7 1\n");
  CHECK_THROWS_AS(QNetwork::load(bad), std::runtime_error);
}

TEST_CASE("regression on a frozen buffer from closed-loop data") {
  const ReplayBuffer buffer = testing::closed_loop_buffer(1000);
  REQUIRE(buffer.size() == 1000);
  const double variance = testing::target_variance(buffer);
  REQUIRE(variance > 0.0);

  QNetwork net = desk_network();
  std::mt19937_64 rng(77);
  net.mlp().initialize(rng);
  AdamState adam;
  std::vector<double> losses;
  losses.push_back(buffer_loss(buffer, net));
  for (int step = 0; step < 2000; ++step) {
    REQUIRE(train_minibatch(buffer, net, adam, 128, rng).has_value());
    losses.push_back(buffer_loss(buffer, net));
  }
  MESSAGE("final loss / variance = " << losses.back() / variance);
  CHECK(losses.back() <= 0.01 * variance);

  // Full-buffer loss averaged over each 50-step window never exceeds the
  // preceding window's average by more than 10%.
  std::vector<double> window;
  for (std::size_t t = 0; t + 50 <= losses.size(); ++t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < 50; ++i) sum += losses[t + i];
    window.push_back(sum / 50.0);
  }
  double worst = 0.0;
  for (std::size_t t = 0; t + 50 < window.size(); ++t) {
    worst = std::max(worst, window[t + 50] / window[t]);
  }
  MESSAGE("worst window ratio = " << worst);
  CHECK(worst <= 1.1);
}
