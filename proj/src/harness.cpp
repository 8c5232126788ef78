#include "rlmpc/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace rlmpc::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr const char* kCheckpointTag = "rlmpc-checkpoint";
constexpr int kCheckpointVersion = 1;

bool is_gradient_td(agents::Algorithm a) { return a == agents::Algorithm::ges; }

// Shortest round-trip text; NaN becomes an empty field.
std::string field(double value) {
  if (std::isnan(value)) return {};
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, result.ptr);
}

void expect_word(std::istream& in, const std::string& word) {
  std::string got;
  if (!(in >> got) || got != word) {
    throw std::runtime_error("malformed checkpoint: expected '" + word + "', got '" + got + "'");
  }
}

template <std::size_t N>
void write_values(std::ostream& out, const char* key, const double* values) {
  out << key;
  for (std::size_t i = 0; i < N; ++i) out << ' ' << values[i];
  out << '\n';
}

template <std::size_t N>
void read_values(std::istream& in, const char* key, double* values) {
  expect_word(in, key);
  for (std::size_t i = 0; i < N; ++i) {
    std::string token;
    if (!(in >> token)) throw std::runtime_error(std::string("malformed checkpoint: ") + key);
    values[i] = std::stod(token);
  }
}

}  // namespace

Trainer::Trainer(RunConfig config)
    : config_(std::move(config)),
      scenario_(config_.scenario),
      controller_((config_.validate(), config_.nmpc_config()), config_.solver),
      rng_(config_.seed),
      theta_(config_.theta_init),
      w_(nmpc::ThetaGradient::Constant(config_.w_init)),
      buffer_(config_.buffer_capacity) {
  adam_.step_size = config_.zeta;
  if (agents::uses_network(config_.algorithm)) {
    network_ = fa::QNetwork(scenario_.state_bounds, scenario_.action_bounds, config_.theta_init,
                            config_.algorithm == agents::Algorithm::rdes, config_.hidden);
    network_.mlp().initialize(rng_);
  }
}

EpisodeLog Trainer::run_episode() {
  if (config_.reset_w_each_episode && is_gradient_td(config_.algorithm)) {
    w_ = nmpc::ThetaGradient::Constant(config_.w_init);
  }
  EpisodeLog log = rollout(true);
  ++next_episode_;
  return log;
}

EpisodeLog Trainer::evaluate() { return rollout(false); }

EpisodeLog Trainer::rollout(bool learn) {
  using clock = std::chrono::steady_clock;
  const agents::Algorithm algorithm = config_.algorithm;
  const double discount = config_.discount;
  const double ts = scenario_.sampling_period;

  partial_ = EpisodeLog{};
  EpisodeSummary& summary = partial_.summary;
  summary.episode = next_episode_;
  summary.min_clearance = std::numeric_limits<double>::infinity();
  summary.max_obstacle_value = -std::numeric_limits<double>::infinity();
  auto visit = [&](const world::RobotState& s) {
    summary.min_clearance = std::min(summary.min_clearance, world::min_clearance(s, scenario_.obstacles));
    for (const auto& o : scenario_.obstacles) {
      summary.max_obstacle_value = std::max(summary.max_obstacle_value, world::obstacle_value(s, o));
    }
  };

  world::RobotState s = scenario_.start;
  visit(s);
  std::vector<world::ControlInput> plan;
  world::ControlInput last_action = scenario_.reference_input;

  for (int k = 0; k < config_.steps; ++k) {
    const auto started = clock::now();
    const std::int64_t solves_before = controller_.solve_count();
    const std::int64_t iterations_before = controller_.iteration_count();

    StepRecord r;
    r.episode = next_episode_;
    r.step = k;
    r.s = s;
    r.td_error = kNaN;
    r.q_next = kNaN;

    const nmpc::QEvaluation greedy = controller_.policy(s, theta_, plan);
    r.q = greedy.converged() ? greedy.value() : kNaN;
    world::ControlInput a = last_action;
    if (greedy.converged()) {
      a = greedy.first_input();
      if (learn) {
        const Eigen::Vector2d noise(normal_(rng_), normal_(rng_));
        const std::int64_t index = config_.exploration_index == ExplorationIndex::global
                                       ? global_step_
                                       : static_cast<std::int64_t>(next_episode_);
        a = nmpc::explore_action(a, index, noise, config_.exploration, scenario_.action_bounds);
      }
      plan = nmpc::shift_inputs(greedy.inputs());
    } else {
      r.solver_failure = true;
      plan.clear();
    }
    const world::RobotState s_next = world::step_rk4(s, a, ts);
    r.a = a;
    r.stage_cost = world::rl_stage_cost(s, a, scenario_.target, scenario_.stage_cost, scenario_.obstacles);

    if (learn && greedy.converged()) {
      agents::TdSample sample;
      sample.stage_cost = r.stage_cost;
      sample.q = greedy.value();
      sample.discount = discount;
      bool have_target = false;
      if (agents::solves_per_step(algorithm) == 2) {
        const nmpc::QEvaluation next = controller_.policy(s_next, theta_, plan);
        if (next.converged()) {
          sample.q_next = next.value();
          if (is_gradient_td(algorithm)) sample.phi_next = next.gradient();
          have_target = true;
          plan = next.inputs();
        } else {
          r.solver_failure = true;
        }
      } else {
        buffer_.push({s, greedy.first_input(), theta_, greedy.value()});
        if (buffer_.size() >= static_cast<std::size_t>(config_.minibatch)) {
          fa::train_minibatch(buffer_, network_, adam_, static_cast<std::size_t>(config_.minibatch), rng_);
        }
        sample.q_next = agents::rdes_subsequent_value(network_, s_next, greedy.second_input(), theta_);
        have_target = true;
      }
      if (have_target) {
        sample.phi = greedy.gradient();
        r.q_next = sample.q_next;
        r.td_error = agents::td_error(sample);
        if (!std::isfinite(r.td_error) || std::abs(r.td_error) > config_.divergence_threshold) {
          r.theta = theta_;
          if (is_gradient_td(algorithm)) r.w = w_;
          partial_.steps.push_back(r);
          std::ostringstream what;
          what << "TD error " << r.td_error << " exceeds the divergence threshold "
               << config_.divergence_threshold << " at episode " << r.episode << ", step " << k;
          throw DivergenceError(what.str(), r.episode, k);
        }
        if (config_.alpha > 0) {
          if (is_gradient_td(algorithm)) {
            agents::GesState state{theta_, w_, config_.alpha, config_.beta};
            state = agents::ges_update(state, sample);
            theta_ = state.theta;
            w_ = state.w;
          } else {
            theta_ = agents::es_update(theta_, r.td_error, sample.phi, config_.alpha);
          }
          r.updated = true;
          if (!theta_.finite() || !w_.allFinite()) {
            r.theta = theta_;
            if (is_gradient_td(algorithm)) r.w = w_;
            partial_.steps.push_back(r);
            throw DivergenceError("theta is no longer finite", r.episode, k);
          }
        }
      }
    }

    if (greedy.converged()) last_action = a;
    r.theta = theta_;
    if (is_gradient_td(algorithm)) r.w = w_;
    r.nlp_solves = static_cast<int>(controller_.solve_count() - solves_before);
    r.nlp_iterations = static_cast<int>(controller_.iteration_count() - iterations_before);
    if (r.solver_failure) ++summary.solver_failures;
    summary.stage_cost_sum += r.stage_cost;
    s = s_next;
    visit(s);
    if (learn) ++global_step_;
    r.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - started).count();
    partial_.steps.push_back(r);
  }
  summary.final_state = s;
  summary.static_error = world::state_distance(s, scenario_.target);
  partial_.complete = true;
  return partial_;
}

void Trainer::save_checkpoint(std::ostream& out) const {
  const auto precision = out.precision(17);
  out << kCheckpointTag << ' ' << kCheckpointVersion << '\n';
  out << "algorithm " << agents::algorithm_name(config_.algorithm) << '\n';
  out << "next_episode " << next_episode_ << '\n';
  out << "global_step " << global_step_ << '\n';
  write_values<9>(out, "theta", theta_.values.data());
  write_values<9>(out, "w", w_.data());
  out << "rng " << rng_ << '\n';
  out << "normal " << normal_ << '\n';
  if (agents::uses_network(config_.algorithm)) {
    network_.save(out);
    fa::save_adam(out, adam_);
    buffer_.save(out);
  }
  out << "end\n";
  out.precision(precision);
}

void Trainer::load_checkpoint(std::istream& in) {
  expect_word(in, kCheckpointTag);
  int version = 0;
  if (!(in >> version) || version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  expect_word(in, "algorithm");
  std::string algorithm;
  in >> algorithm;
  if (algorithm != agents::algorithm_name(config_.algorithm)) {
    throw std::runtime_error("checkpoint was written by algorithm " + algorithm);
  }
  expect_word(in, "next_episode");
  in >> next_episode_;
  expect_word(in, "global_step");
  in >> global_step_;
  read_values<9>(in, "theta", theta_.values.data());
  read_values<9>(in, "w", w_.data());
  expect_word(in, "rng");
  in >> rng_;
  expect_word(in, "normal");
  in >> normal_;
  if (!in) throw std::runtime_error("malformed checkpoint: random state");
  if (agents::uses_network(config_.algorithm)) {
    network_ = fa::QNetwork::load(in);
    adam_ = fa::load_adam(in);
    buffer_ = fa::ReplayBuffer::load(in);
  }
  expect_word(in, "end");
}

const char* CsvSink::episodes_header() {
  return "episode,step,x,y,phi,v,nu,stage_cost,td_error,q,q_next,nlp_solves,nlp_iters,step_wall_ms";
}

const char* CsvSink::theta_header() {
  return "episode,step,theta_1,theta_2,theta_3,theta_4,theta_5,theta_6,theta_7,theta_8,theta_9,"
         "w_1,w_2,w_3,w_4,w_5,w_6,w_7,w_8,w_9";
}

const char* CsvSink::summary_header() {
  return "episode,stage_cost_sum,static_error,min_clearance,max_obstacle_value,solver_failures,"
         "final_x,final_y,final_phi";
}

namespace {

// Keeps the header and the rows whose leading episode number is below first_episode.
void truncate_rows(const std::filesystem::path& path, const char* header, int first_episode) {
  std::vector<std::string> kept{header};
  std::ifstream in(path);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      continue;
    }
    int episode = 0;
    const auto result = std::from_chars(line.data(), line.data() + line.size(), episode);
    if (result.ec == std::errc() && episode < first_episode) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

std::ofstream open_log(const std::filesystem::path& path, const char* header, bool resume,
                       int first_episode) {
  if (resume && std::filesystem::exists(path)) {
    truncate_rows(path, header, first_episode);
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << header << '\n';
  return out;
}

}  // namespace

CsvSink::CsvSink(const std::filesystem::path& directory, bool resume, int first_episode)
    : episodes_(open_log(directory / "episodes.csv", episodes_header(), resume, first_episode)),
      theta_(open_log(directory / "theta.csv", theta_header(), resume, first_episode)),
      summary_(open_log(directory / "summary.csv", summary_header(), resume, first_episode)) {}

void CsvSink::write(const EpisodeLog& log) {
  for (const StepRecord& r : log.steps) {
    episodes_ << r.episode << ',' << r.step << ',' << field(r.s.x) << ',' << field(r.s.y) << ','
              << field(r.s.phi) << ',' << field(r.a.v) << ',' << field(r.a.nu) << ','
              << field(r.stage_cost) << ',' << field(r.td_error) << ',' << field(r.q) << ','
              << field(r.q_next) << ',' << r.nlp_solves << ',' << r.nlp_iterations << ','
              << field(r.wall_ms) << '\n';
    theta_ << r.episode << ',' << r.step;
    for (double v : r.theta.values) theta_ << ',' << field(v);
    for (int i = 0; i < 9; ++i) theta_ << ',' << (r.w ? field((*r.w)[i]) : std::string());
    theta_ << '\n';
  }
  if (log.complete) {
    const EpisodeSummary& s = log.summary;
    summary_ << s.episode << ',' << field(s.stage_cost_sum) << ',' << field(s.static_error) << ','
             << field(s.min_clearance) << ',' << field(s.max_obstacle_value) << ','
             << s.solver_failures << ',' << field(s.final_state.x) << ',' << field(s.final_state.y)
             << ',' << field(s.final_state.phi) << '\n';
  }
  flush();
  if (!episodes_ || !theta_ || !summary_) throw std::runtime_error("failed writing run logs");
}

void CsvSink::flush() {
  episodes_.flush();
  theta_.flush();
  summary_.flush();
}

namespace {

void write_checkpoint(const Trainer& trainer, const std::filesystem::path& directory) {
  const auto target = directory / "checkpoint.txt";
  const auto staging = directory / "checkpoint.txt.tmp";
  {
    std::ofstream out(staging, std::ios::trunc);
    trainer.save_checkpoint(out);
    if (!out) throw std::runtime_error("cannot write " + staging.string());
  }
  std::filesystem::rename(staging, target);
}

void write_config_echo(const RunConfig& config, const std::filesystem::path& directory) {
  std::ofstream out(directory / "config-echo", std::ios::trunc);
  write_config(out, config);
  if (!out) throw std::runtime_error("cannot write " + (directory / "config-echo").string());
}

std::filesystem::path prepare_directory(const std::string& output_dir) {
  const std::filesystem::path directory(output_dir);
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec || !std::filesystem::is_directory(directory)) {
    throw std::runtime_error("output directory " + output_dir + " is not writable");
  }
  return directory;
}

TrainingLog run_loop(Trainer& trainer, const std::optional<std::filesystem::path>& directory,
                     CsvSink* sink) {
  const RunConfig& config = trainer.config();
  TrainingLog log;
  while (trainer.next_episode() < config.episodes) {
    try {
      log.episodes.push_back(trainer.run_episode());
    } catch (const DivergenceError& e) {
      log.diverged = true;
      log.halt_reason = e.what();
      log.episodes.push_back(trainer.last_partial());
      if (sink) sink->write(trainer.last_partial());
      if (directory) {
        std::ofstream out(*directory / "divergence.txt", std::ios::trunc);
        out << "episode " << e.episode() << "\nstep " << e.step() << "\nreason " << e.what() << '\n';
      }
      break;
    }
    log.theta_trajectory.push_back(trainer.theta());
    if (sink) sink->write(log.episodes.back());
    if (directory && trainer.next_episode() % config.checkpoint_every == 0) {
      write_checkpoint(trainer, *directory);
    }
  }
  if (directory && !log.diverged) write_checkpoint(trainer, *directory);
  log.final_theta = trainer.theta();
  return log;
}

}  // namespace

TrainingLog train(const RunConfig& config) {
  Trainer trainer(config);
  if (config.output_dir.empty()) return run_loop(trainer, std::nullopt, nullptr);
  const auto directory = prepare_directory(config.output_dir);
  write_config_echo(config, directory);
  CsvSink sink(directory, false);
  return run_loop(trainer, directory, &sink);
}

TrainingLog resume(const std::filesystem::path& directory, std::optional<int> episodes) {
  RunConfig config = load_config(directory / "config-echo");
  if (episodes) config.episodes = *episodes;
  config.output_dir = directory.string();
  Trainer trainer(config);
  {
    std::ifstream in(directory / "checkpoint.txt");
    if (!in) throw std::runtime_error("no checkpoint in " + directory.string());
    trainer.load_checkpoint(in);
  }
  write_config_echo(config, directory);
  CsvSink sink(directory, true, trainer.next_episode());
  return run_loop(trainer, directory, &sink);
}

EpisodeLog evaluate(const RunConfig& config, std::optional<nmpc::ThetaVector> theta) {
  RunConfig eval = config;
  if (theta) eval.theta_init = *theta;
  Trainer trainer(eval);
  const EpisodeLog log = trainer.evaluate();
  if (!eval.output_dir.empty()) {
    const auto directory = prepare_directory(eval.output_dir);
    write_config_echo(eval, directory);
    CsvSink sink(directory, false);
    sink.write(log);
  }
  return log;
}

nmpc::ThetaVector checkpoint_theta(const std::filesystem::path& directory) {
  std::ifstream in(directory / "checkpoint.txt");
  if (!in) throw std::runtime_error("no checkpoint in " + directory.string());
  // Skip the header lines up to the theta record.
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("theta ", 0) == 0) {
      std::istringstream record(line);
      nmpc::ThetaVector theta;
      read_values<9>(record, "theta", theta.values.data());
      return theta;
    }
  }
  throw std::runtime_error("malformed checkpoint in " + directory.string());
}

}  // namespace rlmpc::harness
