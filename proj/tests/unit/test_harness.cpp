#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rlmpc/config.hpp"
#include "rlmpc/harness.hpp"

using namespace rlmpc;
using namespace rlmpc::harness;
namespace fs = std::filesystem;

namespace {

RunConfig desk(agents::Algorithm algorithm, int episodes, int steps, std::uint64_t seed = 1) {
  RunConfig c;
  c.algorithm = algorithm;
  c.scenario = world::Scenario::desk();
  c.scenario_name = "desk";
  c.episodes = episodes;
  c.steps = steps;
  c.seed = seed;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rlmpc-test-" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

// Rows with the trailing wall-clock column removed.
std::vector<std::string> without_timing(const std::vector<std::string>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(r.substr(0, r.rfind(',')));
  return out;
}

void check_same_numbers(const EpisodeLog& a, const EpisodeLog& b) {
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const StepRecord& x = a.steps[i];
    const StepRecord& y = b.steps[i];
    CHECK(x.s == y.s);
    CHECK(x.a.v == y.a.v);
    CHECK(x.a.nu == y.a.nu);
    CHECK(x.stage_cost == y.stage_cost);
    CHECK((x.td_error == y.td_error || (std::isnan(x.td_error) && std::isnan(y.td_error))));
    CHECK((x.q_next == y.q_next || (std::isnan(x.q_next) && std::isnan(y.q_next))));
    CHECK(x.q == y.q);
    CHECK(x.nlp_iterations == y.nlp_iterations);
    CHECK(x.theta == y.theta);
  }
}

}  // namespace

TEST_CASE("default configuration values") {
  const RunConfig c;
  CHECK(c.alpha == 1e-7);
  CHECK(c.beta == 1e-8);
  CHECK(c.zeta == 1e-2);
  CHECK(c.w_init == 1e-4);
  CHECK(c.theta_init == nmpc::ThetaVector::initial());
  CHECK(c.discount == 0.97);
  CHECK(c.horizon == 10);
  CHECK(c.steps == 129);
  CHECK(c.episodes == 300);
  CHECK(c.minibatch == 128);
  CHECK(c.hidden == std::vector<int>{64, 64});
  CHECK(c.slack_weights == std::vector<double>(4, 100.0));
  CHECK(c.terminal_slack_weights == std::vector<double>(4, 100.0));
  CHECK(c.scenario.start == world::RobotState{-2.5, 1.5, 0.0});
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("shipped configuration files") {
  const fs::path configs = fs::path(RLMPC_SOURCE_DIR) / "configs";
  const RunConfig defaults = load_config(configs / "default.ini");
  std::stringstream expected, got;
  write_config(expected, RunConfig{});
  write_config(got, defaults);
  CHECK(got.str() == expected.str());

  const RunConfig d = load_config(configs / "desk.ini");
  CHECK(d.scenario_name == "desk");
  CHECK(d.scenario.target == world::Scenario::desk().target);
  CHECK(d.episodes == 30);
  CHECK(d.steps == 60);
  CHECK(d.alpha == 1e-7);
}

TEST_CASE("config file round trip and errors") {
  RunConfig c = desk(agents::Algorithm::rdes, 7, 33, 99);
  c.alpha = 3e-7;
  c.theta_init[nmpc::ThetaVector::c] = 0.0123456789;
  c.exploration_index = ExplorationIndex::episode;
  c.hidden = {16, 8};
  c.scenario.obstacles[1].x = 2.75;
  std::stringstream ss;
  write_config(ss, c);
  const RunConfig back = parse_config(ss);
  std::stringstream again;
  write_config(again, back);
  CHECK(again.str() == ss.str());
  CHECK(back.algorithm == agents::Algorithm::rdes);
  CHECK(back.seed == 99);
  CHECK(back.alpha == 3e-7);
  CHECK(back.theta_init == c.theta_init);
  CHECK(back.scenario.obstacles[1].x == 2.75);
  CHECK(back.scenario.target == world::Scenario::desk().target);
  CHECK(back.hidden == std::vector<int>{16, 8});

  std::stringstream preset("[world]\nscenario = desk\n[run]\nsteps = 60\n");
  const RunConfig p = parse_config(preset);
  CHECK(p.scenario.target == world::Scenario::desk().target);
  CHECK(p.steps == 60);
  CHECK(p.episodes == 300);

  std::stringstream typo("[agent]\nalpah = 1\n");
  CHECK_THROWS_WITH_AS(parse_config(typo), "config: unknown key agent.alpah", std::runtime_error);
  std::stringstream section("[robot]\nx = 1\n");
  CHECK_THROWS_AS(parse_config(section), std::runtime_error);
  std::stringstream bogus("[agent]\nalgorithm = bogus\n");
  try {
    parse_config(bogus);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("es, deep-es, rdes, ges") != std::string::npos);
  }
  std::stringstream number("[run]\nsteps = 12x\n");
  CHECK_THROWS_AS(parse_config(number), std::runtime_error);
  CHECK_THROWS_AS(load_config("/nonexistent/config.ini"), std::runtime_error);

  RunConfig bad = c;
  bad.steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.slack_weights.pop_back();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("one step uses two solves for ES and GES and one for RDES and deep ES") {
  for (auto algorithm : {agents::Algorithm::es, agents::Algorithm::ges, agents::Algorithm::rdes,
                         agents::Algorithm::deep_es}) {
    CAPTURE(agents::algorithm_name(algorithm));
    const TrainingLog log = train(desk(algorithm, 1, 1));
    REQUIRE(log.episodes.size() == 1);
    REQUIRE(log.episodes[0].steps.size() == 1);
    const StepRecord& r = log.episodes[0].steps[0];
    CHECK(r.nlp_solves == agents::solves_per_step(algorithm));
    CHECK(std::isfinite(r.td_error));
    CHECK(r.updated);
    CHECK(r.w.has_value() == (algorithm == agents::Algorithm::ges));
  }
}

TEST_CASE("equal seeds give identical logs") {
  SUBCASE("no exploration, frozen theta") {
    RunConfig c = desk(agents::Algorithm::ges, 2, 12);
    c.exploration.scale_fraction = 0.0;
    c.alpha = 0.0;
    const TrainingLog a = train(c);
    const TrainingLog b = train(c);
    for (int e = 0; e < 2; ++e) check_same_numbers(a.episodes[e], b.episodes[e]);
    CHECK(a.final_theta == nmpc::ThetaVector::initial());
  }
  SUBCASE("exploration and learning") {
    for (auto algorithm : {agents::Algorithm::ges, agents::Algorithm::rdes}) {
      RunConfig c = desk(algorithm, 2, 12, 5);
      c.minibatch = 8;
      const TrainingLog a = train(c);
      const TrainingLog b = train(c);
      for (int e = 0; e < 2; ++e) check_same_numbers(a.episodes[e], b.episodes[e]);
      CHECK(a.final_theta == b.final_theta);
      c.seed = 6;
      CHECK(train(c).final_theta != a.final_theta);
    }
  }
}

TEST_CASE("plain tracking without obstacles reaches a nearby target") {
  RunConfig c;
  c.scenario = world::Scenario{};
  c.scenario.obstacles.clear();
  c.slack_weights.clear();
  c.terminal_slack_weights.clear();
  c.scenario.start = {0.0, 0.0, 0.0};
  c.scenario.target = {2.0, 0.0, 0.0};
  c.steps = 40;
  const EpisodeLog log = evaluate(c);
  MESSAGE("static error = " << log.summary.static_error);
  CHECK(log.summary.static_error < 0.1);
  CHECK(log.steps.size() == 40);
  for (const auto& r : log.steps) {
    CHECK(r.nlp_solves == 1);
    CHECK(std::isnan(r.td_error));
  }
}

TEST_CASE("logs, budgets and the exploration index over a short run") {
  for (auto algorithm : {agents::Algorithm::ges, agents::Algorithm::rdes}) {
    CAPTURE(agents::algorithm_name(algorithm));
    RunConfig c = desk(algorithm, 3, 10);
    c.minibatch = 16;
    Trainer trainer(c);
    std::int64_t solves = 0;
    int failures = 0;
    int updates = 0;
    int td_errors = 0;
    for (int e = 0; e < 3; ++e) {
      const EpisodeLog log = trainer.run_episode();
      CHECK(log.complete);
      CHECK(log.steps.size() == 10);
      CHECK(log.summary.episode == e);
      double sum = 0.0;
      for (const auto& r : log.steps) {
        solves += r.nlp_solves;
        failures += r.solver_failure;
        updates += r.updated;
        td_errors += std::isfinite(r.td_error);
        sum += r.stage_cost;
        CHECK(c.scenario.action_bounds.contains(r.a));
      }
      CHECK(log.summary.stage_cost_sum == doctest::Approx(sum).epsilon(1e-12));
    }
    CHECK(trainer.global_step() == 30);
    CHECK(trainer.next_episode() == 3);
    CHECK(failures == 0);
    CHECK(solves == 30 * agents::solves_per_step(algorithm));
    CHECK(trainer.total_solves() == solves);
    CHECK(updates == td_errors);
    CHECK(updates == 30);
    if (algorithm == agents::Algorithm::rdes) CHECK(trainer.buffer().size() == 30);
  }
}

TEST_CASE("a failed solve skips the update and repeats the last action") {
  RunConfig c = desk(agents::Algorithm::ges, 1, 4);
  c.solver.max_iterations = 1;
  const TrainingLog log = train(c);
  REQUIRE(log.episodes.size() == 1);
  for (const auto& r : log.episodes[0].steps) {
    CHECK(r.solver_failure);
    CHECK_FALSE(r.updated);
    CHECK(std::isnan(r.td_error));
    CHECK(r.nlp_solves == 1);
    CHECK(r.a.v == 0.0);
    CHECK(r.a.nu == 0.0);
  }
  CHECK(log.episodes[0].summary.solver_failures == 4);
  CHECK(log.final_theta == nmpc::ThetaVector::initial());
}

TEST_CASE("divergence halts the run with a record") {
  const fs::path dir = scratch("divergence");
  RunConfig c = desk(agents::Algorithm::ges, 3, 5);
  c.divergence_threshold = 1e-6;
  c.output_dir = dir.string();
  const TrainingLog log = train(c);
  CHECK(log.diverged);
  CHECK(log.halt_reason.find("divergence threshold") != std::string::npos);
  CHECK(log.theta_trajectory.empty());
  REQUIRE(log.episodes.size() == 1);
  CHECK_FALSE(log.episodes[0].complete);
  CHECK(log.episodes[0].steps.size() == 1);
  CHECK(fs::exists(dir / "divergence.txt"));
  CHECK(read_lines(dir / "episodes.csv").size() == 2);
  CHECK(read_lines(dir / "summary.csv").size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("run directory contents") {
  const fs::path dir = scratch("outputs");
  RunConfig c = desk(agents::Algorithm::rdes, 2, 6);
  c.output_dir = dir.string();
  const TrainingLog log = train(c);
  CHECK(fs::exists(dir / "config-echo"));
  CHECK(fs::exists(dir / "checkpoint.txt"));
  const auto episodes = read_lines(dir / "episodes.csv");
  const auto theta = read_lines(dir / "theta.csv");
  const auto summary = read_lines(dir / "summary.csv");
  REQUIRE(episodes.size() == 13);
  REQUIRE(theta.size() == 13);
  REQUIRE(summary.size() == 3);
  CHECK(episodes[0] == "episode,step,x,y,phi,v,nu,stage_cost,td_error,q,q_next,nlp_solves,"
                       "nlp_iters,step_wall_ms");
  CHECK(theta[0] == CsvSink::theta_header());
  CHECK(episodes[1].rfind("0,0,-2.5,1.5,0,", 0) == 0);
  // No auxiliary vector outside GES: the w columns are empty.
  CHECK(theta[1].substr(theta[1].size() - 9) == ",,,,,,,,,");
  CHECK(summary[2].rfind("1,", 0) == 0);
  CHECK(load_config(dir / "config-echo").algorithm == agents::Algorithm::rdes);
  CHECK(checkpoint_theta(dir) == log.final_theta);
  fs::remove_all(dir);
}

TEST_CASE("resuming from a checkpoint continues the uninterrupted run") {
  for (auto algorithm : {agents::Algorithm::ges, agents::Algorithm::rdes}) {
    CAPTURE(agents::algorithm_name(algorithm));
    const fs::path whole = scratch("whole");
    const fs::path split = scratch("split");
    RunConfig c = desk(algorithm, 4, 8, 3);
    c.minibatch = 8;
    c.checkpoint_every = 2;
    c.output_dir = whole.string();
    const TrainingLog reference = train(c);

    c.output_dir = split.string();
    c.episodes = 3;
    train(c);
    // The shorter run checkpoints on exit, after its third episode.
    {
      std::ifstream in(split / "checkpoint.txt");
      Trainer probe(c);
      probe.load_checkpoint(in);
      CHECK(probe.next_episode() == 3);
    }
    const TrainingLog rest = resume(split, 4);
    REQUIRE(rest.episodes.size() == 1);
    CHECK(rest.final_theta == reference.final_theta);
    for (const char* file : {"episodes.csv", "theta.csv"}) {
      CAPTURE(file);
      const auto a = read_lines(whole / file);
      const auto b = read_lines(split / file);
      CHECK((std::string(file) == "episodes.csv" ? without_timing(a) == without_timing(b) : a == b));
    }
    CHECK(read_lines(whole / "summary.csv") == read_lines(split / "summary.csv"));
    fs::remove_all(whole);
    fs::remove_all(split);
  }
}

TEST_CASE("resume truncates rows written after the checkpoint") {
  const fs::path dir = scratch("truncate");
  RunConfig c = desk(agents::Algorithm::ges, 2, 3);
  c.output_dir = dir.string();
  train(c);
  // Pretend the run died after logging an episode that no checkpoint covers.
  {
    std::ofstream out(dir / "episodes.csv", std::ios::app);
    out << "2,0,1,1,1,0,0,1,1,1,1,2,9,1\n";
  }
  const TrainingLog more = resume(dir, 3);
  CHECK(more.episodes.size() == 1);
  const auto rows = read_lines(dir / "episodes.csv");
  CHECK(rows.size() == 1 + 3 * 3);
  CHECK(rows.back().rfind("2,2,", 0) == 0);
  fs::remove_all(dir);
}
