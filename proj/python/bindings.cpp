#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>
#include <string>
#include <vector>

#include "rlmpc/agents.hpp"
#include "rlmpc/config.hpp"
#include "rlmpc/harness.hpp"
#include "rlmpc/nmpc.hpp"
#include "rlmpc/world.hpp"

namespace py = pybind11;
using namespace rlmpc;

namespace {

std::vector<std::string> split_header(const char* header) {
  std::vector<std::string> columns;
  std::stringstream in(header);
  std::string column;
  while (std::getline(in, column, ',')) columns.push_back(column);
  return columns;
}

nmpc::ThetaVector to_theta(const nmpc::ThetaGradient& v) { return nmpc::ThetaVector::from(v); }

agents::Algorithm algorithm_from(const std::string& name) {
  const auto parsed = agents::parse_algorithm(name);
  if (!parsed) {
    throw py::value_error("unknown algorithm '" + name + "'; valid algorithms: " +
                          agents::valid_algorithm_names());
  }
  return *parsed;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Learning-based tuning of a mobile-robot NMPC: controller, learning rules and training runs.";

  py::class_<world::RobotState>(m, "RobotState")
      .def(py::init<double, double, double>(), py::arg("x") = 0.0, py::arg("y") = 0.0,
           py::arg("phi") = 0.0)
      .def_readwrite("x", &world::RobotState::x)
      .def_readwrite("y", &world::RobotState::y)
      .def_readwrite("phi", &world::RobotState::phi)
      .def("__eq__", [](const world::RobotState& a, const world::RobotState& b) { return a == b; })
      .def("__repr__", [](const world::RobotState& s) {
        std::ostringstream out;
        out << "RobotState(x=" << s.x << ", y=" << s.y << ", phi=" << s.phi << ")";
        return out.str();
      });

  py::class_<world::ControlInput>(m, "ControlInput")
      .def(py::init<double, double>(), py::arg("v") = 0.0, py::arg("nu") = 0.0)
      .def_readwrite("v", &world::ControlInput::v)
      .def_readwrite("nu", &world::ControlInput::nu)
      .def("__eq__", [](const world::ControlInput& a, const world::ControlInput& b) { return a == b; })
      .def("__repr__", [](const world::ControlInput& u) {
        std::ostringstream out;
        out << "ControlInput(v=" << u.v << ", nu=" << u.nu << ")";
        return out.str();
      });

  py::class_<world::Obstacle>(m, "Obstacle")
      .def_readonly("x", &world::Obstacle::x)
      .def_readonly("y", &world::Obstacle::y)
      .def_readonly("diameter", &world::Obstacle::diameter)
      .def_readonly("robot_diameter", &world::Obstacle::robot_diameter)
      .def_property_readonly("safety_radius", &world::Obstacle::safety_radius);

  py::class_<world::Scenario>(m, "Scenario")
      .def_static("reference", &world::Scenario::reference)
      .def_static("desk", &world::Scenario::desk)
      .def_readonly("start", &world::Scenario::start)
      .def_readonly("target", &world::Scenario::target)
      .def_readonly("obstacles", &world::Scenario::obstacles)
      .def_readonly("sampling_period", &world::Scenario::sampling_period)
      .def_property_readonly("action_box", [](const world::Scenario& s) {
        const auto& b = s.action_bounds;
        return py::make_tuple(py::make_tuple(b.v.lower, b.v.upper),
                              py::make_tuple(b.nu.lower, b.nu.upper));
      });

  m.def("step_rk4", &world::step_rk4, py::arg("s"), py::arg("u"), py::arg("sampling_period") = 0.2,
        "One RK4 step of the unicycle under constant input.");
  m.def("obstacle_value", &world::obstacle_value, py::arg("s"), py::arg("obstacle"),
        "Xi(s); positive inside the keep-out circle.");

  m.def("theta_initial", [] { return nmpc::ThetaVector::initial().vector(); });
  m.def("theta_names", [] {
    std::vector<std::string> names;
    for (int i = 0; i < nmpc::ThetaVector::size; ++i) {
      names.emplace_back(nmpc::ThetaVector::name(i));
    }
    return names;
  });

  py::class_<nmpc::QEvaluation>(m, "QEvaluation")
      .def_property_readonly("value", &nmpc::QEvaluation::value)
      .def_property_readonly("converged", &nmpc::QEvaluation::converged)
      .def_property_readonly("kkt_residual",
                             [](const nmpc::QEvaluation& q) { return q.solution().kkt_residual; })
      .def_property_readonly("first_input", &nmpc::QEvaluation::first_input)
      .def_property_readonly("inputs", &nmpc::QEvaluation::inputs)
      .def_property_readonly("gradient",
                             [](const nmpc::QEvaluation& q) { return nmpc::ThetaGradient(q.gradient()); });

  py::class_<nmpc::Controller>(m, "Controller")
      .def(py::init([](const world::Scenario& scenario) {
             return nmpc::Controller(nmpc::NmpcConfig::from_scenario(scenario));
           }),
           py::arg("scenario"))
      .def(
          "policy",
          [](nmpc::Controller& c, const world::RobotState& s, const nmpc::ThetaGradient& theta) {
            return c.policy(s, to_theta(theta));
          },
          py::arg("s"), py::arg("theta"), "Greedy solve; value is V(s).")
      .def(
          "evaluate_q",
          [](nmpc::Controller& c, const world::RobotState& s, const world::ControlInput& a,
             const nmpc::ThetaGradient& theta) { return c.evaluate_q(s, a, to_theta(theta)); },
          py::arg("s"), py::arg("a"), py::arg("theta"), "Solve with the first input fixed to a.")
      .def_property_readonly("solve_count", &nmpc::Controller::solve_count);

  m.def("valid_algorithm_names", &agents::valid_algorithm_names);
  m.def(
      "es_update",
      [](const nmpc::ThetaGradient& theta, double delta, const nmpc::ThetaGradient& phi,
         double alpha) { return agents::es_update(to_theta(theta), delta, phi, alpha).vector(); },
      py::arg("theta"), py::arg("delta"), py::arg("phi"), py::arg("alpha"));
  m.def(
      "ges_update",
      [](const nmpc::ThetaGradient& theta, const nmpc::ThetaGradient& w, double stage_cost,
         double q, double q_next, const nmpc::ThetaGradient& phi,
         const nmpc::ThetaGradient& phi_next, double discount, double alpha, double beta) {
        agents::GesState state{to_theta(theta), w, alpha, beta};
        agents::TdSample sample{stage_cost, q, q_next, phi, phi_next, discount};
        const agents::GesState next = agents::ges_update(state, sample);
        return py::make_tuple(next.theta.vector(), next.w);
      },
      py::arg("theta"), py::arg("w"), py::arg("stage_cost"), py::arg("q"), py::arg("q_next"),
      py::arg("phi"), py::arg("phi_next"), py::arg("discount"), py::arg("alpha"), py::arg("beta"),
      "Returns (theta, w) after one gradient-TD step.");

  py::class_<harness::RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static(
          "parse",
          [](const std::string& text) {
            std::istringstream in(text);
            return harness::parse_config(in);
          },
          py::arg("text"))
      .def_static("load", &harness::load_config, py::arg("path"))
      .def("to_ini",
           [](const harness::RunConfig& c) {
             std::ostringstream out;
             harness::write_config(out, c);
             return out.str();
           })
      .def_property(
          "algorithm",
          [](const harness::RunConfig& c) { return std::string(agents::algorithm_name(c.algorithm)); },
          [](harness::RunConfig& c, const std::string& name) { c.algorithm = algorithm_from(name); })
      .def_readwrite("episodes", &harness::RunConfig::episodes)
      .def_readwrite("steps", &harness::RunConfig::steps)
      .def_readwrite("seed", &harness::RunConfig::seed)
      .def_readwrite("checkpoint_every", &harness::RunConfig::checkpoint_every)
      .def_readwrite("output_dir", &harness::RunConfig::output_dir)
      .def_readonly("scenario_name", &harness::RunConfig::scenario_name)
      .def_readwrite("alpha", &harness::RunConfig::alpha)
      .def_readwrite("beta", &harness::RunConfig::beta)
      .def_readwrite("horizon", &harness::RunConfig::horizon)
      .def_readwrite("discount", &harness::RunConfig::discount)
      .def("validate", &harness::RunConfig::validate);

  py::class_<harness::EpisodeSummary>(m, "EpisodeSummary")
      .def_readonly("episode", &harness::EpisodeSummary::episode)
      .def_readonly("stage_cost_sum", &harness::EpisodeSummary::stage_cost_sum)
      .def_readonly("static_error", &harness::EpisodeSummary::static_error)
      .def_readonly("min_clearance", &harness::EpisodeSummary::min_clearance)
      .def_readonly("max_obstacle_value", &harness::EpisodeSummary::max_obstacle_value)
      .def_readonly("solver_failures", &harness::EpisodeSummary::solver_failures)
      .def_readonly("final_state", &harness::EpisodeSummary::final_state);

  py::class_<harness::TrainingLog>(m, "TrainingLog")
      .def_property_readonly("summaries",
                             [](const harness::TrainingLog& log) {
                               std::vector<harness::EpisodeSummary> out;
                               for (const auto& e : log.episodes) out.push_back(e.summary);
                               return out;
                             })
      .def_property_readonly("final_theta",
                             [](const harness::TrainingLog& log) { return log.final_theta.vector(); })
      .def_readonly("diverged", &harness::TrainingLog::diverged)
      .def_readonly("halt_reason", &harness::TrainingLog::halt_reason);

  m.def("train", &harness::train, py::arg("config"), py::call_guard<py::gil_scoped_release>(),
        "Runs config.episodes episodes, writing logs when config.output_dir is set.");
  m.def("resume", &harness::resume, py::arg("directory"), py::arg("episodes") = py::none(),
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "evaluate",
      [](const harness::RunConfig& config, std::optional<nmpc::ThetaGradient> theta) {
        std::optional<nmpc::ThetaVector> t;
        if (theta) t = to_theta(*theta);
        py::gil_scoped_release release;
        return harness::evaluate(config, t).summary;
      },
      py::arg("config"), py::arg("theta") = py::none(), "One greedy episode without learning.");
  m.def("checkpoint_theta",
        [](const std::filesystem::path& dir) { return harness::checkpoint_theta(dir).vector(); },
        py::arg("directory"));

  m.attr("EPISODES_COLUMNS") = split_header(harness::CsvSink::episodes_header());
  m.attr("THETA_COLUMNS") = split_header(harness::CsvSink::theta_header());
  m.attr("SUMMARY_COLUMNS") = split_header(harness::CsvSink::summary_header());

  py::register_exception<harness::DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);
}
