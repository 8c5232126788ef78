#include "rlmpc/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace rlmpc::harness {

namespace {

std::string format(double value) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, result.ptr);
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (const T& v : values) {
    if (!out.empty()) out += ' ';
    if constexpr (std::is_floating_point_v<T>) {
      out += format(v);
    } else {
      out += std::to_string(v);
    }
  }
  return out;
}

template <typename T>
T parse_number(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  T value{};
  const auto result = std::from_chars(text.data(), text.data() + text.size(), value);
  if (result.ec != std::errc() || result.ptr != text.data() + text.size()) {
    throw std::runtime_error("not a number: '" + std::string(text) + "'");
  }
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::istringstream in(text);
  std::vector<T> out;
  std::string token;
  while (in >> token) out.push_back(parse_number<T>(token));
  return out;
}

std::vector<double> parse_fixed(const std::string& text, std::size_t count) {
  std::vector<double> values = parse_list<double>(text);
  if (values.size() != count) {
    throw std::runtime_error("expected " + std::to_string(count) + " values, got " +
                             std::to_string(values.size()));
  }
  return values;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw std::runtime_error("not a boolean: '" + text + "'");
}

std::string format_bool(bool value) { return value ? "true" : "false"; }

world::Interval parse_interval(const std::string& text) {
  const std::vector<double> v = parse_fixed(text, 2);
  return {v[0], v[1]};
}

std::string format_interval(const world::Interval& i) { return format(i.lower) + ' ' + format(i.upper); }

world::RobotState parse_state(const std::string& text) {
  const std::vector<double> v = parse_fixed(text, 3);
  return {v[0], v[1], v[2]};
}

std::string format_state(const world::RobotState& s) {
  return format(s.x) + ' ' + format(s.y) + ' ' + format(s.phi);
}

// "x y, x y, ..." keeping the current diameters.
std::vector<world::Obstacle> parse_obstacles(const std::string& text,
                                             const std::vector<world::Obstacle>& current) {
  const world::Obstacle shape = current.empty() ? world::Obstacle{} : current.front();
  std::vector<world::Obstacle> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    const std::vector<double> v = parse_fixed(item, 2);
    world::Obstacle o = shape;
    o.x = v[0];
    o.y = v[1];
    out.push_back(o);
  }
  return out;
}

std::string format_obstacles(const std::vector<world::Obstacle>& obstacles) {
  std::string out;
  for (const auto& o : obstacles) {
    if (!out.empty()) out += ", ";
    out += format(o.x) + ' ' + format(o.y);
  }
  return out;
}

world::Scenario preset(const std::string& name) {
  if (name == "reference") return world::Scenario::reference();
  if (name == "desk") return world::Scenario::desk();
  throw std::runtime_error("unknown scenario '" + name + "' (valid: reference, desk)");
}

struct Key {
  const char* section;
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"run", "episodes", [](RunConfig& c, const std::string& v) { c.episodes = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.episodes); }},
      {"run", "steps", [](RunConfig& c, const std::string& v) { c.steps = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.steps); }},
      {"run", "seed",
       [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"run", "checkpoint_every",
       [](RunConfig& c, const std::string& v) { c.checkpoint_every = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.checkpoint_every); }},
      {"run", "output_dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; },
       [](const RunConfig& c) { return c.output_dir; }},

      {"world", "scenario", [](RunConfig&, const std::string&) {},
       [](const RunConfig& c) { return c.scenario_name; }},
      {"world", "start", [](RunConfig& c, const std::string& v) { c.scenario.start = parse_state(v); },
       [](const RunConfig& c) { return format_state(c.scenario.start); }},
      {"world", "target",
       [](RunConfig& c, const std::string& v) { c.scenario.target = parse_state(v); },
       [](const RunConfig& c) { return format_state(c.scenario.target); }},
      {"world", "reference_input",
       [](RunConfig& c, const std::string& v) {
         const auto u = parse_fixed(v, 2);
         c.scenario.reference_input = {u[0], u[1]};
       },
       [](const RunConfig& c) {
         return format(c.scenario.reference_input.v) + ' ' + format(c.scenario.reference_input.nu);
       }},
      {"world", "obstacle_diameter",
       [](RunConfig& c, const std::string& v) {
         for (auto& o : c.scenario.obstacles) o.diameter = parse_number<double>(v);
       },
       [](const RunConfig& c) {
         return format(c.scenario.obstacles.empty() ? world::Obstacle{}.diameter
                                                    : c.scenario.obstacles.front().diameter);
       }},
      {"world", "robot_diameter",
       [](RunConfig& c, const std::string& v) {
         for (auto& o : c.scenario.obstacles) o.robot_diameter = parse_number<double>(v);
       },
       [](const RunConfig& c) {
         return format(c.scenario.obstacles.empty() ? world::Obstacle{}.robot_diameter
                                                    : c.scenario.obstacles.front().robot_diameter);
       }},
      {"world", "obstacles",
       [](RunConfig& c, const std::string& v) {
         c.scenario.obstacles = parse_obstacles(v, c.scenario.obstacles);
       },
       [](const RunConfig& c) { return format_obstacles(c.scenario.obstacles); }},
      {"world", "x_bounds",
       [](RunConfig& c, const std::string& v) { c.scenario.state_bounds.x = parse_interval(v); },
       [](const RunConfig& c) { return format_interval(c.scenario.state_bounds.x); }},
      {"world", "y_bounds",
       [](RunConfig& c, const std::string& v) { c.scenario.state_bounds.y = parse_interval(v); },
       [](const RunConfig& c) { return format_interval(c.scenario.state_bounds.y); }},
      {"world", "v_bounds",
       [](RunConfig& c, const std::string& v) { c.scenario.action_bounds.v = parse_interval(v); },
       [](const RunConfig& c) { return format_interval(c.scenario.action_bounds.v); }},
      {"world", "nu_bounds",
       [](RunConfig& c, const std::string& v) { c.scenario.action_bounds.nu = parse_interval(v); },
       [](const RunConfig& c) { return format_interval(c.scenario.action_bounds.nu); }},
      {"world", "sampling_period",
       [](RunConfig& c, const std::string& v) { c.scenario.sampling_period = parse_number<double>(v); },
       [](const RunConfig& c) { return format(c.scenario.sampling_period); }},
      {"world", "cost_weights",
       [](RunConfig& c, const std::string& v) {
         const auto w = parse_fixed(v, 3);
         std::copy(w.begin(), w.end(), c.scenario.stage_cost.weights.begin());
       },
       [](const RunConfig& c) {
         const auto& w = c.scenario.stage_cost.weights;
         return join(std::vector<double>(w.begin(), w.end()));
       }},
      {"world", "distance_threshold",
       [](RunConfig& c, const std::string& v) {
         c.scenario.stage_cost.distance_threshold = parse_number<double>(v);
       },
       [](const RunConfig& c) { return format(c.scenario.stage_cost.distance_threshold); }},
      {"world", "safe_distance",
       [](RunConfig& c, const std::string& v) {
         c.scenario.stage_cost.safe_distance = parse_number<double>(v);
       },
       [](const RunConfig& c) { return format(c.scenario.stage_cost.safe_distance); }},
      {"world", "collision_penalty",
       [](RunConfig& c, const std::string& v) { c.scenario.stage_cost.penalty = parse_number<double>(v); },
       [](const RunConfig& c) { return format(c.scenario.stage_cost.penalty); }},

      {"nmpc", "horizon", [](RunConfig& c, const std::string& v) { c.horizon = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.horizon); }},
      {"nmpc", "discount",
       [](RunConfig& c, const std::string& v) { c.discount = parse_number<double>(v); },
       [](const RunConfig& c) { return format(c.discount); }},
      {"nmpc", "slack_weights",
       [](RunConfig& c, const std::string& v) { c.slack_weights = parse_list<double>(v); },
       [](const RunConfig& c) { return join(c.slack_weights); }},
      {"nmpc", "terminal_slack_weights",
       [](RunConfig& c, const std::string& v) { c.terminal_slack_weights = parse_list<double>(v); },
       [](const RunConfig& c) { return join(c.terminal_slack_weights); }},
      {"nmpc", "wrap_heading",
       [](RunConfig& c, const std::string& v) { c.wrap_heading = parse_bool(v); },
       [](const RunConfig& c) { return format_bool(c.wrap_heading); }},
      {"nmpc", "solver_tolerance",
       [](RunConfig& c, const std::string& v) { c.solver.tolerance = parse_number<double>(v); },
       [](const RunConfig& c) { return format(c.solver.tolerance); }},
      {"nmpc", "solver_max_iterations",
       [](RunConfig& c, const std::string& v) { c.solver.max_iterations = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.solver.max_iterations); }},

      {"agent", "algorithm",
       [](RunConfig& c, const std::string& v) {
         const auto a = agents::parse_algorithm(v);
         if (!a) {
           throw std::runtime_error("unknown algorithm '" + v +
                                    "' (valid: " + agents::valid_algorithm_names() + ")");
         }
         c.algorithm = *a;
       },
       [](const RunConfig& c) { return std::string(agents::algorithm_name(c.algorithm)); }},
      {"agent", "alpha", [](RunConfig& c, const std::string& v) { c.alpha = parse_number<double>(v); },
       [](const RunConfig& c) { return format(c.alpha); }},
      {"agent", "beta", [](RunConfig& c, const std::string& v) { c.beta = parse_number<double>(v); },
       [](const RunConfig& c) { return format(c.beta); }},
      {"agent", "theta_init",
       [](RunConfig& c, const std::string& v) {
         const auto t = parse_fixed(v, nmpc::ThetaVector::size);
         std::copy(t.begin(), t.end(), c.theta_init.values.begin());
       },
       [](const RunConfig& c) {
         return join(std::vector<double>(c.theta_init.values.begin(), c.theta_init.values.end()));
       }},
      {"agent", "w_init", [](RunConfig& c, const std::string& v) { c.w_init = parse_number<double>(v); },
       [](const RunConfig& c) { return format(c.w_init); }},
      {"agent", "exploration_decay",
       [](RunConfig& c, const std::string& v) { c.exploration.decay = parse_number<double>(v); },
       [](const RunConfig& c) { return format(c.exploration.decay); }},
      {"agent", "exploration_scale",
       [](RunConfig& c, const std::string& v) {
         c.exploration.scale_fraction = parse_number<double>(v);
       },
       [](const RunConfig& c) { return format(c.exploration.scale_fraction); }},
      {"agent", "exploration_index",
       [](RunConfig& c, const std::string& v) {
         if (v == "global") {
           c.exploration_index = ExplorationIndex::global;
         } else if (v == "episode") {
           c.exploration_index = ExplorationIndex::episode;
         } else {
           throw std::runtime_error("exploration_index must be 'global' or 'episode'");
         }
       },
       [](const RunConfig& c) {
         return std::string(c.exploration_index == ExplorationIndex::global ? "global" : "episode");
       }},
      {"agent", "reset_w_each_episode",
       [](RunConfig& c, const std::string& v) { c.reset_w_each_episode = parse_bool(v); },
       [](const RunConfig& c) { return format_bool(c.reset_w_each_episode); }},
      {"agent", "divergence_threshold",
       [](RunConfig& c, const std::string& v) { c.divergence_threshold = parse_number<double>(v); },
       [](const RunConfig& c) { return format(c.divergence_threshold); }},

      {"nn", "hidden", [](RunConfig& c, const std::string& v) { c.hidden = parse_list<int>(v); },
       [](const RunConfig& c) { return join(c.hidden); }},
      {"nn", "zeta", [](RunConfig& c, const std::string& v) { c.zeta = parse_number<double>(v); },
       [](const RunConfig& c) { return format(c.zeta); }},
      {"nn", "minibatch", [](RunConfig& c, const std::string& v) { c.minibatch = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.minibatch); }},
      {"nn", "buffer_capacity",
       [](RunConfig& c, const std::string& v) { c.buffer_capacity = parse_number<std::size_t>(v); },
       [](const RunConfig& c) { return std::to_string(c.buffer_capacity); }},
  };
  return table;
}

const char* const kSections[] = {"run", "world", "nmpc", "agent", "nn"};

}  // namespace

nmpc::NmpcConfig RunConfig::nmpc_config() const {
  nmpc::NmpcConfig config = nmpc::NmpcConfig::from_scenario(scenario);
  config.horizon = horizon;
  config.discount = discount;
  config.slack_weights = slack_weights;
  config.terminal_slack_weights = terminal_slack_weights;
  config.wrap_heading = wrap_heading;
  return config;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(episodes >= 1, "run.episodes must be >= 1");
  require(steps >= 1, "run.steps must be >= 1");
  require(checkpoint_every >= 1, "run.checkpoint_every must be >= 1");
  require(alpha >= 0, "agent.alpha must be >= 0");
  require(beta > 0, "agent.beta must be > 0");
  require(std::isfinite(w_init), "agent.w_init must be finite");
  require(theta_init.finite(), "agent.theta_init must be finite");
  require(divergence_threshold > 0, "agent.divergence_threshold must be > 0");
  require(zeta > 0, "nn.zeta must be > 0");
  require(minibatch >= 1, "nn.minibatch must be >= 1");
  require(buffer_capacity == 0 || buffer_capacity >= static_cast<std::size_t>(minibatch),
          "nn.buffer_capacity must be 0 (unbounded) or >= nn.minibatch");
  for (int h : hidden) require(h >= 1, "nn.hidden widths must be >= 1");
  exploration.validate();
  solver.validate();
  scenario.validate();
  nmpc_config().validate();
}

RunConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::runtime_error(std::string("config: ") + e.what());
  }
  RunConfig config;
  std::map<std::string, std::map<std::string, std::string>> values;
  for (const auto& [section, body] : tree) {
    if (std::find(std::begin(kSections), std::end(kSections), section) == std::end(kSections)) {
      throw std::runtime_error("config: unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) values[section][key] = value.data();
  }
  // The preset goes first so that individual keys refine it.
  if (auto s = values["world"].find("scenario"); s != values["world"].end()) {
    config.scenario = preset(s->second);
    config.scenario_name = s->second;
  }
  for (const auto& [section, entries] : values) {
    for (const auto& [key, value] : entries) {
      const auto match = std::find_if(keys().begin(), keys().end(), [&](const Key& k) {
        return section == k.section && key == k.name;
      });
      if (match == keys().end()) {
        throw std::runtime_error("config: unknown key " + section + "." + key);
      }
      try {
        match->set(config, value);
      } catch (const std::exception& e) {
        throw std::runtime_error("config: " + section + "." + key + ": " + e.what());
      }
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  return parse_config(in);
}

void write_config(std::ostream& out, const RunConfig& config) {
  bool first = true;
  for (const char* section : kSections) {
    out << (first ? "" : "\n") << '[' << section << "]\n";
    first = false;
    for (const Key& k : keys()) {
      if (std::string_view(k.section) == section) out << k.name << " = " << k.get(config) << '\n';
    }
  }
}

}  // namespace rlmpc::harness
