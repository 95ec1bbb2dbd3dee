#pragma once

// Scenario configuration: JSON topology + scenario files (which may be
// one file) validated up front. Validation collects every error with a
// field path rather than stopping at the first.

#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qrs/connection_types.hpp"
#include "qrs/link.hpp"
#include "qrs/routing.hpp"

namespace qrs {

struct NodeConfig {
  NodeAddr address = kNoNode;
  NodeCapability cap;
};

struct NetworkConfig {
  int id = 0;
  int parent = -1;  // -1 = top level
  std::vector<NodeAddr> members;
};

struct ConnectionConfig {
  std::string name;
  NodeAddr initiator = kNoNode;
  NodeAddr responder = kNoNode;
  Requirements requirements;
  double start_time_s = 0.0;
  int qubit_quota = 1;
  double weight = 1.0;
};

struct ScenarioConfig {
  std::vector<NodeConfig> nodes;
  std::vector<LinkSpec> links;
  std::vector<NetworkConfig> networks;
  std::vector<ConnectionConfig> connections;
  MuxDiscipline discipline = MuxDiscipline::StatMux;
  std::uint64_t seed = 1;
  double duration_s = 1.0;
  double staleness_window_ms = 10.0;
  double child_fidelity_floor = 0.9;
};

struct ConfigResult {
  ScenarioConfig config;
  std::vector<std::string> errors;  // field-path-qualified messages
  bool ok() const { return errors.empty(); }
};

namespace detail {

using nlohmann::json;

class ConfigReader {
 public:
  explicit ConfigReader(std::vector<std::string>& errors) : errors_(errors) {}

  void err(const std::string& path, const std::string& what) {
    errors_.push_back(path + ": " + what);
  }

  double num(const json& j, const std::string& path, const std::string& key,
             double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) {
      err(path + "." + key, "expected a number");
      return fallback;
    }
    return j[key].get<double>();
  }

  std::int64_t integer(const json& j, const std::string& path,
                       const std::string& key, std::int64_t fallback,
                       bool required = false) {
    if (!j.contains(key)) {
      if (required) err(path + "." + key, "required field missing");
      return fallback;
    }
    if (!j[key].is_number_integer()) {
      err(path + "." + key, "expected an integer");
      return fallback;
    }
    return j[key].get<std::int64_t>();
  }

  bool flag(const json& j, const std::string& path, const std::string& key,
            bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_boolean()) {
      err(path + "." + key, "expected true or false");
      return fallback;
    }
    return j[key].get<bool>();
  }

  std::string text(const json& j, const std::string& path,
                   const std::string& key, const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_string()) {
      err(path + "." + key, "expected a string");
      return fallback;
    }
    return j[key].get<std::string>();
  }

 private:
  std::vector<std::string>& errors_;
};

inline void parse_topology(const json& j, ScenarioConfig& cfg,
                           ConfigReader& rd) {
  if (j.contains("nodes")) {
    if (!j["nodes"].is_array()) {
      rd.err("nodes", "expected a list");
    } else {
      std::size_t i = 0;
      for (const auto& n : j["nodes"]) {
        std::string path = "nodes[" + std::to_string(i++) + "]";
        NodeConfig nc;
        nc.address =
            static_cast<NodeAddr>(rd.integer(n, path, "address", kNoNode, true));
        std::string type = rd.text(n, path, "type", "COMP");
        if (!parse_node_type(type, nc.cap.node_type)) {
          rd.err(path + ".type", "unknown node type '" + type + "'");
        }
        nc.cap.memory_qubits =
            static_cast<int>(rd.integer(n, path, "memory_qubits", 8));
        double t_mem = rd.num(n, path, "t_mem_seconds", 0.0);
        nc.cap.t_mem_seconds =
            t_mem > 0 ? t_mem : std::numeric_limits<double>::infinity();
        nc.cap.single_active_interface =
            rd.flag(n, path, "single_active_interface",
                    nc.cap.node_type == NodeType::REP1);
        cfg.nodes.push_back(nc);
      }
    }
  }
  if (j.contains("links")) {
    if (!j["links"].is_array()) {
      rd.err("links", "expected a list");
    } else {
      std::size_t i = 0;
      for (const auto& l : j["links"]) {
        std::string path = "links[" + std::to_string(i++) + "]";
        LinkSpec ls;
        ls.node_a = static_cast<NodeAddr>(rd.integer(l, path, "a", kNoNode, true));
        ls.node_b = static_cast<NodeAddr>(rd.integer(l, path, "b", kNoNode, true));
        std::string arch = rd.text(l, path, "architecture", "direct");
        if (arch == "direct") {
          ls.architecture = LinkArch::Direct;
        } else if (arch == "midpoint") {
          ls.architecture = LinkArch::BsaMidpoint;
          ls.midpoint = static_cast<NodeAddr>(
              rd.integer(l, path, "midpoint", kNoNode, true));
        } else {
          rd.err(path + ".architecture",
                 "expected 'direct' or 'midpoint', got '" + arch + "'");
        }
        ls.length_km = rd.num(l, path, "length_km", 1.0);
        ls.attenuation_db_per_km = rd.num(l, path, "attenuation_db_per_km", 0.2);
        ls.attempt_rate_hz = rd.num(l, path, "attempt_rate_hz", 1000.0);
        ls.detector_efficiency = rd.num(l, path, "detector_efficiency", 1.0);
        ls.base_fidelity = rd.num(l, path, "base_fidelity", 0.95);
        ls.qubit_capacity = static_cast<int>(rd.integer(l, path, "qubit_capacity", 4));
        ls.switching_loss_db = rd.num(l, path, "switching_loss_db", 0.0);
        ls.est_fidelity_bias = rd.num(l, path, "est_fidelity_bias", 0.0);
        cfg.links.push_back(ls);
      }
    }
  }
  if (j.contains("networks")) {
    if (!j["networks"].is_array()) {
      rd.err("networks", "expected a list");
    } else {
      std::size_t i = 0;
      for (const auto& n : j["networks"]) {
        std::string path = "networks[" + std::to_string(i++) + "]";
        NetworkConfig nc;
        nc.id = static_cast<int>(rd.integer(n, path, "id", 0, true));
        nc.parent = static_cast<int>(rd.integer(n, path, "parent", -1));
        if (n.contains("members") && n["members"].is_array()) {
          for (const auto& m : n["members"]) {
            if (m.is_number_integer()) {
              nc.members.push_back(m.get<NodeAddr>());
            } else {
              rd.err(path + ".members", "expected node addresses");
            }
          }
        } else {
          rd.err(path + ".members", "required list missing");
        }
        cfg.networks.push_back(nc);
      }
    }
  }
}

inline void parse_scenario(const json& j, ScenarioConfig& cfg,
                           ConfigReader& rd) {
  cfg.seed = static_cast<std::uint64_t>(
      rd.integer(j, "", "seed", static_cast<std::int64_t>(cfg.seed)));
  cfg.duration_s = rd.num(j, "", "duration", cfg.duration_s);
  cfg.staleness_window_ms =
      rd.num(j, "", "staleness_window_ms", cfg.staleness_window_ms);
  cfg.child_fidelity_floor =
      rd.num(j, "", "child_fidelity_floor", cfg.child_fidelity_floor);
  if (j.contains("discipline")) {
    std::string d = rd.text(j, "", "discipline", "statmux");
    if (d == "statmux") {
      cfg.discipline = MuxDiscipline::StatMux;
    } else if (d == "circuit") {
      cfg.discipline = MuxDiscipline::Circuit;
    } else if (d == "bufferspace") {
      cfg.discipline = MuxDiscipline::BufferSpace;
    } else {
      rd.err("discipline",
             "expected 'statmux', 'circuit' or 'bufferspace', got '" + d + "'");
    }
  }
  if (j.contains("connections")) {
    if (!j["connections"].is_array()) {
      rd.err("connections", "expected a list");
    } else {
      std::size_t i = 0;
      for (const auto& c : j["connections"]) {
        std::string path = "connections[" + std::to_string(i) + "]";
        ConnectionConfig cc;
        cc.name = rd.text(c, path, "name", "conn" + std::to_string(i));
        cc.initiator = static_cast<NodeAddr>(
            rd.integer(c, path, "initiator", kNoNode, true));
        cc.responder = static_cast<NodeAddr>(
            rd.integer(c, path, "responder", kNoNode, true));
        cc.requirements.min_fidelity = rd.num(c, path, "min_fidelity", 0.5);
        std::string mode = rd.text(c, path, "mode", "stream");
        if (mode == "stream") {
          cc.requirements.mode = ConnMode::Stream;
        } else if (mode == "count") {
          cc.requirements.mode = ConnMode::Count;
          cc.requirements.target_count = static_cast<std::uint64_t>(
              rd.integer(c, path, "target_count", 0, true));
        } else {
          rd.err(path + ".mode",
                 "expected 'stream' or 'count', got '" + mode + "'");
        }
        cc.start_time_s = rd.num(c, path, "start_time", 0.0);
        cc.qubit_quota = static_cast<int>(rd.integer(c, path, "qubit_quota", 1));
        cc.weight = rd.num(c, path, "weight", 1.0);
        cfg.connections.push_back(cc);
        ++i;
      }
    }
  }
}

// Cross-reference checks once both halves are parsed.
inline void validate(ScenarioConfig& cfg, ConfigReader& rd) {
  std::set<NodeAddr> addrs;
  std::size_t i = 0;
  for (const auto& n : cfg.nodes) {
    std::string path = "nodes[" + std::to_string(i++) + "]";
    if (n.address == kNoNode) continue;  // already reported
    if (!addrs.insert(n.address).second) {
      rd.err(path + ".address",
             "duplicate node address " + std::to_string(n.address));
    }
    if (n.cap.memory_qubits < 0) {
      rd.err(path + ".memory_qubits", "must be non-negative");
    }
      }
  i = 0;
  for (const auto& l : cfg.links) {
    std::string path = "links[" + std::to_string(i++) + "]";
    for (auto [key, end] : {std::pair{"a", l.node_a}, {"b", l.node_b}}) {
      if (end != kNoNode && !addrs.count(end)) {
        rd.err(path + "." + key,
               "link references undefined node " + std::to_string(end));
      }
    }
    if (l.midpoint != kNoNode && !addrs.count(l.midpoint)) {
      rd.err(path + ".midpoint",
             "link references undefined node " + std::to_string(l.midpoint));
    }
    try {
      l.check();
    } catch (const std::exception& e) {
      rd.err(path, e.what());
    }
  }
  std::set<int> net_ids;
  i = 0;
  for (const auto& n : cfg.networks) {
    std::string path = "networks[" + std::to_string(i++) + "]";
    if (!net_ids.insert(n.id).second) {
      rd.err(path + ".id", "duplicate network id " + std::to_string(n.id));
    }
    for (NodeAddr m : n.members) {
      if (!addrs.count(m)) {
        rd.err(path + ".members",
               "network references undefined node " + std::to_string(m));
      }
    }
  }
  i = 0;
  for (const auto& n : cfg.networks) {
    std::string path = "networks[" + std::to_string(i++) + "]";
    if (n.parent != -1 && !net_ids.count(n.parent)) {
      rd.err(path + ".parent",
             "unknown parent network " + std::to_string(n.parent));
    }
  }
  std::set<std::string> conn_names;
  i = 0;
  for (const auto& c : cfg.connections) {
    std::string path = "connections[" + std::to_string(i++) + "]";
    if (!conn_names.insert(c.name).second) {
      rd.err(path + ".name", "duplicate connection name '" + c.name + "'");
    }
    for (auto [key, end] :
         {std::pair{"initiator", c.initiator}, {"responder", c.responder}}) {
      if (end != kNoNode && !addrs.count(end)) {
        rd.err(path + "." + key,
               "connection references undefined node " + std::to_string(end));
      }
    }
    if (c.requirements.min_fidelity < 0.25 ||
        c.requirements.min_fidelity > 1.0) {
      rd.err(path + ".min_fidelity", "must be within [0.25, 1]");
    }
    if (c.requirements.mode == ConnMode::Count &&
        c.requirements.target_count == 0) {
      rd.err(path + ".target_count", "count mode needs a positive target");
    }
    if (c.start_time_s < 0) {
      rd.err(path + ".start_time", "must be non-negative");
    }
  }
}

}  // namespace detail

// Merge one or two JSON documents (topology and scenario may live in the
// same file) into a validated configuration.
inline ConfigResult load_config_text(const std::string& topology_text,
                                     const std::string& scenario_text) {
  ConfigResult out;
  detail::ConfigReader rd(out.errors);
  auto parse = [&](const std::string& text, const char* which,
                   auto&& fn) {
    if (text.empty()) return;
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) {
      rd.err(which, "not valid JSON");
      return;
    }
    fn(j);
  };
  parse(topology_text, "topology",
        [&](const nlohmann::json& j) { detail::parse_topology(j, out.config, rd); });
  parse(scenario_text, "scenario",
        [&](const nlohmann::json& j) { detail::parse_scenario(j, out.config, rd); });
  detail::validate(out.config, rd);
  return out;
}

inline ConfigResult load_config(const std::string& topology_path,
                                const std::string& scenario_path) {
  auto slurp = [](const std::string& path,
                  std::vector<std::string>& errors) -> std::string {
    if (path.empty()) return "";
    std::ifstream in(path);
    if (!in) {
      errors.push_back(path + ": cannot open file");
      return "";
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  std::vector<std::string> io_errors;
  std::string topo = slurp(topology_path, io_errors);
  std::string scen = scenario_path == topology_path
                         ? topo
                         : slurp(scenario_path, io_errors);
  ConfigResult out = load_config_text(topo, scen);
  out.errors.insert(out.errors.begin(), io_errors.begin(), io_errors.end());
  return out;
}

}  // namespace qrs
