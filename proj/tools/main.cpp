// qrsim: scenario runner for the repeater-network simulator.
//
//   qrsim --topology topo.json --scenario scenario.json --output out/
//   qrsim --topology topo.json --route 1 5 --index-fidelity 0.9
//   qrsim --topology topo.json --scenario scenario.json --verify-only

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qrs/config.hpp"
#include "qrs/connection.hpp"
#include "qrs/metrics.hpp"

namespace {

using namespace qrs;

// Instantiate the simulator and manager described by a configuration.
struct Instance {
  std::unique_ptr<Simulator> sim;
  std::unique_ptr<ConnectionManager> mgr;
};

Instance build(const ScenarioConfig& cfg, std::uint64_t seed) {
  Instance inst;
  inst.sim = std::make_unique<Simulator>(seed, cfg.discipline);
  inst.sim->staleness_window =
      seconds_to_ps(cfg.staleness_window_ms / 1000.0);
  for (const auto& n : cfg.nodes) {
    inst.sim->add_node(n.address, n.cap);
  }
  for (const auto& l : cfg.links) {
    inst.sim->add_link(l);
  }
  inst.mgr = std::make_unique<ConnectionManager>(*inst.sim);
  inst.mgr->child_fidelity_floor = cfg.child_fidelity_floor;
  if (cfg.networks.empty()) {
    // implicit single flat network over every node
    inst.mgr->add_network(0);
    for (const auto& n : cfg.nodes) inst.mgr->add_member(0, n.address);
  } else {
    for (const auto& n : cfg.networks) {
      inst.mgr->add_network(n.id, n.parent);
      for (NodeAddr m : n.members) inst.mgr->add_member(n.id, m);
    }
  }
  return inst;
}

int run_route(const ScenarioConfig& cfg, NodeAddr src, NodeAddr dst,
              double f_index) {
  std::vector<CostEdge> edges;
  for (const auto& l : cfg.links) {
    edges.push_back({l.node_a, l.node_b, link_cost(l, f_index).seconds_per_pair});
  }
  auto path = qdijkstra(edges, src, dst);
  if (!path) {
    std::cout << "route none\n";
    return 1;
  }
  std::cout << "route";
  for (NodeAddr n : *path) std::cout << " " << n;
  std::cout << "\n";
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < path->size(); ++i) {
    double best = kInfiniteCost;
    for (const auto& e : edges) {
      if ((e.a == (*path)[i] && e.b == (*path)[i + 1]) ||
          (e.b == (*path)[i] && e.a == (*path)[i + 1])) {
        best = std::min(best, e.cost);
      }
    }
    total += best;
    std::cout << "hop " << (*path)[i] << "-" << (*path)[i + 1]
              << " seconds_per_pair=" << best << "\n";
  }
  std::cout << "total seconds_per_pair=" << total << "\n";
  return 0;
}

void print_findings(const VerifierReport& report, const std::string& conn) {
  for (const auto& f : report.structural) {
    std::cout << "finding " << conn << " kind=Structural where=" << f.where
              << " detail=" << f.detail << "\n";
  }
  for (const auto& f : report.findings) {
    std::cout << "finding " << conn << " kind=" << f.kind
              << " where=" << f.where << " detail=" << f.detail << "\n";
  }
  if (report.inconclusive) {
    std::cout << "finding " << conn << " kind=Inconclusive where=exploration"
              << " detail=state bound reached\n";
  }
}

int run_verify_only(const ScenarioConfig& cfg, bool allow_faults) {
  Instance inst = build(cfg, cfg.seed);
  bool all_clean = true;
  for (const auto& cc : cfg.connections) {
    auto plan = inst.mgr->plan(cc.initiator, cc.responder, cc.requirements);
    std::function<void(const ConnectionManager::PlanResult&, const std::string&)>
        emit = [&](const ConnectionManager::PlanResult& p,
                   const std::string& label) {
          if (!p.error.empty()) {
            std::cout << "verify " << label << " error=" << p.error << "\n";
            all_clean = false;
            return;
          }
          if (!p.generated.ok()) {
            std::cout << "verify " << label
                      << " error=" << p.generated.error << "\n";
            all_clean = false;
            return;
          }
          std::cout << "verify " << label
                    << " states_explored=" << p.verdict.states_explored
                    << " clean=" << (p.verdict.clean() ? "yes" : "no") << "\n";
          print_findings(p.verdict, label);
          if (!p.verdict.clean()) all_clean = false;
          int i = 0;
          for (const auto& child : p.children) {
            emit(child, label + "/child" + std::to_string(i++));
          }
        };
    emit(plan, cc.name);
  }
  if (all_clean) return 0;
  return allow_faults ? 0 : 3;
}

int run_scenario(const ScenarioConfig& cfg, std::uint64_t seed,
                 double duration_s, const std::string& output_dir,
                 bool trace, bool allow_faults) {
  Instance inst = build(cfg, seed);
  Simulator& sim = *inst.sim;
  ConnectionManager& mgr = *inst.mgr;
  mgr.allow_faults = allow_faults;

  std::filesystem::create_directories(output_dir);
  std::ofstream trace_file;
  if (trace) {
    trace_file.open(std::filesystem::path(output_dir) / "trace.txt");
    sim.trace_out = &trace_file;
  }

  auto names = std::make_shared<std::map<ConnectionId, std::string>>();
  for (const auto& cc : cfg.connections) {
    sim.kernel.schedule(
        seconds_to_ps(cc.start_time_s), EventKind::MessageDelivery,
        cc.initiator, [&mgr, names, cc] {
          ConnectionId id = mgr.open(cc.initiator, cc.responder,
                                     cc.requirements, cc.qubit_quota,
                                     cc.weight);
          (*names)[id] = cc.name;
        });
  }
  sim.start();
  sim.run_until(seconds_to_ps(duration_s));

  std::ofstream metrics(std::filesystem::path(output_dir) / "metrics.txt");
  write_metrics(metrics, sim, &mgr, *names);
  metrics.close();

  std::cout << "run seconds=" << duration_s
            << " events=" << sim.kernel.total_events()
            << " faults=" << sim.protocol_faults << "\n";
  for (const auto& [id, name] : *names) {
    const Connection& c = mgr.connection(id);
    std::cout << "conn " << name << " state=" << to_string(c.state);
    if (c.state == ConnState::Rejected) {
      std::cout << " reason=" << c.reject_reason;
    }
    std::cout << "\n";
  }
  if (!accounting_holds(sim)) {
    std::cerr << "accounting identity violated\n";
    return 2;
  }
  if (sim.protocol_faults > 0 && !allow_faults) return 2;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"first-generation quantum repeater network simulator"};
  std::string topology_path;
  std::string scenario_path;
  std::string output_dir = "out";
  std::int64_t seed = -1;
  double duration = -1.0;
  bool trace = false;
  bool verify_only = false;
  bool allow_faults = false;
  std::vector<std::uint32_t> route;
  double index_fidelity = 0.9;

  app.add_option("--topology", topology_path, "topology JSON file")
      ->required();
  app.add_option("--scenario", scenario_path,
                 "scenario JSON file (may equal --topology)");
  app.add_option("--seed", seed, "override the scenario RNG seed");
  app.add_option("--duration", duration,
                 "override the simulated duration in seconds");
  app.add_option("--output", output_dir, "directory for metrics and traces");
  app.add_flag("--trace", trace, "write an event trace alongside metrics");
  app.add_flag("--verify-only", verify_only,
               "generate and verify RuleSets without simulating");
  app.add_option("--route", route, "print the route between two nodes")
      ->expected(2);
  app.add_option("--index-fidelity", index_fidelity,
                 "index fidelity for --route costs");
  app.add_flag("--allow-faults", allow_faults,
               "keep going (and exit 0) despite protocol faults");
  CLI11_PARSE(app, argc, argv);

  qrs::ConfigResult loaded = qrs::load_config(
      topology_path, scenario_path.empty() ? topology_path : scenario_path);
  if (!loaded.ok()) {
    for (const auto& e : loaded.errors) std::cerr << "config error: " << e << "\n";
    return 1;
  }
  const qrs::ScenarioConfig& cfg = loaded.config;

  if (!route.empty()) {
    return run_route(cfg, route[0], route[1], index_fidelity);
  }
  if (verify_only) {
    return run_verify_only(cfg, allow_faults);
  }
  return run_scenario(cfg, seed >= 0 ? std::uint64_t(seed) : cfg.seed,
                      duration >= 0 ? duration : cfg.duration_s, output_dir,
                      trace, allow_faults);
}
