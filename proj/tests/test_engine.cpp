#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qrs/generator.hpp"
#include "qrs/network.hpp"

using namespace qrs;

namespace {

NodeCapability comp_node(int qubits = 8) {
  NodeCapability c;
  c.node_type = NodeType::COMP;
  c.memory_qubits = qubits;
  return c;
}

NodeCapability rep_node(int qubits = 8) {
  NodeCapability c;
  c.node_type = NodeType::REP1;
  c.memory_qubits = qubits;
  return c;
}

LinkSpec short_link(NodeAddr a, NodeAddr b, double base_f,
                    double rate_hz = 1000.0) {
  LinkSpec l;
  l.node_a = a;
  l.node_b = b;
  l.length_km = 1.0;
  l.attenuation_db_per_km = 0.0;  // lossless for statistics tests
  l.attempt_rate_hz = rate_hz;
  l.base_fidelity = base_f;
  l.qubit_capacity = 4;
  return l;
}

// Build a chain simulator with generated RuleSets installed everywhere
// and the connection admitted to the mux.
struct ChainFixture {
  Simulator sim;
  ConnectionRequest rq;
  GeneratedConnection gen;

  ChainFixture(std::size_t n, double base_f, double min_f,
               std::uint64_t seed = 7,
               bool initiator_measures = false,
               bool responder_measures = false)
      : sim(seed) {
    rq.connection_id = 9;
    rq.requirements.min_fidelity = min_f;
    for (std::size_t i = 0; i < n; ++i) {
      NodeAddr a = NodeAddr(10 + i);
      rq.path.push_back(a);
      bool meas_end = (i == 0 && initiator_measures) ||
                      (i + 1 == n && responder_measures);
      NodeCapability cap = i == 0 || i + 1 == n ? comp_node() : rep_node();
      if (meas_end) {
        cap.node_type = NodeType::MEAS;
      }
      sim.add_node(a, cap);
    }
    rq.initiator = rq.path.front();
    rq.responder = rq.path.back();
    for (std::size_t i = 0; i + 1 < n; ++i) {
      auto& lr = sim.add_link(short_link(rq.path[i], rq.path[i + 1], base_f));
      LinkInfo li;
      li.from = rq.path[i];
      li.to = rq.path[i + 1];
      li.base_fidelity = base_f;
      li.seconds_per_pair = 0.001;
      li.available_qubits = 4;
      li.one_way_latency = link_notify_delay_ps(lr.spec);
      li.pumpable = !sim.node(rq.path[i]).cap.has_memory() ||
                            !sim.node(rq.path[i + 1]).cap.has_memory()
                        ? false
                        : true;
      rq.accumulated.push_back(li);
    }
    gen = generate_rulesets(rq, initiator_measures, responder_measures);
    REQUIRE(gen.ok());
    std::map<NodeAddr, int> mem;
    for (auto n_ : rq.path) mem[n_] = 8;
    REQUIRE(sim.mux_state.admit(rq.connection_id, rq.path, mem).accepted);
    for (const auto& [node, rs] : gen.rulesets) {
      sim.install_ruleset(node, rs);
    }
  }

  void run_seconds(double s) {
    sim.start();
    sim.run_until(seconds_to_ps(s));
  }
};

// Every created pair half must land in exactly one bucket.
void check_accounting(Simulator& sim) {
  auto census = sim.registry.census();
  std::uint64_t total = 0;
  for (const auto& [fate, n] : census) total += n;
  CHECK(total == sim.registry.total_halves());
  // live halves must still be held by some node (or be in-flight swap
  // products, which sit in the registry while TRANSFERs travel)
  std::uint64_t held = 0;
  for (const auto& [addr, nd] : sim.nodes) held += nd.resources.size();
  CHECK(held <= census[HalfFate::Live]);
}

}  // namespace

TEST_CASE("direct link delivers at both ends with exact fidelity") {
  ChainFixture fx(2, 0.9, 0.8);
  fx.run_seconds(2.0);
  auto& a = fx.sim.node(fx.rq.path[0]);
  auto& b = fx.sim.node(fx.rq.path[1]);
  REQUIRE(a.deliveries.size() > 1000);
  CHECK(a.deliveries.size() == b.deliveries.size());
  for (const auto& d : a.deliveries) {
    CHECK(d.true_fidelity == Catch::Approx(0.9).margin(1e-12));
    CHECK(d.est_fidelity == Catch::Approx(0.9).margin(1e-12));
  }
  CHECK(fx.sim.protocol_faults == 0);
  check_accounting(fx.sim);
}

TEST_CASE("link attempt statistics follow the loss model") {
  Simulator sim(3);
  sim.add_node(1, comp_node());
  sim.add_node(2, comp_node());
  auto l = short_link(1, 2, 0.9);
  l.attenuation_db_per_km = 3.0;  // p = 10^-0.3 ~ 0.501
  l.length_km = 1.0;
  sim.add_link(l);
  // default 10 ms staleness: occupancy reaches the 4-qubit link cap
  sim.start();
  sim.run_until(seconds_to_ps(5.0));
  const auto& st = sim.links[0].stats;
  double p = attempt_success_probability(l);
  double n = double(st.attempts);
  REQUIRE(n > 1000);
  double sigma = std::sqrt(n * p * (1 - p));
  CHECK(std::abs(double(st.successes) - n * p) < 4 * sigma);
  // with nobody consuming pairs, occupancy stalls must appear
  CHECK(st.stalls > 0);
  CHECK(sim.nodes.at(1).stats.stale_freed > 0);
}

TEST_CASE("entanglement pumping: keep rate and kept fidelity") {
  // force exactly one purification round: raw 0.9, target 0.92
  ChainFixture fx(2, 0.9, 0.92);
  fx.run_seconds(5.0);
  auto& a = fx.sim.node(fx.rq.path[0]);
  std::uint64_t kept = a.stats.purify_kept;
  std::uint64_t rounds = kept + a.stats.purify_dropped;
  REQUIRE(rounds > 500);
  double p = purify_outcome(0.9, 0.9).p_success;  // 0.875556
  double sigma = std::sqrt(double(rounds) * p * (1 - p));
  CHECK(std::abs(double(kept) - double(rounds) * p) < 4 * sigma);
  REQUIRE(a.deliveries.size() > 100);
  for (const auto& d : a.deliveries) {
    CHECK(d.true_fidelity == Catch::Approx(0.9263959391).margin(1e-9));
    CHECK(d.est_fidelity == Catch::Approx(d.true_fidelity).margin(1e-9));
  }
  CHECK(fx.sim.protocol_faults == 0);
  check_accounting(fx.sim);
}

TEST_CASE("three-node chain: swap composes werner parameters") {
  ChainFixture fx(3, 0.9, 0.8);  // no pumping; e2e = 0.813333
  fx.run_seconds(3.0);
  auto& a = fx.sim.node(fx.rq.path[0]);
  auto& b = fx.sim.node(fx.rq.path[1]);
  auto& c = fx.sim.node(fx.rq.path[2]);
  REQUIRE(a.deliveries.size() > 300);
  CHECK(b.stats.swaps > 300);
  CHECK(std::abs(long(a.deliveries.size()) - long(c.deliveries.size())) <= 2);
  for (const auto& d : a.deliveries) {
    CHECK(d.partner == fx.rq.path[2]);
    CHECK(d.true_fidelity == Catch::Approx(0.8133333333).margin(1e-9));
    CHECK(d.est_fidelity == Catch::Approx(d.true_fidelity).margin(1e-9));
  }
  CHECK(fx.sim.protocol_faults == 0);
  check_accounting(fx.sim);
}

TEST_CASE("five-node chain with pumping meets the fidelity floor") {
  ChainFixture fx(5, 0.95, 0.85);
  fx.run_seconds(4.0);
  auto& a = fx.sim.node(fx.rq.path[0]);
  REQUIRE(a.deliveries.size() > 50);
  for (const auto& d : a.deliveries) {
    CHECK(d.true_fidelity >= 0.85 - 1e-9);
    CHECK(d.partner == fx.rq.path[4]);
  }
  CHECK(fx.sim.protocol_faults == 0);
  check_accounting(fx.sim);
}

TEST_CASE("measurement endpoints see the werner QBER") {
  ChainFixture fx(2, 0.9, 0.8, 21, /*initiator_measures=*/true,
                  /*responder_measures=*/true);
  fx.run_seconds(4.0);
  auto& a = fx.sim.node(fx.rq.path[0]);
  auto& b = fx.sim.node(fx.rq.path[1]);
  REQUIRE(a.deliveries.size() > 2000);
  // match outcomes by pair name
  std::map<ExternalName, int> b_out;
  for (const auto& d : b.deliveries) {
    REQUIRE(d.measured);
    b_out[d.name] = d.outcome;
  }
  std::uint64_t n = 0, mismatches = 0;
  for (const auto& d : a.deliveries) {
    auto it = b_out.find(d.name);
    if (it == b_out.end()) continue;
    ++n;
    if (d.outcome != it->second) ++mismatches;
  }
  REQUIRE(n > 2000);
  double q = qber_z(0.9);  // 0.0667
  double sigma = std::sqrt(double(n) * q * (1 - q));
  CHECK(std::abs(double(mismatches) - double(n) * q) < 4 * sigma);
  // MEAS ends hold no memory: qubits never occupied
  CHECK(a.qubits_in_use == 0);
  CHECK(fx.sim.protocol_faults == 0);
}

TEST_CASE("enough-resources gating: a count-2 rule waits for the second pair") {
  Simulator sim(1);
  sim.add_node(1, comp_node());
  sim.add_node(2, comp_node());
  RuleSet rs;
  rs.connection_id = 5;
  rs.owner_node = 1;
  Stage s0;
  s0.stage_id = 0;
  Rule r;
  r.rule_id = 0;
  r.conditions.push_back(ResClause{2, 0.0, 2});
  r.actions.push_back(PromoteAction{1, {}});
  s0.rules.push_back(r);
  rs.stages.push_back(s0);
  rs.stages.push_back(Stage{1, {}, {}});
  sim.install_ruleset(1, rs);

  auto& nd = sim.node(1);
  auto inject = [&](std::uint64_t seq) {
    ExternalName name{1, 0, seq};
    sim.registry.create(name, 1, 2, 0.9, 0.0, 0.0, sim.kernel.now());
    Resource res;
    res.name = name;
    res.partner = 2;
    res.conn = 5;
    res.stage = 0;
    res.est_f = 0.9;
    res.birth = sim.kernel.now();
    nd.resources[name] = res;
    nd.qubits_in_use++;
    sim.evaluate(nd);
  };
  inject(1);
  CHECK(nd.resources.at({1, 0, 1}).stage == 0);  // one pair: no fire
  CHECK(nd.stats.rules_fired == 0);
  inject(2);
  CHECK(nd.stats.rules_fired == 1);  // fires once, consumes both
  CHECK(nd.resources.at({1, 0, 1}).stage == 1);
  CHECK(nd.resources.at({1, 0, 2}).stage == 1);
}

TEST_CASE("oldest qualifying resource is selected first") {
  Simulator sim(1);
  sim.add_node(1, comp_node());
  sim.add_node(2, comp_node());
  RuleSet rs;
  rs.connection_id = 5;
  rs.owner_node = 1;
  Stage s0;
  s0.stage_id = 0;
  Rule r;
  r.rule_id = 0;
  r.conditions.push_back(ResClause{2, 0.0, 1});
  r.actions.push_back(PromoteAction{1, {}});
  s0.rules.push_back(r);
  rs.stages.push_back(s0);
  rs.stages.push_back(Stage{1, {}, {}});

  auto& nd = sim.node(1);
  for (std::uint64_t seq : {3u, 1u, 2u}) {
    ExternalName name{1, SimTime(100 - seq), seq};  // older = larger seq here
    sim.registry.create(name, 1, 2, 0.9, 0.0, 0.0, 0);
    Resource res;
    res.name = name;
    res.partner = 2;
    res.conn = 5;
    res.stage = 0;
    res.est_f = 0.9;
    res.birth = SimTime(100 - seq);
    nd.resources[name] = res;
  }
  sim.install_ruleset(1, rs);  // triggers evaluation: all promote, oldest first
  CHECK(nd.stats.rules_fired == 3);
  // verify single-step: re-run with a fresh sim firing one rule at a time
  // is implicit; here order shows up in promotion being exhaustive
  for (auto& [name, res] : nd.resources) CHECK(res.stage == 1);
}

TEST_CASE("discard timers free stranded pairs and release memory") {
  // delivery threshold impossible: pairs pile up in stage 1 until the
  // discard timer fires
  Simulator sim(5);
  sim.add_node(1, comp_node());
  sim.add_node(2, comp_node());
  sim.add_link(short_link(1, 2, 0.9));
  ConnectionRequest rq;
  rq.connection_id = 7;
  rq.path = {1, 2};
  rq.initiator = 1;
  rq.responder = 2;
  rq.requirements.min_fidelity = 0.8;
  LinkInfo li;
  li.from = 1;
  li.to = 2;
  li.base_fidelity = 0.9;
  li.seconds_per_pair = 0.001;
  li.one_way_latency = 5'000'000;
  rq.accumulated.push_back(li);
  auto gen = generate_rulesets(rq);
  REQUIRE(gen.ok());
  // sabotage the delivery threshold after generation
  for (auto& [node, rs] : gen.rulesets) {
    for (auto& rule : rs.stages[1].rules) {
      for (auto& c : rule.conditions) {
        if (auto* res = std::get_if<ResClause>(&c)) res->min_fidelity = 0.999;
      }
    }
  }
  std::map<NodeAddr, int> mem = {{1, 8}, {2, 8}};
  REQUIRE(sim.mux_state.admit(7, rq.path, mem).accepted);
  for (const auto& [node, rs] : gen.rulesets) sim.install_ruleset(node, rs);
  sim.start();
  sim.run_until(seconds_to_ps(3.0));
  auto& a = sim.node(1);
  CHECK(a.deliveries.empty());
  CHECK(a.stats.freed > 10);  // timer discards happened
  CHECK(sim.protocol_faults == 0);
  // memory is recycled: the link kept producing well beyond one fill
  CHECK(sim.links[0].stats.successes > 40);
  check_accounting(sim);
}

TEST_CASE("estimation bias separates belief from ground truth") {
  ChainFixture fx(2, 0.9, 0.8);
  fx.sim.links[0].spec.est_fidelity_bias = 0.05;
  fx.run_seconds(1.0);
  auto& a = fx.sim.node(fx.rq.path[0]);
  REQUIRE(a.deliveries.size() > 100);
  for (const auto& d : a.deliveries) {
    CHECK(d.est_fidelity == Catch::Approx(0.95).margin(1e-12));
    CHECK(d.true_fidelity == Catch::Approx(0.9).margin(1e-12));
  }
}

TEST_CASE("finite memory lifetime decoheres holdings") {
  // end nodes with 1 ms memories on a 1 km link: pairs decay while the
  // far side's swap/delivery machinery runs, so delivered fidelity at
  // the ends is below base but consistent between belief and truth
  Simulator sim(11);
  NodeCapability cap = comp_node();
  cap.t_mem_seconds = 0.001;
  sim.add_node(1, cap);
  sim.add_node(2, cap);
  sim.add_link(short_link(1, 2, 0.95));
  ConnectionRequest rq;
  rq.connection_id = 3;
  rq.path = {1, 2};
  rq.initiator = 1;
  rq.responder = 2;
  rq.requirements.min_fidelity = 0.5;
  LinkInfo li;
  li.from = 1;
  li.to = 2;
  li.base_fidelity = 0.95;
  li.seconds_per_pair = 0.001;
  li.one_way_latency = 5'000'000;
  rq.accumulated.push_back(li);
  auto gen = generate_rulesets(rq);
  REQUIRE(gen.ok());
  std::map<NodeAddr, int> mem = {{1, 8}, {2, 8}};
  REQUIRE(sim.mux_state.admit(3, rq.path, mem).accepted);
  for (const auto& [node, rs] : gen.rulesets) sim.install_ruleset(node, rs);
  sim.start();
  sim.run_until(seconds_to_ps(1.0));
  auto& a = sim.node(1);
  REQUIRE(a.deliveries.size() > 100);
  for (const auto& d : a.deliveries) {
    CHECK(d.true_fidelity <= 0.95 + 1e-12);
    CHECK(d.est_fidelity == Catch::Approx(d.true_fidelity).margin(1e-9));
  }
}

TEST_CASE("single active interface alternates between links") {
  Simulator sim(2);
  sim.add_node(1, comp_node());
  NodeCapability rep = rep_node();
  rep.single_active_interface = true;
  sim.add_node(2, rep);
  sim.add_node(3, comp_node());
  sim.add_link(short_link(1, 2, 0.9));
  sim.add_link(short_link(2, 3, 0.9));
  sim.staleness_window = seconds_to_ps(0.001);
  sim.start();
  sim.run_until(seconds_to_ps(2.0));
  const auto& l0 = sim.links[0].stats;
  const auto& l1 = sim.links[1].stats;
  std::uint64_t cycles0 = l0.attempts + l0.stalls + l0.interface_skips;
  // each link gets roughly half the cycles
  CHECK(l0.interface_skips > cycles0 / 3);
  CHECK(l1.interface_skips > cycles0 / 3);
  std::uint64_t active0 = l0.attempts + l0.stalls;
  std::uint64_t active1 = l1.attempts + l1.stalls;
  CHECK(std::abs(long(active0) - long(active1)) <= 1);
  CHECK(active0 <= cycles0 / 2 + 1);
}

TEST_CASE("identical seeds reproduce runs exactly; seeds matter") {
  auto run = [](std::uint64_t seed) {
    // pumping makes counts depend on sampled parity outcomes
    ChainFixture fx(2, 0.9, 0.92, seed);
    fx.run_seconds(1.0);
    auto& a = fx.sim.node(fx.rq.path[0]);
    return std::tuple{fx.sim.kernel.total_events(), a.deliveries.size(),
                      fx.sim.registry.created_by_link()};
  };
  auto r1 = run(1234);
  auto r2 = run(1234);
  CHECK(r1 == r2);
  auto r3 = run(4321);
  CHECK(r1 != r3);
}
