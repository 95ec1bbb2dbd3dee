#include <catch2/catch_amalgamated.hpp>

#include "qrs/generator.hpp"
#include "qrs/verifier.hpp"

using namespace qrs;

namespace {

// A well-provisioned homogeneous chain request.
ConnectionRequest chain_request(std::size_t n_nodes, double base_f,
                                double min_f) {
  ConnectionRequest rq;
  rq.connection_id = 42;
  rq.path.resize(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) rq.path[i] = 100 + NodeAddr(i);
  rq.initiator = rq.path.front();
  rq.responder = rq.path.back();
  rq.requirements.min_fidelity = min_f;
  for (std::size_t i = 0; i + 1 < n_nodes; ++i) {
    LinkInfo li;
    li.from = rq.path[i];
    li.to = rq.path[i + 1];
    li.seconds_per_pair = 0.001;
    li.base_fidelity = base_f;
    li.available_qubits = 4;
    li.one_way_latency = 250'000'000;  // 250 us
    rq.accumulated.push_back(li);
  }
  return rq;
}

SimTime path_latency(const ConnectionRequest& rq, NodeAddr u, NodeAddr v) {
  auto idx = [&](NodeAddr n) {
    return std::find(rq.path.begin(), rq.path.end(), n) - rq.path.begin();
  };
  auto a = std::min(idx(u), idx(v));
  auto b = std::max(idx(u), idx(v));
  SimTime lat = 0;
  for (auto i = a; i < b; ++i) lat += rq.accumulated[i].one_way_latency;
  return lat;
}

}  // namespace

TEST_CASE("swap plan is a balanced tree with the middle swapping last") {
  auto p3 = plan_swaps(3);
  REQUIRE(p3.size() == 1);
  CHECK(p3[0].node == 1);
  CHECK(p3[0].left == 0);
  CHECK(p3[0].right == 2);

  auto p5 = plan_swaps(5);
  REQUIRE(p5.size() == 3);
  CHECK(p5.back().node == 2);  // root is the path midpoint
  CHECK(p5.back().height == 2);
  CHECK(p5[0].height == 1);
  CHECK(p5[1].height == 1);

  for (std::size_t n = 2; n <= 12; ++n) {
    auto plan = plan_swaps(n);
    CHECK(plan.size() == n - 2);  // every interior node swaps exactly once
    if (n >= 3) CHECK(plan.back().node == (n - 1) / 2);
    // leaves-first: any step nested inside another is emitted earlier
    for (std::size_t a = 0; a < plan.size(); ++a) {
      for (std::size_t b = a + 1; b < plan.size(); ++b) {
        bool b_inside_a = plan[b].left >= plan[a].left &&
                          plan[b].right <= plan[a].right;
        CHECK_FALSE(b_inside_a);
      }
    }
  }
}

TEST_CASE("waterfill leaves capable hops at base fidelity") {
  std::vector<LinkInfo> hops(1);
  hops[0].base_fidelity = 0.9;
  auto t = waterfill_targets(hops, 0.85);
  REQUIRE(t);
  CHECK((*t)[0] == Catch::Approx(0.9));
  t = waterfill_targets(hops, 0.93);
  REQUIRE(t);
  CHECK((*t)[0] == Catch::Approx(0.93));  // below the 0.9435 pumping ceiling
}

TEST_CASE("waterfill splits the requirement evenly in werner space") {
  std::vector<LinkInfo> hops(2);
  hops[0].base_fidelity = hops[1].base_fidelity = 0.9;
  auto t = waterfill_targets(hops, 0.88);
  REQUIRE(t);
  CHECK((*t)[0] == Catch::Approx((*t)[1]));
  CHECK(swap_fidelity((*t)[0], (*t)[1]) == Catch::Approx(0.88).margin(1e-9));
  CHECK((*t)[0] > 0.9);
}

TEST_CASE("waterfill peels hops already above the even share") {
  std::vector<LinkInfo> hops(2);
  hops[0].base_fidelity = 0.99;
  hops[1].base_fidelity = 0.85;
  auto t = waterfill_targets(hops, 0.9);
  REQUIRE(t);
  CHECK((*t)[0] == Catch::Approx(0.99));  // untouched
  CHECK(swap_fidelity((*t)[0], (*t)[1]) == Catch::Approx(0.9).margin(1e-9));
}

TEST_CASE("waterfill honors non-pumpable hops") {
  std::vector<LinkInfo> hops(2);
  hops[0].base_fidelity = 0.95;
  hops[0].pumpable = false;
  hops[1].base_fidelity = 0.9;
  auto t = waterfill_targets(hops, 0.88);
  REQUIRE(t);
  CHECK((*t)[0] == Catch::Approx(0.95));
  CHECK(swap_fidelity(0.95, (*t)[1]) == Catch::Approx(0.88).margin(1e-9));
}

TEST_CASE("waterfill reports unreachable requirements") {
  std::vector<LinkInfo> hops(3);
  for (auto& h : hops) h.base_fidelity = 0.55;  // pumping saturates low
  CHECK_FALSE(waterfill_targets(hops, 0.95));
  std::vector<LinkInfo> fixed(1);
  fixed[0].base_fidelity = 0.9;
  fixed[0].pumpable = false;
  CHECK_FALSE(waterfill_targets(fixed, 0.95));
}

TEST_CASE("generated rulesets: three-node chain structure") {
  auto rq = chain_request(3, 0.9, 0.85);
  auto gen = generate_rulesets(rq);
  REQUIRE(gen.ok());
  REQUIRE(gen.rulesets.size() == 3);
  for (const auto& [node, rs] : gen.rulesets) {
    CHECK(rs.owner_node == node);
    CHECK(rs.connection_id == 42);
    REQUIRE(rs.stages.size() == 2);
    CHECK(validate_ruleset(rs).empty());
  }
  // e2e base is 0.813 < 0.85, so stage 0 must pump
  const RuleSet& mid = gen.rulesets.at(rq.path[1]);
  int purify_rules = 0;
  for (const auto& r : mid.stages[0].rules) {
    for (const auto& a : r.actions) {
      if (const auto* q = std::get_if<QcircAction>(&a)) {
        if (q->circuit == Circuit::PURIFY_PAIR) purify_rules++;
      }
    }
  }
  CHECK(purify_rules == 2);  // one per adjacent hop
  // the middle swaps its end-node partners
  bool found_swap = false;
  for (const auto& r : mid.stages[1].rules) {
    for (const auto& a : r.actions) {
      if (const auto* q = std::get_if<QcircAction>(&a)) {
        if (q->circuit == Circuit::SWAP) {
          found_swap = true;
          auto* res0 = std::get_if<ResClause>(&r.conditions[0]);
          auto* res1 = std::get_if<ResClause>(&r.conditions[1]);
          REQUIRE(res0);
          REQUIRE(res1);
          CHECK(res0->partner == rq.path[0]);
          CHECK(res1->partner == rq.path[2]);
        }
      }
    }
  }
  CHECK(found_swap);
  // end nodes deliver against the far end at the required fidelity
  const RuleSet& left = gen.rulesets.at(rq.path[0]);
  auto* dres = std::get_if<ResClause>(&left.stages[1].rules[0].conditions[0]);
  REQUIRE(dres);
  CHECK(dres->partner == rq.path[2]);
  CHECK(dres->min_fidelity == Catch::Approx(0.85));
  // discard timers grow with tree height: ends outlast the middle
  CHECK(gen.discard_timers[0] > gen.discard_timers[1]);
  CHECK(gen.discard_timers[2] > gen.discard_timers[1]);
}

TEST_CASE("generated rulesets: no purification when the base suffices") {
  auto rq = chain_request(3, 0.95, 0.8);  // e2e base 0.87 > 0.8
  auto gen = generate_rulesets(rq);
  REQUIRE(gen.ok());
  for (const auto& [node, rs] : gen.rulesets) {
    for (const auto& r : rs.stages[0].rules) {
      for (const auto& a : r.actions) {
        auto* q = std::get_if<QcircAction>(&a);
        CHECK((q == nullptr || q->circuit != Circuit::PURIFY_PAIR));
      }
    }
  }
}

TEST_CASE("generated rulesets: measurement endpoint delivers by measuring") {
  auto rq = chain_request(2, 0.95, 0.8);
  rq.accumulated[0].pumpable = false;  // memoryless end cannot pump
  auto gen = generate_rulesets(rq, /*initiator_measures=*/true);
  REQUIRE(gen.ok());
  const RuleSet& init = gen.rulesets.at(rq.path[0]);
  bool has_meas = false;
  for (const auto& a : init.stages[1].rules[0].actions) {
    if (std::holds_alternative<MeasAction>(a)) has_meas = true;
  }
  CHECK(has_meas);
}

TEST_CASE("generation fails loudly on unreachable fidelity") {
  auto rq = chain_request(4, 0.6, 0.98);
  auto gen = generate_rulesets(rq);
  CHECK_FALSE(gen.ok());
  CHECK(gen.error.find("unreachable") != std::string::npos);
}

TEST_CASE("connection request wire round trip") {
  auto rq = chain_request(4, 0.92, 0.88);
  rq.requirements.mode = ConnMode::Count;
  rq.requirements.target_count = 500;
  rq.layer = 2;
  rq.accumulated[1].is_virtual = true;
  auto back = decode_request(encode_request(rq));
  CHECK(back.connection_id == rq.connection_id);
  CHECK(back.path == rq.path);
  CHECK(back.accumulated == rq.accumulated);
  CHECK(back.requirements == rq.requirements);
  CHECK(back.layer == rq.layer);
  // corruption never decodes silently
  auto bytes = encode_request(rq);
  bytes[10] ^= 0xFF;
  // request framing has no checksum, but structural fields shift:
  // decoding either throws or yields a different request
  try {
    auto mangled = decode_request(bytes);
    CHECK_FALSE(mangled == rq);
  } catch (const DecodeError&) {
  }
}

TEST_CASE("verifier passes clean generated rulesets, chains 2 through 5") {
  for (std::size_t n : {2u, 3u, 4u, 5u}) {
    for (double min_f : {0.8, 0.88}) {
      auto rq = chain_request(n, 0.95, min_f);
      auto gen = generate_rulesets(rq);
      REQUIRE(gen.ok());
      auto report = verify_connection(
          gen.rulesets, rq.path,
          [&](NodeAddr u, NodeAddr v) { return path_latency(rq, u, v); });
      INFO("n=" << n << " min_f=" << min_f);
      for (const auto& f : report.findings) INFO(f.kind << ": " << f.detail);
      CHECK(report.clean());
      CHECK(report.states_explored > 0);
    }
  }
}

TEST_CASE("verifier flags a discard timer shorter than message latency") {
  auto rq = chain_request(4, 0.95, 0.8);
  auto gen = generate_rulesets(rq);
  REQUIRE(gen.ok());
  // shrink the initiator's timer below one hop's latency
  RuleSet& rs = gen.rulesets.at(rq.path[0]);
  for (auto& st : rs.stages) {
    for (auto& r : st.rules) {
      for (auto& a : r.actions) {
        if (auto* t = std::get_if<SetTimerAction>(&a)) t->duration = 1000;
      }
    }
  }
  auto report = verify_connection(
      gen.rulesets, rq.path,
      [&](NodeAddr u, NodeAddr v) { return path_latency(rq, u, v); });
  bool found = false;
  for (const auto& f : report.findings) found |= f.kind == "DiscardRace";
  CHECK(found);
}

TEST_CASE("verifier flags leapfrog when adjacent swaps go greedy") {
  auto rq = chain_request(4, 0.95, 0.8);
  auto gen = generate_rulesets(rq);
  REQUIRE(gen.ok());
  // widen both interior swap rules to wildcard partner selection
  for (std::size_t i : {1u, 2u}) {
    for (auto& st : gen.rulesets.at(rq.path[i]).stages) {
      for (auto& r : st.rules) {
        bool is_swap = false;
        for (const auto& a : r.actions) {
          if (const auto* q = std::get_if<QcircAction>(&a))
            is_swap = q->circuit == Circuit::SWAP;
        }
        if (!is_swap) continue;
        for (auto& c : r.conditions) {
          if (auto* res = std::get_if<ResClause>(&c)) res->partner = kNoNode;
        }
      }
    }
  }
  auto report = verify_connection(
      gen.rulesets, rq.path,
      [&](NodeAddr u, NodeAddr v) { return path_latency(rq, u, v); });
  bool found = false;
  for (const auto& f : report.findings) found |= f.kind == "Leapfrog";
  CHECK(found);
}

TEST_CASE("verifier flags one-sided purification") {
  auto rq = chain_request(3, 0.9, 0.85);  // pumping required
  auto gen = generate_rulesets(rq);
  REQUIRE(gen.ok());
  // delete the middle node's purify rules: the ends now emit
  // MEAS_RESULT messages nobody consumes
  RuleSet& mid = gen.rulesets.at(rq.path[1]);
  for (auto& st : mid.stages) {
    std::erase_if(st.rules, [](const Rule& r) {
      for (const auto& a : r.actions) {
        if (const auto* q = std::get_if<QcircAction>(&a)) {
          if (q->circuit == Circuit::PURIFY_PAIR) return true;
        }
      }
      return false;
    });
  }
  auto report = verify_connection(
      gen.rulesets, rq.path,
      [&](NodeAddr u, NodeAddr v) { return path_latency(rq, u, v); });
  bool found = false;
  for (const auto& f : report.findings) found |= f.kind == "UnpairedMessage";
  CHECK(found);
}

TEST_CASE("verifier flags undeliverable end-to-end pairs") {
  auto rq = chain_request(3, 0.95, 0.8);
  auto gen = generate_rulesets(rq);
  REQUIRE(gen.ok());
  // remove the initiator's delivery rule
  RuleSet& rs = gen.rulesets.at(rq.path[0]);
  std::erase_if(rs.stages[1].rules, [](const Rule& r) {
    for (const auto& a : r.actions) {
      if (std::holds_alternative<PromoteAction>(a)) return true;
      if (std::holds_alternative<MeasAction>(a)) return true;
    }
    return false;
  });
  auto report = verify_connection(
      gen.rulesets, rq.path,
      [&](NodeAddr u, NodeAddr v) { return path_latency(rq, u, v); });
  bool found = false;
  for (const auto& f : report.findings) found |= f.kind == "Nontermination";
  CHECK(found);
}

TEST_CASE("verifier surfaces structural violations") {
  auto rq = chain_request(3, 0.95, 0.8);
  auto gen = generate_rulesets(rq);
  REQUIRE(gen.ok());
  RuleSet& rs = gen.rulesets.at(rq.path[1]);
  for (auto& r : rs.stages[1].rules) {
    for (auto& a : r.actions) {
      if (auto* p = std::get_if<PromoteAction>(&a)) p->target_stage = 0;
    }
  }
  // also add a rule that leaks its matched resource
  Rule leak;
  leak.rule_id = 99;
  leak.conditions.push_back(ResClause{rq.path[0], 0.0, 1});
  leak.actions.push_back(SetAction{7, 1, false});
  rs.stages[1].rules.push_back(leak);
  auto report = verify_connection(
      gen.rulesets, rq.path,
      [&](NodeAddr u, NodeAddr v) { return path_latency(rq, u, v); });
  CHECK_FALSE(report.structural.empty());
}
