#pragma once

// Pre-installation verification of a connection's RuleSets. Static
// checks catch discard timers that race their own protocol messages and
// messages without a receiving rule; a bounded explicit-state search
// over abstract swap interleavings catches leapfrog (two adjacent nodes
// each able to swap the shared pair) and plans that strand resources.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "qrs/ruleset.hpp"

namespace qrs {

struct Finding {
  std::string kind;  // Leapfrog | DiscardRace | Nontermination | UnpairedMessage
  std::string where;
  std::string detail;
};

struct VerifierReport {
  std::vector<Finding> findings;
  std::vector<Finding> structural;  // per-ruleset validate_ruleset output
  bool inconclusive = false;        // exploration hit the state bound
  std::size_t states_explored = 0;
  bool clean() const {
    return findings.empty() && structural.empty() && !inconclusive;
  }
};

namespace detail {

// Swap rule summary: partner constraints of its two RES clauses
// (kNoNode = wildcard).
struct SwapRule {
  NodeAddr left = kNoNode;
  NodeAddr right = kNoNode;
};

struct NodeProgram {
  std::vector<SwapRule> swaps;
  std::vector<NodeAddr> deliver_partners;  // RES partner of deliver rules
  bool has_purify = false;
  std::set<NodeAddr> purify_partners;
  SimTime max_timer = 0;
  bool has_timer_discard = false;
};

inline NodeProgram summarize(const RuleSet& rs) {
  NodeProgram p;
  for (const auto& st : rs.stages) {
    for (const auto& rule : st.rules) {
      std::vector<NodeAddr> partners;
      bool timer = false;
      for (const auto& c : rule.conditions) {
        if (const auto* res = std::get_if<ResClause>(&c)) {
          for (int k = 0; k < res->count; ++k) partners.push_back(res->partner);
        } else if (std::holds_alternative<TimerClause>(c)) {
          timer = true;
        }
      }
      for (const auto& a : rule.actions) {
        if (const auto* q = std::get_if<QcircAction>(&a)) {
          if (q->circuit == Circuit::PURIFY_PAIR) {
            p.has_purify = true;
            for (auto pr : partners) p.purify_partners.insert(pr);
          } else if (partners.size() == 2) {
            p.swaps.push_back({partners[0], partners[1]});
          }
        } else if (const auto* pr = std::get_if<PromoteAction>(&a)) {
          if (pr->target_stage == kDeliveryStage && !partners.empty()) {
            p.deliver_partners.push_back(partners[0]);
          }
        } else if (const auto* me = std::get_if<MeasAction>(&a);
                   me && !partners.empty()) {
          p.deliver_partners.push_back(partners[0]);
        } else if (const auto* t = std::get_if<SetTimerAction>(&a)) {
          p.max_timer = std::max(p.max_timer, t->duration);
        }
        if (timer && std::holds_alternative<FreeAction>(a)) {
          p.has_timer_discard = true;
        }
      }
    }
  }
  return p;
}

inline bool matches(NodeAddr constraint, NodeAddr partner) {
  return constraint == kNoNode || constraint == partner;
}

}  // namespace detail

// Abstract state for the swap-plan exploration: live segments as path
// index pairs, raw link pairs distinguished from swapped products.
namespace detail {

struct Segment {
  std::uint8_t lo, hi;
  bool product;
  auto operator<=>(const Segment&) const = default;
};

using AbsState = std::vector<Segment>;  // kept sorted

}  // namespace detail

// `latency(u, v)` must return the one-way classical latency between two
// path nodes. `state_bound` caps the exploration.
template <typename LatencyFn>
inline VerifierReport verify_connection(
    const std::map<NodeAddr, RuleSet>& rulesets,
    const std::vector<NodeAddr>& path, LatencyFn&& latency,
    std::size_t state_bound = 100000) {
  VerifierReport report;
  std::map<NodeAddr, detail::NodeProgram> prog;
  for (const auto& [node, rs] : rulesets) {
    for (const auto& v : validate_ruleset(rs)) {
      report.structural.push_back(
          {v.kind, "node " + std::to_string(node) + " " + v.location,
           v.explanation});
    }
    prog[node] = detail::summarize(rs);
  }
  auto idx_of = [&](NodeAddr n) {
    return std::find(path.begin(), path.end(), n) - path.begin();
  };

  // DiscardRace: a node's discard timer must exceed the one-way latency
  // from every node whose rules send it messages that consume pairs --
  // swap TRANSFERs from any node whose swap rule can match this node,
  // and purification MEAS_RESULTs from pumping neighbors.
  for (const auto& [node, p] : prog) {
    if (!p.has_timer_discard || p.max_timer == 0) continue;
    for (const auto& [src, sp] : prog) {
      if (src == node) continue;
      bool sends_here = false;
      for (const auto& sw : sp.swaps) {
        if (detail::matches(sw.left, node) || detail::matches(sw.right, node))
          sends_here = true;
      }
      if (sp.purify_partners.count(node) || sp.purify_partners.count(kNoNode))
        sends_here = true;
      if (!sends_here) continue;
      SimTime lat = latency(src, node);
      if (p.max_timer <= lat) {
        report.findings.push_back(
            {"DiscardRace", "node " + std::to_string(node),
             "discard timer " + std::to_string(p.max_timer) +
                 "ps is not longer than the " + std::to_string(lat) +
                 "ps one-way latency from node " + std::to_string(src) +
                 ", so pairs can be freed while a message consuming them "
                 "is in flight"});
      }
    }
  }

  // UnpairedMessage: purification results need a matching purify rule
  // at the partner; swap TRANSFERs need any RuleSet at the destination.
  for (const auto& [node, p] : prog) {
    for (NodeAddr partner : p.purify_partners) {
      if (partner == kNoNode) continue;
      auto it = prog.find(partner);
      bool paired = it != prog.end() &&
                    (it->second.purify_partners.count(node) ||
                     it->second.purify_partners.count(kNoNode));
      if (!paired) {
        report.findings.push_back(
            {"UnpairedMessage", "node " + std::to_string(node),
             "purification with partner " + std::to_string(partner) +
                 " sends MEAS_RESULT messages no rule there consumes"});
      }
    }
    for (const auto& sw : p.swaps) {
      for (NodeAddr dst : {sw.left, sw.right}) {
        if (dst != kNoNode && !prog.count(dst)) {
          report.findings.push_back(
              {"UnpairedMessage", "node " + std::to_string(node),
               "swap sends TRANSFER to node " + std::to_string(dst) +
                   " which has no RuleSet for this connection"});
        }
      }
    }
  }

  // Static leapfrog: adjacent path nodes that can both swap the pair
  // they share will, under message delay, both consume it.
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    NodeAddr u = path[i], v = path[i + 1];
    auto pu = prog.find(u);
    auto pv = prog.find(v);
    if (pu == prog.end() || pv == prog.end()) continue;
    bool u_takes_v = false, v_takes_u = false;
    for (const auto& sw : pu->second.swaps)
      if (detail::matches(sw.left, v) || detail::matches(sw.right, v))
        u_takes_v = true;
    for (const auto& sw : pv->second.swaps)
      if (detail::matches(sw.left, u) || detail::matches(sw.right, u))
        v_takes_u = true;
    if (u_takes_v && v_takes_u) {
      report.findings.push_back(
          {"Leapfrog",
           "nodes " + std::to_string(u) + "," + std::to_string(v),
           "both nodes hold swap rules matching the pair they share; "
           "concurrent firing consumes it twice and strands the results"});
    }
  }

  // Bounded exploration of the abstract swap plan: seed two pairs per
  // hop, apply every enabled swap/delivery in every order, and flag
  // states where an undeliverable product segment is stuck.
  std::size_t m = path.size();
  std::vector<detail::NodeProgram> by_idx(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (auto it = prog.find(path[i]); it != prog.end()) by_idx[i] = it->second;
  }
  detail::AbsState init;
  for (std::size_t i = 0; i + 1 < m; ++i) {
    init.push_back({static_cast<std::uint8_t>(i),
                    static_cast<std::uint8_t>(i + 1), false});
    init.push_back({static_cast<std::uint8_t>(i),
                    static_cast<std::uint8_t>(i + 1), false});
  }
  std::sort(init.begin(), init.end());
  std::set<detail::AbsState> seen{init};
  std::vector<detail::AbsState> frontier{init};
  bool flagged_stuck = false;
  while (!frontier.empty()) {
    if (seen.size() > state_bound) {
      report.inconclusive = true;
      break;
    }
    detail::AbsState s = std::move(frontier.back());
    frontier.pop_back();
    std::vector<detail::AbsState> next;
    // deliveries: an end-to-end segment consumed at matching end nodes
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (s[k].lo != 0 || s[k].hi != m - 1) continue;
      bool lo_ok = m == 1, hi_ok = false;
      for (NodeAddr dp : by_idx[0].deliver_partners)
        if (detail::matches(dp, path[s[k].hi])) lo_ok = true;
      for (NodeAddr dp : by_idx[m - 1].deliver_partners)
        if (detail::matches(dp, path[s[k].lo])) hi_ok = true;
      if (lo_ok && hi_ok) {
        auto t = s;
        t.erase(t.begin() + static_cast<std::ptrdiff_t>(k));
        next.push_back(std::move(t));
      }
    }
    // swaps: node n joins one segment ending at n from each side
    for (std::size_t n = 1; n + 1 < m; ++n) {
      for (const auto& sw : by_idx[n].swaps) {
        for (std::size_t a = 0; a < s.size(); ++a) {
          if (s[a].hi != n) continue;
          if (!detail::matches(sw.left, path[s[a].lo]) &&
              !detail::matches(sw.right, path[s[a].lo]))
            continue;
          for (std::size_t b = 0; b < s.size(); ++b) {
            if (s[b].lo != n) continue;
            if (!detail::matches(sw.left, path[s[b].hi]) &&
                !detail::matches(sw.right, path[s[b].hi]))
              continue;
            auto t = s;
            detail::Segment joined{s[a].lo, s[b].hi, true};
            t.erase(t.begin() + static_cast<std::ptrdiff_t>(std::max(a, b)));
            t.erase(t.begin() + static_cast<std::ptrdiff_t>(std::min(a, b)));
            t.insert(std::lower_bound(t.begin(), t.end(), joined), joined);
            next.push_back(std::move(t));
          }
        }
      }
    }
    if (next.empty()) {
      // terminal state: swapped products that are neither end-to-end
      // deliverable nor extendable are stranded
      for (const auto& seg : s) {
        if (!seg.product || flagged_stuck) continue;
        flagged_stuck = true;
        bool e2e = seg.lo == 0 && seg.hi == m - 1;
        report.findings.push_back(
            {e2e ? "Nontermination" : "Leapfrog",
             "segment " + std::to_string(path[seg.lo]) + "-" +
                 std::to_string(path[seg.hi]),
             e2e ? "an end-to-end pair exists but no delivery rule accepts it"
                 : "exploration reached a state where this swapped segment "
                   "can neither be extended nor delivered"});
      }
      continue;
    }
    for (auto& t : next) {
      if (seen.insert(t).second) frontier.push_back(std::move(t));
    }
    report.states_explored = seen.size();
  }
  report.states_explored = seen.size();
  return report;
}

}  // namespace qrs
