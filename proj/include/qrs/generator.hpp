#pragma once

// Responder-side RuleSet compilation. Given the outbound-pass path and
// per-hop link info, emit one RuleSet per path node:
//   stage 0: entanglement pumping up to a per-hop fidelity target,
//            promote on reaching it (arming a discard timer)
//   stage 1: balanced-tree entanglement swapping at interior nodes,
//            delivery at the end nodes, timer-driven discard everywhere
// Per-hop targets are waterfilled so equal effort hops share the
// purification burden evenly in Werner-parameter space.

#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qrs/connection_types.hpp"
#include "qrs/quantum.hpp"
#include "qrs/routing.hpp"
#include "qrs/ruleset.hpp"

namespace qrs {

// One entanglement swap in the execution plan: path index of the node
// performing it and the path indices it joins. Emitted leaves-first;
// the middle of the path swaps last.
struct SwapStep {
  std::size_t node;
  std::size_t left;
  std::size_t right;
  int height;  // 1 = joins two raw hops
};

namespace detail {

inline int build_swap_tree(std::size_t lo, std::size_t hi,
                           std::vector<SwapStep>& out) {
  if (hi - lo < 2) return 0;
  std::size_t mid = (lo + hi) / 2;
  int hl = build_swap_tree(lo, mid, out);
  int hr = build_swap_tree(mid, hi, out);
  int h = std::max(hl, hr) + 1;
  out.push_back({mid, lo, hi, h});
  return h;
}

// Highest fidelity reachable by pumping this hop with fresh raw pairs.
inline double pumping_ceiling(double f_raw) {
  double f = f_raw;
  for (int round = 0; round < 200; ++round) {
    double next = purify_outcome(f, f_raw).f_success;
    if (next - f < 1e-12) break;
    f = next;
  }
  return f;
}

}  // namespace detail

inline std::vector<SwapStep> plan_swaps(std::size_t n_nodes) {
  std::vector<SwapStep> out;
  detail::build_swap_tree(0, n_nodes - 1, out);
  return out;
}

// Per-hop Werner-parameter targets whose product meets the end-to-end
// requirement. Hops already at or above the common share keep their base
// fidelity; hops that cannot pump (no memory at an end) are fixed at
// base. Returns nullopt when the requirement is unreachable.
inline std::optional<std::vector<double>> waterfill_targets(
    const std::vector<LinkInfo>& hops, double min_fidelity) {
  double w_req = werner_from_fidelity(Fidelity{min_fidelity}).w;
  std::size_t n = hops.size();
  std::vector<double> target(n);
  std::vector<bool> fixed(n, false);
  double need = w_req;
  std::size_t open = n;
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = hops[i].base_fidelity;
    if (!hops[i].pumpable) {
      fixed[i] = true;
      need /= werner_from_fidelity(Fidelity{hops[i].base_fidelity}).w;
      --open;
    }
  }
  // Iteratively peel off hops whose base already exceeds the even share.
  for (;;) {
    if (open == 0) return need <= 1.0 + 1e-12 ? std::optional(target)
                                              : std::nullopt;
    if (need <= 0) return target;  // requirement below the clamp floor
    double share = std::pow(need, 1.0 / static_cast<double>(open));
    if (share > 1.0) return std::nullopt;
    bool peeled = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (fixed[i]) continue;
      double w_base = werner_from_fidelity(Fidelity{hops[i].base_fidelity}).w;
      if (w_base >= share) {
        fixed[i] = true;
        need /= w_base;
        --open;
        peeled = true;
      }
    }
    if (peeled) continue;
    double f_share = fidelity_from_werner(WernerParam{share}).value;
    for (std::size_t i = 0; i < n; ++i) {
      if (fixed[i]) continue;
      if (f_share > detail::pumping_ceiling(hops[i].base_fidelity) + 1e-12) {
        return std::nullopt;  // pumping saturates below the needed share
      }
      target[i] = f_share;
    }
    return target;
  }
}

struct GeneratedConnection {
  std::map<NodeAddr, RuleSet> rulesets;       // one per path node
  std::vector<double> hop_targets;            // stage-0 fidelity target per hop
  std::vector<SwapStep> swaps;                // execution plan, leaves first
  std::vector<SimTime> discard_timers;        // per path node
  std::string error;                          // non-empty on failure
  bool ok() const { return error.empty(); }
};

inline constexpr std::uint16_t kDiscardTimerId = 1;

// Compile the two-stage RuleSets for one connection. `end_measures`
// marks path ends whose delivery is an immediate Z-basis measurement
// (memoryless end nodes) rather than a hand-off to the application.
inline GeneratedConnection generate_rulesets(const ConnectionRequest& rq,
                                             bool initiator_measures = false,
                                             bool responder_measures = false) {
  GeneratedConnection out;
  const auto& path = rq.path;
  const auto& hops = rq.accumulated;
  if (path.size() < 2 || hops.size() + 1 != path.size()) {
    out.error = "malformed request: path/link info mismatch";
    return out;
  }
  auto targets = waterfill_targets(hops, rq.requirements.min_fidelity);
  if (!targets) {
    out.error = "required fidelity " +
                std::to_string(rq.requirements.min_fidelity) +
                " unreachable on this path";
    return out;
  }
  out.hop_targets = *targets;
  out.swaps = plan_swaps(path.size());

  // Discard timers: deeper tree positions hold pairs longer, so their
  // timers must be longer; every timer must also dwarf both the longest
  // classical latency on the path and the slowest hop's pair interval,
  // or discards would race the very messages that consume the pairs.
  SimTime lat_total = 0;
  double slowest = 0.0;
  for (const auto& h : hops) {
    lat_total += h.one_way_latency;
    slowest = std::max(slowest, h.seconds_per_pair);
  }
  int root_height = 0;
  std::vector<int> height(path.size(), 0);
  for (const auto& s : out.swaps) {
    height[s.node] = s.height;
    root_height = std::max(root_height, s.height);
  }
  height.front() = height.back() = root_height + 1;
  SimTime wait_floor = seconds_to_ps(50.0 * slowest);
  out.discard_timers.resize(path.size());
  for (std::size_t i = 0; i < path.size(); ++i) {
    out.discard_timers[i] =
        (height[i] + 2) * 2 * std::max<SimTime>(lat_total, 1) + wait_floor;
  }

  // Per-node swap partners from the plan.
  std::map<std::size_t, std::pair<NodeAddr, NodeAddr>> swap_partners;
  for (const auto& s : out.swaps) {
    swap_partners[s.node] = {path[s.left], path[s.right]};
  }

  for (std::size_t i = 0; i < path.size(); ++i) {
    RuleSet rs;
    rs.ruleset_id = rq.connection_id * 1000 + i;
    rs.connection_id = rq.connection_id;
    rs.owner_node = path[i];
    std::uint16_t rule_id = 0;

    // stage 0: pump each adjacent hop to its target, then promote
    Stage pump;
    pump.stage_id = 0;
    auto add_hop_rules = [&](std::size_t hop, NodeAddr neighbor) {
      double target = out.hop_targets[hop];
      bool needs_pumping =
          hops[hop].pumpable &&
          target > hops[hop].base_fidelity + 1e-12;
      Rule promote;
      promote.rule_id = rule_id++;
      promote.conditions.push_back(
          ResClause{neighbor, needs_pumping ? target : 0.0, 1});
      promote.actions.push_back(
          SetTimerAction{kDiscardTimerId, out.discard_timers[i]});
      promote.actions.push_back(PromoteAction{1, {}});
      pump.rules.push_back(std::move(promote));
      if (needs_pumping) {
        Rule purify;
        purify.rule_id = rule_id++;
        purify.conditions.push_back(ResClause{neighbor, 0.0, 2});
        purify.actions.push_back(QcircAction{Circuit::PURIFY_PAIR});
        pump.rules.push_back(std::move(purify));
      }
    };
    if (i > 0) add_hop_rules(i - 1, path[i - 1]);
    if (i + 1 < path.size()) add_hop_rules(i, path[i + 1]);
    rs.stages.push_back(std::move(pump));

    // stage 1: swap or deliver, and the timer-driven discard
    Stage act;
    act.stage_id = 1;
    if (auto sp = swap_partners.find(i); sp != swap_partners.end()) {
      Rule swap;
      swap.rule_id = rule_id++;
      swap.conditions.push_back(ResClause{sp->second.first, 0.0, 1});
      swap.conditions.push_back(ResClause{sp->second.second, 0.0, 1});
      swap.actions.push_back(QcircAction{Circuit::SWAP});
      act.rules.push_back(std::move(swap));
    } else if (i == 0 || i + 1 == path.size()) {
      NodeAddr far = i == 0 ? path.back() : path.front();
      bool measures = i == 0 ? initiator_measures : responder_measures;
      Rule deliver;
      deliver.rule_id = rule_id++;
      deliver.conditions.push_back(
          ResClause{far, rq.requirements.min_fidelity, 1});
      if (measures) {
        deliver.actions.push_back(MeasAction{MeasBasis::Z, {}});
      } else {
        deliver.actions.push_back(PromoteAction{kDeliveryStage, {}});
      }
      act.rules.push_back(std::move(deliver));
    }
    Rule discard;
    discard.rule_id = rule_id++;
    discard.conditions.push_back(TimerClause{kDiscardTimerId});
    discard.actions.push_back(FreeAction{true, {}});
    act.rules.push_back(std::move(discard));
    rs.stages.push_back(std::move(act));

    out.rulesets[path[i]] = std::move(rs);
  }
  return out;
}

}  // namespace qrs
