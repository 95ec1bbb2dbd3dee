#pragma once

// The simulator proper: per-node rule engines and the link layer that
// feeds them, wired to the deterministic kernel. Connection setup and
// teardown (the control plane) is layered on top in connection.hpp.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "qrs/connection_types.hpp"
#include "qrs/kernel.hpp"
#include "qrs/link.hpp"
#include "qrs/registry.hpp"
#include "qrs/routing.hpp"
#include "qrs/ruleset.hpp"
#include "qrs/wire.hpp"

namespace qrs {

// One half of a pair as held (and believed in) by a node.
struct Resource {
  ExternalName name;
  NodeAddr partner = kNoNode;
  ConnectionId conn = 0;  // 0 = not yet assigned to a connection
  std::uint16_t stage = 0;
  double est_f = 1.0;  // local belief, decays like the real pair
  SimTime est_time = 0;
  double est_rate = 0.0;
  SimTime birth = 0;
  bool busy = false;  // claimed by an in-flight purification round
  bool holds_qubit = true;
  LinkId origin_link;
  std::uint64_t staleness_event = 0;
};

// A pair handed to the application, with belief and truth side by side.
struct DeliveryRecord {
  SimTime time = 0;
  ConnectionId conn = 0;
  ExternalName name;
  NodeAddr partner = kNoNode;
  double est_fidelity = 0.0;
  double true_fidelity = 0.0;
  bool measured = false;
  int outcome = 0;
};

struct NodeStats {
  std::uint64_t rules_fired = 0;
  std::uint64_t purify_rounds = 0;  // locally initiated
  std::uint64_t purify_kept = 0;
  std::uint64_t purify_dropped = 0;
  std::uint64_t swaps = 0;
  std::uint64_t freed = 0;
  std::uint64_t stale_freed = 0;
  std::uint64_t delivered = 0;
  std::uint64_t faults = 0;  // protocol faults observed at this node
  std::uint64_t messages_rx = 0;
};

struct NodeRuntime {
  NodeAddr addr = kNoNode;
  NodeCapability cap;
  int qubits_in_use = 0;
  std::map<ExternalName, Resource> resources;
  std::map<ConnectionId, RuleSet> rulesets;
  // expired-timer tokens awaiting a TIMER-conditioned rule
  std::map<std::pair<ConnectionId, std::uint16_t>,
           std::deque<std::vector<ExternalName>>>
      timer_tokens;
  // purification rounds: fired locally / partner result received
  struct PurifyWait {
    bool local = false;
    bool remote = false;
    ConnectionId conn = 0;
  };
  std::map<std::pair<ExternalName, ExternalName>, PurifyWait> purify_wait;
  std::uint64_t mint_seq = 0;
  std::vector<DeliveryRecord> deliveries;
  NodeStats stats;
  // single-active-interface alternation
  std::vector<LinkId> shared_interface_links;
  std::size_t active_interface = 0;
  SimTime last_interface_use = -1;

  int free_qubits() const { return cap.memory_qubits - qubits_in_use; }
};

struct LinkStats {
  std::uint64_t attempts = 0;
  std::uint64_t successes = 0;
  std::uint64_t stalls = 0;           // blocked on memory occupancy
  std::uint64_t interface_skips = 0;  // blocked by single-active interface
};

struct LinkRuntime {
  LinkSpec spec;
  LinkId id;
  LinkStats stats;
  std::map<NodeAddr, int> live_count;  // live pairs per end
  bool running = false;
};

// Control-plane message envelope; payloads are wire-encoded so that a
// test can inspect exactly what crosses network boundaries.
struct ControlMessage {
  enum class Kind : std::uint8_t {
    ConnectionSetup,   // outbound pass, carries an encoded request
    RuleSetInstall,    // return pass, per-node encoded RuleSets
    SetupReject,
    SetupComplete,
    Teardown,
  };
  Kind kind = Kind::ConnectionSetup;
  ConnectionId connection_id = 0;
  NodeAddr sender = kNoNode;
  std::vector<std::uint8_t> payload;  // encoded ConnectionRequest
  std::vector<std::pair<NodeAddr, std::vector<std::uint8_t>>> ruleset_blobs;
  std::string reason;
};

struct ConnStats {
  std::uint64_t assigned_pairs = 0;
  std::uint64_t spliced = 0;  // halves handed up to a parent connection
  std::uint64_t delivered_initiator = 0;
  std::uint64_t delivered_responder = 0;
  std::uint64_t freed = 0;
  double sum_delivered_est = 0.0;
  double sum_delivered_true = 0.0;
};

class Simulator {
 public:
  explicit Simulator(std::uint64_t seed, MuxDiscipline mux = MuxDiscipline::StatMux)
      : kernel(seed), mux_state(mux) {}

  SimKernel kernel;
  ClassicalFabric fabric;
  PairRegistry registry;
  MuxState mux_state;
  std::map<NodeAddr, NodeRuntime> nodes;
  std::vector<LinkRuntime> links;
  std::map<ConnectionId, ConnStats> conn_stats;
  // child connection -> parent: deliveries of the child re-enter the
  // parent's stage 0 at the border instead of reaching an application
  std::map<ConnectionId, ConnectionId> splice_parent;
  SimTime staleness_window = 10 * 1000 * kPsPerMicrosecond;  // 10 ms
  std::uint64_t protocol_faults = 0;
  std::ostream* trace_out = nullptr;
  // invoked on every application delivery (connection layer hooks this)
  std::function<void(NodeAddr, const DeliveryRecord&)> delivery_hook;

  NodeRuntime& add_node(NodeAddr addr, NodeCapability cap) {
    NodeRuntime& nd = nodes[addr];
    nd.addr = addr;
    nd.cap = cap;
    return nd;
  }

  LinkRuntime& add_link(const LinkSpec& spec) {
    spec.check();
    links.push_back({spec, LinkId(spec.node_a, spec.node_b), {}, {}, false});
    double dist_m = spec.length_km * 1000.0;
    fabric.add_channel(spec.node_a, spec.node_b, dist_m);
    for (NodeAddr end : {spec.node_a, spec.node_b}) {
      NodeRuntime& nd = node(end);
      if (nd.cap.single_active_interface) {
        nd.shared_interface_links.push_back(links.back().id);
      }
    }
    return links.back();
  }

  NodeRuntime& node(NodeAddr addr) {
    auto it = nodes.find(addr);
    if (it == nodes.end()) {
      throw std::logic_error("unknown node " + std::to_string(addr));
    }
    return it->second;
  }

  void start() {
    for (std::size_t i = 0; i < links.size(); ++i) {
      if (!links[i].running) {
        links[i].running = true;
        schedule_attempt(i, kernel.now());
      }
    }
  }

  SimKernel::RunStats run_until(SimTime t) { return kernel.run_until(t); }

  // ---- trace ----

  void trace(const std::string& kind, NodeAddr src, NodeAddr dst,
             const std::string& detail) {
    if (!trace_out) return;
    *trace_out << kernel.now() << " " << kind << " " << src << " " << dst
               << " " << detail << "\n";
  }

  // ---- link layer ----

  void schedule_attempt(std::size_t link_idx, SimTime at) {
    kernel.schedule(at, EventKind::LinkAttempt, links[link_idx].spec.node_a,
                    [this, link_idx] { attempt(link_idx); });
  }

  void attempt(std::size_t link_idx) {
    LinkRuntime& lr = links[link_idx];
    schedule_attempt(link_idx, kernel.now() + attempt_period_ps(lr.spec));
    // a node with a single active interface serves one link per cycle,
    // alternating between its links
    for (NodeAddr end : {lr.spec.node_a, lr.spec.node_b}) {
      NodeRuntime& nd = node(end);
      if (nd.shared_interface_links.size() <= 1) continue;
      if (nd.last_interface_use == kernel.now() ||
          nd.shared_interface_links[nd.active_interface %
                                    nd.shared_interface_links.size()] !=
              lr.id) {
        lr.stats.interface_skips++;
        return;
      }
    }
    for (NodeAddr end : {lr.spec.node_a, lr.spec.node_b}) {
      NodeRuntime& nd = node(end);
      if (nd.shared_interface_links.size() > 1) {
        nd.active_interface++;
        nd.last_interface_use = kernel.now();
      }
    }
    // both ends must have room before the attempt can be wired up
    for (NodeAddr end : {lr.spec.node_a, lr.spec.node_b}) {
      NodeRuntime& nd = node(end);
      if (!nd.cap.has_memory()) continue;
      if (nd.free_qubits() < 1 ||
          lr.live_count[end] >= lr.spec.qubit_capacity) {
        lr.stats.stalls++;
        return;
      }
    }
    lr.stats.attempts++;
    if (!kernel.bernoulli(attempt_success_probability(lr.spec))) return;
    lr.stats.successes++;
    // reserve memory now; the pair materializes after the herald delay
    for (NodeAddr end : {lr.spec.node_a, lr.spec.node_b}) {
      NodeRuntime& nd = node(end);
      if (nd.cap.has_memory()) nd.qubits_in_use++;
      lr.live_count[end]++;
    }
    NodeAddr minter = lr.spec.midpoint != kNoNode
                          ? lr.spec.midpoint
                          : std::min(lr.spec.node_a, lr.spec.node_b);
    ExternalName name{minter, kernel.now(), ++link_mint_seq_};
    SimTime born = kernel.now() + link_notify_delay_ps(lr.spec);
    kernel.schedule(born, EventKind::LinkAttempt, lr.spec.node_a,
                    [this, link_idx, name] { materialize(link_idx, name); });
  }

  void materialize(std::size_t link_idx, const ExternalName& name) {
    LinkRuntime& lr = links[link_idx];
    NodeRuntime& na = node(lr.spec.node_a);
    NodeRuntime& nb = node(lr.spec.node_b);
    registry.create(name, na.addr, nb.addr, lr.spec.base_fidelity,
                    na.cap.decay_rate_per_ps(), nb.cap.decay_rate_per_ps(),
                    kernel.now());
    auto conn = mux_state.assign(lr.id, kernel, [&](ConnectionId c) {
      int n = 0;
      for (const auto& [nm, r] : na.resources) {
        if (r.conn == c && r.origin_link == lr.id) ++n;
      }
      return n;
    });
    trace("pair", na.addr, nb.addr,
          name.str() + " conn=" + std::to_string(conn.value_or(0)));
    double est = std::min(1.0, lr.spec.base_fidelity + lr.spec.est_fidelity_bias);
    for (auto [self, other] :
         {std::pair{na.addr, nb.addr}, std::pair{nb.addr, na.addr}}) {
      NodeRuntime& nd = node(self);
      Resource r;
      r.name = name;
      r.partner = other;
      r.conn = conn.value_or(0);
      r.stage = 0;
      r.est_f = est;
      r.est_time = kernel.now();
      r.est_rate = registry.get(name).rates[0] + registry.get(name).rates[1];
      r.birth = kernel.now();
      r.holds_qubit = nd.cap.has_memory();
      r.origin_link = lr.id;
      bool governed = r.conn != 0 && nd.rulesets.count(r.conn) != 0;
      if (!governed) {
        // free pairs nobody claims before they rot in memory
        r.staleness_event = kernel.schedule(
            kernel.now() + staleness_window, EventKind::TimerExpiry, self,
            [this, self, name] { staleness_check(self, name); });
      }
      nd.resources[name] = r;
    }
    if (conn) conn_stats[*conn].assigned_pairs++;
    evaluate(na);
    evaluate(nb);
  }

  void staleness_check(NodeAddr addr, const ExternalName& name) {
    NodeRuntime& nd = node(addr);
    auto it = nd.resources.find(name);
    if (it == nd.resources.end()) return;
    Resource& r = it->second;
    if (r.conn != 0 && nd.rulesets.count(r.conn)) return;  // adopted since
    if (r.busy) return;
    nd.stats.stale_freed++;
    remove_resource(nd, name, HalfFate::Freed);
  }

  // ---- resource bookkeeping ----

  double est_fidelity(Resource& r, SimTime now) {
    if (now > r.est_time) {
      r.est_f = decohere_rate(r.est_f, double(now - r.est_time), r.est_rate);
      r.est_time = now;
    }
    return r.est_f;
  }

  void remove_resource(NodeRuntime& nd, const ExternalName& name,
                       HalfFate fate) {
    auto it = nd.resources.find(name);
    if (it == nd.resources.end()) return;
    Resource& r = it->second;
    registry.terminate_half(name, nd.addr, fate, kernel.now());
    if (r.holds_qubit) nd.qubits_in_use--;
    if (r.staleness_event) kernel.cancel(r.staleness_event);
    for (auto& lr : links) {
      if (lr.id == r.origin_link) {
        auto lc = lr.live_count.find(nd.addr);
        if (lc != lr.live_count.end() && lc->second > 0) lc->second--;
      }
    }
    nd.resources.erase(it);
  }

  void fault(NodeRuntime& nd, const std::string& what) {
    nd.stats.faults++;
    protocol_faults++;
    trace("fault", nd.addr, kNoNode, what);
  }

  // ---- messaging ----

  void send(NodeAddr src, NodeAddr dst, ProtocolMessage msg) {
    msg.sender = src;
    SimTime lat = fabric.latency(src, dst);
    trace(std::string("send_") + to_string(msg.kind), src, dst,
          msg.names.empty() ? "" : msg.names.front().str());
    kernel.schedule(kernel.now() + lat, EventKind::MessageDelivery, dst,
                    [this, dst, msg = std::move(msg)] { receive(dst, msg); });
  }

  void receive(NodeAddr addr, const ProtocolMessage& msg) {
    NodeRuntime& nd = node(addr);
    nd.stats.messages_rx++;
    switch (msg.kind) {
      case MessageKind::FREE:
        for (const auto& name : msg.names) {
          auto it = nd.resources.find(name);
          if (it == nd.resources.end()) continue;  // idempotent
          if (it->second.busy) {
            // partner freed a pair we are purifying with: abandon round
            abandon_purify_with(nd, name);
          }
          nd.stats.freed++;
          if (auto cs = conn_stats.find(it->second.conn); cs != conn_stats.end())
            cs->second.freed++;
          remove_resource(nd, name, HalfFate::Freed);
        }
        break;
      case MessageKind::UPDATE:
        // Pauli-frame correction; a Werner state is invariant under it,
        // so this only validates the name
        if (!msg.names.empty() && !nd.resources.count(msg.names.front())) {
          fault(nd, "UPDATE for unknown resource " + msg.names.front().str());
        }
        break;
      case MessageKind::MEAS_RESULT:
        on_meas_result(nd, msg);
        break;
      case MessageKind::TRANSFER:
        on_transfer(nd, msg);
        break;
    }
    evaluate(nd);
  }

  // ---- rule engine ----

  void install_ruleset(NodeAddr addr, RuleSet rs) {
    NodeRuntime& nd = node(addr);
    ConnectionId conn = rs.connection_id;
    nd.rulesets[conn] = std::move(rs);
    trace("install", addr, addr, "conn=" + std::to_string(conn));
    evaluate(nd);
  }

  void uninstall_ruleset(NodeAddr addr, ConnectionId conn) {
    NodeRuntime& nd = node(addr);
    if (!nd.rulesets.erase(conn)) return;
    trace("uninstall", addr, addr, "conn=" + std::to_string(conn));
    std::vector<ExternalName> mine;
    for (const auto& [name, r] : nd.resources) {
      if (r.conn == conn) mine.push_back(name);
    }
    for (const auto& name : mine) {
      nd.stats.freed++;
      conn_stats[conn].freed++;
      remove_resource(nd, name, HalfFate::Freed);
    }
    for (auto it = nd.timer_tokens.begin(); it != nd.timer_tokens.end();) {
      it = it->first.first == conn ? nd.timer_tokens.erase(it) : ++it;
    }
  }

  void evaluate(NodeRuntime& nd) {
    if (in_evaluate_) return;  // re-entrancy from action side effects
    in_evaluate_ = true;
    for (int guard = 0; guard < 100000; ++guard) {
      bool fired = false;
      for (auto& [conn, rs] : nd.rulesets) {
        for (std::size_t si = 0; si < rs.stages.size(); ++si) {
          if (fire_one(nd, rs, static_cast<std::uint16_t>(si))) {
            fired = true;
          }
        }
      }
      if (!fired) {
        in_evaluate_ = false;
        return;
      }
    }
    in_evaluate_ = false;
    fault(nd, "rule evaluation did not reach a fixpoint");
  }

  // First-match-fires-once over one stage's rules.
  bool fire_one(NodeRuntime& nd, RuleSet& rs, std::uint16_t si) {
    Stage& st = rs.stages[si];
    for (Rule& rule : st.rules) {
      std::vector<ExternalName> matched;
      std::optional<std::vector<ExternalName>> token;
      if (match_rule(nd, rs, si, rule, matched, token)) {
        execute(nd, rs, si, rule, matched, token);
        nd.stats.rules_fired++;
        return true;
      }
    }
    return false;
  }

  bool match_rule(NodeRuntime& nd, RuleSet& rs, std::uint16_t si,
                  const Rule& rule, std::vector<ExternalName>& matched,
                  std::optional<std::vector<ExternalName>>& token) {
    Stage& st = rs.stages[si];
    for (const auto& c : rule.conditions) {
      if (const auto* cmp = std::get_if<CmpClause>(&c)) {
        auto v = st.variables.find(cmp->variable);
        std::int64_t val = v == st.variables.end() ? 0 : v->second;
        bool ok = false;
        switch (cmp->op) {
          case CmpOp::EQ: ok = val == cmp->value; break;
          case CmpOp::LT: ok = val < cmp->value; break;
          case CmpOp::GT: ok = val > cmp->value; break;
          case CmpOp::LE: ok = val <= cmp->value; break;
          case CmpOp::GE: ok = val >= cmp->value; break;
        }
        if (!ok) return false;
      } else if (const auto* tm = std::get_if<TimerClause>(&c)) {
        auto key = std::make_pair(rs.connection_id, tm->timer_id);
        auto q = nd.timer_tokens.find(key);
        if (q == nd.timer_tokens.end()) return false;
        // drop tokens whose resources are all gone or moved on
        while (!q->second.empty()) {
          std::vector<ExternalName> live;
          for (const auto& name : q->second.front()) {
            auto it = nd.resources.find(name);
            if (it != nd.resources.end() &&
                it->second.conn == rs.connection_id &&
                it->second.stage == si && !it->second.busy) {
              live.push_back(name);
            }
          }
          if (!live.empty()) {
            token = std::move(live);
            break;
          }
          q->second.pop_front();
        }
        if (!token) {
          if (q->second.empty()) nd.timer_tokens.erase(q);
          return false;
        }
      } else if (const auto* res = std::get_if<ResClause>(&c)) {
        // oldest qualifying resources first, deterministic tie-break
        std::vector<const Resource*> pool;
        for (auto& [name, r] : nd.resources) {
          if (r.conn != rs.connection_id || r.stage != si || r.busy) continue;
          if (!res->wildcard() && r.partner != res->partner) continue;
          bool taken = false;
          for (const auto& m : matched) taken |= m == name;
          if (taken) continue;
          if (est_fidelity(r, kernel.now()) + 1e-12 < res->min_fidelity)
            continue;
          pool.push_back(&r);
        }
        if (pool.size() < res->count) return false;
        std::sort(pool.begin(), pool.end(),
                  [](const Resource* a, const Resource* b) {
                    if (a->birth != b->birth) return a->birth < b->birth;
                    return a->name < b->name;
                  });
        for (std::uint8_t k = 0; k < res->count; ++k) {
          matched.push_back(pool[k]->name);
        }
      }
    }
    return true;
  }

  void execute(NodeRuntime& nd, RuleSet& rs, std::uint16_t si,
               const Rule& rule, const std::vector<ExternalName>& matched,
               std::optional<std::vector<ExternalName>>& token) {
    Stage& st = rs.stages[si];
    // TIMER-conditioned rules act on the expired token's survivors
    const std::vector<ExternalName>& subjects = token ? *token : matched;
    if (token) {
      auto key = std::make_pair(rs.connection_id, kTokenTimerIdOf(rule));
      auto q = nd.timer_tokens.find(key);
      if (q != nd.timer_tokens.end()) {
        q->second.pop_front();
        if (q->second.empty()) nd.timer_tokens.erase(q);
      }
    }
    auto pick = [&](const std::vector<std::uint8_t>& refs) {
      std::vector<ExternalName> out;
      if (refs.empty()) return subjects;
      for (auto i : refs) {
        if (i < subjects.size()) out.push_back(subjects[i]);
      }
      return out;
    };
    for (const auto& a : rule.actions) {
      if (const auto* t = std::get_if<SetTimerAction>(&a)) {
        arm_timer(nd, rs.connection_id, t->timer_id, t->duration, subjects);
      } else if (const auto* p = std::get_if<PromoteAction>(&a)) {
        for (const auto& name : pick(p->refs)) {
          auto it = nd.resources.find(name);
          if (it == nd.resources.end()) continue;
          if (p->target_stage == kDeliveryStage) {
            deliver(nd, name);
          } else {
            it->second.stage = p->target_stage;
          }
        }
      } else if (const auto* f = std::get_if<FreeAction>(&a)) {
        for (const auto& name : pick(f->refs)) {
          auto it = nd.resources.find(name);
          if (it == nd.resources.end()) continue;
          NodeAddr partner = it->second.partner;
          nd.stats.freed++;
          if (auto cs = conn_stats.find(it->second.conn);
              cs != conn_stats.end())
            cs->second.freed++;
          remove_resource(nd, name, HalfFate::Freed);
          if (f->notify_partner) {
            ProtocolMessage msg;
            msg.kind = MessageKind::FREE;
            msg.connection_id = rs.connection_id;
            msg.names = {name};
            send(nd.addr, partner, std::move(msg));
          }
        }
      } else if (const auto* s = std::get_if<SetAction>(&a)) {
        if (s->is_delta) {
          st.variables[s->variable] += s->value;
        } else {
          st.variables[s->variable] = s->value;
        }
      } else if (const auto* m = std::get_if<MeasAction>(&a)) {
        for (const auto& name : pick(m->refs)) {
          measure_and_deliver(nd, name, m->basis);
        }
      } else if (const auto* q = std::get_if<QcircAction>(&a)) {
        if (q->circuit == Circuit::PURIFY_PAIR) {
          if (subjects.size() == 2) {
            start_purify(nd, rs.connection_id, subjects[0], subjects[1]);
          } else {
            fault(nd, "PURIFY_PAIR without exactly two matched resources");
          }
        } else {
          if (subjects.size() == 2) {
            do_swap(nd, rs.connection_id, subjects[0], subjects[1]);
          } else {
            fault(nd, "SWAP without exactly two matched resources");
          }
        }
      } else if (const auto* snd = std::get_if<SendAction>(&a)) {
        ProtocolMessage msg;
        msg.kind = snd->kind;
        msg.connection_id = rs.connection_id;
        msg.names = subjects;
        send(nd.addr, snd->destination, std::move(msg));
      }
    }
  }

  static std::uint16_t kTokenTimerIdOf(const Rule& rule) {
    for (const auto& c : rule.conditions) {
      if (const auto* tm = std::get_if<TimerClause>(&c)) return tm->timer_id;
    }
    return 0;
  }

  void arm_timer(NodeRuntime& nd, ConnectionId conn, std::uint16_t timer_id,
                 SimTime duration, std::vector<ExternalName> names) {
    NodeAddr addr = nd.addr;
    kernel.schedule(kernel.now() + duration, EventKind::TimerExpiry, addr,
                    [this, addr, conn, timer_id, names = std::move(names)] {
                      NodeRuntime& n = node(addr);
                      n.timer_tokens[{conn, timer_id}].push_back(names);
                      evaluate(n);
                    });
  }

  // ---- delivery ----

  void deliver(NodeRuntime& nd, const ExternalName& name) {
    auto it = nd.resources.find(name);
    if (it == nd.resources.end()) return;
    Resource& r = it->second;
    if (auto sp = splice_parent.find(r.conn); sp != splice_parent.end()) {
      splice(nd, r, sp->second);
      return;
    }
    DeliveryRecord rec;
    rec.time = kernel.now();
    rec.conn = r.conn;
    rec.name = name;
    rec.partner = r.partner;
    rec.est_fidelity = est_fidelity(r, kernel.now());
    rec.true_fidelity = registry.fidelity(name, kernel.now());
    finish_delivery(nd, name, rec);
  }

  void measure_and_deliver(NodeRuntime& nd, const ExternalName& name,
                           MeasBasis basis) {
    auto it = nd.resources.find(name);
    if (it == nd.resources.end()) return;
    Resource& r = it->second;
    MeasBasis b = basis;
    if (b == MeasBasis::RANDOM) {
      b = kernel.bernoulli(0.5) ? MeasBasis::X : MeasBasis::Z;
    }
    DeliveryRecord rec;
    rec.time = kernel.now();
    rec.conn = r.conn;
    rec.name = name;
    rec.partner = r.partner;
    rec.est_fidelity = est_fidelity(r, kernel.now());
    rec.true_fidelity = registry.fidelity(name, kernel.now());
    rec.measured = true;
    rec.outcome = registry.measure(name, nd.addr, b, kernel.now(), kernel);
    finish_delivery(nd, name, rec);
  }

  void finish_delivery(NodeRuntime& nd, const ExternalName& name,
                       const DeliveryRecord& rec) {
    nd.stats.delivered++;
    auto& cs = conn_stats[rec.conn];
    const PairState& p = registry.get(name);
    // count once per end; "initiator" bucket is the smaller address
    if (nd.addr == std::min(p.ends[0], p.ends[1])) {
      cs.delivered_initiator++;
    } else {
      cs.delivered_responder++;
    }
    cs.sum_delivered_est += rec.est_fidelity;
    cs.sum_delivered_true += rec.true_fidelity;
    trace("deliver", nd.addr, rec.partner,
          name.str() + " est=" + std::to_string(rec.est_fidelity) +
              " true=" + std::to_string(rec.true_fidelity));
    nd.deliveries.push_back(rec);
    remove_resource(nd, name, HalfFate::Delivered);
    if (delivery_hook) delivery_hook(nd.addr, rec);
  }

  // A child connection's end-to-end pair becomes a parent-layer link
  // pair at this border node.
  void splice(NodeRuntime& nd, Resource& r, ConnectionId parent) {
    conn_stats[r.conn].spliced++;
    trace("splice", nd.addr, r.partner,
          r.name.str() + " conn=" + std::to_string(r.conn) + "->" +
              std::to_string(parent));
    r.conn = parent;
    r.stage = 0;
    // order by the pair's creation time so both borders agree
    r.birth = registry.get(r.name).created;
    if (!nd.rulesets.count(parent)) {
      NodeAddr self = nd.addr;
      ExternalName name = r.name;
      r.staleness_event = kernel.schedule(
          kernel.now() + staleness_window, EventKind::TimerExpiry, self,
          [this, self, name] { staleness_check(self, name); });
    }
  }

  // ---- purification ----

  static std::pair<ExternalName, ExternalName> purify_key(
      const ExternalName& a, const ExternalName& b) {
    return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  }

  void start_purify(NodeRuntime& nd, ConnectionId conn, const ExternalName& a,
                    const ExternalName& b) {
    auto [keep, sac] = purify_key(a, b);  // both ends keep the same pair
    Resource& rk = nd.resources.at(keep);
    Resource& rs = nd.resources.at(sac);
    rk.busy = rs.busy = true;
    nd.stats.purify_rounds++;
    const PurifyRecord& rec =
        registry.purify_shared(keep, sac, kernel.now(), kernel);
    if (rec.conflicted) {
      fault(nd, "purification round on an already-claimed pair");
    }
    int side = rec.conflicted ? 0 : registry.get(keep).end_index(nd.addr);
    ProtocolMessage msg;
    msg.kind = MessageKind::MEAS_RESULT;
    msg.connection_id = conn;
    msg.names = {keep, sac};
    msg.parity_bit = rec.parity[side];
    send(nd.addr, rk.partner, std::move(msg));
    auto& wait = nd.purify_wait[{keep, sac}];
    wait.local = true;
    wait.conn = conn;
    if (wait.remote) resolve_purify(nd, {keep, sac});
  }

  void on_meas_result(NodeRuntime& nd, const ProtocolMessage& msg) {
    if (msg.names.size() != 2) {
      fault(nd, "malformed MEAS_RESULT");
      return;
    }
    auto key = purify_key(msg.names[0], msg.names[1]);
    auto& wait = nd.purify_wait[key];
    wait.remote = true;
    if (wait.conn == 0) wait.conn = msg.connection_id;
    if (wait.local) {
      resolve_purify(nd, key);
    }
    // otherwise the local rule fires on a later evaluation pass (the
    // halves may still be in flight across a border)
  }

  void resolve_purify(NodeRuntime& nd,
                      const std::pair<ExternalName, ExternalName>& key) {
    const auto& [keep, sac] = key;
    const PurifyRecord& rec =
        registry.purify_shared(keep, sac, kernel.now(), kernel);
    Resource& rk = nd.resources.at(keep);
    Resource& rs = nd.resources.at(sac);
    est_fidelity(rk, kernel.now());
    est_fidelity(rs, kernel.now());
    if (rec.conflicted) {
      nd.stats.purify_dropped++;
      remove_resource(nd, sac, HalfFate::Freed);
      remove_resource(nd, keep, HalfFate::Freed);
    } else if (rec.success) {
      rk.est_f = purify_outcome(rk.est_f, rs.est_f).f_success;
      rk.busy = false;
      nd.stats.purify_kept++;
      remove_resource(nd, sac, HalfFate::PurifySacrificed);
    } else {
      nd.stats.purify_dropped++;
      remove_resource(nd, sac, HalfFate::PurifySacrificed);
      remove_resource(nd, keep, HalfFate::PurifyDiscarded);
    }
    nd.purify_wait.erase(key);
  }

  void abandon_purify_with(NodeRuntime& nd, const ExternalName& name) {
    for (auto it = nd.purify_wait.begin(); it != nd.purify_wait.end();) {
      if (it->first.first == name || it->first.second == name) {
        const auto& [keep, sac] = it->first;
        for (const auto& n : {keep, sac}) {
          auto r = nd.resources.find(n);
          if (r != nd.resources.end()) r->second.busy = false;
        }
        it = nd.purify_wait.erase(it);
      } else {
        ++it;
      }
    }
  }

  // ---- entanglement swapping ----

  void do_swap(NodeRuntime& nd, ConnectionId conn, const ExternalName& left,
               const ExternalName& right) {
    Resource rl = nd.resources.at(left);
    Resource rr = nd.resources.at(right);
    double el = est_fidelity(nd.resources.at(left), kernel.now());
    double er = est_fidelity(nd.resources.at(right), kernel.now());
    ExternalName new_name{nd.addr, kernel.now(), ++nd.mint_seq};
    PairState& np = registry.swap(left, right, new_name, nd.addr, kernel.now());
    nd.stats.swaps++;
    trace("swap", nd.addr, kNoNode,
          left.str() + "+" + right.str() + "->" + new_name.str());
    // consumed locally; far halves are renamed by the TRANSFERs below
    if (rl.holds_qubit) nd.qubits_in_use--;
    if (rr.holds_qubit) nd.qubits_in_use--;
    for (const auto& old : {left, right}) {
      auto it = nd.resources.find(old);
      for (auto& lnk : links) {
        if (lnk.id == it->second.origin_link) {
          auto lc = lnk.live_count.find(nd.addr);
          if (lc != lnk.live_count.end() && lc->second > 0) lc->second--;
        }
      }
      nd.resources.erase(it);
    }
    double est_new = swap_fidelity(el, er);
    // the Bell-state measurement outcome picks a random Pauli frame;
    // one far end applies the correction
    Pauli frame = static_cast<Pauli>(kernel.uniform_int(4));
    SimTime birth = std::min(rl.birth, rr.birth);
    NodeAddr far_l = np.ends[0];
    NodeAddr far_r = np.ends[1];
    auto make_transfer = [&](const ExternalName& old_name, NodeAddr to,
                             NodeAddr new_partner, bool corrects) {
      ProtocolMessage msg;
      msg.kind = MessageKind::TRANSFER;
      msg.connection_id = conn;
      msg.names = {old_name};
      msg.new_name = new_name;
      msg.new_partner = new_partner;
      msg.est_fidelity = est_new;
      msg.has_correction = corrects;
      msg.correction = corrects ? frame : Pauli::I;
      msg.round = static_cast<std::uint32_t>(birth & 0xFFFFFFFF);
      send(nd.addr, to, std::move(msg));
    };
    make_transfer(left, far_l, far_r, true);
    make_transfer(right, far_r, far_l, false);
  }

  void on_transfer(NodeRuntime& nd, const ProtocolMessage& msg) {
    if (msg.names.size() != 1) {
      fault(nd, "malformed TRANSFER");
      return;
    }
    const ExternalName& old_name = msg.names.front();
    auto it = nd.resources.find(old_name);
    if (it == nd.resources.end()) {
      // the half was already discarded here; the swap product can never
      // complete, so free the far side to avoid stranding it
      fault(nd, "TRANSFER for unknown resource " + old_name.str());
      if (registry.find(msg.new_name)) {
        registry.terminate_half(msg.new_name, nd.addr, HalfFate::Freed,
                                kernel.now());
        ProtocolMessage fr;
        fr.kind = MessageKind::FREE;
        fr.connection_id = msg.connection_id;
        fr.names = {msg.new_name};
        send(nd.addr, msg.new_partner, std::move(fr));
      }
      return;
    }
    Resource r = it->second;
    nd.resources.erase(it);
    registry.terminate_half(old_name, nd.addr, HalfFate::SwapConsumed,
                            kernel.now());
    r.name = msg.new_name;
    r.partner = msg.new_partner;
    // belief: the sender estimated at swap time; account for our
    // in-flight decay since then
    SimTime lat = fabric.latency(msg.sender, nd.addr);
    PairState& np = registry.get(msg.new_name);
    r.est_rate = np.rates[0] + np.rates[1];
    r.est_f = decohere_rate(msg.est_fidelity, double(lat), r.est_rate);
    r.est_time = kernel.now();
    r.birth = np.created;  // both far ends must order this pair the same way
    r.busy = false;
    nd.resources[msg.new_name] = r;
    trace("transfer", msg.sender, nd.addr,
          old_name.str() + "->" + msg.new_name.str());
  }

 private:
  std::uint64_t link_mint_seq_ = 0;
  bool in_evaluate_ = false;
};

}  // namespace qrs
