#pragma once

// RuleSet data model: the per-connection program installed on each node.
// A RuleSet is an ordered list of Stages; each Stage holds Rules with a
// condition clause (conjunction) and an ordered action clause, plus
// stage-local variables. Resources flow unidirectionally through stages
// until delivered, consumed, or freed.

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "qrs/core.hpp"

namespace qrs {

// Sentinel promotion target meaning "hand the resource to the
// application" -- always a legal forward promotion.
inline constexpr std::uint16_t kDeliveryStage = 0xFFFF;

enum class CmpOp : std::uint8_t { EQ, LT, GT, LE, GE };
enum class MeasBasis : std::uint8_t { Z, X, RANDOM };
enum class Circuit : std::uint8_t { PURIFY_PAIR, SWAP, BSM };
enum class Pauli : std::uint8_t { I, X, Z, XZ };

inline const char* to_string(CmpOp op) {
  switch (op) {
    case CmpOp::EQ: return "EQ";
    case CmpOp::LT: return "LT";
    case CmpOp::GT: return "GT";
    case CmpOp::LE: return "LE";
    case CmpOp::GE: return "GE";
  }
  return "?";
}
inline const char* to_string(MeasBasis b) {
  switch (b) {
    case MeasBasis::Z: return "Z";
    case MeasBasis::X: return "X";
    case MeasBasis::RANDOM: return "RANDOM";
  }
  return "?";
}
inline const char* to_string(Circuit c) {
  switch (c) {
    case Circuit::PURIFY_PAIR: return "PURIFY_PAIR";
    case Circuit::SWAP: return "SWAP";
    case Circuit::BSM: return "BSM";
  }
  return "?";
}
inline const char* to_string(Pauli p) {
  switch (p) {
    case Pauli::I: return "I";
    case Pauli::X: return "X";
    case Pauli::Z: return "Z";
    case Pauli::XZ: return "XZ";
  }
  return "?";
}

// ---- Condition clauses ----

struct CmpClause {
  std::uint16_t variable = 0;
  CmpOp op = CmpOp::EQ;
  std::int64_t value = 0;
  bool operator==(const CmpClause&) const = default;
};

struct TimerClause {
  std::uint16_t timer_id = 0;
  bool operator==(const TimerClause&) const = default;
};

// Enough Resources: matches `count` Bell pairs with the given partner
// (or any partner within the connection, if wildcard) at or above
// min_fidelity. Oldest qualifying resources are selected first.
struct ResClause {
  NodeAddr partner = kNoNode;  // kNoNode means wildcard
  double min_fidelity = 0.0;
  std::uint8_t count = 1;
  bool operator==(const ResClause&) const = default;
  bool wildcard() const { return partner == kNoNode; }
};

using ConditionClause = std::variant<CmpClause, TimerClause, ResClause>;

// ---- Action clauses ----

struct SetTimerAction {
  std::uint16_t timer_id = 0;
  SimTime duration = 0;
  bool operator==(const SetTimerAction&) const = default;
};

// Actions that operate on matched resources carry `refs`: indices into
// the rule's matched-resource list. Empty means "all matched".
struct PromoteAction {
  std::uint16_t target_stage = 0;
  std::vector<std::uint8_t> refs;
  bool operator==(const PromoteAction&) const = default;
};

struct FreeAction {
  bool notify_partner = true;  // also send a FREE message
  std::vector<std::uint8_t> refs;
  bool operator==(const FreeAction&) const = default;
};

struct SetAction {
  std::uint16_t variable = 0;
  std::int64_t value = 0;
  bool is_delta = false;
  bool operator==(const SetAction&) const = default;
};

struct MeasAction {
  MeasBasis basis = MeasBasis::Z;
  std::vector<std::uint8_t> refs;
  bool operator==(const MeasAction&) const = default;
};

struct QcircAction {
  Circuit circuit = Circuit::PURIFY_PAIR;
  bool operator==(const QcircAction&) const = default;
};

enum class MessageKind : std::uint8_t { FREE, UPDATE, MEAS_RESULT, TRANSFER };

inline const char* to_string(MessageKind k) {
  switch (k) {
    case MessageKind::FREE: return "FREE";
    case MessageKind::UPDATE: return "UPDATE";
    case MessageKind::MEAS_RESULT: return "MEAS_RESULT";
    case MessageKind::TRANSFER: return "TRANSFER";
  }
  return "?";
}

struct SendAction {
  MessageKind kind = MessageKind::FREE;
  NodeAddr destination = kNoNode;
  bool operator==(const SendAction&) const = default;
};

using ActionClause = std::variant<SetTimerAction, PromoteAction, FreeAction,
                                  SetAction, MeasAction, QcircAction,
                                  SendAction>;

struct Rule {
  std::uint16_t rule_id = 0;
  std::vector<ConditionClause> conditions;  // conjunction: all must hold
  std::vector<ActionClause> actions;        // executed in order
  bool operator==(const Rule&) const = default;
};

struct Stage {
  std::uint16_t stage_id = 0;
  std::vector<Rule> rules;
  std::map<std::uint16_t, std::int64_t> variables;  // stage-local slots
  bool operator==(const Stage&) const = default;
};

struct RuleSet {
  std::uint64_t ruleset_id = 0;
  ConnectionId connection_id = 0;
  NodeAddr owner_node = kNoNode;
  std::vector<Stage> stages;
  bool operator==(const RuleSet&) const = default;
};

// ---- Protocol messages (Tab. 1) ----

struct ProtocolMessage {
  MessageKind kind = MessageKind::FREE;
  ConnectionId connection_id = 0;
  NodeAddr sender = kNoNode;
  std::vector<ExternalName> names;  // resource IDs this message refers to

  // UPDATE / TRANSFER
  Pauli correction = Pauli::I;
  bool has_correction = false;

  // MEAS_RESULT
  std::uint8_t parity_bit = 0;
  std::uint32_t round = 0;

  // TRANSFER
  NodeAddr new_partner = kNoNode;
  ExternalName new_name;
  double est_fidelity = 0.0;

  bool operator==(const ProtocolMessage&) const = default;
};

// ---- Human-readable dump (one clause per line) ----

inline std::string dump_ruleset(const RuleSet& rs) {
  std::ostringstream os;
  os << "ruleset id=" << rs.ruleset_id << " connection=" << rs.connection_id
     << " owner=" << rs.owner_node << "\n";
  for (const auto& st : rs.stages) {
    os << "  stage " << st.stage_id << "\n";
    for (const auto& [var, val] : st.variables) {
      os << "    var " << var << " = " << val << "\n";
    }
    for (const auto& r : st.rules) {
      os << "    rule " << r.rule_id << "\n";
      for (const auto& c : r.conditions) {
        os << "      cond ";
        std::visit(
            [&](const auto& cl) {
              using T = std::decay_t<decltype(cl)>;
              if constexpr (std::is_same_v<T, CmpClause>) {
                os << "CMP var=" << cl.variable << " " << to_string(cl.op)
                   << " " << cl.value;
              } else if constexpr (std::is_same_v<T, TimerClause>) {
                os << "TIMER id=" << cl.timer_id;
              } else {
                os << "RES partner="
                   << (cl.wildcard() ? std::string("*")
                                     : std::to_string(cl.partner))
                   << " min_fidelity=" << cl.min_fidelity
                   << " count=" << int(cl.count);
              }
            },
            c);
        os << "\n";
      }
      for (const auto& a : r.actions) {
        os << "      act ";
        std::visit(
            [&](const auto& ac) {
              using T = std::decay_t<decltype(ac)>;
              if constexpr (std::is_same_v<T, SetTimerAction>) {
                os << "SETTIMER id=" << ac.timer_id
                   << " duration=" << ac.duration;
              } else if constexpr (std::is_same_v<T, PromoteAction>) {
                if (ac.target_stage == kDeliveryStage) {
                  os << "PROMOTE stage=deliver";
                } else {
                  os << "PROMOTE stage=" << ac.target_stage;
                }
              } else if constexpr (std::is_same_v<T, FreeAction>) {
                os << "FREE notify=" << (ac.notify_partner ? 1 : 0);
              } else if constexpr (std::is_same_v<T, SetAction>) {
                os << "SET var=" << ac.variable
                   << (ac.is_delta ? " delta=" : " value=") << ac.value;
              } else if constexpr (std::is_same_v<T, MeasAction>) {
                os << "MEAS basis=" << to_string(ac.basis);
              } else if constexpr (std::is_same_v<T, QcircAction>) {
                os << "QCIRC circuit=" << to_string(ac.circuit);
              } else {
                os << "SEND kind=" << to_string(ac.kind)
                   << " dest=" << ac.destination;
              }
            },
            a);
        os << "\n";
      }
    }
  }
  return os.str();
}

// ---- Structural validation ----

struct Violation {
  std::string kind;
  std::string location;
  std::string explanation;
};

// Report-style checks: backward promotion, undeclared variables,
// resource leaks (a rule that matches resources but neither promotes,
// frees, nor measures them), RES counts outside {1,2}.
inline std::vector<Violation> validate_ruleset(const RuleSet& rs) {
  std::vector<Violation> out;
  for (std::size_t si = 0; si < rs.stages.size(); ++si) {
    const Stage& st = rs.stages[si];
    for (const auto& rule : st.rules) {
      std::string loc = "stage " + std::to_string(si) + " rule " +
                        std::to_string(rule.rule_id);
      int matched = 0;
      for (const auto& c : rule.conditions) {
        if (const auto* cmp = std::get_if<CmpClause>(&c)) {
          if (!st.variables.count(cmp->variable)) {
            out.push_back({"undeclared variable", loc,
                           "CMP references variable " +
                               std::to_string(cmp->variable) +
                               " not declared in the stage"});
          }
        } else if (const auto* res = std::get_if<ResClause>(&c)) {
          if (res->count < 1 || res->count > 2) {
            out.push_back({"res count", loc,
                           "RES count " + std::to_string(res->count) +
                               " outside {1,2}"});
          }
          matched += res->count;
        }
      }
      // Every matched resource must end in exactly one of promote,
      // free, or measure-consume. QCIRC handles all matched resources.
      std::vector<bool> covered(static_cast<std::size_t>(matched), false);
      auto cover = [&](const std::vector<std::uint8_t>& refs) {
        if (refs.empty()) {
          covered.assign(covered.size(), true);
        } else {
          for (auto r : refs)
            if (r < covered.size()) covered[r] = true;
        }
      };
      for (const auto& a : rule.actions) {
        if (const auto* p = std::get_if<PromoteAction>(&a)) {
          if (p->target_stage != kDeliveryStage && p->target_stage <= si) {
            out.push_back({"backward promotion", loc,
                           "PROMOTE targets stage " +
                               std::to_string(p->target_stage) +
                               " which is not later than " +
                               std::to_string(si)});
          }
          cover(p->refs);
        } else if (const auto* fr = std::get_if<FreeAction>(&a)) {
          cover(fr->refs);
        } else if (const auto* me = std::get_if<MeasAction>(&a)) {
          cover(me->refs);
        } else if (std::holds_alternative<QcircAction>(a)) {
          covered.assign(covered.size(), true);
        } else if (const auto* set = std::get_if<SetAction>(&a)) {
          if (!st.variables.count(set->variable)) {
            out.push_back({"undeclared variable", loc,
                           "SET references variable " +
                               std::to_string(set->variable) +
                               " not declared in the stage"});
          }
        }
      }
      for (std::size_t i = 0; i < covered.size(); ++i) {
        if (!covered[i]) {
          out.push_back({"resource leak", loc,
                         "matched resource " + std::to_string(i) +
                             " never reaches a terminal transition"});
          break;
        }
      }
    }
  }
  return out;
}

}  // namespace qrs
