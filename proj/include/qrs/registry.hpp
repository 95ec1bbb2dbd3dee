#pragma once

// Ground-truth registry of entangled pairs. Nodes act only on local
// belief (estimated fidelity); the registry tracks what is physically
// true -- decoherence, purification outcomes sampled once per pair of
// pairs, swap products, and correlated measurement statistics -- so
// tests and metrics can compare belief against reality.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <utility>

#include "qrs/kernel.hpp"
#include "qrs/quantum.hpp"
#include "qrs/ruleset.hpp"

namespace qrs {

// Terminal state of one half of a pair.
enum class HalfFate : std::uint8_t {
  Live,
  PurifySacrificed,  // consumed as the measured pair of a parity test
  PurifyDiscarded,   // kept pair thrown away after odd parity
  SwapConsumed,      // spliced into a longer pair
  Delivered,         // handed to the application (or measured there)
  Freed,             // timer discard, staleness, or teardown
};

inline const char* to_string(HalfFate f) {
  switch (f) {
    case HalfFate::Live: return "live";
    case HalfFate::PurifySacrificed: return "purify_sacrificed";
    case HalfFate::PurifyDiscarded: return "purify_discarded";
    case HalfFate::SwapConsumed: return "swap_consumed";
    case HalfFate::Delivered: return "delivered";
    case HalfFate::Freed: return "freed";
  }
  return "?";
}

struct PairState {
  ExternalName name;
  SimTime created = 0;
  NodeAddr ends[2] = {kNoNode, kNoNode};
  double rates[2] = {0.0, 0.0};  // per-ps decay contribution of each memory
  double f_true = 1.0;
  SimTime updated = 0;
  HalfFate fates[2] = {HalfFate::Live, HalfFate::Live};
  bool op_locked = false;  // claimed by an entangling operation
  bool meas_done[2] = {false, false};
  MeasBasis meas_basis[2] = {MeasBasis::Z, MeasBasis::Z};
  int meas_out[2] = {0, 0};

  int end_index(NodeAddr n) const {
    if (ends[0] == n) return 0;
    if (ends[1] == n) return 1;
    throw std::logic_error("node " + std::to_string(n) +
                           " does not hold pair " + name.str());
  }
  bool fully_terminated() const {
    return fates[0] != HalfFate::Live && fates[1] != HalfFate::Live;
  }
};

// Outcome of one sampled purification round, shared by both ends.
struct PurifyRecord {
  bool success = false;
  bool conflicted = false;  // a pair was claimed by two different rounds
  double f_keep_after = 0.0;   // true fidelity of the kept pair on success
  std::uint8_t parity[2] = {0, 0};  // local parity bits, per keep-pair end
  SimTime sampled_at = 0;
};

class PairRegistry {
 public:
  PairState& get(const ExternalName& name) {
    auto it = pairs_.find(name);
    if (it == pairs_.end()) {
      throw std::logic_error("unknown pair " + name.str());
    }
    return it->second;
  }
  const PairState* find(const ExternalName& name) const {
    auto it = pairs_.find(name);
    return it == pairs_.end() ? nullptr : &it->second;
  }

  PairState& create(const ExternalName& name, NodeAddr a, NodeAddr b,
                    double fidelity, double rate_a, double rate_b,
                    SimTime now, bool from_swap = false) {
    auto [it, fresh] = pairs_.try_emplace(name);
    if (!fresh) throw std::logic_error("duplicate pair name " + name.str());
    PairState& p = it->second;
    p.name = name;
    p.created = now;
    p.ends[0] = a;
    p.ends[1] = b;
    p.rates[0] = rate_a;
    p.rates[1] = rate_b;
    p.f_true = detail::check_fid(fidelity, "registry create");
    p.updated = now;
    (from_swap ? created_by_swap_ : created_by_link_)++;
    return p;
  }

  // Settle decoherence up to `now` and return the true fidelity. Decay
  // stops for a memory once its half is measured or terminated.
  double fidelity(const ExternalName& name, SimTime now) {
    PairState& p = get(name);
    double rate = 0.0;
    for (int i = 0; i < 2; ++i) {
      if (p.fates[i] == HalfFate::Live && !p.meas_done[i]) rate += p.rates[i];
    }
    if (now > p.updated) {
      p.f_true = decohere_rate(p.f_true, double(now - p.updated), rate);
      p.updated = now;
    }
    return p.f_true;
  }

  void terminate_half(const ExternalName& name, NodeAddr node, HalfFate fate,
                      SimTime now) {
    fidelity(name, now);  // settle decay while the memory still held it
    PairState& p = get(name);
    p.fates[p.end_index(node)] = fate;
  }

  // Z-basis (or X-basis) measurement of one half; the second half
  // measured in the same basis disagrees with probability qber(F).
  int measure(const ExternalName& name, NodeAddr node, MeasBasis basis,
              SimTime now, SimKernel& kernel) {
    double f = fidelity(name, now);
    PairState& p = get(name);
    int i = p.end_index(node);
    if (p.meas_done[i]) throw std::logic_error("pair half measured twice");
    int other = 1 - i;
    int out;
    if (p.meas_done[other] && p.meas_basis[other] == basis &&
        basis != MeasBasis::RANDOM) {
      bool flip = kernel.bernoulli(qber_z(f));
      out = p.meas_out[other] ^ (flip ? 1 : 0);
    } else {
      out = kernel.bernoulli(0.5) ? 1 : 0;
    }
    p.meas_done[i] = true;
    p.meas_basis[i] = basis;
    p.meas_out[i] = out;
    return out;
  }

  // One purification round on the (keep, sacrifice) pair of pairs,
  // sampled exactly once no matter which end asks first. Claims both
  // pairs; a pair already claimed by another round is a protocol error.
  const PurifyRecord& purify_shared(const ExternalName& keep,
                                    const ExternalName& sacrifice,
                                    SimTime now, SimKernel& kernel) {
    auto key = std::make_pair(keep, sacrifice);
    if (auto it = purify_.find(key); it != purify_.end()) return it->second;
    PairState& pk = get(keep);
    PairState& ps = get(sacrifice);
    if (pk.op_locked || ps.op_locked || pk.fully_terminated() ||
        ps.fully_terminated()) {
      // double-claimed physical state: the round yields garbage and
      // both ends must discard
      PurifyRecord rec;
      rec.conflicted = true;
      rec.sampled_at = now;
      return purify_.emplace(key, rec).first->second;
    }
    double fk = fidelity(keep, now);
    double fs = fidelity(sacrifice, now);
    auto outcome = purify_outcome(fk, fs);
    PurifyRecord rec;
    rec.success = kernel.bernoulli(outcome.p_success);
    rec.f_keep_after = outcome.f_success;
    rec.parity[0] = kernel.bernoulli(0.5) ? 1 : 0;
    rec.parity[1] = rec.success ? rec.parity[0] : rec.parity[0] ^ 1;
    rec.sampled_at = now;
    ps.op_locked = true;
    if (rec.success) {
      pk.f_true = rec.f_keep_after;
      pk.updated = now;
    } else {
      pk.op_locked = true;  // discarded on resolution at both ends
    }
    return purify_.emplace(key, rec).first->second;
  }

  // Splice two pairs at `via` into one spanning pair. The caller has
  // already settled and terminated the consumed halves.
  PairState& swap(const ExternalName& left, const ExternalName& right,
                  const ExternalName& new_name, NodeAddr via, SimTime now) {
    double fl = fidelity(left, now);
    double fr = fidelity(right, now);
    PairState& pl = get(left);
    PairState& pr = get(right);
    int li = 1 - pl.end_index(via);  // surviving far ends
    int ri = 1 - pr.end_index(via);
    PairState& np =
        create(new_name, pl.ends[li], pr.ends[ri], swap_fidelity(fl, fr),
               pl.rates[li], pr.rates[ri], now, /*from_swap=*/true);
    for (auto* old : {&pl, &pr}) {
      for (int i = 0; i < 2; ++i) {
        if (old->fates[i] == HalfFate::Live) {
          old->fates[i] = HalfFate::SwapConsumed;
        }
      }
    }
    return np;
  }

  std::uint64_t created_by_link() const { return created_by_link_; }
  std::uint64_t created_by_swap() const { return created_by_swap_; }

  // Pair-half census; the accounting identity is that every created
  // half is in exactly one bucket.
  std::map<HalfFate, std::uint64_t> census() const {
    std::map<HalfFate, std::uint64_t> out;
    for (const auto& [name, p] : pairs_) {
      out[p.fates[0]]++;
      out[p.fates[1]]++;
    }
    return out;
  }
  std::uint64_t total_halves() const { return 2 * pairs_.size(); }

  const std::map<ExternalName, PairState>& all() const { return pairs_; }

 private:
  std::map<ExternalName, PairState> pairs_;
  std::map<std::pair<ExternalName, ExternalName>, PurifyRecord> purify_;
  std::uint64_t created_by_link_ = 0;
  std::uint64_t created_by_swap_ = 0;
};

}  // namespace qrs
