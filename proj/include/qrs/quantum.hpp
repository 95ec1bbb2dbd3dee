#pragma once

// Werner-state fidelity model. Every entangled pair in the simulator is
// tracked as a Werner state w.r.t. the target Bell state, so a single
// scalar (the singlet fraction F in [1/4, 1]) fully describes it.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace qrs {

inline constexpr double kMinFidelity = 0.25;

// Count of below-range fidelity values that were clamped to 1/4.
inline std::atomic<std::uint64_t> fidelity_clamp_count{0};

struct Fidelity {
  double value = 1.0;

  Fidelity() = default;
  explicit Fidelity(double f) : value(f) {
    if (std::isnan(f) || f > 1.0) {
      throw std::domain_error("fidelity out of range: " + std::to_string(f));
    }
    if (f < kMinFidelity) {
      // Decoherence asymptotes at 1/4; clamp and log rather than fail.
      fidelity_clamp_count.fetch_add(1, std::memory_order_relaxed);
      value = kMinFidelity;
    }
  }

  friend bool operator==(const Fidelity&, const Fidelity&) = default;
};

struct WernerParam {
  double w = 1.0;
};

inline WernerParam werner_from_fidelity(Fidelity f) {
  return WernerParam{(4.0 * f.value - 1.0) / 3.0};
}

inline Fidelity fidelity_from_werner(WernerParam p) {
  return Fidelity{(1.0 + 3.0 * p.w) / 4.0};
}

namespace detail {
inline double check_fid(double f, const char* who) {
  if (!(f >= kMinFidelity && f <= 1.0)) {
    throw std::domain_error(std::string(who) + ": fidelity out of range");
  }
  return f;
}
}  // namespace detail

// Fidelity of the spliced pair after a Bell-state measurement at the
// midpoint, with the Pauli frame correction accounted for. Werner
// parameters compose multiplicatively.
inline double swap_fidelity(double f1, double f2) {
  detail::check_fid(f1, "swap_fidelity");
  detail::check_fid(f2, "swap_fidelity");
  double w1 = (4.0 * f1 - 1.0) / 3.0;
  double w2 = (4.0 * f2 - 1.0) / 3.0;
  return (1.0 + 3.0 * w1 * w2) / 4.0;
}

inline Fidelity swap_fidelity(Fidelity f1, Fidelity f2) {
  return Fidelity{swap_fidelity(f1.value, f2.value)};
}

struct PurifyOutcome {
  double p_success;  // probability both ends see even parity
  double f_success;  // fidelity of the kept pair on success
};

// One round of the bilateral-CNOT parity-test protocol on two Werner
// pairs, with a twirl back to Werner form after the round.
inline PurifyOutcome purify_outcome(double f1, double f2) {
  detail::check_fid(f1, "purify_outcome");
  detail::check_fid(f2, "purify_outcome");
  double p = f1 * f2 + f1 * (1.0 - f2) / 3.0 + (1.0 - f1) * f2 / 3.0 +
             5.0 * (1.0 - f1) * (1.0 - f2) / 9.0;
  double fs = (f1 * f2 + (1.0 - f1) * (1.0 - f2) / 9.0) / p;
  return {p, fs};
}

inline PurifyOutcome purify_outcome(Fidelity f1, Fidelity f2) {
  return purify_outcome(f1.value, f2.value);
}

// Exponential depolarization toward the maximally mixed floor F = 1/4.
// Applied lazily: callers pass the elapsed time since the last update.
inline double decohere(double f0, double dt, double t_mem) {
  detail::check_fid(f0, "decohere");
  if (dt < 0.0) throw std::domain_error("decohere: negative dt");
  if (!(t_mem > 0.0)) throw std::domain_error("decohere: T_mem must be > 0");
  return kMinFidelity + (f0 - kMinFidelity) * std::exp(-dt / t_mem);
}

// Decay with a precomputed rate (1/T_mem summed over the memories still
// holding the pair); rate 0 means no decay.
inline double decohere_rate(double f0, double dt, double rate) {
  if (rate <= 0.0 || dt <= 0.0) return f0;
  return kMinFidelity + (f0 - kMinFidelity) * std::exp(-dt * rate);
}

// Probability that Z-basis outcomes of the two halves of a Werner pair
// disagree. Used for MEAS end-node statistics.
inline double qber_z(double f) {
  detail::check_fid(f, "qber_z");
  return 2.0 * (1.0 - f) / 3.0;
}

}  // namespace qrs
