#pragma once

// Canonical binary wire format: little-endian, length-prefixed, a tag
// byte per clause variant, a 2-byte version, and a trailing CRC32 so any
// corruption is a decode error rather than a silently different RuleSet.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "qrs/ruleset.hpp"

namespace qrs {

inline constexpr std::uint16_t kWireVersion = 1;

struct DecodeError : std::runtime_error {
  std::size_t offset;
  DecodeError(std::size_t off, const std::string& what)
      : std::runtime_error("decode error at offset " + std::to_string(off) +
                           ": " + what),
        offset(off) {}
};

namespace wire {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void i64(std::int64_t v) { le(std::bit_cast<std::uint64_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void name(const ExternalName& n) {
    u32(n.minter);
    i64(n.timestamp);
    u64(n.sequence);
  }
  std::vector<std::uint8_t> take() && { return std::move(buf_); }
  const std::vector<std::uint8_t>& data() const { return buf_; }

 private:
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
      buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size)
      : data_(data), size_(size) {}
  explicit Reader(const std::vector<std::uint8_t>& v)
      : Reader(v.data(), v.size()) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::int64_t i64() { return std::bit_cast<std::int64_t>(le(8)); }
  double f64() { return std::bit_cast<double>(le(8)); }
  ExternalName name() {
    ExternalName n;
    n.minter = u32();
    n.timestamp = i64();
    n.sequence = u64();
    return n;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw DecodeError(pos_, what);
  }

 private:
  std::uint64_t le(std::size_t n) {
    if (pos_ + n > size_) fail("truncated input");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline void put_refs(Writer& w, const std::vector<std::uint8_t>& refs) {
  w.u8(static_cast<std::uint8_t>(refs.size()));
  for (auto r : refs) w.u8(r);
}

inline std::vector<std::uint8_t> get_refs(Reader& r) {
  std::size_t n = r.u8();
  std::vector<std::uint8_t> refs(n);
  for (auto& x : refs) x = r.u8();
  return refs;
}

}  // namespace wire

// Clause tags. Conditions 0x01-0x03, actions 0x10-0x16.
namespace tag {
inline constexpr std::uint8_t kCmp = 0x01;
inline constexpr std::uint8_t kTimer = 0x02;
inline constexpr std::uint8_t kRes = 0x03;
inline constexpr std::uint8_t kSetTimer = 0x10;
inline constexpr std::uint8_t kPromote = 0x11;
inline constexpr std::uint8_t kFree = 0x12;
inline constexpr std::uint8_t kSet = 0x13;
inline constexpr std::uint8_t kMeas = 0x14;
inline constexpr std::uint8_t kQcirc = 0x15;
inline constexpr std::uint8_t kSend = 0x16;
}  // namespace tag

inline std::vector<std::uint8_t> encode_ruleset(const RuleSet& rs) {
  wire::Writer w;
  w.u16(kWireVersion);
  w.u64(rs.ruleset_id);
  w.u64(rs.connection_id);
  w.u32(rs.owner_node);
  w.u16(static_cast<std::uint16_t>(rs.stages.size()));
  for (const auto& st : rs.stages) {
    w.u16(st.stage_id);
    w.u16(static_cast<std::uint16_t>(st.variables.size()));
    for (const auto& [var, val] : st.variables) {
      w.u16(var);
      w.i64(val);
    }
    w.u16(static_cast<std::uint16_t>(st.rules.size()));
    for (const auto& rule : st.rules) {
      w.u16(rule.rule_id);
      w.u16(static_cast<std::uint16_t>(rule.conditions.size()));
      for (const auto& c : rule.conditions) {
        std::visit(
            [&](const auto& cl) {
              using T = std::decay_t<decltype(cl)>;
              if constexpr (std::is_same_v<T, CmpClause>) {
                w.u8(tag::kCmp);
                w.u16(cl.variable);
                w.u8(static_cast<std::uint8_t>(cl.op));
                w.i64(cl.value);
              } else if constexpr (std::is_same_v<T, TimerClause>) {
                w.u8(tag::kTimer);
                w.u16(cl.timer_id);
              } else {
                w.u8(tag::kRes);
                w.u32(cl.partner);
                w.f64(cl.min_fidelity);
                w.u8(cl.count);
              }
            },
            c);
      }
      w.u16(static_cast<std::uint16_t>(rule.actions.size()));
      for (const auto& a : rule.actions) {
        std::visit(
            [&](const auto& ac) {
              using T = std::decay_t<decltype(ac)>;
              if constexpr (std::is_same_v<T, SetTimerAction>) {
                w.u8(tag::kSetTimer);
                w.u16(ac.timer_id);
                w.i64(ac.duration);
              } else if constexpr (std::is_same_v<T, PromoteAction>) {
                w.u8(tag::kPromote);
                w.u16(ac.target_stage);
                wire::put_refs(w, ac.refs);
              } else if constexpr (std::is_same_v<T, FreeAction>) {
                w.u8(tag::kFree);
                w.u8(ac.notify_partner ? 1 : 0);
                wire::put_refs(w, ac.refs);
              } else if constexpr (std::is_same_v<T, SetAction>) {
                w.u8(tag::kSet);
                w.u16(ac.variable);
                w.i64(ac.value);
                w.u8(ac.is_delta ? 1 : 0);
              } else if constexpr (std::is_same_v<T, MeasAction>) {
                w.u8(tag::kMeas);
                w.u8(static_cast<std::uint8_t>(ac.basis));
                wire::put_refs(w, ac.refs);
              } else if constexpr (std::is_same_v<T, QcircAction>) {
                w.u8(tag::kQcirc);
                w.u8(static_cast<std::uint8_t>(ac.circuit));
              } else {
                w.u8(tag::kSend);
                w.u8(static_cast<std::uint8_t>(ac.kind));
                w.u32(ac.destination);
              }
            },
            a);
      }
    }
  }
  auto body = std::move(w).take();
  std::uint32_t crc = wire::crc32(body.data(), body.size());
  wire::Writer framed;
  framed.u32(static_cast<std::uint32_t>(body.size()));
  auto out = std::move(framed).take();
  out.insert(out.end(), body.begin(), body.end());
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  return out;
}

inline RuleSet decode_ruleset(const std::vector<std::uint8_t>& bytes) {
  wire::Reader r(bytes);
  std::uint32_t body_len = r.u32();
  if (bytes.size() != 4u + body_len + 4u) r.fail("length mismatch");
  std::uint32_t crc = wire::crc32(bytes.data() + 4, body_len);
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(bytes[4 + body_len + i]) << (8 * i);
  if (crc != stored) throw DecodeError(4 + body_len, "checksum mismatch");

  std::uint16_t ver = r.u16();
  if (ver != kWireVersion) r.fail("unknown version " + std::to_string(ver));
  RuleSet rs;
  rs.ruleset_id = r.u64();
  rs.connection_id = r.u64();
  rs.owner_node = r.u32();
  std::size_t n_stages = r.u16();
  for (std::size_t si = 0; si < n_stages; ++si) {
    Stage st;
    st.stage_id = r.u16();
    std::size_t n_vars = r.u16();
    for (std::size_t i = 0; i < n_vars; ++i) {
      std::uint16_t var = r.u16();
      st.variables[var] = r.i64();
    }
    std::size_t n_rules = r.u16();
    for (std::size_t ri = 0; ri < n_rules; ++ri) {
      Rule rule;
      rule.rule_id = r.u16();
      std::size_t n_conds = r.u16();
      for (std::size_t i = 0; i < n_conds; ++i) {
        std::uint8_t t = r.u8();
        switch (t) {
          case tag::kCmp: {
            CmpClause c;
            c.variable = r.u16();
            std::uint8_t op = r.u8();
            if (op > static_cast<std::uint8_t>(CmpOp::GE))
              r.fail("bad cmp operator");
            c.op = static_cast<CmpOp>(op);
            c.value = r.i64();
            rule.conditions.emplace_back(c);
            break;
          }
          case tag::kTimer: {
            TimerClause c;
            c.timer_id = r.u16();
            rule.conditions.emplace_back(c);
            break;
          }
          case tag::kRes: {
            ResClause c;
            c.partner = r.u32();
            c.min_fidelity = r.f64();
            c.count = r.u8();
            rule.conditions.emplace_back(c);
            break;
          }
          default:
            r.fail("unknown condition tag " + std::to_string(t));
        }
      }
      std::size_t n_acts = r.u16();
      for (std::size_t i = 0; i < n_acts; ++i) {
        std::uint8_t t = r.u8();
        switch (t) {
          case tag::kSetTimer: {
            SetTimerAction a;
            a.timer_id = r.u16();
            a.duration = r.i64();
            rule.actions.emplace_back(a);
            break;
          }
          case tag::kPromote: {
            PromoteAction a;
            a.target_stage = r.u16();
            a.refs = wire::get_refs(r);
            rule.actions.emplace_back(a);
            break;
          }
          case tag::kFree: {
            FreeAction a;
            a.notify_partner = r.u8() != 0;
            a.refs = wire::get_refs(r);
            rule.actions.emplace_back(a);
            break;
          }
          case tag::kSet: {
            SetAction a;
            a.variable = r.u16();
            a.value = r.i64();
            a.is_delta = r.u8() != 0;
            rule.actions.emplace_back(a);
            break;
          }
          case tag::kMeas: {
            MeasAction a;
            std::uint8_t b = r.u8();
            if (b > static_cast<std::uint8_t>(MeasBasis::RANDOM))
              r.fail("bad basis");
            a.basis = static_cast<MeasBasis>(b);
            a.refs = wire::get_refs(r);
            rule.actions.emplace_back(a);
            break;
          }
          case tag::kQcirc: {
            QcircAction a;
            std::uint8_t c = r.u8();
            if (c > static_cast<std::uint8_t>(Circuit::BSM))
              r.fail("bad circuit");
            a.circuit = static_cast<Circuit>(c);
            rule.actions.emplace_back(a);
            break;
          }
          case tag::kSend: {
            SendAction a;
            std::uint8_t k = r.u8();
            if (k > static_cast<std::uint8_t>(MessageKind::TRANSFER))
              r.fail("bad message kind");
            a.kind = static_cast<MessageKind>(k);
            a.destination = r.u32();
            rule.actions.emplace_back(a);
            break;
          }
          default:
            r.fail("unknown action tag " + std::to_string(t));
        }
      }
      st.rules.push_back(std::move(rule));
    }
    rs.stages.push_back(std::move(st));
  }
  if (r.offset() != 4u + body_len) r.fail("trailing bytes in body");
  return rs;
}

}  // namespace qrs
