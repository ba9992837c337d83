// Deterministic number formatting and parsing. std::to_chars emits the
// shortest round-trip representation, so written files reparse bit-exactly
// and re-runs produce byte-identical artifacts.
#pragma once

#include <charconv>
#include <string>
#include <string_view>

#include "driftpfn/common.hpp"

namespace driftpfn {

inline std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  DRIFTPFN_CHECK(ec == std::errc());
  return std::string(buf, p);
}

inline std::string fmt(long long v) {
  char buf[24];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline std::string fmt(int v) { return fmt(static_cast<long long>(v)); }

inline bool parse_double(std::string_view s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

inline bool parse_int(std::string_view s, long long& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

}  // namespace driftpfn
