#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "dumotion/common.hpp"

namespace dumotion {

// Streaming FNV-1a (64-bit). Used for dataset/config/extractor hashes and
// the frozen-tensor audits; not cryptographic.
class Fnv1a {
 public:
  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }

  void update(const std::string& s) { update(s.data(), s.size()); }

  template <typename S>
  void update(const Mat<S>& m) {
    const std::int64_t r = m.rows(), c = m.cols();
    update(&r, sizeof r);
    update(&c, sizeof c);
    if (m.size() > 0) update(m.data(), sizeof(S) * static_cast<std::size_t>(m.size()));
  }

  std::uint64_t value() const { return h_; }

  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t v = h_;
    for (int i = 15; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = digits[v & 0xf];
      v >>= 4;
    }
    return out;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hash_hex(const std::string& s) {
  Fnv1a h;
  h.update(s);
  return h.hex();
}

}  // namespace dumotion
