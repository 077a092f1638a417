#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace plugs {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto process exit codes
// (config -> 2, data -> 3, numeric -> 4).
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Shape/dimension violations in tensor primitives.
class DimensionError : public ConfigError {
 public:
  explicit DimensionError(const std::string& msg) : ConfigError(msg) {}
};

// Unknown token id or malformed vocabulary input.
class VocabError : public DataError {
 public:
  explicit VocabError(const std::string& msg) : DataError(msg) {}
};

// Malformed persisted file (features, checkpoint, vocabulary, ratings).
class FormatError : public DataError {
 public:
  explicit FormatError(const std::string& msg) : DataError(msg) {}
};

// A decoded bilingual sequence without the expected separator token.
class MissingSeparator : public DataError {
 public:
  explicit MissingSeparator(const std::string& msg) : DataError(msg) {}
};

// A bilingual sequence whose caption side is empty.
class EmptyCaption : public DataError {
 public:
  explicit EmptyCaption(const std::string& msg) : DataError(msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG. Two flavors:
//  * SplitMix64: a sequential stream, used for initialization and data
//    generation where a single owner walks the stream.
//  * hash_u64 / counter-based helpers: stateless mixing of (seed, keys...)
//    used for dropout and per-item noise, so results do not depend on
//    evaluation order.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64_next(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

  // Standard normal via Box-Muller; consumes two draws.
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  uint64_t state_;
};

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
  return splitmix64_next(s);
}

inline uint64_t hash_u64(uint64_t seed, uint64_t k1, uint64_t k2 = 0,
                         uint64_t k3 = 0) {
  return hash_combine(hash_combine(hash_combine(seed, k1), k2), k3);
}

inline uint64_t hash_str(uint64_t seed, const std::string& s) {
  uint64_t h = seed ^ 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = hash_combine(h, c);
  return h;
}

// Uniform in [0,1) from a stateless key tuple.
inline double hash_double(uint64_t seed, uint64_t k1, uint64_t k2 = 0,
                          uint64_t k3 = 0) {
  return static_cast<double>(hash_u64(seed, k1, k2, k3) >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// UTF-8 helpers. The tokenizer works on codepoint symbols with a byte-level
// fallback, so it needs to split strings into codepoints without validating
// the full Unicode range.
// ---------------------------------------------------------------------------

// Splits `s` into UTF-8 codepoint substrings. Bytes that do not form a valid
// sequence are returned as single-byte strings.
inline std::vector<std::string> utf8_split(const std::string& s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    if ((c & 0x80u) == 0x00u) len = 1;
    else if ((c & 0xE0u) == 0xC0u) len = 2;
    else if ((c & 0xF0u) == 0xE0u) len = 3;
    else if ((c & 0xF8u) == 0xF0u) len = 4;
    if (i + len > s.size()) len = 1;
    for (size_t j = 1; j < len; ++j) {
      if ((static_cast<unsigned char>(s[i + j]) & 0xC0u) != 0x80u) {
        len = 1;
        break;
      }
    }
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

// Whitespace split (space, tab, newline, CR). Empty fields dropped.
inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

inline std::vector<std::string> split_on(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------
// Little-endian binary IO for the persisted formats.
// ---------------------------------------------------------------------------

inline void write_u32le(std::string& out, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.append(b, 4);
}

inline void write_u64le(std::string& out, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.append(b, 8);
}

inline void write_f32le(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32le(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string name)
      : buf_(buf), name_(std::move(name)) {}

  uint32_t read_u32le() {
    need(4);
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
      v = (v << 8) | static_cast<unsigned char>(buf_[pos_ + i]);
    pos_ += 4;
    return v;
  }

  uint64_t read_u64le() {
    need(8);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
      v = (v << 8) | static_cast<unsigned char>(buf_[pos_ + i]);
    pos_ += 8;
    return v;
  }

  float read_f32le() {
    uint32_t bits = read_u32le();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string read_bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == buf_.size(); }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) {
    if (pos_ + n > buf_.size())
      throw FormatError(name_ + ": truncated at byte " + std::to_string(pos_));
  }

  const std::string& buf_;
  std::string name_;
  size_t pos_ = 0;
};

}  // namespace plugs
