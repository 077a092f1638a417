#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "plugs/common.hpp"

namespace plugs {

// ---------------------------------------------------------------------------
// Languages. English is the pivot; the other five are caption targets.
// ---------------------------------------------------------------------------

enum class LangId : int { en = 0, fr = 1, it = 2, de = 3, es = 4, hi = 5 };

inline constexpr int kLangCount = 6;
inline constexpr LangId kPivotLang = LangId::en;

inline const std::array<std::string, kLangCount>& lang_codes() {
  static const std::array<std::string, kLangCount> codes{"en", "fr", "it",
                                                         "de", "es", "hi"};
  return codes;
}

inline const std::string& lang_code(LangId l) {
  return lang_codes()[static_cast<int>(l)];
}

inline LangId lang_from_code(const std::string& code) {
  const auto& codes = lang_codes();
  for (int i = 0; i < kLangCount; ++i)
    if (codes[i] == code) return static_cast<LangId>(i);
  throw ConfigError("unknown language code '" + code + "'");
}

inline std::vector<LangId> target_langs() {
  return {LangId::fr, LangId::it, LangId::de, LangId::es, LangId::hi};
}

inline std::vector<LangId> all_langs() {
  return {LangId::en, LangId::fr, LangId::it,
          LangId::de, LangId::es, LangId::hi};
}

// ---------------------------------------------------------------------------
// Special tokens. Fixed ids, pre-allocated before any merged subword:
//   0 pad, 1 eos, 2 byte-fallback end-of-word, 3..8 per-language
//   start-of-sequence, 9..14 per-language separators, 15..270 raw bytes.
// ---------------------------------------------------------------------------

struct SpecialTokens {
  static constexpr int pad = 0;
  static constexpr int eos = 1;
  static constexpr int eow = 2;  // closes a byte-fallback word

  static constexpr int sos(LangId l) { return 3 + static_cast<int>(l); }
  static constexpr int sep(LangId l) { return 9 + static_cast<int>(l); }
  static constexpr int byte_token(unsigned char b) { return 15 + b; }

  static constexpr int count = 15 + 256;

  static bool is_sos(int id) { return id >= 3 && id < 9; }
  static bool is_sep(int id) { return id >= 9 && id < 15; }
  static bool is_byte(int id) { return id >= 15 && id < count; }

  static std::string token_string(int id) {
    if (id == pad) return "⟨pad⟩";
    if (id == eos) return "⟨eos⟩";
    if (id == eow) return "⟨/w⟩";
    if (is_sos(id)) return "⟨sos:" + lang_code(static_cast<LangId>(id - 3)) + "⟩";
    if (is_sep(id)) return "⟨" + lang_code(static_cast<LangId>(id - 9)) + "⟩";
    if (is_byte(id)) {
      static const char* hex = "0123456789abcdef";
      int b = id - 15;
      std::string s = "⟨0x";
      s.push_back(hex[(b >> 4) & 0xF]);
      s.push_back(hex[b & 0xF]);
      s += "⟩";
      return s;
    }
    throw VocabError("token_string: id " + std::to_string(id) +
                     " is not a special token");
  }
};

// ---------------------------------------------------------------------------
// Byte-pair-encoding vocabulary with whitespace pre-tokenization, an
// end-of-word marker on the final symbol of each word, and byte fallback
// for characters outside the training alphabet. Merges never cross word
// boundaries.
// ---------------------------------------------------------------------------

inline constexpr const char* kEowSuffix = "</w>";

class BpeVocab {
 public:
  BpeVocab() = default;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int target_size() const { return target_size_; }
  int n_merges() const { return static_cast<int>(merges_.size()); }
  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size())
      throw VocabError("token id " + std::to_string(id) + " out of range");
    return id_to_token_[id];
  }

  std::optional<int> lookup(const std::string& tok) const {
    auto it = token_to_id_.find(tok);
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
  }

  // --- training ---

  static BpeVocab train(const std::vector<std::string>& corpus_lines,
                        int target_size) {
    if (corpus_lines.empty())
      throw ConfigError("train_bpe: empty corpus");
    std::map<std::string, int64_t> word_counts;
    bool any_word = false;
    for (const std::string& line : corpus_lines) {
      for (const std::string& w : split_words(line)) {
        ++word_counts[w];
        any_word = true;
      }
    }
    if (!any_word) throw ConfigError("train_bpe: empty corpus");

    BpeVocab v;
    v.target_size_ = target_size;
    for (int i = 0; i < SpecialTokens::count; ++i)
      v.push_token(SpecialTokens::token_string(i));

    // Base alphabet: every symbol occurring in the symbolized corpus,
    // in byte order for reproducibility.
    std::vector<std::vector<std::string>> words;
    std::vector<int64_t> counts;
    std::map<std::string, int64_t> alphabet;
    for (const auto& [w, c] : word_counts) {
      std::vector<std::string> syms = symbolize(w);
      for (const std::string& s : syms) alphabet[s] += c;
      words.push_back(std::move(syms));
      counts.push_back(c);
    }
    if (target_size < SpecialTokens::count + static_cast<int>(alphabet.size()))
      throw ConfigError(
          "train_bpe: target_size " + std::to_string(target_size) +
          " is smaller than reserved tokens + base alphabet (" +
          std::to_string(SpecialTokens::count + alphabet.size()) + ")");
    v.n_reserved_ = SpecialTokens::count + static_cast<int>(alphabet.size());
    for (const auto& [s, c] : alphabet) v.push_token(s);

    while (v.size() < target_size) {
      // Highest-frequency adjacent pair; ties to the lexicographically
      // smallest pair.
      std::map<std::pair<std::string, std::string>, int64_t> pair_counts;
      for (size_t wi = 0; wi < words.size(); ++wi) {
        const auto& syms = words[wi];
        for (size_t i = 0; i + 1 < syms.size(); ++i)
          pair_counts[{syms[i], syms[i + 1]}] += counts[wi];
      }
      const std::pair<std::string, std::string>* best = nullptr;
      int64_t best_count = 1;  // a pair must repeat to be merged
      for (const auto& [pair, c] : pair_counts) {
        if (c > best_count) {
          best_count = c;
          best = &pair;
        }
      }
      if (!best) break;
      v.apply_merge_to_words(*best, words);
      v.merges_.push_back(*best);
      v.merge_rank_[pair_key(best->first, best->second)] =
          static_cast<int>(v.merges_.size()) - 1;
      v.push_token(best->first + best->second);
    }
    return v;
  }

  // --- encoding / decoding ---

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> out;
    for (const std::string& w : split_words(text)) encode_word(w, out);
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::vector<std::string> words;
    std::string cur;
    auto end_word = [&]() {
      words.push_back(cur);
      cur.clear();
    };
    for (int id : ids) {
      const std::string& tok = token(id);
      if (id < SpecialTokens::count) {
        if (SpecialTokens::is_byte(id)) {
          cur.push_back(static_cast<char>(id - 15));
        } else if (id == SpecialTokens::eow) {
          end_word();
        } else {
          // Specials render literally as their own word.
          if (!cur.empty()) end_word();
          words.push_back(tok);
        }
        continue;
      }
      if (tok.size() >= 4 && tok.ends_with(kEowSuffix)) {
        cur += tok.substr(0, tok.size() - 4);
        end_word();
      } else {
        cur += tok;
      }
    }
    if (!cur.empty()) end_word();
    return join_words(words);
  }

  // --- persistence (bit-exact round trip) ---

  std::string save_string() const {
    std::string out = "PLUGS-BPE v1\n";
    for (int i = 0; i < n_reserved_; ++i)
      out += "#RES " + std::to_string(i) + " " + id_to_token_[i] + "\n";
    for (const auto& [l, r] : merges_) out += "#MRG " + l + " " + r + "\n";
    return out;
  }

  static BpeVocab load_string(const std::string& content) {
    std::vector<std::string> lines = split_on(content, '\n');
    if (lines.empty() || lines[0] != "PLUGS-BPE v1")
      throw FormatError("vocabulary file: bad magic line");
    BpeVocab v;
    size_t i = 1;
    for (; i < lines.size(); ++i) {
      const std::string& line = lines[i];
      if (line.empty()) continue;
      std::vector<std::string> f = split_on(line, ' ');
      if (f[0] == "#RES") {
        if (f.size() != 3)
          throw FormatError("vocabulary file: bad #RES line " + line);
        if (!v.merges_.empty())
          throw FormatError("vocabulary file: #RES after #MRG");
        int id = 0;
        try {
          id = std::stoi(f[1]);
        } catch (const std::exception&) {
          throw FormatError("vocabulary file: bad id '" + f[1] + "'");
        }
        if (id != v.size())
          throw FormatError("vocabulary file: non-contiguous id " + f[1]);
        v.push_token(f[2]);
        v.n_reserved_ = v.size();
      } else if (f[0] == "#MRG") {
        if (f.size() != 3)
          throw FormatError("vocabulary file: bad #MRG line " + line);
        v.merges_.emplace_back(f[1], f[2]);
        v.merge_rank_[pair_key(f[1], f[2])] =
            static_cast<int>(v.merges_.size()) - 1;
        v.push_token(f[1] + f[2]);
      } else {
        throw FormatError("vocabulary file: unknown line '" + line + "'");
      }
    }
    if (v.n_reserved_ < SpecialTokens::count)
      throw FormatError("vocabulary file: missing reserved tokens");
    for (int t = 0; t < SpecialTokens::count; ++t) {
      if (v.id_to_token_[t] != SpecialTokens::token_string(t))
        throw FormatError("vocabulary file: reserved token mismatch at id " +
                          std::to_string(t));
    }
    v.target_size_ = v.size();
    return v;
  }

 private:
  static std::string pair_key(const std::string& a, const std::string& b) {
    return a + "\x01" + b;
  }

  static std::vector<std::string> symbolize(const std::string& word) {
    std::vector<std::string> syms = utf8_split(word);
    if (!syms.empty()) syms.back() += kEowSuffix;
    return syms;
  }

  void push_token(const std::string& tok) {
    // Keep the first mapping if two merges ever yield the same string, so
    // lookup stays deterministic and decode stays exact.
    token_to_id_.emplace(tok, size());
    id_to_token_.push_back(tok);
  }

  void apply_merge_to_words(const std::pair<std::string, std::string>& m,
                            std::vector<std::vector<std::string>>& words) const {
    for (auto& syms : words) {
      for (size_t i = 0; i + 1 < syms.size();) {
        if (syms[i] == m.first && syms[i + 1] == m.second) {
          syms[i] += syms[i + 1];
          syms.erase(syms.begin() + static_cast<long>(i) + 1);
        } else {
          ++i;
        }
      }
    }
  }

  void encode_word(const std::string& word, std::vector<int>& out) const {
    std::vector<std::string> syms = symbolize(word);
    // Apply merges in rank order until none fits.
    while (syms.size() >= 2) {
      int best_rank = -1;
      size_t best_pos = 0;
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        auto it = merge_rank_.find(pair_key(syms[i], syms[i + 1]));
        if (it != merge_rank_.end() &&
            (best_rank < 0 || it->second < best_rank)) {
          best_rank = it->second;
          best_pos = i;
        }
      }
      if (best_rank < 0) break;
      syms[best_pos] += syms[best_pos + 1];
      syms.erase(syms.begin() + static_cast<long>(best_pos) + 1);
    }
    for (const std::string& s : syms) {
      auto it = token_to_id_.find(s);
      if (it != token_to_id_.end()) {
        out.push_back(it->second);
        continue;
      }
      // Byte fallback for symbols outside the training alphabet.
      bool final_sym = s.ends_with(kEowSuffix);
      std::string raw = final_sym ? s.substr(0, s.size() - 4) : s;
      for (unsigned char b : raw) out.push_back(SpecialTokens::byte_token(b));
      if (final_sym) out.push_back(SpecialTokens::eow);
    }
  }

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, int> merge_rank_;
  int n_reserved_ = 0;
  int target_size_ = 0;
};

// ---------------------------------------------------------------------------
// Bilingual target sequences: Stabilizer + separator + Caption.
// ---------------------------------------------------------------------------

struct BilingualOutput {
  std::string stabilizer;
  std::string caption;
  LangId lang = LangId::en;
};

inline std::vector<int> build_plugs_target(const BpeVocab& vocab,
                                           const std::string& stabilizer,
                                           const std::string& caption,
                                           LangId lang) {
  if (lang == kPivotLang)
    throw DataError("build_plugs_target: pivot language cannot be the target");
  if (split_words(caption).empty())
    throw DataError("build_plugs_target: empty caption");
  std::vector<int> ids = vocab.encode(stabilizer);
  ids.push_back(SpecialTokens::sep(lang));
  std::vector<int> cap = vocab.encode(caption);
  ids.insert(ids.end(), cap.begin(), cap.end());
  ids.push_back(SpecialTokens::eos);
  return ids;
}

// Splits a decoded sequence at the FIRST separator for `lang`. A leading
// start-of-sequence token and everything from the first eos on are dropped;
// later separators stay in the caption and decode literally.
inline BilingualOutput split_output(const BpeVocab& vocab,
                                    const std::vector<int>& ids, LangId lang) {
  size_t begin = 0, end = ids.size();
  if (!ids.empty() && SpecialTokens::is_sos(ids[0])) begin = 1;
  for (size_t i = begin; i < end; ++i) {
    if (ids[i] == SpecialTokens::eos) {
      end = i;
      break;
    }
  }
  const int sep = SpecialTokens::sep(lang);
  size_t sep_pos = end;
  for (size_t i = begin; i < end; ++i) {
    if (ids[i] == sep) {
      sep_pos = i;
      break;
    }
  }
  if (sep_pos == end)
    throw MissingSeparator("split_output: no " +
                           SpecialTokens::token_string(sep) +
                           " separator in output");
  BilingualOutput out;
  out.lang = lang;
  out.stabilizer = vocab.decode(
      std::vector<int>(ids.begin() + begin, ids.begin() + sep_pos));
  std::vector<int> cap_ids(ids.begin() + sep_pos + 1, ids.begin() + end);
  out.caption = vocab.decode(cap_ids);
  if (out.caption.empty())
    throw EmptyCaption("split_output: empty caption side");
  return out;
}

}  // namespace plugs
