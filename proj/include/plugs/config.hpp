#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "plugs/decode.hpp"
#include "plugs/schedule.hpp"
#include "plugs/transformer.hpp"
#include "plugs/world.hpp"

namespace plugs {

// ---------------------------------------------------------------------------
// Whole-file IO. Everything persisted by this project is written through
// these two helpers so failure modes are uniform.
// ---------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataError("cannot read file: " + path);
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open file for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out) throw DataError("cannot write file: " + path);
}

// ---------------------------------------------------------------------------
// RunConfig: plain-text `key=value` experiment configuration.
//
//   * `#`-prefixed lines are comments, blank lines are ignored;
//   * `include other.cfg` splices another file (path relative to the
//     including file), later assignments override earlier ones;
//   * the key set is closed: unknown keys are rejected at parse time;
//   * `resolved()` serializes every key sorted, so each run can record the
//     exact configuration it executed beside its outputs.
// ---------------------------------------------------------------------------

class RunConfig {
 public:
  // Every known key with its default value. Keys defaulting to the empty
  // string are optional inputs (paths, overrides) that commands check with
  // has().
  static const std::map<std::string, std::string>& known_keys() {
    static const std::map<std::string, std::string> keys = {
        {"seed", "7"},
        {"threads", "1"},
        {"out", ""},

        {"world.noise_p", "0.15"},
        {"world.seed", "7"},

        {"synth.n", "1000"},
        {"synth.train_pct", "80"},
        {"synth.val_pct", "10"},
        {"synth.test_pct", "10"},

        {"vocab.budget", "1200"},

        {"model.preset", "desk_tiny"},
        {"model.enc_layers", ""},
        {"model.dec_layers", ""},
        {"model.heads", ""},
        {"model.d_model", ""},
        {"model.d_ff", ""},

        {"train.preset", "desk"},
        {"train.optimizer", ""},
        {"train.base_lr", ""},
        {"train.warmup_steps", ""},
        {"train.decay_steps", ""},
        {"train.decay_rate", ""},
        {"train.l2_weight", ""},
        {"train.batch_size", ""},
        {"train.dropout", ""},
        {"train.steps", "600"},
        {"train.checkpoint_every", "100"},

        {"decode.beam_width", "5"},
        {"decode.max_len", "24"},
        {"decode.length_normalization", "false"},

        {"run.kind", ""},
        {"run.lang", ""},
        {"run.split", ""},

        {"paths.features", ""},
        {"paths.captions", ""},
        {"paths.splits", ""},
        {"paths.labels", ""},
        {"paths.vocab", ""},
        {"paths.checkpoint", ""},
        {"paths.resume", ""},
        {"paths.corpus", ""},
        {"paths.candidates", ""},
        {"paths.references", ""},
        {"paths.stabilizers", ""},
        {"paths.ratings", ""},
        {"paths.pairs", ""},

        {"compare.kinds", "TGT,TTG-2L,PLuGS-2L"},
        {"compare.langs", "fr"},
        {"compare.seeds", "1,2,3"},
        {"compare.train_scenes", "2000"},
        {"compare.eval_scenes", "200"},
        {"compare.steps", "600"},
        {"compare.model_preset", "desk_tiny"},
        {"compare.large_model_preset", "desk_large"},

        // Whether PLuGS-5L training also includes plain pivot-language rows.
        {"plugs.include_pivot", "false"},
    };
    return keys;
  }

  RunConfig() : values_(known_keys()) {}

  static RunConfig from_file(const std::string& path) {
    RunConfig cfg;
    std::set<std::string> visited;
    cfg.merge_file(path, visited, 0);
    return cfg;
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end())
      throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  bool has(const std::string& key) const { return !str(key).empty(); }

  int64_t i64(const std::string& key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || end == s.c_str() || *end != '\0')
      throw ConfigError("config key " + key + ": not an integer: '" + s + "'");
    return static_cast<int64_t>(v);
  }

  uint64_t u64(const std::string& key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || end == s.c_str() || *end != '\0' || s[0] == '-')
      throw ConfigError("config key " + key +
                        ": not a non-negative integer: '" + s + "'");
    return static_cast<uint64_t>(v);
  }

  double dbl(const std::string& key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end == s.c_str() || *end != '\0')
      throw ConfigError("config key " + key + ": not a number: '" + s + "'");
    return v;
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "yes" || s == "1") return true;
    if (s == "false" || s == "no" || s == "0") return false;
    throw ConfigError("config key " + key + ": not a boolean: '" + s + "'");
  }

  // Sorted key=value dump of the full resolved configuration.
  std::string resolved() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  // ----- typed views over the raw map ------------------------------------

  WorldConfig world_config() const {
    WorldConfig w;
    w.noise_p = dbl("world.noise_p");
    w.seed = u64("world.seed");
    w.validate();
    return w;
  }

  TrainConfig train_config() const {
    TrainConfig c = train_preset(str("train.preset"));
    if (has("train.optimizer"))
      c.optimizer = opt_kind_from_string(str("train.optimizer"));
    if (has("train.base_lr")) c.schedule.base_lr = dbl("train.base_lr");
    if (has("train.warmup_steps"))
      c.schedule.warmup_steps = i64("train.warmup_steps");
    if (has("train.decay_steps"))
      c.schedule.decay_steps = i64("train.decay_steps");
    if (has("train.decay_rate"))
      c.schedule.decay_rate = dbl("train.decay_rate");
    if (has("train.l2_weight")) c.l2_weight = dbl("train.l2_weight");
    if (has("train.batch_size")) c.batch_size = i64("train.batch_size");
    if (has("train.dropout")) c.dropout = dbl("train.dropout");
    c.seed = u64("seed");
    c.validate();
    return c;
  }

  DecodeConfig decode_config() const {
    DecodeConfig d;
    d.beam_width = static_cast<int>(i64("decode.beam_width"));
    d.max_len = static_cast<int>(i64("decode.max_len"));
    d.length_normalization = flag("decode.length_normalization");
    d.validate();
    return d;
  }

  // Model shape only; callers fill vocab_size (and langs if non-default).
  ModelConfig model_config() const {
    ModelConfig m = model_preset(str("model.preset"));
    if (has("model.enc_layers"))
      m.enc_layers = static_cast<int>(i64("model.enc_layers"));
    if (has("model.dec_layers"))
      m.dec_layers = static_cast<int>(i64("model.dec_layers"));
    if (has("model.heads")) m.heads = static_cast<int>(i64("model.heads"));
    if (has("model.d_model"))
      m.d_model = static_cast<int>(i64("model.d_model"));
    if (has("model.d_ff")) m.d_ff = static_cast<int>(i64("model.d_ff"));
    m.dropout = train_config().dropout;
    m.langs = all_langs();
    return m;
  }

 private:
  static std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  void merge_file(const std::string& path, std::set<std::string>& visited,
                  int depth) {
    if (depth > 16)
      throw ConfigError("config include nesting deeper than 16: " + path);
    std::error_code ec;
    std::filesystem::path canon = std::filesystem::weakly_canonical(path, ec);
    std::string canon_key = ec ? path : canon.string();
    if (!visited.insert(canon_key).second)
      throw ConfigError("config include cycle at " + path);
    std::string text;
    try {
      text = read_file(path);
    } catch (const DataError& e) {
      // A missing configuration file is a configuration problem.
      throw ConfigError(e.what());
    }
    std::filesystem::path dir = std::filesystem::path(path).parent_path();
    size_t line_no = 0;
    for (const std::string& raw : split_on(text, '\n')) {
      ++line_no;
      std::string line = trim(raw);
      if (line.empty() || line[0] == '#') continue;
      if (line.rfind("include", 0) == 0 &&
          (line.size() == 7 || line[7] == ' ' || line[7] == '\t')) {
        std::string inc = trim(line.substr(7));
        if (inc.empty())
          throw ConfigError(path + ":" + std::to_string(line_no) +
                            ": include needs a path");
        std::filesystem::path inc_path(inc);
        if (inc_path.is_relative()) inc_path = dir / inc_path;
        merge_file(inc_path.string(), visited, depth + 1);
        continue;
      }
      size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(line_no) +
                          ": expected key=value, got '" + line + "'");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError(path + ":" + std::to_string(line_no) +
                          ": empty key");
      try {
        set(key, value);
      } catch (const ConfigError& e) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": " +
                          e.what());
      }
    }
    visited.erase(canon_key);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace plugs
