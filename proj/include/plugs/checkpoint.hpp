#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "plugs/common.hpp"
#include "plugs/optimizer.hpp"
#include "plugs/transformer.hpp"

namespace plugs {

// ---------------------------------------------------------------------------
// Checkpoint file: line `PLGS-CKPT v1`, a key=value config block terminated
// by a blank line, then one record per tensor — u64 name length, name bytes,
// u64 rank, u64 dims, float32 little-endian values. Optimizer moments are
// stored as `opt.m.<param>` / `opt.v.<param>` records. Parameters and
// moments are float32-snapped in memory, so the encoding is lossless and
// save→load→save is byte-identical.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string langs_to_string(const std::vector<LangId>& langs) {
  std::string out;
  for (size_t i = 0; i < langs.size(); ++i) {
    if (i) out += ',';
    out += lang_code(langs[i]);
  }
  return out;
}

inline std::vector<LangId> langs_from_string(const std::string& s) {
  std::vector<LangId> out;
  if (s.empty()) return out;
  for (const std::string& code : split_on(s, ','))
    out.push_back(lang_from_code(code));
  return out;
}

inline void write_record(std::string& out, const std::string& name,
                         const std::vector<size_t>& shape,
                         const std::vector<double>& values) {
  write_u64le(out, name.size());
  out += name;
  write_u64le(out, shape.size());
  for (size_t d : shape) write_u64le(out, d);
  for (double x : values) write_f32le(out, static_cast<float>(x));
}

}  // namespace detail

struct LoadedCheckpoint {
  ModelConfig config;
  ParamMap params;
  int64_t step = 0;
  uint64_t seed = 0;
  OptState opt;
  bool has_opt = false;

  Transformer build_model() const {
    return Transformer::from_params(config, params);
  }
};

inline std::string save_checkpoint(const Transformer& model, int64_t step,
                                   uint64_t seed,
                                   const OptState* opt = nullptr) {
  const ModelConfig& c = model.config();
  std::string out = "PLGS-CKPT v1\n";
  out += "enc_layers=" + std::to_string(c.enc_layers) + "\n";
  out += "dec_layers=" + std::to_string(c.dec_layers) + "\n";
  out += "heads=" + std::to_string(c.heads) + "\n";
  out += "d_model=" + std::to_string(c.d_model) + "\n";
  out += "d_ff=" + std::to_string(c.d_ff) + "\n";
  out += "dropout=" + detail::format_double(c.dropout) + "\n";
  out += "vocab_size=" + std::to_string(c.vocab_size) + "\n";
  out += "langs=" + detail::langs_to_string(c.langs) + "\n";
  out += "step=" + std::to_string(step) + "\n";
  out += "seed=" + std::to_string(seed) + "\n";
  if (opt) out += "adam_t=" + std::to_string(opt->adam_t) + "\n";
  out += "\n";
  for (const auto& [name, t] : model.params())
    detail::write_record(out, name, t.shape(), t.data());
  if (opt) {
    for (const auto& [name, m] : opt->m) {
      auto it = model.params().find(name);
      if (it == model.params().end())
        throw ConfigError("optimizer state for unknown parameter " + name);
      detail::write_record(out, "opt.m." + name, it->second.shape(), m);
    }
    for (const auto& [name, v] : opt->v) {
      auto it = model.params().find(name);
      if (it == model.params().end())
        throw ConfigError("optimizer state for unknown parameter " + name);
      detail::write_record(out, "opt.v." + name, it->second.shape(), v);
    }
  }
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::string& bytes) {
  size_t pos = bytes.find('\n');
  if (pos == std::string::npos || bytes.substr(0, pos) != "PLGS-CKPT v1")
    throw FormatError("checkpoint: bad magic");
  LoadedCheckpoint ck;
  size_t line_start = pos + 1;
  bool saw_blank = false;
  while (line_start < bytes.size()) {
    size_t nl = bytes.find('\n', line_start);
    if (nl == std::string::npos)
      throw FormatError("checkpoint: unterminated config block");
    std::string line = bytes.substr(line_start, nl - line_start);
    line_start = nl + 1;
    if (line.empty()) {
      saw_blank = true;
      break;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("checkpoint: bad config line '" + line + "'");
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    try {
      if (key == "enc_layers") ck.config.enc_layers = std::stoi(value);
      else if (key == "dec_layers") ck.config.dec_layers = std::stoi(value);
      else if (key == "heads") ck.config.heads = std::stoi(value);
      else if (key == "d_model") ck.config.d_model = std::stoi(value);
      else if (key == "d_ff") ck.config.d_ff = std::stoi(value);
      else if (key == "dropout") ck.config.dropout = std::stod(value);
      else if (key == "vocab_size") ck.config.vocab_size = std::stoi(value);
      else if (key == "langs")
        ck.config.langs = detail::langs_from_string(value);
      else if (key == "step") ck.step = std::stoll(value);
      else if (key == "seed") ck.seed = std::stoull(value);
      else if (key == "adam_t") {
        ck.opt.adam_t = std::stoll(value);
        ck.has_opt = true;
      } else {
        throw FormatError("checkpoint: unknown config key '" + key + "'");
      }
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception&) {
      throw FormatError("checkpoint: bad value for '" + key + "'");
    }
  }
  if (!saw_blank) throw FormatError("checkpoint: missing end of config block");

  const std::string payload = bytes.substr(line_start);
  ByteReader r(payload, "checkpoint");
  while (!r.at_end()) {
    uint64_t name_len = r.read_u64le();
    std::string name = r.read_bytes(name_len);
    uint64_t rank = r.read_u64le();
    if (rank > 8) throw FormatError("checkpoint: absurd tensor rank");
    std::vector<size_t> shape;
    size_t n = 1;
    for (uint64_t i = 0; i < rank; ++i) {
      uint64_t d = r.read_u64le();
      shape.push_back(static_cast<size_t>(d));
      n *= static_cast<size_t>(d);
    }
    std::vector<double> values(n);
    for (size_t i = 0; i < n; ++i)
      values[i] = static_cast<double>(r.read_f32le());
    if (name.rfind("opt.m.", 0) == 0) {
      ck.opt.m[name.substr(6)] = std::move(values);
    } else if (name.rfind("opt.v.", 0) == 0) {
      ck.opt.v[name.substr(6)] = std::move(values);
    } else {
      if (ck.params.count(name))
        throw FormatError("checkpoint: duplicate tensor " + name);
      ck.params.emplace(name, Tensor(std::move(shape), std::move(values),
                                     /*requires_grad=*/true));
    }
  }
  ck.config.validate();
  return ck;
}

}  // namespace plugs
