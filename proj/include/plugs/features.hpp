#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "plugs/common.hpp"
#include "plugs/schedule.hpp"
#include "plugs/tensor.hpp"
#include "plugs/vocab.hpp"

namespace plugs {

inline constexpr int kImageDim = 64;
inline constexpr int kLabelDim = 256;
inline constexpr int kMaxLabels = 16;
inline constexpr int kLangRawDim = 64;

// ---------------------------------------------------------------------------
// Per-image inputs: one compact global embedding plus up to sixteen object
// label ids sorted by descending detector confidence.
// ---------------------------------------------------------------------------

struct GlobalImageEmbedding {
  std::vector<double> v;

  void validate(const std::string& ctx) const {
    if (static_cast<int>(v.size()) != kImageDim)
      throw FormatError(ctx + ": global image embedding has " +
                        std::to_string(v.size()) + " dims, expected " +
                        std::to_string(kImageDim));
    for (double x : v)
      if (!std::isfinite(x))
        throw FormatError(ctx + ": non-finite value in image embedding");
  }
};

struct ObjectLabelList {
  std::vector<uint32_t> ids;  // confidence-descending

  void validate(const std::string& ctx) const {
    if (static_cast<int>(ids.size()) > kMaxLabels)
      throw FormatError(ctx + ": " + std::to_string(ids.size()) +
                        " object labels, expected at most " +
                        std::to_string(kMaxLabels));
  }
};

struct FeatureRecord {
  GlobalImageEmbedding image;
  ObjectLabelList labels;
};

using FeatureMap = std::map<std::string, FeatureRecord>;

// ---------------------------------------------------------------------------
// Frozen object-label embedding table (256-dim rows, float32 precision).
// ---------------------------------------------------------------------------

class ObjectLabelEmbeddingTable {
 public:
  void insert(uint32_t id, std::vector<double> row) {
    if (static_cast<int>(row.size()) != kLabelDim)
      throw FormatError("label embedding row " + std::to_string(id) + " has " +
                        std::to_string(row.size()) + " dims, expected " +
                        std::to_string(kLabelDim));
    for (double& x : row) x = static_cast<double>(static_cast<float>(x));
    rows_[id] = std::move(row);
  }

  bool contains(uint32_t id) const { return rows_.count(id) > 0; }
  size_t size() const { return rows_.size(); }

  const std::vector<double>& row(uint32_t id) const {
    auto it = rows_.find(id);
    if (it == rows_.end())
      throw DataError("object label id " + std::to_string(id) +
                      " not in embedding table");
    return it->second;
  }

  const std::map<uint32_t, std::vector<double>>& rows() const { return rows_; }

  std::string save_bytes() const {
    std::string out = "PLGS-OBJ v1";
    write_u64le(out, rows_.size());
    for (const auto& [id, row] : rows_) {
      write_u32le(out, id);
      for (double x : row) write_f32le(out, static_cast<float>(x));
    }
    return out;
  }

  static ObjectLabelEmbeddingTable load_bytes(const std::string& bytes) {
    ByteReader r(bytes, "label table");
    std::string magic = r.read_bytes(11);
    if (magic != "PLGS-OBJ v1")
      throw FormatError("label table: bad magic");
    uint64_t count = r.read_u64le();
    ObjectLabelEmbeddingTable t;
    for (uint64_t i = 0; i < count; ++i) {
      uint32_t id = r.read_u32le();
      std::vector<double> row(kLabelDim);
      for (int d = 0; d < kLabelDim; ++d)
        row[d] = static_cast<double>(r.read_f32le());
      t.insert(id, std::move(row));
    }
    if (!r.at_end()) throw FormatError("label table: trailing bytes");
    return t;
  }

 private:
  std::map<uint32_t, std::vector<double>> rows_;
};

// ---------------------------------------------------------------------------
// Two affine layers with linear activation, projecting a raw feature space
// into the model dimension. Trainable jointly with the rest of the model.
// ---------------------------------------------------------------------------

struct ProjectionMLP {
  Tensor w1, b1, w2, b2;

  static ProjectionMLP init(const std::string& prefix, int in_dim, int out_dim,
                            Rng& rng, ParamMap& params) {
    auto normal = [&](size_t r, size_t c, double scale) {
      std::vector<double> data(r * c);
      for (double& x : data)
        x = static_cast<double>(
            static_cast<float>(rng.next_normal() * scale));
      return Tensor({r, c}, std::move(data), /*requires_grad=*/true);
    };
    ProjectionMLP m;
    size_t in = static_cast<size_t>(in_dim), out = static_cast<size_t>(out_dim);
    m.w1 = normal(in, out, 1.0 / std::sqrt(static_cast<double>(in_dim)));
    m.b1 = Tensor::zeros({out}, /*requires_grad=*/true);
    m.w2 = normal(out, out, 1.0 / std::sqrt(static_cast<double>(out_dim)));
    m.b2 = Tensor::zeros({out}, /*requires_grad=*/true);
    params.emplace(prefix + ".w1", m.w1);
    params.emplace(prefix + ".b1", m.b1);
    params.emplace(prefix + ".w2", m.w2);
    params.emplace(prefix + ".b2", m.b2);
    return m;
  }

  static ProjectionMLP from_params(const std::string& prefix,
                                   const ParamMap& params) {
    auto get = [&](const std::string& k) {
      auto it = params.find(prefix + "." + k);
      if (it == params.end())
        throw ConfigError("missing parameter " + prefix + "." + k);
      return it->second;
    };
    return ProjectionMLP{get("w1"), get("b1"), get("w2"), get("b2")};
  }

  // x: [n, in_dim] -> [n, out_dim]
  Tensor apply(const Tensor& x) const {
    if (x.shape().size() != 2 || x.shape()[1] != w1.shape()[0])
      throw DimensionError("projection input has dim " +
                           std::to_string(x.shape().back()) + ", expected " +
                           std::to_string(w1.shape()[0]));
    return add_bias(matmul(add_bias(matmul(x, w1), b1), w2), b2);
  }
};

// Projections and raw LangId embeddings feeding the encoder.
struct FeatureParams {
  ProjectionMLP img_proj;    // 64 -> d_model
  ProjectionMLP label_proj;  // 256 -> d_model
  ProjectionMLP lang_proj;   // kLangRawDim -> d_model
  Tensor lang_embed;         // [kLangCount, kLangRawDim], trainable

  static FeatureParams init(int d_model, Rng& rng, ParamMap& params) {
    FeatureParams f;
    f.img_proj = ProjectionMLP::init("enc.img_proj", kImageDim, d_model, rng,
                                     params);
    f.label_proj = ProjectionMLP::init("enc.label_proj", kLabelDim, d_model,
                                       rng, params);
    f.lang_proj = ProjectionMLP::init("enc.lang_proj", kLangRawDim, d_model,
                                      rng, params);
    std::vector<double> le(static_cast<size_t>(kLangCount) * kLangRawDim);
    for (double& x : le)
      x = static_cast<double>(static_cast<float>(rng.next_normal() * 0.1));
    f.lang_embed = Tensor({static_cast<size_t>(kLangCount), kLangRawDim},
                          std::move(le), /*requires_grad=*/true);
    params.emplace("enc.lang_embed", f.lang_embed);
    return f;
  }

  static FeatureParams from_params(const ParamMap& params) {
    FeatureParams f;
    f.img_proj = ProjectionMLP::from_params("enc.img_proj", params);
    f.label_proj = ProjectionMLP::from_params("enc.label_proj", params);
    f.lang_proj = ProjectionMLP::from_params("enc.lang_proj", params);
    auto it = params.find("enc.lang_embed");
    if (it == params.end()) throw ConfigError("missing parameter enc.lang_embed");
    f.lang_embed = it->second;
    return f;
  }
};

// ---------------------------------------------------------------------------
// Sinusoidal positional encodings, applied to text segments only.
// ---------------------------------------------------------------------------

inline Tensor sinusoid_positions(size_t len, size_t d_model, size_t offset = 0) {
  std::vector<double> data(len * d_model, 0.0);
  for (size_t pos = 0; pos < len; ++pos) {
    for (size_t i = 0; i * 2 < d_model; ++i) {
      double angle = static_cast<double>(pos + offset) /
                     std::pow(10000.0, (2.0 * static_cast<double>(i)) /
                                           static_cast<double>(d_model));
      data[pos * d_model + 2 * i] = std::sin(angle);
      if (2 * i + 1 < d_model) data[pos * d_model + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({len, d_model}, std::move(data));
}

// ---------------------------------------------------------------------------
// Encoder input assembly. Layout is fixed: projected image embedding first,
// then projected object-label embeddings in confidence order, then the
// projected LangId embedding, then (optionally) embedded source text with
// sinusoidal positions, truncated to prefix_len tokens when set.
// ---------------------------------------------------------------------------

struct EncoderInput {
  Tensor x;                  // [len, d_model]
  std::vector<double> mask;  // all ones at assembly; padding added in batches
  size_t len = 0;
  size_t n_labels = 0;
  size_t lang_pos = 0;       // index of the LangId slot
  long text_start = -1;      // index of first text token, -1 if none
};

inline EncoderInput assemble_encoder_input(
    const GlobalImageEmbedding& img, const ObjectLabelList& labels,
    LangId lang, const std::optional<std::vector<int>>& src_text_ids,
    std::optional<int> prefix_len, const ObjectLabelEmbeddingTable& table,
    const FeatureParams& fp, const Tensor& text_embed) {
  img.validate("assemble_encoder_input");
  labels.validate("assemble_encoder_input");
  if (prefix_len.has_value() && !src_text_ids.has_value())
    throw ConfigError("assemble_encoder_input: prefix_len without source text");
  if (prefix_len.has_value() && *prefix_len <= 0)
    throw ConfigError("assemble_encoder_input: prefix_len must be positive");

  const size_t d_model = text_embed.shape()[1];

  std::vector<Tensor> parts;
  parts.push_back(
      fp.img_proj.apply(Tensor({1, static_cast<size_t>(kImageDim)}, img.v)));
  if (!labels.ids.empty()) {
    std::vector<double> rows;
    rows.reserve(labels.ids.size() * kLabelDim);
    for (uint32_t id : labels.ids) {
      const std::vector<double>& r = table.row(id);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    parts.push_back(fp.label_proj.apply(
        Tensor({labels.ids.size(), static_cast<size_t>(kLabelDim)},
               std::move(rows))));
  }
  std::vector<int> lang_row{static_cast<int>(lang)};
  parts.push_back(
      fp.lang_proj.apply(embedding_lookup(fp.lang_embed, lang_row)));

  EncoderInput out;
  out.n_labels = labels.ids.size();
  out.lang_pos = 1 + labels.ids.size();

  if (src_text_ids.has_value()) {
    std::vector<int> text = *src_text_ids;
    if (prefix_len.has_value() &&
        static_cast<size_t>(*prefix_len) < text.size())
      text.resize(static_cast<size_t>(*prefix_len));
    if (!text.empty()) {
      Tensor emb = scale(embedding_lookup(text_embed, text),
                         std::sqrt(static_cast<double>(d_model)));
      out.text_start = static_cast<long>(out.lang_pos) + 1;
      parts.push_back(add(emb, sinusoid_positions(text.size(), d_model)));
    }
  }

  out.x = parts.size() == 1 ? parts[0] : concat_rows(parts);
  out.len = out.x.shape()[0];
  out.mask.assign(out.len, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Features file: one record per line, tab-separated — image_id, 64
// space-separated decimals, semicolon-separated label ids.
// ---------------------------------------------------------------------------

inline std::string save_features_string(const FeatureMap& feats) {
  std::string out;
  char buf[64];
  for (const auto& [id, rec] : feats) {
    rec.image.validate("features record " + id);
    rec.labels.validate("features record " + id);
    out += id;
    out += '\t';
    for (size_t i = 0; i < rec.image.v.size(); ++i) {
      if (i) out += ' ';
      std::snprintf(buf, sizeof(buf), "%.17g", rec.image.v[i]);
      out += buf;
    }
    out += '\t';
    for (size_t i = 0; i < rec.labels.ids.size(); ++i) {
      if (i) out += ';';
      out += std::to_string(rec.labels.ids[i]);
    }
    out += '\n';
  }
  return out;
}

inline FeatureMap load_features_string(const std::string& content) {
  FeatureMap feats;
  size_t line_no = 0;
  for (const std::string& line : split_on(content, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields = split_on(line, '\t');
    if (fields.size() != 3)
      throw FormatError("features line " + std::to_string(line_no) +
                        ": expected 3 tab-separated fields");
    const std::string& id = fields[0];
    FeatureRecord rec;
    for (const std::string& tok : split_words(fields[1])) {
      char* end = nullptr;
      double x = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0')
        throw FormatError("features record " + id + ": bad number '" + tok +
                          "'");
      rec.image.v.push_back(x);
    }
    rec.image.validate("features record " + id);
    if (!fields[2].empty()) {
      for (const std::string& tok : split_on(fields[2], ';')) {
        try {
          rec.labels.ids.push_back(static_cast<uint32_t>(std::stoul(tok)));
        } catch (const std::exception&) {
          throw FormatError("features record " + id + ": bad label id '" +
                            tok + "'");
        }
      }
    }
    // Detectors may emit more hits; only the sixteen most confident are kept.
    if (rec.labels.ids.size() > static_cast<size_t>(kMaxLabels))
      rec.labels.ids.resize(kMaxLabels);
    if (feats.count(id))
      throw FormatError("features record " + id + ": duplicate image id");
    feats[id] = std::move(rec);
  }
  return feats;
}

}  // namespace plugs
