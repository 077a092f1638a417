#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "plugs/common.hpp"
#include "plugs/transformer.hpp"

namespace plugs {

struct DecodeConfig {
  int beam_width = 5;
  int max_len = 64;
  bool length_normalization = false;

  void validate() const {
    if (beam_width < 1) throw ConfigError("decode: beam_width must be >= 1");
    if (max_len < 1) throw ConfigError("decode: max_len must be >= 1");
  }
};

// Scores the next token given the full prefix (starting with the
// start-of-sequence token); returns log-probabilities over the vocabulary.
using StepFn =
    std::function<std::vector<double>(const std::vector<int>& prefix)>;

namespace detail {

struct Hypothesis {
  std::vector<int> emitted;  // tokens after sos, including a final eos
  double score = 0.0;
};

// Higher score first; ties prefer the lexicographically smaller sequence
// (lower token id at the first difference, then shorter).
inline bool hyp_better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.emitted < b.emitted;
}

}  // namespace detail

// Deterministic beam search. Hypotheses end at eos or after max_len emitted
// tokens; the best completed hypothesis by cumulative log-probability wins
// (mean per-token log-probability when length_normalization is set).
inline std::vector<int> beam_search(const StepFn& step, int vocab_size,
                                    int sos, int eos,
                                    const DecodeConfig& cfg) {
  cfg.validate();
  using detail::Hypothesis;
  std::vector<Hypothesis> live{{{}, 0.0}};
  std::vector<Hypothesis> done;

  for (int t = 0; t < cfg.max_len && !live.empty(); ++t) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(live.size() * static_cast<size_t>(vocab_size));
    for (const Hypothesis& h : live) {
      std::vector<int> prefix;
      prefix.reserve(h.emitted.size() + 1);
      prefix.push_back(sos);
      prefix.insert(prefix.end(), h.emitted.begin(), h.emitted.end());
      std::vector<double> lp = step(prefix);
      if (static_cast<int>(lp.size()) != vocab_size)
        throw DimensionError("beam_search: step returned " +
                             std::to_string(lp.size()) + " scores, expected " +
                             std::to_string(vocab_size));
      for (int v = 0; v < vocab_size; ++v) {
        Hypothesis c;
        c.emitted = h.emitted;
        c.emitted.push_back(v);
        c.score = h.score + lp[v];
        candidates.push_back(std::move(c));
      }
    }
    if (static_cast<int>(candidates.size()) > cfg.beam_width) {
      std::partial_sort(candidates.begin(),
                        candidates.begin() + cfg.beam_width, candidates.end(),
                        detail::hyp_better);
      candidates.resize(static_cast<size_t>(cfg.beam_width));
    } else {
      std::sort(candidates.begin(), candidates.end(), detail::hyp_better);
    }
    live.clear();
    for (Hypothesis& c : candidates) {
      if (c.emitted.back() == eos || t + 1 == cfg.max_len)
        done.push_back(std::move(c));
      else
        live.push_back(std::move(c));
    }
  }

  if (done.empty())  // only possible via pathological max_len/width interplay
    throw NumericError("beam_search: no completed hypothesis");
  auto final_better = [&](const Hypothesis& a, const Hypothesis& b) {
    if (cfg.length_normalization) {
      double na = a.score / static_cast<double>(a.emitted.size());
      double nb = b.score / static_cast<double>(b.emitted.size());
      if (na != nb) return na > nb;
    }
    return detail::hyp_better(a, b);
  };
  std::sort(done.begin(), done.end(), final_better);
  return done.front().emitted;
}

// Log-softmax of the final row of a logits matrix, in plain doubles.
inline std::vector<double> last_row_log_softmax(const Tensor& logits) {
  const size_t rows = logits.dim(0), cols = logits.dim(1);
  const double* row = logits.data().data() + (rows - 1) * cols;
  double mx = row[0];
  for (size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (size_t j = 0; j < cols; ++j) sum += std::exp(row[j] - mx);
  double lse = mx + std::log(sum);
  std::vector<double> lp(cols);
  for (size_t j = 0; j < cols; ++j) lp[j] = row[j] - lse;
  return lp;
}

// Full generation: assemble the encoder input, encode once, then beam-search
// the decoder, re-running the teacher-forced forward per step. Returns the
// raw emitted token sequence (no sos; includes eos when one was produced).
inline std::vector<int> generate(
    const Transformer& model, const GlobalImageEmbedding& img,
    const ObjectLabelList& labels, LangId lang,
    const ObjectLabelEmbeddingTable& table, const DecodeConfig& cfg,
    const std::optional<std::vector<int>>& src_text = std::nullopt,
    std::optional<int> prefix_len = std::nullopt) {
  cfg.validate();
  EncoderInput enc_in =
      model.assemble(img, labels, lang, src_text, prefix_len, table);
  Memory mem = model.encode(enc_in);
  StepFn step = [&](const std::vector<int>& prefix) {
    return last_row_log_softmax(model.forward_teacher_forced(mem, prefix));
  };
  return beam_search(step, model.config().vocab_size,
                     SpecialTokens::sos(lang), SpecialTokens::eos, cfg);
}

}  // namespace plugs
