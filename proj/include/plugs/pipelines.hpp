#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "plugs/decode.hpp"
#include "plugs/metrics.hpp"
#include "plugs/schedule.hpp"
#include "plugs/transformer.hpp"
#include "plugs/world.hpp"

namespace plugs {

// ---------------------------------------------------------------------------
// The three system shapes, in bilingual (2L) and five-language (5L) forms:
//   TGT    train a pivot-language captioner, translate its output at runtime;
//   TTG    translate the training captions, train a target-language captioner;
//   PLuGS  train on pivot + separator + target concatenations and split the
//          generated sequence at the separator.
// ---------------------------------------------------------------------------

enum class PipelineKind { TGT, TTG_2L, PLuGS_2L, TTG_5L, TTG_large_5L, PLuGS_5L };

inline const std::string& kind_name(PipelineKind k) {
  static const std::array<std::string, 6> names{
      "TGT", "TTG-2L", "PLuGS-2L", "TTG-5L", "TTG-large-5L", "PLuGS-5L"};
  return names[static_cast<int>(k)];
}

inline PipelineKind kind_from_name(const std::string& name) {
  for (int k = 0; k < 6; ++k)
    if (kind_name(static_cast<PipelineKind>(k)) == name)
      return static_cast<PipelineKind>(k);
  throw ConfigError("unknown pipeline kind '" + name + "'");
}

inline bool is_plugs(PipelineKind k) {
  return k == PipelineKind::PLuGS_2L || k == PipelineKind::PLuGS_5L;
}
inline bool is_5l(PipelineKind k) {
  return k == PipelineKind::TTG_5L || k == PipelineKind::TTG_large_5L ||
         k == PipelineKind::PLuGS_5L;
}

// ---------------------------------------------------------------------------
// Dataset construction.
// ---------------------------------------------------------------------------

struct DatasetExample {
  Scene scene;
  GlobalImageEmbedding image;
  ObjectLabelList labels;
  LangId lang = LangId::en;   // language-id input and decoder start language
  std::string stabilizer;     // pivot text; nonempty only for PLuGS targets
  std::string caption;        // target-side text in `lang`
};

// Noisy translation for a training target. The engine is a pure function of
// the text, so an all-words-dropped result is retried on fresh noise salts;
// the clean translation is the (practically unreachable) last resort.
inline std::string noisy_caption(const SyntheticWorld& world,
                                 const std::string& en_caption, LangId tgt) {
  for (uint64_t salt = 0; salt < 16; ++salt) {
    std::string out = world.translate(en_caption, LangId::en, tgt, true, salt);
    if (!split_words(out).empty()) return out;
  }
  return world.translate(en_caption, LangId::en, tgt, false);
}

namespace detail {

inline void require_langs(PipelineKind kind, const std::vector<LangId>& langs) {
  if (kind == PipelineKind::TGT) return;  // translation picks the language
  if (is_5l(kind)) {
    for (LangId l : target_langs())
      if (std::find(langs.begin(), langs.end(), l) == langs.end())
        throw ConfigError("build_dataset: " + kind_name(kind) + " requires " +
                          lang_code(l));
    return;
  }
  if (langs.size() != 1 || langs[0] == kPivotLang)
    throw ConfigError("build_dataset: " + kind_name(kind) +
                      " needs exactly one non-pivot language");
}

}  // namespace detail

// Sizes per N scenes: TGT N, TTG-2L N, PLuGS-2L N, TTG-5L 6N (five
// translations plus the pivot), PLuGS-5L 5N. Including pivot-only targets in
// PLuGS training is off by default and adds N plain pivot captions.
inline std::vector<DatasetExample> build_dataset(
    PipelineKind kind, const SyntheticWorld& world,
    const std::vector<Scene>& scenes, const std::vector<LangId>& langs,
    bool plugs_include_pivot = false) {
  detail::require_langs(kind, langs);
  std::vector<DatasetExample> out;
  for (const Scene& scene : scenes) {
    SynthExample ex = world.example(scene);
    auto base = [&]() {
      DatasetExample d;
      d.scene = scene;
      d.image = ex.image;
      d.labels = ex.labels;
      return d;
    };
    switch (kind) {
      case PipelineKind::TGT: {
        DatasetExample d = base();
        d.lang = LangId::en;
        d.caption = ex.caption;
        out.push_back(std::move(d));
        break;
      }
      case PipelineKind::TTG_2L: {
        DatasetExample d = base();
        d.lang = langs[0];
        d.caption = noisy_caption(world, ex.caption, langs[0]);
        out.push_back(std::move(d));
        break;
      }
      case PipelineKind::PLuGS_2L: {
        DatasetExample d = base();
        d.lang = langs[0];
        d.stabilizer = ex.caption;
        d.caption = noisy_caption(world, ex.caption, langs[0]);
        out.push_back(std::move(d));
        break;
      }
      case PipelineKind::TTG_5L:
      case PipelineKind::TTG_large_5L: {
        DatasetExample en = base();
        en.lang = LangId::en;
        en.caption = ex.caption;
        out.push_back(std::move(en));
        for (LangId l : target_langs()) {
          DatasetExample d = base();
          d.lang = l;
          d.caption = noisy_caption(world, ex.caption, l);
          out.push_back(std::move(d));
        }
        break;
      }
      case PipelineKind::PLuGS_5L: {
        if (plugs_include_pivot) {
          DatasetExample en = base();
          en.lang = LangId::en;
          en.caption = ex.caption;
          out.push_back(std::move(en));
        }
        for (LangId l : target_langs()) {
          DatasetExample d = base();
          d.lang = l;
          d.stabilizer = ex.caption;
          d.caption = noisy_caption(world, ex.caption, l);
          out.push_back(std::move(d));
        }
        break;
      }
    }
  }
  return out;
}

// Token-level training view of a dataset example.
inline TrainExample to_train_example(const BpeVocab& vocab,
                                     const DatasetExample& d) {
  TrainExample t;
  t.image = d.image;
  t.labels = d.labels;
  t.lang = d.lang;
  if (d.stabilizer.empty()) {
    t.target = vocab.encode(d.caption);
    t.target.push_back(SpecialTokens::eos);
  } else {
    t.target = build_plugs_target(vocab, d.stabilizer, d.caption, d.lang);
  }
  return t;
}

inline std::vector<TrainExample> to_train_examples(
    const BpeVocab& vocab, const std::vector<DatasetExample>& ds) {
  std::vector<TrainExample> out;
  out.reserve(ds.size());
  for (const DatasetExample& d : ds) out.push_back(to_train_example(vocab, d));
  return out;
}

// ---------------------------------------------------------------------------
// Training loop: epoch-shuffled batches, a fixed number of optimizer steps.
// ---------------------------------------------------------------------------

struct TrainRunResult {
  double first_loss = 0.0;
  double last_loss = 0.0;
  int64_t steps = 0;
};

// Optional per-step observer: (global step, learning rate, loss).
using StepObserver = std::function<void(int64_t, double, double)>;

inline TrainRunResult train_on_dataset(Transformer& model,
                                       const std::vector<TrainExample>& data,
                                       const ObjectLabelEmbeddingTable& table,
                                       const TrainConfig& cfg, int64_t steps,
                                       OptState& opt, int64_t start_step = 0,
                                       const StepObserver& on_step = {}) {
  if (data.empty()) throw DataError("train_on_dataset: empty dataset");
  if (steps <= 0) throw ConfigError("train_on_dataset: steps must be positive");
  if (start_step < 0)
    throw ConfigError("train_on_dataset: start step must be non-negative");
  TrainRunResult res;
  res.steps = steps;
  // Batch composition is a pure function of the global example counter, so a
  // run resumed at any step consumes exactly the batches the uninterrupted
  // run would have: examples are drawn from a per-epoch seeded permutation,
  // indexed by counter % dataset size.
  const int64_t n = static_cast<int64_t>(data.size());
  std::vector<size_t> order(data.size());
  int64_t cached_epoch = -1;
  auto shuffle_for = [&](int64_t epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(hash_u64(cfg.seed, 0x6f72646572ull /* batch order stream */,
                     static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);
    cached_epoch = epoch;
  };
  int64_t consumed = start_step * cfg.batch_size;
  for (int64_t s = 1; s <= steps; ++s) {
    std::vector<TrainExample> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int64_t b = 0; b < cfg.batch_size; ++b, ++consumed) {
      int64_t epoch = consumed / n;
      if (epoch != cached_epoch) shuffle_for(epoch);
      batch.push_back(data[order[static_cast<size_t>(consumed % n)]]);
    }
    double loss = train_step(model, batch, table, cfg, opt, start_step + s);
    if (on_step)
      on_step(start_step + s, schedule_lr(cfg.schedule, start_step + s), loss);
    if (s == 1) res.first_loss = loss;
    res.last_loss = loss;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Inference per pipeline shape.
// ---------------------------------------------------------------------------

struct PipelineOutput {
  std::string caption;
  std::optional<std::string> stabilizer;
};

// Decodes a generated id sequence as plain text (drops the trailing eos).
inline std::string decode_plain(const BpeVocab& vocab, std::vector<int> ids) {
  if (!ids.empty() && ids.back() == SpecialTokens::eos) ids.pop_back();
  return vocab.decode(ids);
}

inline PipelineOutput run_pipeline(PipelineKind kind, const Transformer& model,
                                   const BpeVocab& vocab,
                                   const TranslationEngine& engine,
                                   const GlobalImageEmbedding& image,
                                   const ObjectLabelList& labels, LangId lang,
                                   const ObjectLabelEmbeddingTable& table,
                                   const DecodeConfig& decode) {
  PipelineOutput out;
  if (kind == PipelineKind::TGT) {
    std::vector<int> ids =
        generate(model, image, labels, LangId::en, table, decode);
    std::string pivot = decode_plain(vocab, ids);
    out.stabilizer = pivot;  // the pre-translation pivot caption
    out.caption = engine.translate(pivot, LangId::en, lang);
    return out;
  }
  std::vector<int> ids = generate(model, image, labels, lang, table, decode);
  if (is_plugs(kind)) {
    BilingualOutput bo = split_output(vocab, ids, lang);  // throws if no sep
    out.stabilizer = bo.stabilizer;
    out.caption = bo.caption;
    return out;
  }
  out.caption = decode_plain(vocab, ids);
  return out;
}

inline PipelineOutput run_pipeline(PipelineKind kind, const Transformer& model,
                                   const BpeVocab& vocab,
                                   const SyntheticWorld& world,
                                   const GlobalImageEmbedding& image,
                                   const ObjectLabelList& labels, LangId lang,
                                   const ObjectLabelEmbeddingTable& table,
                                   const DecodeConfig& decode) {
  SyntheticEngine engine(world, /*noisy=*/true);
  return run_pipeline(kind, model, vocab, engine, image, labels, lang, table,
                      decode);
}

// ---------------------------------------------------------------------------
// Side-by-side pipeline comparison: trains every requested kind on the same
// scenes, scores slot accuracy on a held-out split, and reports the
// stabilizer-caption consistency for the PLuGS rows.
// ---------------------------------------------------------------------------

struct CompareConfig {
  WorldConfig world;
  int train_scenes = 2000;
  int eval_scenes = 200;
  int64_t steps = 700;
  std::string model_preset = "desk_tiny";
  std::string large_model_preset = "desk_large";  // for TTG-large-5L
  TrainConfig train = train_preset("desk");
  DecodeConfig decode;
  int vocab_budget = 1200;
  bool plugs_include_pivot = false;

  void validate() const {
    world.validate();
    train.validate();
    decode.validate();
    if (train_scenes <= 0 || eval_scenes <= 0)
      throw ConfigError("compare: scene counts must be positive");
    if (train_scenes + eval_scenes > kSceneCount)
      throw ConfigError("compare: train+eval scenes exceed the " +
                        std::to_string(kSceneCount) + " distinct scenes");
    if (steps <= 0) throw ConfigError("compare: steps must be positive");
    if (vocab_budget <= SpecialTokens::count)
      throw ConfigError("compare: vocab budget too small");
  }
};

// Disjoint train/eval scene sets drawn from a seeded shuffle of all scenes.
inline std::pair<std::vector<Scene>, std::vector<Scene>> scene_split(
    uint64_t seed, int n_train, int n_eval) {
  if (n_train + n_eval > kSceneCount)
    throw ConfigError("scene_split: more scenes requested than exist");
  std::vector<int> ids(kSceneCount);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(hash_str(seed, "scene-split"));
  for (size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[rng.next_below(i)]);
  std::pair<std::vector<Scene>, std::vector<Scene>> out;
  for (int i = 0; i < n_train; ++i)
    out.first.push_back(Scene::from_id(ids[i]));
  for (int i = 0; i < n_eval; ++i)
    out.second.push_back(Scene::from_id(ids[n_train + i]));
  return out;
}

// One kind x language x seed evaluation.
struct CompareCell {
  double slot_acc = 0.0;
  double consistency_bleu = 0.0;
  bool has_consistency = false;
  int rejected = 0;  // PLuGS outputs without a separator (scored 0)
  int items = 0;
};

struct CompareRow {
  PipelineKind kind = PipelineKind::TGT;
  LangId lang = LangId::en;
  double acc_mean = 0.0, acc_min = 0.0, acc_max = 0.0;
  double cons_mean = 0.0, cons_min = 0.0, cons_max = 0.0;
  bool has_consistency = false;
  int rejected = 0;
  int items = 0;
};

struct CompareReport {
  std::vector<CompareRow> rows;

  std::string tsv() const {
    auto fmt = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", v);
      return std::string(buf);
    };
    std::string out =
        "kind\tlang\tslot_accuracy\tslot_accuracy_min\tslot_accuracy_max\t"
        "consistency_bleu\tconsistency_bleu_min\tconsistency_bleu_max\t"
        "rejected\titems\n";
    for (const CompareRow& r : rows) {
      out += kind_name(r.kind) + '\t' + lang_code(r.lang) + '\t' +
             fmt(r.acc_mean) + '\t' + fmt(r.acc_min) + '\t' + fmt(r.acc_max) +
             '\t';
      if (r.has_consistency)
        out += fmt(r.cons_mean) + '\t' + fmt(r.cons_min) + '\t' +
               fmt(r.cons_max) + '\t';
      else
        out += "n/a\tn/a\tn/a\t";
      out += std::to_string(r.rejected) + '\t' + std::to_string(r.items) +
             '\n';
    }
    return out;
  }

  const CompareRow& row(PipelineKind kind, LangId lang) const {
    for (const CompareRow& r : rows)
      if (r.kind == kind && r.lang == lang) return r;
    throw DataError("compare report has no row for " + kind_name(kind) + "/" +
                    lang_code(lang));
  }
};

namespace detail {

// Scores one trained model on the eval scenes for one language. Missing
// separators are kept in the tally as zero-accuracy rejections.
inline CompareCell evaluate_pipeline(PipelineKind kind,
                                     const Transformer& model,
                                     const BpeVocab& vocab,
                                     const SyntheticWorld& world,
                                     const ObjectLabelEmbeddingTable& table,
                                     const std::vector<Scene>& eval_scenes,
                                     LangId lang, const DecodeConfig& decode) {
  CompareCell cell;
  std::vector<std::string> stabs, caps;
  for (const Scene& scene : eval_scenes) {
    SynthExample ex = world.example(scene);
    ++cell.items;
    PipelineOutput out;
    try {
      out = run_pipeline(kind, model, vocab, world, ex.image, ex.labels, lang,
                         table, decode);
    } catch (const MissingSeparator&) {
      ++cell.rejected;
      continue;
    } catch (const EmptyCaption&) {
      ++cell.rejected;
      continue;
    }
    cell.slot_acc += world.slot_accuracy(out.caption, lang, scene);
    if (is_plugs(kind) && out.stabilizer.has_value()) {
      stabs.push_back(*out.stabilizer);
      caps.push_back(out.caption);
    }
  }
  if (cell.items > 0) cell.slot_acc /= cell.items;
  if (is_plugs(kind) && !stabs.empty()) {
    // Consistency: the clean translation of the stabilizer, scored against
    // the generated caption treated as the reference.
    std::vector<std::string> translated;
    translated.reserve(stabs.size());
    for (const std::string& s : stabs)
      translated.push_back(world.translate(s, LangId::en, lang, false));
    cell.consistency_bleu = bleu4(translated, caps);
    cell.has_consistency = true;
  }
  return cell;
}

}  // namespace detail

// Trains one model per (kind, seed) — per (kind, lang, seed) for the 2L
// kinds — on a shared scene split and aggregates evaluation over seeds.
inline CompareReport compare_pipelines(const CompareConfig& cfg,
                                       const std::vector<PipelineKind>& kinds,
                                       const std::vector<LangId>& langs,
                                       const std::vector<uint64_t>& seeds) {
  cfg.validate();
  if (kinds.empty()) throw ConfigError("compare: no pipeline kinds");
  if (langs.empty()) throw ConfigError("compare: no languages");
  for (LangId l : langs)
    if (l == kPivotLang)
      throw ConfigError("compare: evaluation languages must be non-pivot");
  if (seeds.empty()) throw ConfigError("compare: need at least one seed");

  SyntheticWorld world(cfg.world);
  ObjectLabelEmbeddingTable table = world.label_table();
  BpeVocab vocab = BpeVocab::train(world.full_corpus(), cfg.vocab_budget);
  auto [train_sc, eval_sc] =
      scene_split(cfg.world.seed, cfg.train_scenes, cfg.eval_scenes);

  CompareReport report;
  for (PipelineKind kind : kinds) {
    // 2L kinds train one model per language; TGT and 5L kinds share one
    // model across evaluation languages.
    std::vector<std::vector<LangId>> groups;
    if (kind == PipelineKind::TTG_2L || kind == PipelineKind::PLuGS_2L) {
      for (LangId l : langs) groups.push_back({l});
    } else {
      groups.push_back(langs);
    }
    for (const std::vector<LangId>& group : groups) {
      std::vector<LangId> train_langs =
          is_5l(kind) ? target_langs() : group;
      std::vector<DatasetExample> ds = build_dataset(
          kind, world, train_sc, train_langs, cfg.plugs_include_pivot);
      std::vector<TrainExample> data = to_train_examples(vocab, ds);

      ModelConfig mcfg = model_preset(kind == PipelineKind::TTG_large_5L
                                          ? cfg.large_model_preset
                                          : cfg.model_preset);
      mcfg.vocab_size = static_cast<int>(vocab.size());
      mcfg.dropout = cfg.train.dropout;

      std::map<LangId, std::vector<CompareCell>> cells;
      for (uint64_t seed : seeds) {
        uint64_t run_seed = hash_u64(
            seed, static_cast<uint64_t>(kind),
            group.size() == 1 ? static_cast<uint64_t>(group[0]) : 0xa11ull);
        Transformer model = Transformer::init(mcfg, run_seed);
        TrainConfig tc = cfg.train;
        tc.seed = run_seed;
        OptState opt;
        train_on_dataset(model, data, table, tc, cfg.steps, opt);
        for (LangId lang : group)
          cells[lang].push_back(detail::evaluate_pipeline(
              kind, model, vocab, world, table, eval_sc, lang, cfg.decode));
      }
      for (LangId lang : group) {
        CompareRow row;
        row.kind = kind;
        row.lang = lang;
        bool first = true;
        for (const CompareCell& c : cells[lang]) {
          row.acc_mean += c.slot_acc;
          row.acc_min = first ? c.slot_acc : std::min(row.acc_min, c.slot_acc);
          row.acc_max = first ? c.slot_acc : std::max(row.acc_max, c.slot_acc);
          if (c.has_consistency) {
            double v = c.consistency_bleu;
            row.cons_mean += v;
            row.cons_min = row.has_consistency ? std::min(row.cons_min, v) : v;
            row.cons_max = row.has_consistency ? std::max(row.cons_max, v) : v;
            row.has_consistency = true;
          }
          row.rejected += c.rejected;
          row.items += c.items;
          first = false;
        }
        row.acc_mean /= static_cast<double>(cells[lang].size());
        if (row.has_consistency) {
          int n_cons = 0;
          for (const CompareCell& c : cells[lang]) n_cons += c.has_consistency;
          row.cons_mean /= static_cast<double>(n_cons);
        }
        report.rows.push_back(row);
      }
    }
  }
  return report;
}

}  // namespace plugs
