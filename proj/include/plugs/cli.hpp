#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "plugs/checkpoint.hpp"
#include "plugs/config.hpp"
#include "plugs/metrics.hpp"
#include "plugs/pipelines.hpp"

namespace plugs {
namespace cli {

// ---------------------------------------------------------------------------
// Command-line front end. Every command:
//   * takes --config PATH (required) plus the optional overrides
//     --seed N, --out DIR, --threads N, --lang XX, --kind/--mode KIND;
//   * owns its output directory exclusively for the duration of the run
//     (a `.plugs-lock` file; a second command on the same directory fails);
//   * writes the fully resolved configuration to `<out>/resolved.cfg`.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric.
// ---------------------------------------------------------------------------

inline const char* usage_text() {
  return
      "usage: plugs <command> --config PATH [--seed N] [--out DIR]\n"
      "             [--threads N] [--lang XX] [--kind KIND | --mode KIND]\n"
      "\n"
      "commands:\n"
      "  synth      write features.tsv, captions.tsv (en + 5 translations),\n"
      "             splits.tsv and labels.bin for a synthetic scene sample\n"
      "  vocab      train the subword vocabulary -> vocab.txt\n"
      "  train      train a captioner (--kind; --lang for the 2L kinds)\n"
      "             -> checkpoint.bin, periodic checkpoints, loss.log\n"
      "  generate   caption every features record (--mode, --lang)\n"
      "             -> captions.tsv (+ stabilizers.tsv, rejects.tsv)\n"
      "  eval SUB   score files; SUB is one of\n"
      "             bleu | cider | ratings | spearman | consistency\n"
      "  compare    train and score pipeline variants -> report.tsv\n"
      "\n"
      "exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric\n";
}

// ----- output-directory ownership ------------------------------------------

class LockFile {
 public:
  explicit LockFile(const std::filesystem::path& dir)
      : path_(dir / ".plugs-lock") {
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f)
      throw ConfigError("output directory '" + dir.string() +
                        "' is locked (" + path_.string() +
                        " exists; is another command using it?)");
    std::fputs("locked\n", f);
    std::fclose(f);
    owned_ = true;
  }

  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

  ~LockFile() {
    if (owned_) {
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }

 private:
  std::filesystem::path path_;
  bool owned_ = false;
};

// ----- caption corpus and splits files --------------------------------------

struct CaptionLine {
  std::string id;
  LangId lang = LangId::en;
  std::string text;
};

inline std::string caption_line(const std::string& id, LangId lang,
                                const std::string& text) {
  return id + "\t" + lang_code(lang) + "\t" + text + "\n";
}

inline std::vector<CaptionLine> read_caption_file(const std::string& path) {
  std::vector<CaptionLine> out;
  size_t line_no = 0;
  for (const std::string& line : split_on(read_file(path), '\n')) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f = split_on(line, '\t');
    if (f.size() != 3 || f[0].empty())
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected image_id<TAB>lang<TAB>caption");
    out.push_back({f[0], lang_from_code(f[1]), f[2]});
  }
  return out;
}

// image id -> language -> caption; one caption per (id, language).
using CaptionTable = std::map<std::string, std::map<LangId, std::string>>;

inline CaptionTable caption_table(const std::vector<CaptionLine>& lines,
                                  const std::string& source) {
  CaptionTable t;
  for (const CaptionLine& l : lines)
    if (!t[l.id].emplace(l.lang, l.text).second)
      throw FormatError(source + ": duplicate caption for image '" + l.id +
                        "' in " + lang_code(l.lang));
  return t;
}

inline const std::string& need_caption(const CaptionTable& caps,
                                       const std::string& id, LangId lang) {
  auto it = caps.find(id);
  if (it == caps.end()) throw DataError("no captions for image '" + id + "'");
  auto jt = it->second.find(lang);
  if (jt == it->second.end())
    throw DataError("image '" + id + "' has no " + lang_code(lang) +
                    " caption");
  return jt->second;
}

inline std::map<std::string, std::string> read_splits_file(
    const std::string& path) {
  std::map<std::string, std::string> out;
  size_t line_no = 0;
  for (const std::string& line : split_on(read_file(path), '\n')) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f = split_on(line, '\t');
    if (f.size() != 2 || f[0].empty() || f[1].empty())
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected image_id<TAB>split");
    if (!out.emplace(f[0], f[1]).second)
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": duplicate image id '" + f[0] + "'");
  }
  return out;
}

// ----- dataset construction from persisted artifacts ------------------------

// Mirrors build_dataset, but draws captions from a caption corpus file
// instead of the world, so training consumes exactly what synth wrote.
inline std::vector<DatasetExample> build_dataset_from_artifacts(
    PipelineKind kind, const FeatureMap& feats, const CaptionTable& caps,
    const std::vector<std::string>& ids, const std::vector<LangId>& langs,
    bool plugs_include_pivot = false) {
  plugs::detail::require_langs(kind, langs);
  std::vector<DatasetExample> out;
  for (const std::string& id : ids) {
    auto fit = feats.find(id);
    if (fit == feats.end())
      throw DataError("no features for image '" + id + "'");
    auto base = [&]() {
      DatasetExample d;
      d.image = fit->second.image;
      d.labels = fit->second.labels;
      return d;
    };
    auto plain = [&](LangId lang) {
      DatasetExample d = base();
      d.lang = lang;
      d.caption = need_caption(caps, id, lang);
      out.push_back(std::move(d));
    };
    auto stabilized = [&](LangId lang) {
      DatasetExample d = base();
      d.lang = lang;
      d.stabilizer = need_caption(caps, id, LangId::en);
      d.caption = need_caption(caps, id, lang);
      out.push_back(std::move(d));
    };
    switch (kind) {
      case PipelineKind::TGT:
        plain(LangId::en);
        break;
      case PipelineKind::TTG_2L:
        plain(langs[0]);
        break;
      case PipelineKind::PLuGS_2L:
        stabilized(langs[0]);
        break;
      case PipelineKind::TTG_5L:
      case PipelineKind::TTG_large_5L:
        plain(LangId::en);
        for (LangId l : target_langs()) plain(l);
        break;
      case PipelineKind::PLuGS_5L:
        if (plugs_include_pivot) plain(LangId::en);
        for (LangId l : target_langs()) stabilized(l);
        break;
    }
  }
  return out;
}

// ----- shared helpers --------------------------------------------------------

namespace detail {

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string image_id(int scene_id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "img-%04d", scene_id);
  return buf;
}

inline std::string step_file(int64_t step) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint-%06lld.bin",
                static_cast<long long>(step));
  return buf;
}

// Item ids a command operates on: ascending, optionally restricted to one
// split. `default_split` is used when a splits file is given but run.split
// is not ("" means keep every id).
inline std::vector<std::string> select_ids(const FeatureMap& feats,
                                           const RunConfig& cfg,
                                           const std::string& default_split) {
  std::vector<std::string> ids;
  if (cfg.has("paths.splits")) {
    auto splits = read_splits_file(cfg.str("paths.splits"));
    std::string want =
        cfg.has("run.split") ? cfg.str("run.split") : default_split;
    for (const auto& [id, rec] : feats) {
      auto it = splits.find(id);
      if (it == splits.end())
        throw DataError("image '" + id + "' is missing from the splits file");
      if (want.empty() || it->second == want) ids.push_back(id);
    }
  } else {
    if (cfg.has("run.split"))
      throw ConfigError("run.split is set but paths.splits is not");
    for (const auto& [id, rec] : feats) ids.push_back(id);
  }
  if (ids.empty()) throw DataError("no input items selected");
  return ids;
}

inline LangId required_target_lang(const RunConfig& cfg,
                                   const std::string& who) {
  if (!cfg.has("run.lang"))
    throw ConfigError(who + ": --lang (or run.lang=) is required");
  LangId lang = lang_from_code(cfg.str("run.lang"));
  if (lang == kPivotLang)
    throw ConfigError(who + ": the language must be a non-pivot language");
  return lang;
}

inline PipelineKind required_kind(const RunConfig& cfg,
                                  const std::string& who) {
  if (!cfg.has("run.kind"))
    throw ConfigError(who + ": --kind/--mode (or run.kind=) is required");
  return kind_from_name(cfg.str("run.kind"));
}

// Candidate/reference views over caption files, optionally filtered to one
// language (run.lang), keyed and ordered by image id.
struct ScoredFiles {
  std::vector<std::string> ids;
  std::vector<std::string> candidates;
  std::vector<std::vector<std::string>> references;
};

inline ScoredFiles match_candidates(const RunConfig& cfg) {
  if (!cfg.has("paths.candidates") || !cfg.has("paths.references"))
    throw ConfigError("eval: paths.candidates and paths.references required");
  bool filter = cfg.has("run.lang");
  LangId lang = filter ? lang_from_code(cfg.str("run.lang")) : LangId::en;
  std::map<std::string, std::string> cands;
  for (const CaptionLine& l :
       read_caption_file(cfg.str("paths.candidates"))) {
    if (filter && l.lang != lang) continue;
    if (!cands.emplace(l.id, l.text).second)
      throw DataError("duplicate candidate for image '" + l.id + "'");
  }
  std::map<std::string, std::vector<std::string>> refs;
  for (const CaptionLine& l :
       read_caption_file(cfg.str("paths.references"))) {
    if (filter && l.lang != lang) continue;
    refs[l.id].push_back(l.text);
  }
  ScoredFiles out;
  for (const auto& [id, text] : cands) {
    auto it = refs.find(id);
    if (it == refs.end() || it->second.empty())
      throw DataError("no references for image '" + id + "'");
    out.ids.push_back(id);
    out.candidates.push_back(text);
    out.references.push_back(it->second);
  }
  if (out.ids.empty()) throw DataError("no candidate/reference pairs");
  return out;
}

struct Report {
  std::vector<std::pair<std::string, std::string>> lines;

  void add(const std::string& name, double value) {
    lines.emplace_back(name, fmt4(value));
  }
  void add_count(const std::string& name, int64_t value) {
    lines.emplace_back(name, std::to_string(value));
  }
  std::string tsv() const {
    std::string out;
    for (const auto& [k, v] : lines) out += k + "\t" + v + "\n";
    return out;
  }
};

}  // namespace detail

// ----- commands --------------------------------------------------------------

struct Context {
  RunConfig cfg;
  std::filesystem::path out;
  std::ostream* outs = nullptr;
  std::ostream* errs = nullptr;

  std::string out_path(const std::string& name) const {
    return (out / name).string();
  }
  std::ostream& print() const { return *outs; }
  std::ostream& log() const { return *errs; }
};

inline void cmd_synth(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  SyntheticWorld world(cfg.world_config());
  int64_t n = cfg.i64("synth.n");
  if (n < 1 || n > kSceneCount)
    throw ConfigError("synth.n must be in [1, " +
                      std::to_string(kSceneCount) + "]");
  int64_t train_pct = cfg.i64("synth.train_pct");
  int64_t val_pct = cfg.i64("synth.val_pct");
  int64_t test_pct = cfg.i64("synth.test_pct");
  if (train_pct < 0 || val_pct < 0 || test_pct < 0 ||
      train_pct + val_pct + test_pct != 100)
    throw ConfigError("synth split percentages must be >= 0 and sum to 100");

  // Sample scenes without replacement, then split by shuffle position.
  std::vector<int> pool(kSceneCount);
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng(hash_str(cfg.u64("seed"), "synth-scenes"));
  for (size_t i = pool.size(); i > 1; --i)
    std::swap(pool[i - 1], pool[rng.next_below(i)]);
  pool.resize(static_cast<size_t>(n));

  int64_t n_train = n * train_pct / 100;
  int64_t n_val = n * val_pct / 100;
  std::map<std::string, std::string> split_of;
  for (size_t i = 0; i < pool.size(); ++i) {
    const char* split = static_cast<int64_t>(i) < n_train ? "train"
                        : static_cast<int64_t>(i) < n_train + n_val ? "val"
                                                                    : "test";
    split_of[detail::image_id(pool[i])] = split;
  }

  FeatureMap feats;
  std::map<std::string, Scene> scene_of;
  for (int scene_id : pool) {
    SynthExample ex = world.example(Scene::from_id(scene_id));
    std::string id = detail::image_id(scene_id);
    feats[id] = {ex.image, ex.labels};
    scene_of[id] = Scene::from_id(scene_id);
  }

  std::string captions, splits;
  for (const auto& [id, scene] : scene_of) {
    std::string en = world.example(scene).caption;
    captions += caption_line(id, LangId::en, en);
    for (LangId l : target_langs())
      captions += caption_line(id, l, noisy_caption(world, en, l));
    splits += id + "\t" + split_of[id] + "\n";
  }

  write_file(ctx.out_path("features.tsv"), save_features_string(feats));
  write_file(ctx.out_path("captions.tsv"), captions);
  write_file(ctx.out_path("splits.tsv"), splits);
  write_file(ctx.out_path("labels.bin"), world.label_table().save_bytes());
  ctx.log() << "synth: wrote " << n << " items (" << n_train << " train, "
            << n_val << " val, " << (n - n_train - n_val) << " test)\n";
}

inline void cmd_vocab(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  std::vector<std::string> corpus;
  if (cfg.has("paths.corpus")) {
    for (const std::string& line :
         split_on(read_file(cfg.str("paths.corpus")), '\n'))
      if (!line.empty()) corpus.push_back(line);
  } else {
    corpus = SyntheticWorld(cfg.world_config()).full_corpus();
  }
  BpeVocab vocab =
      BpeVocab::train(corpus, static_cast<int>(cfg.i64("vocab.budget")));
  write_file(ctx.out_path("vocab.txt"), vocab.save_string());
  ctx.log() << "vocab: " << vocab.size() << " tokens from " << corpus.size()
            << " lines\n";
}

namespace detail {

inline void require_path(const RunConfig& cfg, const std::string& key,
                         const std::string& who) {
  if (!cfg.has(key)) throw ConfigError(who + ": config key " + key +
                                       " is required");
}

}  // namespace detail

inline void cmd_train(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  PipelineKind kind = detail::required_kind(cfg, "train");
  std::vector<LangId> langs;
  if (kind == PipelineKind::TTG_2L || kind == PipelineKind::PLuGS_2L)
    langs = {detail::required_target_lang(cfg, "train")};
  else if (is_5l(kind))
    langs = target_langs();

  detail::require_path(cfg, "paths.features", "train");
  detail::require_path(cfg, "paths.captions", "train");
  detail::require_path(cfg, "paths.labels", "train");
  detail::require_path(cfg, "paths.vocab", "train");

  FeatureMap feats = load_features_string(read_file(cfg.str("paths.features")));
  CaptionTable caps = caption_table(
      read_caption_file(cfg.str("paths.captions")), cfg.str("paths.captions"));
  ObjectLabelEmbeddingTable table =
      ObjectLabelEmbeddingTable::load_bytes(read_file(cfg.str("paths.labels")));
  BpeVocab vocab = BpeVocab::load_string(read_file(cfg.str("paths.vocab")));
  std::vector<std::string> ids = detail::select_ids(feats, cfg, "train");

  std::vector<TrainExample> data = to_train_examples(
      vocab, build_dataset_from_artifacts(kind, feats, caps, ids, langs,
                                          cfg.flag("plugs.include_pivot")));

  TrainConfig tc = cfg.train_config();
  int64_t steps = cfg.i64("train.steps");
  if (steps <= 0) throw ConfigError("train.steps must be positive");
  int64_t every = cfg.i64("train.checkpoint_every");
  if (every < 0) throw ConfigError("train.checkpoint_every must be >= 0");

  OptState opt;
  int64_t start = 0;
  Transformer model = [&] {
    if (cfg.has("paths.resume")) {
      LoadedCheckpoint ck = load_checkpoint(read_file(cfg.str("paths.resume")));
      if (ck.config.vocab_size != vocab.size())
        throw ConfigError("resume checkpoint vocab_size " +
                          std::to_string(ck.config.vocab_size) +
                          " != vocabulary size " +
                          std::to_string(vocab.size()));
      opt = std::move(ck.opt);
      start = ck.step;
      return ck.build_model();
    }
    ModelConfig mc = cfg.model_config();
    mc.vocab_size = vocab.size();
    mc.validate();
    return Transformer::init(mc, cfg.u64("seed"));
  }();

  std::string loss_log;
  auto logger = [&](int64_t step, double lr, double loss) {
    loss_log += std::to_string(step) + "\t" + detail::fmt17(lr) + "\t" +
                detail::fmt17(loss) + "\n";
  };

  double last_loss = 0.0;
  int64_t done = 0;
  while (done < steps) {
    int64_t chunk = every > 0 ? std::min(every, steps - done) : steps - done;
    TrainRunResult res = train_on_dataset(model, data, table, tc, chunk, opt,
                                          start + done, logger);
    last_loss = res.last_loss;
    done += chunk;
    if (every > 0)
      write_file(ctx.out_path(detail::step_file(start + done)),
                 save_checkpoint(model, start + done, cfg.u64("seed"), &opt));
  }
  write_file(ctx.out_path("checkpoint.bin"),
             save_checkpoint(model, start + steps, cfg.u64("seed"), &opt));
  write_file(ctx.out_path("loss.log"), loss_log);
  ctx.log() << "train: " << kind_name(kind) << " " << steps << " steps from "
            << data.size() << " examples; final loss "
            << detail::fmt4(last_loss) << "\n";
}

inline void cmd_generate(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  PipelineKind kind = detail::required_kind(cfg, "generate");
  LangId lang = detail::required_target_lang(cfg, "generate");

  detail::require_path(cfg, "paths.features", "generate");
  detail::require_path(cfg, "paths.labels", "generate");
  detail::require_path(cfg, "paths.vocab", "generate");
  detail::require_path(cfg, "paths.checkpoint", "generate");

  FeatureMap feats = load_features_string(read_file(cfg.str("paths.features")));
  ObjectLabelEmbeddingTable table =
      ObjectLabelEmbeddingTable::load_bytes(read_file(cfg.str("paths.labels")));
  BpeVocab vocab = BpeVocab::load_string(read_file(cfg.str("paths.vocab")));
  LoadedCheckpoint ck =
      load_checkpoint(read_file(cfg.str("paths.checkpoint")));
  if (ck.config.vocab_size != vocab.size())
    throw ConfigError("checkpoint vocab_size " +
                      std::to_string(ck.config.vocab_size) +
                      " != vocabulary size " + std::to_string(vocab.size()));
  Transformer model = ck.build_model();
  SyntheticWorld world(cfg.world_config());
  DecodeConfig decode = cfg.decode_config();
  std::vector<std::string> ids = detail::select_ids(feats, cfg, "");

  std::string captions, stabilizers, rejects;
  int n_rejected = 0;
  for (const std::string& id : ids) {
    const FeatureRecord& rec = feats.at(id);
    PipelineOutput out;
    try {
      out = run_pipeline(kind, model, vocab, world, rec.image, rec.labels,
                         lang, table, decode);
    } catch (const MissingSeparator&) {
      rejects += id + "\tmissing-separator\n";
      ++n_rejected;
      continue;
    } catch (const EmptyCaption&) {
      rejects += id + "\tempty-caption\n";
      ++n_rejected;
      continue;
    }
    captions += caption_line(id, lang, out.caption);
    if (out.stabilizer.has_value())
      stabilizers += caption_line(id, LangId::en, *out.stabilizer);
  }

  write_file(ctx.out_path("captions.tsv"), captions);
  write_file(ctx.out_path("rejects.tsv"), rejects);
  if (kind == PipelineKind::TGT || is_plugs(kind))
    write_file(ctx.out_path("stabilizers.tsv"), stabilizers);
  ctx.log() << "generate: " << (ids.size() - n_rejected) << " captions in "
            << lang_code(lang) << "\n";
  if (n_rejected > 0)
    ctx.log() << "warning: " << n_rejected
              << " outputs rejected (see rejects.tsv)\n";
}

inline void cmd_eval(const Context& ctx, const std::string& sub) {
  const RunConfig& cfg = ctx.cfg;
  detail::Report report;

  if (sub == "bleu") {
    detail::ScoredFiles f = detail::match_candidates(cfg);
    std::vector<std::string> refs;
    for (size_t i = 0; i < f.ids.size(); ++i) {
      if (f.references[i].size() != 1)
        throw DataError("image '" + f.ids[i] +
                        "' has multiple references (bleu is "
                        "single-reference; use cider)");
      refs.push_back(f.references[i][0]);
    }
    report.add("bleu4", bleu4(f.candidates, refs));
  } else if (sub == "cider") {
    detail::ScoredFiles f = detail::match_candidates(cfg);
    report.add("cider", cider(f.candidates, f.references, f.references));
  } else if (sub == "ratings") {
    detail::require_path(cfg, "paths.ratings", "eval ratings");
    SxsReport r =
        aggregate_sxs(parse_ratings_csv(read_file(cfg.str("paths.ratings"))));
    report.add("wins", r.wins);
    report.add("losses", r.losses);
    report.add("gain_sxs", r.gain_sxs);
    report.add("ok_rate_a", r.a_ok);
    report.add("ok_rate_b", r.b_ok);
    report.add("gain_ok", r.gain_ok);
    report.add_count("n_items", static_cast<int64_t>(r.n_items));
    report.add("agreement_sxs_majority", r.agreement.sxs_majority);
    report.add("agreement_sign_match", r.agreement.sign_match);
    report.add("agreement_abs_majority", r.agreement.abs_majority);
  } else if (sub == "spearman") {
    detail::require_path(cfg, "paths.pairs", "eval spearman");
    const std::string path = cfg.str("paths.pairs");
    std::vector<double> xs, ys;
    std::set<std::string> seen;
    size_t line_no = 0;
    for (const std::string& line : split_on(read_file(path), '\n')) {
      ++line_no;
      if (line.empty()) continue;
      std::vector<std::string> f = split_on(line, '\t');
      if (f.size() != 3 || f[0].empty())
        throw FormatError(path + ":" + std::to_string(line_no) +
                          ": expected item_id<TAB>x<TAB>y");
      if (!seen.insert(f[0]).second)
        throw FormatError(path + ":" + std::to_string(line_no) +
                          ": duplicate item id '" + f[0] + "'");
      for (int c = 1; c <= 2; ++c) {
        char* end = nullptr;
        double v = std::strtod(f[c].c_str(), &end);
        if (f[c].empty() || end == f[c].c_str() || *end != '\0')
          throw FormatError(path + ":" + std::to_string(line_no) +
                            ": bad number '" + f[c] + "'");
        (c == 1 ? xs : ys).push_back(v);
      }
    }
    report.add("spearman", spearman(xs, ys));
  } else if (sub == "consistency") {
    LangId lang = detail::required_target_lang(cfg, "eval consistency");
    detail::require_path(cfg, "paths.stabilizers", "eval consistency");
    detail::require_path(cfg, "paths.captions", "eval consistency");
    SyntheticWorld world(cfg.world_config());
    std::map<std::string, std::string> stabs, caps;
    for (const CaptionLine& l :
         read_caption_file(cfg.str("paths.stabilizers")))
      if (!stabs.emplace(l.id, l.text).second)
        throw DataError("duplicate stabilizer for image '" + l.id + "'");
    for (const CaptionLine& l : read_caption_file(cfg.str("paths.captions"))) {
      if (l.lang != lang)
        throw DataError("caption for image '" + l.id + "' is in " +
                        lang_code(l.lang) + ", expected " + lang_code(lang));
      if (!caps.emplace(l.id, l.text).second)
        throw DataError("duplicate caption for image '" + l.id + "'");
    }
    if (stabs.size() != caps.size())
      throw DataError("stabilizer/caption files disagree: " +
                      std::to_string(stabs.size()) + " vs " +
                      std::to_string(caps.size()) + " items");
    std::vector<std::string> translated, captions;
    for (const auto& [id, stab] : stabs) {
      auto it = caps.find(id);
      if (it == caps.end())
        throw DataError("no caption for image '" + id + "'");
      translated.push_back(world.translate(stab, LangId::en, lang, false));
      captions.push_back(it->second);
    }
    report.add("consistency_bleu", bleu4(translated, captions));
  } else {
    throw ConfigError("unknown eval metric '" + sub +
                      "' (bleu|cider|ratings|spearman|consistency)");
  }

  write_file(ctx.out_path("report.tsv"), report.tsv());
  ctx.print() << report.tsv();
}

inline void cmd_compare(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  CompareConfig cc;
  cc.world = cfg.world_config();
  cc.train_scenes = static_cast<int>(cfg.i64("compare.train_scenes"));
  cc.eval_scenes = static_cast<int>(cfg.i64("compare.eval_scenes"));
  cc.steps = cfg.i64("compare.steps");
  cc.model_preset = cfg.str("compare.model_preset");
  cc.large_model_preset = cfg.str("compare.large_model_preset");
  cc.train = cfg.train_config();
  cc.decode = cfg.decode_config();
  cc.vocab_budget = static_cast<int>(cfg.i64("vocab.budget"));
  cc.plugs_include_pivot = cfg.flag("plugs.include_pivot");

  std::vector<PipelineKind> kinds;
  for (const std::string& name : split_on(cfg.str("compare.kinds"), ','))
    if (!name.empty()) kinds.push_back(kind_from_name(name));
  std::vector<LangId> langs;
  for (const std::string& code : split_on(cfg.str("compare.langs"), ','))
    if (!code.empty()) langs.push_back(lang_from_code(code));
  std::vector<uint64_t> seeds;
  for (const std::string& s : split_on(cfg.str("compare.seeds"), ',')) {
    if (s.empty()) continue;
    char* end = nullptr;
    unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
      throw ConfigError("compare.seeds: bad seed '" + s + "'");
    seeds.push_back(v);
  }

  CompareReport report = compare_pipelines(cc, kinds, langs, seeds);
  write_file(ctx.out_path("report.tsv"), report.tsv());
  ctx.print() << report.tsv();
}

// ----- dispatcher ------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& outs,
               std::ostream& errs) {
  try {
    if (args.empty()) {
      errs << usage_text();
      return 2;
    }
    for (const std::string& a : args) {
      if (a == "help" || a == "--help" || a == "-h") {
        outs << usage_text();
        return 0;
      }
    }
    const std::string& cmd = args[0];
    static const std::set<std::string> commands{
        "synth", "vocab", "train", "generate", "eval", "compare"};
    if (!commands.count(cmd))
      throw ConfigError("unknown command '" + cmd + "'");

    std::string config_path;
    std::map<std::string, std::string> overrides;
    std::vector<std::string> positionals;
    for (size_t i = 1; i < args.size(); ++i) {
      const std::string& a = args[i];
      auto value = [&]() -> const std::string& {
        if (i + 1 >= args.size())
          throw ConfigError("flag " + a + " needs a value");
        return args[++i];
      };
      if (a == "--config") config_path = value();
      else if (a == "--seed") overrides["seed"] = value();
      else if (a == "--out") overrides["out"] = value();
      else if (a == "--threads") overrides["threads"] = value();
      else if (a == "--lang") overrides["run.lang"] = value();
      else if (a == "--kind" || a == "--mode") overrides["run.kind"] = value();
      else if (a.rfind("--", 0) == 0)
        throw ConfigError("unknown flag '" + a + "'");
      else positionals.push_back(a);
    }

    if (cmd == "eval") {
      if (positionals.size() != 1)
        throw ConfigError(
            "eval needs exactly one metric "
            "(bleu|cider|ratings|spearman|consistency)");
    } else if (!positionals.empty()) {
      throw ConfigError("unexpected argument '" + positionals[0] + "'");
    }
    if (config_path.empty()) throw ConfigError("--config PATH is required");

    Context ctx;
    ctx.cfg = RunConfig::from_file(config_path);
    for (const auto& [k, v] : overrides) ctx.cfg.set(k, v);
    if (ctx.cfg.i64("threads") < 1)
      throw ConfigError("threads must be >= 1");
    if (!ctx.cfg.has("out"))
      throw ConfigError(cmd + ": --out DIR (or config key out=) is required");
    ctx.out = std::filesystem::path(ctx.cfg.str("out"));
    ctx.outs = &outs;
    ctx.errs = &errs;

    std::filesystem::create_directories(ctx.out);
    LockFile lock(ctx.out);
    write_file(ctx.out_path("resolved.cfg"), ctx.cfg.resolved());

    if (cmd == "synth") cmd_synth(ctx);
    else if (cmd == "vocab") cmd_vocab(ctx);
    else if (cmd == "train") cmd_train(ctx);
    else if (cmd == "generate") cmd_generate(ctx);
    else if (cmd == "eval") cmd_eval(ctx, positionals[0]);
    else cmd_compare(ctx);
    return 0;
  } catch (const ConfigError& e) {
    errs << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    errs << "error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    errs << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    errs << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    errs << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace cli
}  // namespace plugs
