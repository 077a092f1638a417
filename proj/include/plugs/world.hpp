#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "plugs/common.hpp"
#include "plugs/features.hpp"
#include "plugs/vocab.hpp"

namespace plugs {

// ---------------------------------------------------------------------------
// A tiny scene grammar whose captions are machine-checkable. Every scene has
// one value per slot (modifier, subject, verb, object); every language
// renders a scene through a bijective word map plus a fixed word-order rule,
// so a rendered caption can be parsed back to its scene exactly.
// ---------------------------------------------------------------------------

inline constexpr int kSlotCount = 4;
inline constexpr int kValuesPerSlot = 8;
inline constexpr int kSceneCount = 8 * 8 * 8 * 8;  // 4096

struct Scene {
  // values[0]=modifier, [1]=subject, [2]=verb, [3]=object.
  std::array<int, kSlotCount> values{};

  void validate() const {
    for (int v : values)
      if (v < 0 || v >= kValuesPerSlot)
        throw DataError("scene slot value " + std::to_string(v) +
                        " outside [0," + std::to_string(kValuesPerSlot) + ")");
  }

  int id() const {
    validate();
    int out = 0;
    for (int v : values) out = out * kValuesPerSlot + v;
    return out;
  }

  static Scene from_id(int id) {
    if (id < 0 || id >= kSceneCount)
      throw DataError("scene id " + std::to_string(id) + " outside [0," +
                      std::to_string(kSceneCount) + ")");
    Scene s;
    for (int i = kSlotCount - 1; i >= 0; --i) {
      s.values[i] = id % kValuesPerSlot;
      id /= kValuesPerSlot;
    }
    return s;
  }

  bool operator==(const Scene& o) const { return values == o.values; }
  bool operator!=(const Scene& o) const { return values != o.values; }
};

struct WorldConfig {
  // Per-word corruption probability for the noisy translation mode: with
  // probability noise_p a word is dropped (p/2) or replaced by a different
  // lexicon word (p/2). 1.0 is allowed so the all-corrupted boundary is
  // expressible.
  double noise_p = 0.0;
  uint64_t seed = 1;

  void validate() const {
    if (!(noise_p >= 0.0 && noise_p <= 1.0))
      throw ConfigError("world: noise_p must be in [0,1]");
  }
};

// One synthetic item: precomputed image features plus the gold pivot caption.
struct SynthExample {
  GlobalImageEmbedding image;
  ObjectLabelList labels;
  std::string caption;  // English, from the template grammar
};

// Deterministic translation interface. Implementations must be pure
// functions of (text, src, tgt) for a fixed engine.
class TranslationEngine {
 public:
  virtual ~TranslationEngine() = default;
  virtual std::string translate(const std::string& text, LangId src,
                                LangId tgt) const = 0;
};

class SyntheticWorld {
 public:
  explicit SyntheticWorld(WorldConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    build_lexicons();
    init_image_table();
  }

  const WorldConfig& config() const { return cfg_; }

  // English word inventories, slot-major.
  static const std::array<std::array<std::string, kValuesPerSlot>,
                          kSlotCount>&
  inventories() {
    static const std::array<std::array<std::string, kValuesPerSlot>,
                            kSlotCount>
        inv{{{"black", "white", "small", "big", "old", "young", "happy",
              "quiet"},
             {"dog", "cat", "bird", "horse", "rabbit", "child", "farmer",
              "painter"},
             {"chases", "sees", "follows", "carries", "watches", "finds",
              "greets", "avoids"},
             {"ball", "stick", "apple", "lamp", "book", "basket", "mirror",
              "wagon"}}};
    return inv;
  }

  // -------------------------------------------------------------------------
  // Grammar: render / parse.
  // -------------------------------------------------------------------------

  std::vector<std::string> render_tokens(const Scene& s, LangId lang) const {
    s.validate();
    const std::vector<int>& pat = pattern(lang);
    std::vector<std::string> toks;
    toks.reserve(pat.size());
    for (int p : pat) {
      if (p < 0)
        toks.push_back(articles()[static_cast<int>(lang)]);
      else
        toks.push_back(word_for(lang, inventories()[p][s.values[p]]));
    }
    return toks;
  }

  std::string render(const Scene& s, LangId lang) const {
    return join(render_tokens(s, lang));
  }

  std::optional<Scene> parse(const std::string& text, LangId lang) const {
    const std::vector<int>& pat = pattern(lang);
    std::vector<std::string> toks = split_words(text);
    if (toks.size() != pat.size()) return std::nullopt;
    Scene s;
    for (size_t i = 0; i < pat.size(); ++i) {
      if (pat[i] < 0) {
        if (toks[i] != articles()[static_cast<int>(lang)])
          return std::nullopt;
        continue;
      }
      auto en_it = to_en_[static_cast<int>(lang)].find(toks[i]);
      if (en_it == to_en_[static_cast<int>(lang)].end()) return std::nullopt;
      auto slot_it = en_index_.find(en_it->second);
      if (slot_it == en_index_.end()) return std::nullopt;
      if (slot_it->second.first != pat[i]) return std::nullopt;
      s.values[pat[i]] = slot_it->second.second;
    }
    return s;
  }

  // -------------------------------------------------------------------------
  // Translation. Clean mode is a bijection on rendered captions: word map
  // plus word-order change, exactly invertible. Noisy mode additionally
  // corrupts each output word with probability noise_p (half drops, half
  // substitutions with a different lexicon word), keyed off the input text
  // so a fixed engine stays a pure function.
  // -------------------------------------------------------------------------

  std::string translate(const std::string& text, LangId src, LangId tgt,
                        bool noisy, uint64_t salt = 0) const {
    if (src == tgt) return text;
    std::vector<std::string> en_toks;
    if (src == LangId::en) {
      en_toks = split_words(text);
    } else if (std::optional<Scene> sc = parse(text, src)) {
      en_toks = render_tokens(*sc, LangId::en);
    } else {
      en_toks = map_words(split_words(text), src, LangId::en);
    }
    std::vector<std::string> out;
    if (tgt == LangId::en) {
      out = en_toks;
    } else if (std::optional<Scene> sc = parse(join(en_toks), LangId::en)) {
      out = render_tokens(*sc, tgt);
    } else {
      out = map_words(en_toks, LangId::en, tgt);
    }
    if (noisy && cfg_.noise_p > 0.0) apply_noise(out, src, tgt, text, salt);
    return join(out);
  }

  // -------------------------------------------------------------------------
  // Features: the global image embedding is the sum of fixed random per
  // slot-value vectors plus small per-scene noise; the object labels are the
  // scene's slot-value ids; the frozen label-embedding table covers all ids.
  // -------------------------------------------------------------------------

  static uint32_t slot_value_id(int slot, int value) {
    return static_cast<uint32_t>(slot * kValuesPerSlot + value);
  }

  const std::vector<double>& slot_vector(int slot, int value) const {
    return slot_vecs_[static_cast<size_t>(slot * kValuesPerSlot + value)];
  }

  GlobalImageEmbedding image_embedding(const Scene& s) const {
    s.validate();
    GlobalImageEmbedding e;
    e.v.assign(kImageDim, 0.0);
    for (int slot = 0; slot < kSlotCount; ++slot) {
      const std::vector<double>& vec = slot_vector(slot, s.values[slot]);
      for (int i = 0; i < kImageDim; ++i) e.v[i] += vec[i];
    }
    Rng noise(hash_u64(hash_str(cfg_.seed, "image-noise"),
                       static_cast<uint64_t>(s.id())));
    for (int i = 0; i < kImageDim; ++i) e.v[i] += 0.02 * noise.next_normal();
    return e;
  }

  ObjectLabelList labels(const Scene& s) const {
    s.validate();
    ObjectLabelList l;
    for (int slot = 0; slot < kSlotCount; ++slot)
      l.ids.push_back(slot_value_id(slot, s.values[slot]));
    return l;
  }

  ObjectLabelEmbeddingTable label_table() const {
    ObjectLabelEmbeddingTable t;
    Rng rng(hash_str(cfg_.seed, "label-table"));
    for (int slot = 0; slot < kSlotCount; ++slot) {
      for (int value = 0; value < kValuesPerSlot; ++value) {
        std::vector<double> row(kLabelDim);
        for (double& x : row) x = 0.0625 * rng.next_normal();
        t.insert(slot_value_id(slot, value), std::move(row));
      }
    }
    return t;
  }

  SynthExample example(const Scene& s) const {
    return {image_embedding(s), labels(s), render(s, LangId::en)};
  }

  // Every scene rendered in every language (clean), scene-major.
  std::vector<std::string> full_corpus() const {
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(kSceneCount) * kLangCount);
    for (int id = 0; id < kSceneCount; ++id) {
      Scene s = Scene::from_id(id);
      for (int l = 0; l < kLangCount; ++l)
        out.push_back(render(s, static_cast<LangId>(l)));
    }
    return out;
  }

  // -------------------------------------------------------------------------
  // Caption scoring: inverse-map the caption to English words, collect the
  // slot values they name, and score the fraction of slots whose single
  // named value matches the true scene. Unknown words are ignored; a slot
  // named zero times or with conflicting values counts as wrong.
  // -------------------------------------------------------------------------

  // True when the word is one of this language's surface forms (including
  // its article, if any).
  bool in_lexicon(const std::string& word, LangId lang) const {
    return form_index_[static_cast<int>(lang)].count(word) > 0;
  }

  double slot_accuracy(const std::string& caption, LangId lang,
                       const Scene& truth) const {
    truth.validate();
    std::array<std::set<int>, kSlotCount> seen;
    for (const std::string& tok : split_words(caption)) {
      auto en_it = to_en_[static_cast<int>(lang)].find(tok);
      if (en_it == to_en_[static_cast<int>(lang)].end()) continue;
      auto slot_it = en_index_.find(en_it->second);
      if (slot_it == en_index_.end()) continue;  // article
      seen[slot_it->second.first].insert(slot_it->second.second);
    }
    int correct = 0;
    for (int slot = 0; slot < kSlotCount; ++slot)
      if (seen[slot].size() == 1 && *seen[slot].begin() == truth.values[slot])
        ++correct;
    return static_cast<double>(correct) / kSlotCount;
  }

 private:
  // Word-order patterns over the English template [the mod subj verb the
  // obj]: entries are slot indices, -1 is the article. fr/it/es put the
  // adjective after the noun, de is verb-final, hi is SOV without articles.
  static const std::vector<int>& pattern(LangId lang) {
    static const std::vector<int> en{-1, 0, 1, 2, -1, 3};
    static const std::vector<int> noun_adj{-1, 1, 0, 2, -1, 3};
    static const std::vector<int> verb_final{-1, 0, 1, -1, 3, 2};
    static const std::vector<int> sov{0, 1, 3, 2};
    switch (lang) {
      case LangId::en:
        return en;
      case LangId::fr:
      case LangId::it:
      case LangId::es:
        return noun_adj;
      case LangId::de:
        return verb_final;
      case LangId::hi:
        return sov;
    }
    throw ConfigError("unknown language id");
  }

  static const std::array<std::string, kLangCount>& articles() {
    static const std::array<std::string, kLangCount> a{"the", "le", "il",
                                                       "das", "el", ""};
    return a;
  }

  // Rows: en fr it de es hi, grouped by slot.
  struct LexEntry {
    const char* w[kLangCount];
  };
  static const std::array<LexEntry, kSlotCount * kValuesPerSlot>& lexicon() {
    static const std::array<LexEntry, kSlotCount * kValuesPerSlot> lex{{
        // modifiers
        {{"black", "noir", "nero", "schwarze", "negro", "काला"}},
        {{"white", "blanc", "bianco", "weiße", "blanco", "सफेद"}},
        {{"small", "petit", "piccolo", "kleine", "pequeño", "छोटा"}},
        {{"big", "grand", "grande", "große", "grande", "बड़ा"}},
        {{"old", "vieux", "vecchio", "alte", "viejo", "पुराना"}},
        {{"young", "jeune", "giovane", "junge", "joven", "युवा"}},
        {{"happy", "heureux", "felice", "frohe", "feliz", "खुश"}},
        {{"quiet", "calme", "tranquillo", "stille", "tranquilo", "शांत"}},
        // subjects
        {{"dog", "chien", "cane", "Hund", "perro", "कुत्ता"}},
        {{"cat", "chat", "gatto", "Katze", "gato", "बिल्ली"}},
        {{"bird", "oiseau", "uccello", "Vogel", "pájaro", "चिड़िया"}},
        {{"horse", "cheval", "cavallo", "Pferd", "caballo", "घोड़ा"}},
        {{"rabbit", "lapin", "coniglio", "Kaninchen", "conejo", "खरगोश"}},
        {{"child", "enfant", "bambino", "Kind", "niño", "बच्चा"}},
        {{"farmer", "fermier", "contadino", "Bauer", "granjero", "किसान"}},
        {{"painter", "peintre", "pittore", "Maler", "pintor", "चित्रकार"}},
        // verbs
        {{"chases", "poursuit", "insegue", "jagt", "persigue", "भगाता"}},
        {{"sees", "voit", "vede", "sieht", "ve", "देखता"}},
        {{"follows", "suit", "segue", "folgt", "sigue", "पकड़ता"}},
        {{"carries", "porte", "porta", "trägt", "lleva", "उठाता"}},
        {{"watches", "regarde", "guarda", "beobachtet", "mira", "निहारता"}},
        {{"finds", "trouve", "trova", "findet", "encuentra", "खोजता"}},
        {{"greets", "salue", "saluta", "grüßt", "saluda", "मिलता"}},
        {{"avoids", "évite", "evita", "meidet", "evita", "टालता"}},
        // objects
        {{"ball", "balle", "palla", "Ball", "pelota", "गेंद"}},
        {{"stick", "bâton", "bastone", "Stock", "palo", "छड़ी"}},
        {{"apple", "pomme", "mela", "Apfel", "manzana", "सेब"}},
        {{"lamp", "lampe", "lampada", "Lampe", "lámpara", "दीया"}},
        {{"book", "livre", "libro", "Buch", "libro", "किताब"}},
        {{"basket", "panier", "cesto", "Korb", "cesta", "टोकरी"}},
        {{"mirror", "miroir", "specchio", "Spiegel", "espejo", "आईना"}},
        {{"wagon", "chariot", "carro", "Wagen", "carreta", "ठेला"}},
    }};
    return lex;
  }

  void build_lexicons() {
    const auto& lex = lexicon();
    for (int l = 0; l < kLangCount; ++l) {
      std::map<std::string, std::string>& fwd = to_lang_[l];
      std::map<std::string, std::string>& rev = to_en_[l];
      const std::string& art = articles()[l];
      if (!art.empty()) {
        fwd["the"] = art;
        rev[art] = "the";
        word_forms_[l].push_back(art);
      }
      for (const LexEntry& e : lex) {
        if (!fwd.emplace(e.w[0], e.w[l]).second ||
            !rev.emplace(e.w[l], e.w[0]).second)
          throw ConfigError("lexicon word map is not bijective for " +
                            lang_codes()[l]);
        word_forms_[l].push_back(e.w[l]);
      }
      for (size_t i = 0; i < word_forms_[l].size(); ++i)
        form_index_[l][word_forms_[l][i]] = i;
    }
    for (int slot = 0; slot < kSlotCount; ++slot)
      for (int value = 0; value < kValuesPerSlot; ++value)
        en_index_[inventories()[slot][value]] = {slot, value};
  }

  void init_image_table() {
    Rng rng(hash_str(cfg_.seed, "image-table"));
    slot_vecs_.resize(kSlotCount * kValuesPerSlot);
    for (std::vector<double>& vec : slot_vecs_) {
      vec.resize(kImageDim);
      for (double& x : vec) x = 0.5 * rng.next_normal();
    }
  }

  std::string word_for(LangId lang, const std::string& en_word) const {
    if (lang == LangId::en) return en_word;
    return to_lang_[static_cast<int>(lang)].at(en_word);
  }

  std::vector<std::string> map_words(const std::vector<std::string>& toks,
                                     LangId src, LangId tgt) const {
    if (src == tgt) return toks;
    std::vector<std::string> out;
    out.reserve(toks.size());
    for (const std::string& t : toks) {
      std::string en_word = t;
      if (src != LangId::en) {
        auto it = to_en_[static_cast<int>(src)].find(t);
        if (it == to_en_[static_cast<int>(src)].end()) {
          out.push_back(t);  // passthrough
          continue;
        }
        en_word = it->second;
      }
      if (tgt == LangId::en) {
        out.push_back(en_word);
        continue;
      }
      auto it = to_lang_[static_cast<int>(tgt)].find(en_word);
      if (it == to_lang_[static_cast<int>(tgt)].end()) {
        if (en_word == "the")
          continue;  // languages without articles drop them
        out.push_back(t);
      } else {
        out.push_back(it->second);
      }
    }
    return out;
  }

  void apply_noise(std::vector<std::string>& toks, LangId src, LangId tgt,
                   const std::string& source_text, uint64_t salt) const {
    const int l = static_cast<int>(tgt);
    const std::vector<std::string>& forms = word_forms_[l];
    Rng rng(hash_str(
        hash_u64(cfg_.seed, 0x6e6f697365ull /* word-noise stream */,
                 (static_cast<uint64_t>(src) << 3) | static_cast<uint64_t>(tgt),
                 salt),
        source_text));
    std::vector<std::string> out;
    out.reserve(toks.size());
    for (const std::string& tok : toks) {
      double u = rng.next_double();
      if (u < cfg_.noise_p * 0.5) continue;  // drop
      if (u < cfg_.noise_p) {
        auto it = form_index_[l].find(tok);
        size_t j;
        if (it != form_index_[l].end()) {
          j = rng.next_below(forms.size() - 1);
          if (j >= it->second) ++j;  // substitute with a *different* word
        } else {
          j = rng.next_below(forms.size());
        }
        out.push_back(forms[j]);
        continue;
      }
      out.push_back(tok);
    }
    toks = std::move(out);
  }

  static std::string join(const std::vector<std::string>& toks) {
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
      if (i) out += ' ';
      out += toks[i];
    }
    return out;
  }

  WorldConfig cfg_;
  std::array<std::map<std::string, std::string>, kLangCount> to_lang_;
  std::array<std::map<std::string, std::string>, kLangCount> to_en_;
  std::array<std::vector<std::string>, kLangCount> word_forms_;
  std::array<std::map<std::string, size_t>, kLangCount> form_index_;
  std::map<std::string, std::pair<int, int>> en_index_;  // word -> slot,value
  std::vector<std::vector<double>> slot_vecs_;
};

// The world as a translation engine, in clean or noisy mode.
class SyntheticEngine final : public TranslationEngine {
 public:
  SyntheticEngine(const SyntheticWorld& world, bool noisy)
      : world_(&world), noisy_(noisy) {}

  std::string translate(const std::string& text, LangId src,
                        LangId tgt) const override {
    return world_->translate(text, src, tgt, noisy_);
  }

 private:
  const SyntheticWorld* world_;
  bool noisy_;
};

}  // namespace plugs
