#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "plugs/common.hpp"
#include "plugs/vocab.hpp"

namespace plugs {

namespace detail {

// N-gram counts of a token sequence, keyed by the joined words. Tokens come
// from whitespace splitting, so the join is unambiguous.
inline std::map<std::string, double> ngram_counts(
    const std::vector<std::string>& toks, int n) {
  std::map<std::string, double> out;
  if (static_cast<int>(toks.size()) < n) return out;
  for (size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key = toks[i];
    for (int j = 1; j < n; ++j) {
      key += ' ';
      key += toks[i + j];
    }
    out[key] += 1.0;
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Corpus-level BLEU-4: clipped modified n-gram precision for n=1..4 with
// uniform weights, geometric mean, brevity penalty, one reference per
// candidate, no smoothing. Returns a score in [0,100].
// ---------------------------------------------------------------------------

inline double bleu4(const std::vector<std::string>& candidates,
                    const std::vector<std::string>& references) {
  if (candidates.empty())
    throw DataError("bleu4: need at least one candidate/reference pair");
  if (candidates.size() != references.size())
    throw DataError("bleu4: " + std::to_string(candidates.size()) +
                    " candidates vs " + std::to_string(references.size()) +
                    " references");
  double matched[4] = {0, 0, 0, 0};
  double total[4] = {0, 0, 0, 0};
  double cand_len = 0, ref_len = 0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    std::vector<std::string> c = split_words(candidates[i]);
    std::vector<std::string> r = split_words(references[i]);
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(r.size());
    for (int n = 1; n <= 4; ++n) {
      std::map<std::string, double> cc = detail::ngram_counts(c, n);
      std::map<std::string, double> rc = detail::ngram_counts(r, n);
      for (const auto& [g, count] : cc) {
        total[n - 1] += count;
        auto it = rc.find(g);
        if (it != rc.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (matched[n] == 0.0) return 0.0;  // unsmoothed geometric mean
    log_sum += 0.25 * std::log(matched[n] / total[n]);
  }
  double bp =
      cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return 100.0 * bp * std::exp(log_sum);
}

// ---------------------------------------------------------------------------
// CIDEr (base variant): tf-idf n-gram vectors for n=1..4, cosine against
// each reference averaged over references and over n, scaled by 10. The idf
// corpus is a list of reference sets; document frequency counts the items
// whose reference set contains the n-gram.
// ---------------------------------------------------------------------------

inline double cider(const std::vector<std::string>& candidates,
                    const std::vector<std::vector<std::string>>& references,
                    const std::vector<std::vector<std::string>>& idf_corpus) {
  if (candidates.empty()) throw DataError("cider: no candidates");
  if (candidates.size() != references.size())
    throw DataError("cider: " + std::to_string(candidates.size()) +
                    " candidates vs " + std::to_string(references.size()) +
                    " reference sets");
  if (idf_corpus.size() < 2)
    throw DataError("cider: idf corpus must contain at least 2 items");
  for (const std::vector<std::string>& refs : references)
    if (refs.empty()) throw DataError("cider: empty reference set");

  std::map<std::string, double> df[4];
  for (const std::vector<std::string>& item_refs : idf_corpus) {
    for (int n = 0; n < 4; ++n) {
      std::set<std::string> seen;
      for (const std::string& ref : item_refs)
        for (const auto& [g, c] :
             detail::ngram_counts(split_words(ref), n + 1))
          seen.insert(g);
      for (const std::string& g : seen) df[n][g] += 1.0;
    }
  }
  const double n_docs = static_cast<double>(idf_corpus.size());
  auto tfidf = [&](const std::vector<std::string>& toks, int n) {
    std::map<std::string, double> vec = detail::ngram_counts(toks, n + 1);
    for (auto& [g, w] : vec) {
      auto it = df[n].find(g);
      w *= (it == df[n].end()) ? 0.0 : std::log(n_docs / it->second);
    }
    return vec;
  };
  auto cosine = [](const std::map<std::string, double>& a,
                   const std::map<std::string, double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (const auto& [g, w] : a) {
      na += w * w;
      auto it = b.find(g);
      if (it != b.end()) dot += w * it->second;
    }
    for (const auto& [g, w] : b) nb += w * w;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  double corpus_score = 0.0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    std::vector<std::string> cand = split_words(candidates[i]);
    double item_score = 0.0;
    for (int n = 0; n < 4; ++n) {
      std::map<std::string, double> gc = tfidf(cand, n);
      double ref_mean = 0.0;
      for (const std::string& ref : references[i])
        ref_mean += cosine(gc, tfidf(split_words(ref), n));
      ref_mean /= static_cast<double>(references[i].size());
      item_score += 10.0 * ref_mean / 4.0;
    }
    corpus_score += item_score;
  }
  return corpus_score / static_cast<double>(candidates.size());
}

// ---------------------------------------------------------------------------
// Side-by-side rating aggregation. Records carry the rating screen as shown
// (left/right); derandomization maps them back to models A and B via
// left_model before any statistic is computed.
// ---------------------------------------------------------------------------

enum class SxsChoice { left, same, right };

struct RatingRecord {
  std::string item_id;
  std::string rater_id;
  char left_model = 'A';  // which model was shown on the left
  SxsChoice sxs = SxsChoice::same;
  int abs_left = 1, abs_right = 1;  // 4=Excellent 3=Good 2=Acceptable 1=Poor
};

inline constexpr int kRatingAcceptable = 2;

struct AgreementStats {
  // % of items where >=2 of 3 raters give the same derandomized W/L/S vote.
  double sxs_majority = 0.0;
  // % of items where the majority outcome recomputed from the sign of the
  // absolute-rating differences equals the side-by-side majority outcome.
  double sign_match = 0.0;
  // % of absolute-rating groups (item x side) where >=2 of 3 raters agree.
  double abs_majority = 0.0;
};

struct SxsReport {
  double wins = 0.0, losses = 0.0, gain_sxs = 0.0;
  double a_ok = 0.0, b_ok = 0.0, gain_ok = 0.0;
  size_t n_items = 0;
  AgreementStats agreement;
};

inline const std::string& ratings_csv_header() {
  static const std::string h =
      "item_id,rater_id,left_model,sxs_choice,abs_left,abs_right";
  return h;
}

inline std::vector<RatingRecord> parse_ratings_csv(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  if (lines.empty() || lines[0] != ratings_csv_header())
    throw FormatError("ratings: missing header line '" +
                      ratings_csv_header() + "'");
  std::vector<RatingRecord> out;
  for (size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    std::vector<std::string> f;
    std::string field;
    for (char c : lines[li]) {
      if (c == ',') {
        f.push_back(field);
        field.clear();
      } else {
        field += c;
      }
    }
    f.push_back(field);
    const std::string where = "ratings line " + std::to_string(li + 1);
    if (f.size() != 6)
      throw FormatError(where + ": expected 6 fields, got " +
                        std::to_string(f.size()));
    RatingRecord r;
    r.item_id = f[0];
    r.rater_id = f[1];
    if (r.item_id.empty() || r.rater_id.empty())
      throw FormatError(where + ": empty item or rater id");
    if (f[2] != "A" && f[2] != "B")
      throw FormatError(where + ": left_model must be A or B, got '" + f[2] +
                        "'");
    r.left_model = f[2][0];
    if (f[3] == "L")
      r.sxs = SxsChoice::left;
    else if (f[3] == "S")
      r.sxs = SxsChoice::same;
    else if (f[3] == "R")
      r.sxs = SxsChoice::right;
    else
      throw FormatError(where + ": sxs_choice must be L, S or R, got '" +
                        f[3] + "'");
    auto parse_rating = [&](const std::string& s) {
      if (s.size() != 1 || s[0] < '1' || s[0] > '4')
        throw FormatError(where + ": rating must be in 1..4, got '" + s + "'");
      return s[0] - '0';
    };
    r.abs_left = parse_rating(f[4]);
    r.abs_right = parse_rating(f[5]);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string write_ratings_csv(const std::vector<RatingRecord>& recs) {
  std::string out = ratings_csv_header() + "\n";
  for (const RatingRecord& r : recs) {
    const char* sxs = r.sxs == SxsChoice::left
                          ? "L"
                          : (r.sxs == SxsChoice::same ? "S" : "R");
    out += r.item_id + ',' + r.rater_id + ',' + r.left_model + ',' + sxs +
           ',' + std::to_string(r.abs_left) + ',' +
           std::to_string(r.abs_right) + '\n';
  }
  return out;
}

namespace detail {

// One rater's judgement after derandomization.
struct Judgement {
  int vote = 0;  // -1 A better, 0 same, +1 B better
  int a_rating = 1, b_rating = 1;
};

struct ItemJudgements {
  std::string item_id;
  std::vector<Judgement> raters;
};

// Groups records by item, enforcing exactly three distinct raters per item.
inline std::vector<ItemJudgements> derandomize(
    const std::vector<RatingRecord>& records) {
  std::map<std::string, ItemJudgements> by_item;
  std::map<std::string, std::set<std::string>> raters_seen;
  for (const RatingRecord& r : records) {
    if (!raters_seen[r.item_id].insert(r.rater_id).second)
      throw DataError("ratings: item '" + r.item_id +
                      "' has duplicate rater '" + r.rater_id + "'");
    Judgement j;
    int left_vote = r.sxs == SxsChoice::left
                        ? -1
                        : (r.sxs == SxsChoice::right ? +1 : 0);
    if (r.left_model == 'A') {
      j.vote = left_vote;  // left better means A better
      j.a_rating = r.abs_left;
      j.b_rating = r.abs_right;
    } else {
      j.vote = -left_vote;  // left better means B better
      j.a_rating = r.abs_right;
      j.b_rating = r.abs_left;
    }
    ItemJudgements& item = by_item[r.item_id];
    item.item_id = r.item_id;
    item.raters.push_back(j);
  }
  std::vector<std::string> bad;
  for (const auto& [id, item] : by_item)
    if (item.raters.size() != 3) bad.push_back(id);
  if (!bad.empty()) {
    std::string msg = "ratings: items without exactly 3 raters:";
    for (const std::string& id : bad) msg += " " + id;
    throw DataError(msg);
  }
  std::vector<ItemJudgements> out;
  out.reserve(by_item.size());
  for (auto& [id, item] : by_item) out.push_back(std::move(item));
  return out;
}

// Majority outcome over three votes: -1/0/+1 when two or more raters agree,
// nullopt for a three-way split.
inline std::optional<int> majority_vote(const std::vector<Judgement>& raters,
                                        bool from_ratings) {
  int counts[3] = {0, 0, 0};  // A better, same, B better
  for (const Judgement& j : raters) {
    int v = from_ratings ? (j.b_rating > j.a_rating
                                ? +1
                                : (j.b_rating < j.a_rating ? -1 : 0))
                         : j.vote;
    ++counts[v + 1];
  }
  for (int v = -1; v <= 1; ++v)
    if (counts[v + 1] >= 2) return v;
  return std::nullopt;
}

}  // namespace detail

inline AgreementStats agreement(const std::vector<RatingRecord>& records) {
  std::vector<detail::ItemJudgements> items = detail::derandomize(records);
  if (items.empty()) throw DataError("ratings: no items");
  double n = static_cast<double>(items.size());
  AgreementStats st;
  double abs_groups = 0.0;
  for (const detail::ItemJudgements& item : items) {
    std::optional<int> sxs = detail::majority_vote(item.raters, false);
    if (sxs.has_value()) st.sxs_majority += 1.0;
    if (sxs == detail::majority_vote(item.raters, true)) st.sign_match += 1.0;
    for (bool b_side : {false, true}) {
      int counts[5] = {0, 0, 0, 0, 0};
      for (const detail::Judgement& j : item.raters)
        ++counts[b_side ? j.b_rating : j.a_rating];
      for (int v = 1; v <= 4; ++v)
        if (counts[v] >= 2) {
          abs_groups += 1.0;
          break;
        }
    }
  }
  st.sxs_majority *= 100.0 / n;
  st.sign_match *= 100.0 / n;
  st.abs_majority = abs_groups * 100.0 / (2.0 * n);
  return st;
}

inline double ok_rate(const std::vector<RatingRecord>& records, char side) {
  if (side != 'A' && side != 'B')
    throw ConfigError("ok_rate: side must be 'A' or 'B'");
  std::vector<detail::ItemJudgements> items = detail::derandomize(records);
  if (items.empty()) throw DataError("ratings: no items");
  double ok = 0.0;
  for (const detail::ItemJudgements& item : items) {
    int acceptable = 0;
    for (const detail::Judgement& j : item.raters)
      if ((side == 'A' ? j.a_rating : j.b_rating) >= kRatingAcceptable)
        ++acceptable;
    if (acceptable >= 2) ok += 1.0;
  }
  return ok * 100.0 / static_cast<double>(items.size());
}

inline SxsReport aggregate_sxs(const std::vector<RatingRecord>& records) {
  std::vector<detail::ItemJudgements> items = detail::derandomize(records);
  if (items.empty()) throw DataError("ratings: no items");
  SxsReport rep;
  rep.n_items = items.size();
  double n = static_cast<double>(items.size());
  for (const detail::ItemJudgements& item : items) {
    std::optional<int> outcome = detail::majority_vote(item.raters, false);
    if (outcome == +1) rep.wins += 1.0;
    if (outcome == -1) rep.losses += 1.0;
  }
  rep.wins *= 100.0 / n;
  rep.losses *= 100.0 / n;
  rep.gain_sxs = rep.wins - rep.losses;
  rep.a_ok = ok_rate(records, 'A');
  rep.b_ok = ok_rate(records, 'B');
  rep.gain_ok = rep.b_ok - rep.a_ok;
  rep.agreement = agreement(records);
  return rep;
}

// Median absolute rating per item for each model, items in id order. Feeds
// the rank correlation between two rated outputs.
inline std::pair<std::vector<double>, std::vector<double>> median_ratings(
    const std::vector<RatingRecord>& records) {
  std::vector<detail::ItemJudgements> items = detail::derandomize(records);
  std::pair<std::vector<double>, std::vector<double>> out;
  for (const detail::ItemJudgements& item : items) {
    std::array<int, 3> a{}, b{};
    for (int i = 0; i < 3; ++i) {
      a[i] = item.raters[i].a_rating;
      b[i] = item.raters[i].b_rating;
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    out.first.push_back(a[1]);
    out.second.push_back(b[1]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spearman rank correlation with average ranks for ties: Pearson correlation
// of the rank vectors.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

inline double spearman(const std::vector<double>& x,
                       const std::vector<double>& y) {
  if (x.size() != y.size())
    throw DataError("spearman: length mismatch, " + std::to_string(x.size()) +
                    " vs " + std::to_string(y.size()));
  if (x.size() < 3)
    throw DataError("spearman: need at least 3 points, got " +
                    std::to_string(x.size()));
  std::vector<double> rx = detail::average_ranks(x);
  std::vector<double> ry = detail::average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double cov = 0, vx = 0, vy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  if (vx == 0.0 || vy == 0.0)
    throw DataError("spearman: correlation undefined for a constant input");
  return cov / std::sqrt(vx * vy);
}

}  // namespace plugs
