#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "plugs/metrics.hpp"
#include "ratings_fixture.hpp"

using namespace plugs;
using Catch::Approx;

// ---------------------------------------------------------------------------
// BLEU-4
// ---------------------------------------------------------------------------

TEST_CASE("bleu4 identity scores 100") {
  std::vector<std::string> corpus{
      "the black dog chases the ball", "the small cat sees the ball",
      "काला बिल्ली गेंद भगाता देखता", "el gato negro persigue el pelota"};
  REQUIRE(bleu4(corpus, corpus) == Approx(100.0).margin(1e-9));
}

TEST_CASE("bleu4 is zero when any 4-gram precision is zero") {
  // one word changed in a 6-word sentence leaves no common 4-gram
  REQUIRE(bleu4({"the cat sat on the mat"}, {"the cat is on the mat"}) == 0.0);
  REQUIRE(bleu4({"completely different words here"},
                {"the cat is on the mat"}) == 0.0);
  // empty candidate
  REQUIRE(bleu4({""}, {"the cat"}) == 0.0);
}

TEST_CASE("bleu4 matches hand-computed clipped precision values") {
  // p1=5/6, p2=3/5, p3=1/2, p4=1/3, BP=1 -> 100*(1/12)^(1/4)
  REQUIRE(bleu4({"the cat sat on the mat"}, {"the cat sat on a mat"}) ==
          Approx(53.728496591177).margin(1e-6));
  // p=1,3/4,2/3,1/2 with brevity penalty exp(1-6/5)
  REQUIRE(bleu4({"the cat sat on mat"}, {"the cat sat on the mat"}) ==
          Approx(57.893006746741).margin(1e-6));
}

TEST_CASE("bleu4 is permutation invariant and bounded") {
  std::vector<std::string> cands{"the black dog chases the ball",
                                 "the small cat sees the ball",
                                 "the young farmer carries the basket"};
  std::vector<std::string> refs{"the black dog chases the lamp",
                                "the small cat sees the ball",
                                "the old farmer carries the basket"};
  double base = bleu4(cands, refs);
  REQUIRE(base > 0.0);
  REQUIRE(base < 100.0);
  std::vector<std::string> cands2{cands[2], cands[0], cands[1]};
  std::vector<std::string> refs2{refs[2], refs[0], refs[1]};
  REQUIRE(bleu4(cands2, refs2) == base);
}

TEST_CASE("bleu4 rejects malformed corpora") {
  REQUIRE_THROWS_AS(bleu4({}, {}), DataError);
  REQUIRE_THROWS_AS(bleu4({"a b"}, {"a b", "c d"}), DataError);
}

// ---------------------------------------------------------------------------
// CIDEr
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::vector<std::string>>& cider_corpus() {
  static const std::vector<std::vector<std::string>> corpus{
      {"the black dog chases the ball"},
      {"the small cat sees the ball", "a small cat sees a ball"},
      {"the young farmer carries the basket"}};
  return corpus;
}

}  // namespace

TEST_CASE("cider scores an identical candidate 10") {
  REQUIRE(cider({"the black dog chases the ball"}, {cider_corpus()[0]},
                cider_corpus()) == Approx(10.0).margin(1e-9));
}

TEST_CASE("cider matches the recorded mixed-overlap value") {
  REQUIRE(cider({"the small cat sees the lamp"}, {cider_corpus()[1]},
                cider_corpus()) == Approx(6.285281860815).margin(1e-9));
}

TEST_CASE("cider is invariant under duplicating the idf corpus") {
  std::vector<std::vector<std::string>> doubled = cider_corpus();
  doubled.insert(doubled.end(), cider_corpus().begin(), cider_corpus().end());
  REQUIRE(cider({"the small cat sees the lamp"}, {cider_corpus()[1]},
                doubled) == Approx(cider({"the small cat sees the lamp"},
                                         {cider_corpus()[1]}, cider_corpus()))
                                .margin(1e-12));
}

TEST_CASE("cider decreases as matching n-grams are removed") {
  std::vector<std::string> sweep{
      "the black dog chases the ball", "the black dog chases the zzza",
      "the black dog zzzb the zzza",   "the zzzc dog zzzb the zzza",
      "zzzd zzzc dog zzzb zzze zzza",  "zzzd zzzc zzzf zzzb zzze zzza"};
  std::vector<double> expect{10.0,           9.109902646371, 4.984836941486,
                             1.411683192175, 1.411683192175, 0.0};
  double prev = 11.0;
  for (size_t i = 0; i < sweep.size(); ++i) {
    double v = cider({sweep[i]}, {cider_corpus()[0]}, cider_corpus());
    REQUIRE(v == Approx(expect[i]).margin(1e-9));
    REQUIRE(v <= prev);
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 10.0);
    prev = v;
  }
}

TEST_CASE("cider scores zero overlap as zero") {
  REQUIRE(cider({"xxx yyy"}, {cider_corpus()[0]}, cider_corpus()) == 0.0);
}

TEST_CASE("cider validates its inputs") {
  REQUIRE_THROWS_AS(cider({}, {}, cider_corpus()), DataError);
  REQUIRE_THROWS_AS(cider({"a"}, {{"a"}, {"b"}}, cider_corpus()), DataError);
  REQUIRE_THROWS_AS(cider({"a"}, {{"a"}}, {{"only one item"}}), DataError);
  REQUIRE_THROWS_AS(cider({"a"}, {{"a"}}, {}), DataError);
  REQUIRE_THROWS_AS(
      cider({"a"}, {std::vector<std::string>{}}, cider_corpus()), DataError);
}

// ---------------------------------------------------------------------------
// Spearman
// ---------------------------------------------------------------------------

TEST_CASE("spearman endpoints and hand case") {
  std::vector<double> x{3, 1, 4, 1.5, 9, 2.6};
  std::vector<double> rev{-3, -1, -4, -1.5, -9, -2.6};
  REQUIRE(spearman(x, x) == Approx(1.0).margin(1e-12));
  REQUIRE(spearman(x, rev) == Approx(-1.0).margin(1e-12));
  REQUIRE(spearman({1, 2, 2, 4}, {2, 2, 3, 4}) ==
          Approx(5.0 / 6.0).margin(1e-12));
}

TEST_CASE("spearman is invariant under strictly monotone transforms") {
  std::vector<double> x{3, 1, 4, 1.5, 9, 2.6};
  std::vector<double> y{2, 2, 7, 1, 5, 5};
  double base = spearman(x, y);
  std::vector<double> xc = x, ye = y;
  for (double& v : xc) v = v * v * v;          // strictly increasing on x>0
  for (double& v : ye) v = std::exp(v / 3.0);  // strictly increasing
  REQUIRE(spearman(xc, ye) == Approx(base).margin(1e-12));
}

TEST_CASE("spearman rejects degenerate inputs") {
  REQUIRE_THROWS_AS(spearman({1, 2, 3}, {1, 2}), DataError);
  REQUIRE_THROWS_AS(spearman({1, 2}, {2, 1}), DataError);
  REQUIRE_THROWS_AS(spearman({1, 1, 1}, {1, 2, 3}), DataError);
  REQUIRE_THROWS_AS(spearman({1, 2, 3}, {5, 5, 5}), DataError);
}

// ---------------------------------------------------------------------------
// Ratings files
// ---------------------------------------------------------------------------

TEST_CASE("ratings csv round trips") {
  std::vector<RatingRecord> recs = fixtures::agreement_ratings();
  std::string csv = write_ratings_csv(recs);
  std::vector<RatingRecord> back = parse_ratings_csv(csv);
  REQUIRE(back.size() == recs.size());
  REQUIRE(write_ratings_csv(back) == csv);
}

TEST_CASE("ratings csv rejects malformed input") {
  REQUIRE_THROWS_AS(parse_ratings_csv(""), FormatError);
  REQUIRE_THROWS_AS(parse_ratings_csv("item,rater\n"), FormatError);
  const std::string h = ratings_csv_header() + "\n";
  REQUIRE_THROWS_AS(parse_ratings_csv(h + "i1,r1,A,L,1\n"), FormatError);
  REQUIRE_THROWS_AS(parse_ratings_csv(h + "i1,r1,X,L,1,2\n"), FormatError);
  REQUIRE_THROWS_AS(parse_ratings_csv(h + "i1,r1,A,Q,1,2\n"), FormatError);
  REQUIRE_THROWS_AS(parse_ratings_csv(h + "i1,r1,A,L,0,2\n"), FormatError);
  REQUIRE_THROWS_AS(parse_ratings_csv(h + "i1,r1,A,L,1,5\n"), FormatError);
  REQUIRE_THROWS_AS(parse_ratings_csv(h + ",r1,A,L,1,2\n"), FormatError);
  // structurally fine but incomplete files fail aggregation, not parsing
  std::string two_raters =
      h + "i1,r1,A,L,1,2\ni1,r2,A,L,1,2\n";
  REQUIRE_NOTHROW(parse_ratings_csv(two_raters));
  REQUIRE_THROWS_WITH(aggregate_sxs(parse_ratings_csv(two_raters)),
                      Catch::Matchers::ContainsSubstring("i1"));
  std::string dup_rater = h + "i1,r1,A,L,1,2\ni1,r1,A,L,1,2\n";
  REQUIRE_NOTHROW(parse_ratings_csv(dup_rater));
  REQUIRE_THROWS_AS(aggregate_sxs(parse_ratings_csv(dup_rater)), DataError);
}

TEST_CASE("aggregation reproduces the crafted headline row") {
  SxsReport rep = aggregate_sxs(fixtures::headline_ratings());
  REQUIRE(rep.n_items == 1000);
  REQUIRE(rep.wins == Approx(22.8).margin(1e-9));
  REQUIRE(rep.losses == Approx(19.4).margin(1e-9));
  REQUIRE(rep.gain_sxs == Approx(3.4).margin(1e-9));
  REQUIRE(rep.b_ok == Approx(68.7).margin(1e-9));
  REQUIRE(rep.a_ok == Approx(66.5).margin(1e-9));
  REQUIRE(rep.gain_ok == Approx(2.2).margin(1e-9));
  // gain identities hold exactly
  REQUIRE(rep.gain_sxs == rep.wins - rep.losses);
  REQUIRE(rep.gain_ok == rep.b_ok - rep.a_ok);
  REQUIRE(rep.wins + rep.losses <= 100.0);
}

TEST_CASE("aggregation is invariant under re-randomized placement") {
  std::vector<RatingRecord> recs = fixtures::headline_ratings();
  SxsReport a = aggregate_sxs(recs);
  SxsReport b = aggregate_sxs(fixtures::flip_placement(recs));
  REQUIRE(a.wins == b.wins);
  REQUIRE(a.losses == b.losses);
  REQUIRE(a.a_ok == b.a_ok);
  REQUIRE(a.b_ok == b.b_ok);
  REQUIRE(a.agreement.sxs_majority == b.agreement.sxs_majority);
  REQUIRE(a.agreement.sign_match == b.agreement.sign_match);
  REQUIRE(a.agreement.abs_majority == b.agreement.abs_majority);
}

TEST_CASE("small aggregation cases follow the majority rule") {
  using A3 = std::array<int, 3>;
  // all raters choose Same
  std::vector<RatingRecord> all_same;
  for (int i = 0; i < 4; ++i)
    fixtures::detail::append_item(all_same, "s" + std::to_string(i), i,
                                  A3{0, 0, 0}, A3{4, 4, 4}, A3{4, 4, 4});
  SxsReport rep = aggregate_sxs(all_same);
  REQUIRE(rep.wins == 0.0);
  REQUIRE(rep.losses == 0.0);
  REQUIRE(rep.gain_sxs == 0.0);
  REQUIRE(rep.a_ok == 100.0);  // all Excellent
  REQUIRE(rep.b_ok == 100.0);

  // one B majority, one A majority, one split: the split counts as neither
  std::vector<RatingRecord> three;
  fixtures::detail::append_item(three, "t0", 0, A3{1, 1, -1}, A3{2, 2, 2},
                                A3{3, 3, 3});
  fixtures::detail::append_item(three, "t1", 1, A3{-1, 0, -1}, A3{2, 2, 2},
                                A3{3, 3, 3});
  fixtures::detail::append_item(three, "t2", 2, A3{-1, 1, 0}, A3{2, 2, 2},
                                A3{3, 3, 3});
  SxsReport r3 = aggregate_sxs(three);
  REQUIRE(r3.wins == Approx(100.0 / 3.0));
  REQUIRE(r3.losses == Approx(100.0 / 3.0));

  // (Poor, Acceptable, Good) is acceptable by majority
  std::vector<RatingRecord> pag;
  fixtures::detail::append_item(pag, "p0", 0, A3{0, 0, 0}, A3{1, 2, 3},
                                A3{1, 1, 2});
  REQUIRE(ok_rate(pag, 'A') == 100.0);
  REQUIRE(ok_rate(pag, 'B') == 0.0);
  REQUIRE_THROWS_AS(ok_rate(pag, 'C'), ConfigError);
}

TEST_CASE("agreement statistics recover crafted targets exactly") {
  AgreementStats st = agreement(fixtures::agreement_ratings());
  REQUIRE(st.sxs_majority == Approx(92.0).margin(1e-9));
  REQUIRE(st.sign_match == Approx(98.0).margin(1e-9));
  REQUIRE(st.abs_majority == Approx(82.0).margin(1e-9));

  // unanimous everywhere -> (100, 100, 100)
  std::vector<RatingRecord> unanimous;
  fixtures::detail::append_item(unanimous, "u0", 0, std::array<int, 3>{1, 1, 1},
                                std::array<int, 3>{2, 2, 2},
                                std::array<int, 3>{3, 3, 3});
  AgreementStats u = agreement(unanimous);
  REQUIRE(u.sxs_majority == 100.0);
  REQUIRE(u.sign_match == 100.0);
  REQUIRE(u.abs_majority == 100.0);

  // single item, all Same, equal ratings
  std::vector<RatingRecord> same1;
  fixtures::detail::append_item(same1, "q0", 0, std::array<int, 3>{0, 0, 0},
                                std::array<int, 3>{3, 3, 3},
                                std::array<int, 3>{3, 3, 3});
  AgreementStats s1 = agreement(same1);
  REQUIRE(s1.sxs_majority == 100.0);
  REQUIRE(s1.sign_match == 100.0);
  REQUIRE(s1.abs_majority == 100.0);
}

TEST_CASE("median ratings take the middle value per item") {
  std::vector<RatingRecord> recs;
  fixtures::detail::append_item(recs, "m0", 0, std::array<int, 3>{0, 0, 0},
                                std::array<int, 3>{1, 4, 2},
                                std::array<int, 3>{3, 3, 1});
  fixtures::detail::append_item(recs, "m1", 1, std::array<int, 3>{0, 0, 0},
                                std::array<int, 3>{4, 4, 1},
                                std::array<int, 3>{2, 1, 2});
  auto [a, b] = median_ratings(recs);
  REQUIRE(a == std::vector<double>{2, 4});
  REQUIRE(b == std::vector<double>{3, 2});
}
