#pragma once

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "plugs/metrics.hpp"

namespace fixtures {

namespace detail {

// Appends one item's three records, mapping derandomized per-rater votes
// (-1 A better, 0 same, +1 B better) and A/B ratings onto alternating
// left/right placements.
inline void append_item(std::vector<plugs::RatingRecord>& out,
                        const std::string& item_id, int item_index,
                        const std::array<int, 3>& votes,
                        const std::array<int, 3>& a_ratings,
                        const std::array<int, 3>& b_ratings) {
  using plugs::RatingRecord;
  using plugs::SxsChoice;
  for (int r = 0; r < 3; ++r) {
    RatingRecord rec;
    rec.item_id = item_id;
    rec.rater_id = "r" + std::to_string(r + 1);
    rec.left_model = ((item_index + r) % 2 == 0) ? 'A' : 'B';
    const bool a_left = rec.left_model == 'A';
    const int v = votes[r];
    if (v == 0)
      rec.sxs = SxsChoice::same;
    else if ((v > 0) != a_left)  // the better model sits on the left
      rec.sxs = SxsChoice::left;
    else
      rec.sxs = SxsChoice::right;
    rec.abs_left = a_left ? a_ratings[r] : b_ratings[r];
    rec.abs_right = a_left ? b_ratings[r] : a_ratings[r];
    out.push_back(rec);
  }
}

}  // namespace detail

// 1000 items crafted so that aggregation yields wins 22.8, losses 19.4,
// gain 3.4, ok rates 68.7 (B) vs 66.5 (A), gain 2.2.
inline std::vector<plugs::RatingRecord> headline_ratings() {
  std::vector<plugs::RatingRecord> out;
  out.reserve(3000);
  char id[16];
  for (int i = 0; i < 1000; ++i) {
    std::snprintf(id, sizeof id, "img%04d", i);
    std::array<int, 3> votes;
    if (i < 228)
      votes = (i % 3 == 0) ? std::array<int, 3>{1, 1, 1}
                           : std::array<int, 3>{1, 1, -1};
    else if (i < 422)
      votes = {-1, -1, 0};
    else if (i < 900)
      votes = {0, 0, 1};
    else
      votes = {-1, 1, 0};  // three-way split, counts as neither
    const std::array<int, 3> a =
        (i < 665) ? std::array<int, 3>{2, 3, 1} : std::array<int, 3>{1, 4, 1};
    const std::array<int, 3> b =
        (i < 687) ? std::array<int, 3>{4, 3, 1} : std::array<int, 3>{1, 1, 3};
    detail::append_item(out, id, i, votes, a, b);
  }
  return out;
}

// 100 items whose agreement statistics are exactly (92, 98, 82).
inline std::vector<plugs::RatingRecord> agreement_ratings() {
  std::vector<plugs::RatingRecord> out;
  out.reserve(300);
  char id[16];
  for (int i = 0; i < 100; ++i) {
    std::snprintf(id, sizeof id, "itm%03d", i);
    std::array<int, 3> votes{1, 1, 1};
    std::array<int, 3> a{2, 2, 2};
    std::array<int, 3> b{3, 3, 3};
    if (i < 36) a = {1, 2, 3};  // A-side rating group has no majority value
    if (i == 90 || i == 91) {
      a = {3, 3, 3};  // rating differences point the other way
      b = {2, 2, 2};
    }
    if (i >= 92) {
      votes = {-1, 1, 0};  // split side-by-side outcome...
      a = {3, 2, 2};       // ...with rating signs split the same way
      b = {2, 3, 2};
    }
    detail::append_item(out, id, i, votes, a, b);
  }
  return out;
}

// Swaps every record's on-screen placement; aggregation must not change.
inline std::vector<plugs::RatingRecord> flip_placement(
    std::vector<plugs::RatingRecord> recs) {
  using plugs::SxsChoice;
  for (plugs::RatingRecord& r : recs) {
    r.left_model = r.left_model == 'A' ? 'B' : 'A';
    if (r.sxs == SxsChoice::left)
      r.sxs = SxsChoice::right;
    else if (r.sxs == SxsChoice::right)
      r.sxs = SxsChoice::left;
    std::swap(r.abs_left, r.abs_right);
  }
  return recs;
}

}  // namespace fixtures
