#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "avey/avey.hpp"

namespace {

using DT = avey::DualTensor<double>;

DT randn(std::size_t r, std::size_t c, std::uint64_t seed) {
  avey::Rng rng(seed);
  DT t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = avey::normal01(rng);
  return t;
}

// Exhaustive-sort reference for top-k selection: order every candidate by
// score, highest first, ties broken toward the higher index, then keep the
// first k and report them ascending.
std::vector<int> oracle_topk(const std::vector<double>& scores, int k) {
  std::vector<int> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a > b;
  });
  if (int(order.size()) > k) order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<double> oracle_weights(const std::vector<double>& scores) {
  std::vector<double> w(scores.size(), 1.0);
  if (scores.empty()) return w;
  double mx = *std::max_element(scores.begin(), scores.end());
  if (mx > 0.0)
    for (std::size_t i = 0; i < scores.size(); ++i) w[i] = scores[i] / mx;
  return w;
}

// Per-row best cosine sum computed with plain loops on the raw rows,
// independent of the normalized-buffer GEMM path.
double naive_maxsim(const double* emb, std::size_t d, std::size_t cb,
                    std::size_t clen, std::size_t bb, std::size_t blen) {
  double total = 0;
  for (std::size_t r = 0; r < clen; ++r) {
    double best = -1e300;
    for (std::size_t c = 0; c < blen; ++c) {
      const double* x = emb + (cb + r) * d;
      const double* y = emb + (bb + c) * d;
      double xy = 0, xx = 0, yy = 0;
      for (std::size_t j = 0; j < d; ++j) {
        xy += x[j] * y[j];
        xx += x[j] * x[j];
        yy += y[j] * y[j];
      }
      double cos = (xx > 0 && yy > 0) ? xy / (std::sqrt(xx) * std::sqrt(yy))
                                      : 0.0;
      best = std::max(best, cos);
    }
    total += best;
  }
  return total;
}

}  // namespace

TEST_CASE("partition keeps a short trailing split", "[ranker]") {
  auto p = avey::partition(10, 4);
  REQUIRE(p.size() == 3);
  CHECK(p[0].begin == 0);
  CHECK(p[0].end == 4);
  CHECK(p[2].begin == 8);
  CHECK(p[2].end == 10);
  CHECK(p[2].len() == 2);
  CHECK(avey::partition(8, 4).size() == 2);
  CHECK(avey::partition(0, 4).empty());
  CHECK_THROWS_AS(avey::partition(5, 0), avey::ContractViolation);
}

TEST_CASE("maxsim_score sums each row's best cosine", "[ranker]") {
  auto A = DT::from(2, 2, {1, 0, 0, 1});
  auto B = DT::from(2, 2, {2, 0, 1, 1});
  // Row 0: best of {1, 1/sqrt(2)} = 1. Row 1: best of {0, 1/sqrt(2)}.
  double expect = 1.0 + 1.0 / std::sqrt(2.0);
  CHECK(avey::maxsim_score(A, B) == Catch::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(avey::maxsim_score(A, DT(0, 2)), avey::ContractViolation);
}

TEST_CASE("top-k selection and weighting match the exhaustive oracle",
          "[ranker]") {
  avey::Rng rng(2024);
  const double levels[5] = {-0.5, 0.0, 0.25, 0.8, 1.6};
  for (int trial = 0; trial < 10000; ++trial) {
    std::size_t n = avey::uniform_int(rng, 9);
    int k = int(avey::uniform_int(rng, 6));
    std::vector<double> scores(n);
    for (auto& s : scores)
      s = (trial % 2) ? levels[avey::uniform_int(rng, 5)]
                      : 2.0 * avey::uniform01(rng) - 0.5;
    auto got = avey::select_topk(scores, k);
    auto want = oracle_topk(scores, k);
    REQUIRE(got == want);
    std::vector<double> sel_scores;
    for (int j : got) sel_scores.push_back(scores[j]);
    auto w = avey::normalize_and_weight(sel_scores);
    auto ow = oracle_weights(sel_scores);
    REQUIRE(w.size() == ow.size());
    for (std::size_t i = 0; i < w.size(); ++i) REQUIRE(w[i] == ow[i]);
  }
}

TEST_CASE("score normalization worked example", "[ranker]") {
  auto w = avey::normalize_and_weight<double>({1.6, 0.8});
  REQUIRE(w.size() == 2);
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 0.5);
}

TEST_CASE("selection ties prefer the more recent split", "[ranker]") {
  auto got = avey::select_topk<double>({0.5, 0.7, 0.7}, 1);
  REQUIRE(got == std::vector<int>{2});
  auto two = avey::select_topk<double>({0.7, 0.7, 0.7}, 2);
  REQUIRE(two == (std::vector<int>{1, 2}));
}

TEST_CASE("non-positive best score falls back to unit weights", "[ranker]") {
  bool degen = false;
  auto w = avey::normalize_and_weight<double>({-0.2, -0.5}, &degen);
  CHECK(degen);
  CHECK(w == (std::vector<double>{1.0, 1.0}));
  auto z = avey::normalize_and_weight<double>({0.0, 0.0}, &degen);
  CHECK(degen);
  CHECK(z == (std::vector<double>{1.0, 1.0}));
  avey::normalize_and_weight<double>({0.3}, &degen);
  CHECK_FALSE(degen);
}

TEST_CASE("full ranking pass agrees with plain-loop scoring", "[ranker]") {
  avey::Rng seed_rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    int S = 1 + int(avey::uniform_int(seed_rng, 4));
    std::size_t M = 1 + avey::uniform_int(seed_rng, 6);
    int k = int(avey::uniform_int(seed_rng, 4));
    std::size_t d = 1 + avey::uniform_int(seed_rng, 5);
    auto emb = randn(M * S, d, seed_rng());
    if (trial % 5 == 0)  // exercise the zero-row path
      for (std::size_t j = 0; j < d; ++j) emb.at(0, j) = 0.0;
    avey::FlopCounters fc;
    auto sels = avey::rank_all(emb, S, k, &fc);
    REQUIRE(sels.size() == M);
    for (std::size_t i = 0; i < M; ++i) {
      const auto& s = sels[i];
      CHECK(s.split == int(i));
      CHECK(s.begin == i * S);
      CHECK(s.end == (i + 1) * S);
      std::vector<double> cand(i);
      for (std::size_t j = 0; j < i; ++j)
        cand[j] = naive_maxsim(emb.data(), d, i * S, S, j * S, S);
      for (std::size_t a = 0; a < s.selected.size(); ++a)
        REQUIRE(s.scores[a] ==
                Catch::Approx(cand[s.selected[a]]).margin(1e-9));
      // Selection must be the oracle ranking of the implementation's own
      // scores; rebuild those scores from the reported selection.
      std::vector<double> impl_scores = cand;
      for (std::size_t a = 0; a < s.selected.size(); ++a)
        impl_scores[s.selected[a]] = s.scores[a];
      REQUIRE(s.selected == oracle_topk(impl_scores, k));
      auto ow = oracle_weights(s.scores);
      for (std::size_t a = 0; a < ow.size(); ++a)
        REQUIRE(s.weights[a] == ow[a]);
      CHECK(s.self_score ==
            Catch::Approx(naive_maxsim(emb.data(), d, i * S, S, i * S, S))
                .margin(1e-9));
    }
    // Every split is scored against all predecessors and itself.
    std::uint64_t pairs = M * (M + 1) / 2;
    CHECK(fc.split_pairs_scored == pairs);
    CHECK(fc.cosine_cells == pairs * std::uint64_t(S) * std::uint64_t(S));
    CHECK(fc.maxsim_flops == fc.cosine_cells * d);
  }
}

TEST_CASE("eight splits score thirty-six pairs", "[ranker]") {
  int S = 64;
  auto emb = randn(8 * S, 16, 5);
  avey::FlopCounters fc;
  avey::rank_all(emb, S, 2, &fc);
  CHECK(fc.split_pairs_scored == 36);
}

TEST_CASE("orthogonal splits rank as degenerate with unit weights",
          "[ranker]") {
  // One-hot rows with disjoint support across splits: every cross-split
  // cosine is exactly zero.
  int S = 2;
  std::size_t M = 3, d = 6;
  DT emb(M * S, d);
  for (std::size_t r = 0; r < M * S; ++r) emb.at(r, r) = 1.0;
  auto sels = avey::rank_all(emb, S, 2, nullptr);
  const auto& last = sels[2];
  REQUIRE(last.selected.size() == 2);
  CHECK(last.degenerate);
  CHECK(last.weights == (std::vector<double>{1.0, 1.0}));
}

TEST_CASE("assemble_window stacks weighted splits then the current one",
          "[ranker]") {
  int S = 2;
  std::size_t d = 3;
  auto emb = randn(4 * S, d, 9);
  avey::SplitSelection<double> sel;
  sel.split = 3;
  sel.begin = 6;
  sel.end = 8;
  sel.selected = {0, 2};
  sel.scores = {1.6, 0.8};
  sel.weights = {0.5, 1.0};
  auto w = avey::assemble_window(emb, S, sel);
  REQUIRE(w.rows.rows() == 6);
  REQUIRE(w.position_map ==
          (std::vector<long>{0, 1, 4, 5, 6, 7}));
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(w.rows.at(0, j) == 0.5 * emb.at(0, j));
    CHECK(w.rows.at(1, j) == 0.5 * emb.at(1, j));
    CHECK(w.rows.at(2, j) == 1.0 * emb.at(4, j));
    CHECK(w.rows.at(4, j) == emb.at(6, j));
    CHECK(w.rows.at(5, j) == emb.at(7, j));
  }
}

TEST_CASE("current_only_selections spans the sequence with empty history",
          "[ranker]") {
  auto sels = avey::current_only_selections<double>(10, 4);
  REQUIRE(sels.size() == 3);
  CHECK(sels[2].begin == 8);
  CHECK(sels[2].end == 10);
  for (const auto& s : sels) CHECK(s.selected.empty());
}

TEST_CASE("incremental ranking matches the batch pass at split boundaries",
          "[ranker]") {
  int S = 4, k = 2;
  std::size_t M = 5, d = 6;
  auto emb = randn(M * S, d, 123);
  auto batch = avey::rank_all(emb, S, k, nullptr, /*want_partners=*/true);

  avey::RankerState<double> state(S, k);
  std::vector<avey::SplitSelection<double>> inc;
  for (std::size_t n = 1; n <= M * S; ++n) {
    auto prefix = avey::slice_rows<double>(nullptr, emb, 0, n);
    inc = state.update(prefix, nullptr, /*want_partners=*/true);
  }
  REQUIRE(inc.size() == M);
  for (std::size_t i = 0; i < M; ++i) {
    REQUIRE(inc[i].selected == batch[i].selected);
    REQUIRE(inc[i].scores.size() == batch[i].scores.size());
    for (std::size_t a = 0; a < inc[i].scores.size(); ++a) {
      // Same normalized rows, same kernel, same order: bitwise equal.
      REQUIRE(inc[i].scores[a] == batch[i].scores[a]);
      REQUIRE(inc[i].weights[a] == batch[i].weights[a]);
    }
    REQUIRE(inc[i].partners == batch[i].partners);
  }
}

TEST_CASE("incremental ranking rescans only the partial split", "[ranker]") {
  int S = 4, k = 3;
  std::size_t d = 5;
  auto emb = randn(3 * S + 2, d, 321);
  avey::RankerState<double> state(S, k);
  avey::FlopCounters fc;
  std::vector<avey::SplitSelection<double>> sels;
  for (std::size_t n = 1; n <= emb.rows(); ++n) {
    auto prefix = avey::slice_rows<double>(nullptr, emb, 0, n);
    sels = state.update(prefix, &fc);
  }
  // The trailing partial split covers the last two rows and is scored
  // against all three complete splits.
  REQUIRE(sels.size() == 4);
  CHECK(sels[3].begin == 12);
  CHECK(sels[3].end == 14);
  CHECK(sels[3].selected.size() == 3);

  // Counter audit: a prefix ending inside split q with t partial rows
  // costs q pairs of t*S cells; a just-completed split is scored once
  // against its predecessors with S*S cells. No self comparisons.
  std::uint64_t pairs = 0, cells = 0;
  for (std::size_t n = 1; n <= emb.rows(); ++n) {
    std::size_t q = n / S, t = n % S;
    if (t == 0) {
      pairs += q - 1;
      cells += (q - 1) * std::uint64_t(S) * S;
    } else {
      pairs += q;
      cells += q * t * std::uint64_t(S);
    }
  }
  CHECK(fc.split_pairs_scored == pairs);
  CHECK(fc.cosine_cells == cells);
  CHECK(fc.maxsim_flops == cells * d);

  // Scores for the partial split agree with plain-loop scoring.
  for (std::size_t a = 0; a < sels[3].selected.size(); ++a) {
    double want = naive_maxsim(emb.data(), d, 12, 2,
                               std::size_t(sels[3].selected[a]) * S, S);
    REQUIRE(sels[3].scores[a] == Catch::Approx(want).margin(1e-9));
  }
}

TEST_CASE("best-match partners index absolute rows", "[ranker]") {
  int S = 2;
  std::size_t d = 4;
  // Split 1 rows copy split 0 rows in swapped order, so each current row's
  // best partner is its duplicate.
  DT emb(2 * S, d);
  avey::Rng rng(55);
  for (std::size_t j = 0; j < d; ++j) {
    emb.at(0, j) = avey::normal01(rng);
    emb.at(1, j) = avey::normal01(rng);
    emb.at(2, j) = emb.at(1, j);
    emb.at(3, j) = emb.at(0, j);
  }
  auto sels = avey::rank_all(emb, S, 1, nullptr, /*want_partners=*/true);
  REQUIRE(sels[1].partners.size() == 1);
  REQUIRE(sels[1].partners[0] == (std::vector<long>{1, 0}));
}
