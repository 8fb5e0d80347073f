#pragma once
// Split ranking: MaxSim scoring of the current split against earlier
// splits, top-k selection, score-proportional weighting, and window
// assembly. Ranking runs over raw embedding rows, before any layer
// normalization touches them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "avey/common.hpp"
#include "avey/counters.hpp"
#include "avey/tensor.hpp"

namespace avey {

struct SplitView {
  int index = 0;
  std::size_t begin = 0, end = 0;
  std::size_t len() const { return end - begin; }
};

// Contiguous splits of S tokens; a shorter trailing split is kept.
inline std::vector<SplitView> partition(std::size_t n, int S) {
  require(S > 0, "partition: split length must be positive");
  std::vector<SplitView> out;
  for (std::size_t b = 0; b < n; b += S) {
    SplitView sv;
    sv.index = static_cast<int>(out.size());
    sv.begin = b;
    sv.end = std::min(n, b + static_cast<std::size_t>(S));
    out.push_back(sv);
  }
  return out;
}

// What the ranker decided for one current split.
template <typename Real>
struct SplitSelection {
  int split = 0;                  // current split index
  std::size_t begin = 0, end = 0;  // current split token range
  std::vector<int> selected;      // chosen earlier splits, ascending
  std::vector<Real> scores;       // MaxSim score per selected split
  std::vector<Real> weights;      // scores normalized by their max
  Real self_score = Real(0);      // current split scored against itself
  bool degenerate = false;        // max selected score <= 0
  // Per selected split: for every current-split row, the absolute row id
  // of its best-matching candidate row. Recorded on demand; lets the
  // differentiable path rebuild the selected scores with the argmax
  // pinned.
  std::vector<std::vector<long>> partners;
};

namespace detail {

// Unit-normalized copy of n x d rows; all-zero rows stay zero, so their
// dot products (and thus their cosine contributions) vanish.
template <typename Real>
std::vector<Real> normalize_rows(const Real* X, std::size_t n, std::size_t d) {
  std::vector<Real> out(n * d, Real(0));
  for (std::size_t i = 0; i < n; ++i) {
    const Real* x = X + i * d;
    Real ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += x[j] * x[j];
    if (ss > Real(0)) {
      Real inv = Real(1) / std::sqrt(ss);
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[j] * inv;
    }
  }
  return out;
}

// MaxSim over pre-normalized rows: sum over rows of A of the best dot
// product against any row of B. Optionally records each row's argmax
// (first maximum wins), offset by partner_base into absolute row ids.
template <typename Real>
Real maxsim_normalized(const Real* A, std::size_t a, const Real* B,
                       std::size_t b, std::size_t d,
                       std::vector<long>* partners, long partner_base) {
  std::vector<Real> dots(a * b);
  gemm(false, true, a, b, d, Real(1), A, d, B, d, Real(0), dots.data(), b);
  Real score = 0;
  if (partners) partners->assign(a, partner_base);
  for (std::size_t i = 0; i < a; ++i) {
    const Real* row = dots.data() + i * b;
    Real best = row[0];
    std::size_t arg = 0;
    for (std::size_t j = 1; j < b; ++j)
      if (row[j] > best) {
        best = row[j];
        arg = j;
      }
    score += best;
    if (partners) (*partners)[i] = partner_base + static_cast<long>(arg);
  }
  return score;
}

}  // namespace detail

// MaxSim between two row blocks given as raw (unnormalized) matrices:
// each row of A contributes its best cosine against the rows of B.
template <typename Real>
Real maxsim_score(const DualTensor<Real>& A, const DualTensor<Real>& B) {
  require(A.cols() == B.cols(), "maxsim_score: row widths differ, " +
                                    std::to_string(A.cols()) + " vs " +
                                    std::to_string(B.cols()));
  require(A.rows() > 0 && B.rows() > 0,
          "maxsim_score: empty row block");
  auto an = detail::normalize_rows(A.data(), A.rows(), A.cols());
  auto bn = detail::normalize_rows(B.data(), B.rows(), B.cols());
  return detail::maxsim_normalized<Real>(an.data(), A.rows(), bn.data(),
                                         B.rows(), A.cols(), nullptr, 0);
}

// Indices of the k highest scores, ascending; ties prefer the more recent
// (higher-indexed) split. k may exceed the candidate count.
template <typename Real>
std::vector<int> select_topk(const std::vector<Real>& scores, int k) {
  require(k >= 0, "select_topk: k must be non-negative");
  std::vector<int> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a > b;
  });
  int take = std::min<int>(k, static_cast<int>(order.size()));
  order.resize(take);
  std::sort(order.begin(), order.end());
  return order;
}

// Scores scaled so the best selected split carries weight exactly 1.0.
// A non-positive maximum cannot express relative relevance, so every
// weight falls back to 1.0 there.
template <typename Real>
std::vector<Real> normalize_and_weight(const std::vector<Real>& scores,
                                       bool* degenerate = nullptr) {
  std::vector<Real> w(scores.size(), Real(1));
  if (degenerate) *degenerate = false;
  if (scores.empty()) return w;
  Real mx = *std::max_element(scores.begin(), scores.end());
  bool degen = !(mx > Real(0));
  if (degenerate) *degenerate = degen;
  if (!degen)
    for (std::size_t i = 0; i < scores.size(); ++i) w[i] = scores[i] / mx;
  return w;
}

template <typename Real>
struct Window {
  DualTensor<Real> rows;                // weighted selected rows + current
  std::vector<long> position_map;       // window row -> absolute position
};

// Stacks the selected splits (each scaled by its weight, original order
// kept) followed by the current split at weight 1.0. Value-level; the
// differentiable pass rebuilds the same layout on tape.
template <typename Real>
Window<Real> assemble_window(const DualTensor<Real>& embeddings, int S,
                             const SplitSelection<Real>& sel) {
  std::size_t d = embeddings.cols();
  std::size_t cur_len = sel.end - sel.begin;
  std::size_t rows = sel.selected.size() * S + cur_len;
  Window<Real> w;
  w.rows = DualTensor<Real>(rows, d);
  w.position_map.reserve(rows);
  std::size_t r = 0;
  for (std::size_t s = 0; s < sel.selected.size(); ++s) {
    std::size_t b = static_cast<std::size_t>(sel.selected[s]) * S;
    for (std::size_t i = 0; i < static_cast<std::size_t>(S); ++i, ++r) {
      const Real* src = embeddings.data() + (b + i) * d;
      Real* dst = w.rows.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] * sel.weights[s];
      w.position_map.push_back(static_cast<long>(b + i));
    }
  }
  for (std::size_t i = 0; i < cur_len; ++i, ++r) {
    const Real* src = embeddings.data() + (sel.begin + i) * d;
    std::copy(src, src + d, w.rows.data() + r * d);
    w.position_map.push_back(static_cast<long>(sel.begin + i));
  }
  return w;
}

namespace detail {

// Scores one current split against candidates, picks the top k earlier
// splits, and fills in weights (and partners when asked).
template <typename Real>
SplitSelection<Real> rank_one(const Real* normed, std::size_t d, int S, int k,
                              int cur_index, std::size_t cur_begin,
                              std::size_t cur_len, bool include_self,
                              bool want_partners, FlopCounters* fc) {
  SplitSelection<Real> sel;
  sel.split = cur_index;
  sel.begin = cur_begin;
  sel.end = cur_begin + cur_len;
  const Real* cur = normed + cur_begin * d;

  std::vector<Real> cand_scores(cur_index);
  std::vector<std::vector<long>> cand_partners;
  if (want_partners) cand_partners.resize(cur_index);
  for (int j = 0; j < cur_index; ++j) {
    std::size_t cb = static_cast<std::size_t>(j) * S;
    cand_scores[j] = maxsim_normalized(
        cur, cur_len, normed + cb * d, static_cast<std::size_t>(S), d,
        want_partners ? &cand_partners[j] : nullptr, static_cast<long>(cb));
    if (fc) {
      fc->split_pairs_scored += 1;
      fc->cosine_cells += cur_len * S;
      fc->maxsim_flops += cur_len * S * d;
    }
  }
  if (include_self) {
    sel.self_score = maxsim_normalized(cur, cur_len, cur, cur_len, d,
                                       nullptr, 0);
    if (fc) {
      fc->split_pairs_scored += 1;
      fc->cosine_cells += cur_len * cur_len;
      fc->maxsim_flops += cur_len * cur_len * d;
    }
  }

  sel.selected = select_topk(cand_scores, k);
  sel.scores.reserve(sel.selected.size());
  for (int j : sel.selected) sel.scores.push_back(cand_scores[j]);
  sel.weights = normalize_and_weight(sel.scores, &sel.degenerate);
  if (want_partners)
    for (int j : sel.selected) sel.partners.push_back(std::move(cand_partners[j]));
  return sel;
}

}  // namespace detail

// One ranking pass over a whole training sequence: every split is scored
// against each split up to and including itself (the self comparison is
// part of the pass's cost accounting), then the top k strictly earlier
// splits are selected per split.
template <typename Real>
std::vector<SplitSelection<Real>> rank_all(const DualTensor<Real>& embeddings,
                                           int S, int k,
                                           FlopCounters* fc = nullptr,
                                           bool want_partners = false) {
  require(S > 0, "rank_all: split length must be positive");
  require(embeddings.rows() % S == 0,
          "rank_all: " + std::to_string(embeddings.rows()) +
              " rows not divisible by split length " + std::to_string(S));
  std::size_t d = embeddings.cols();
  std::size_t M = embeddings.rows() / S;
  auto normed = detail::normalize_rows(embeddings.data(), embeddings.rows(), d);
  std::vector<SplitSelection<Real>> out;
  out.reserve(M);
  for (std::size_t i = 0; i < M; ++i)
    out.push_back(detail::rank_one<Real>(
        normed.data(), d, S, k, static_cast<int>(i),
        i * static_cast<std::size_t>(S), S, /*include_self=*/true,
        want_partners, fc));
  return out;
}

// Selections with no history: every split stands alone. Used when the
// ranker is ablated away.
template <typename Real>
std::vector<SplitSelection<Real>> current_only_selections(std::size_t n,
                                                          int S) {
  std::vector<SplitSelection<Real>> out;
  for (const SplitView& p : partition(n, S)) {
    SplitSelection<Real> s;
    s.split = p.index;
    s.begin = p.begin;
    s.end = p.end;
    out.push_back(std::move(s));
  }
  return out;
}

// Incremental ranking for generation. Completed splits keep the selection
// computed at the moment they completed; only the partial current split is
// re-scored as tokens arrive, each time against all preceding splits.
template <typename Real>
class RankerState {
 public:
  RankerState(int S, int k) : S_(S), k_(k) {
    require(S > 0, "RankerState: split length must be positive");
    require(k >= 0, "RankerState: k must be non-negative");
  }

  // Embeddings hold all n rows seen so far. Returns the selection list
  // covering every split: frozen entries for completed splits and a fresh
  // entry for the trailing partial split, if any. When n lands exactly on
  // a split boundary the last complete split stays current (it predicts
  // the first token of the split that follows).
  std::vector<SplitSelection<Real>> update(const DualTensor<Real>& embeddings,
                                           FlopCounters* fc = nullptr,
                                           bool want_partners = false) {
    std::size_t n = embeddings.rows();
    require(n > 0, "RankerState::update: no rows");
    std::size_t d = embeddings.cols();
    std::size_t q = n / S_;
    std::size_t t = n % S_;

    // Freeze any split that has completed since the last call.
    while (frozen_.size() < q) {
      std::size_t i = frozen_.size();
      append_normed(embeddings, i * S_, (i + 1) * S_, d);
      frozen_.push_back(detail::rank_one<Real>(
          normed_.data(), d, S_, k_, static_cast<int>(i), i * S_, S_,
          /*include_self=*/false, want_partners, fc));
    }

    std::vector<SplitSelection<Real>> out = frozen_;
    if (t > 0) {
      // Partial current rows are re-normalized fresh each call.
      auto cur = detail::normalize_rows(embeddings.data() + q * S_ * d, t, d);
      std::vector<Real> scratch = normed_;
      scratch.insert(scratch.end(), cur.begin(), cur.end());
      out.push_back(detail::rank_one<Real>(
          scratch.data(), d, S_, k_, static_cast<int>(q), q * S_, t,
          /*include_self=*/false, want_partners, fc));
    }
    return out;
  }

 private:
  void append_normed(const DualTensor<Real>& emb, std::size_t r0,
                     std::size_t r1, std::size_t d) {
    auto block = detail::normalize_rows(emb.data() + r0 * d, r1 - r0, d);
    normed_.insert(normed_.end(), block.begin(), block.end());
  }

  int S_, k_;
  std::vector<Real> normed_;  // normalized rows of completed splits
  std::vector<SplitSelection<Real>> frozen_;
};

}  // namespace avey
