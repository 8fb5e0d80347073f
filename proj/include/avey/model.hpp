#pragma once
// The model: token embeddings feed a stack of identical layers, each of
// which widens every token state (enricher), lets each split's tokens mix
// with their ranked window (contextualizer), and projects back down with a
// residual connection (fuser). No attention, no recurrence, no positional
// encodings; order enters only through the causal mixing mask.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "avey/common.hpp"
#include "avey/config.hpp"
#include "avey/counters.hpp"
#include "avey/ranker.hpp"
#include "avey/tensor.hpp"

namespace avey {

inline constexpr long kPadPos = -1;

template <typename Real>
struct LayerParams {
  DualTensor<Real> U;     // d x m expansion
  DualTensor<Real> b;     // 1 x m enricher bias
  DualTensor<Real> V;     // W x W learned mixing matrix (W = buffer rows)
  DualTensor<Real> b2;    // 1 x (m_t / 2) contextualizer bias
  DualTensor<Real> O;     // (m_h + m_t / 2) x d contraction
  DualTensor<Real> gain;  // 1 x d pre-layer normalization gain
};

template <typename Real>
struct ModelParams {
  ModelConfig cfg;
  DualTensor<Real> embedding;  // vocab x d, doubles as the output head
  std::vector<LayerParams<Real>> layers;
  DualTensor<Real> final_gain;  // 1 x d
  DualTensor<Real> head;        // vocab x d, only when untied

  DualTensor<Real>& output_head() { return cfg.tied ? embedding : head; }
  const DualTensor<Real>& output_head() const {
    return cfg.tied ? embedding : head;
  }

  // Fixed parameter census. Everything that trains, in a stable order:
  // embedding, then per layer U, b, V, b2, O, gain, then the final gain
  // (and the untied head last). Checkpointing, the optimizer and
  // initialization all walk parameters in exactly this order.
  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn("embedding", embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      std::string p = "layers." + std::to_string(l) + ".";
      fn(p + "U", layers[l].U);
      fn(p + "b", layers[l].b);
      fn(p + "V", layers[l].V);
      fn(p + "b2", layers[l].b2);
      fn(p + "O", layers[l].O);
      fn(p + "gain", layers[l].gain);
    }
    fn("final_gain", final_gain);
    if (!cfg.tied) fn("head", head);
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each_param([&](const std::string&, DualTensor<Real>& t) { n += t.size(); });
    return n;
  }
};

namespace detail {

template <typename Real>
void fill_normal(DualTensor<Real>& t, Rng& rng, double stddev) {
  for (std::size_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<Real>(normal01(rng) * stddev);
}

}  // namespace detail

// Fresh parameters. Projections and embeddings start at N(0, 0.02); the
// mixing matrices start two decades tighter at N(0, 1e-3) so every layer
// opens close to the identity map; biases start at zero and gains at one.
// Draws consume a single seeded stream in census order, so equal seeds
// give bitwise-equal parameters.
template <typename Real>
ModelParams<Real> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<Real> p;
  p.cfg = cfg;
  Rng rng(seed);
  int W = cfg.buffer_rows();

  p.embedding = DualTensor<Real>(cfg.vocab, cfg.d, true);
  detail::fill_normal(p.embedding, rng, 0.02);
  p.layers.resize(cfg.layers);
  for (auto& L : p.layers) {
    L.U = DualTensor<Real>(cfg.d, cfg.m(), true);
    detail::fill_normal(L.U, rng, 0.02);
    L.b = DualTensor<Real>(1, cfg.m(), true);
    L.V = DualTensor<Real>(W, W, true);
    detail::fill_normal(L.V, rng, 1e-3);
    L.b2 = DualTensor<Real>(1, cfg.half_t(), true);
    L.O = DualTensor<Real>(cfg.m_h() + cfg.half_t(), cfg.d, true);
    detail::fill_normal(L.O, rng, 0.02);
    L.gain = DualTensor<Real>(1, cfg.d, true);
    std::fill(L.gain.values().begin(), L.gain.values().end(), Real(1));
  }
  p.final_gain = DualTensor<Real>(1, cfg.d, true);
  std::fill(p.final_gain.values().begin(), p.final_gain.values().end(),
            Real(1));
  if (!cfg.tied) {
    p.head = DualTensor<Real>(cfg.vocab, cfg.d, true);
    detail::fill_normal(p.head, rng, 0.02);
  }
  return p;
}

// Mixing mask from absolute positions: row i may take from row j iff both
// rows are real (non-pad) and pos[j] <= pos[i]. Entries are 1 or 0.
template <typename Real>
std::vector<Real> window_mask(const std::vector<long>& pos) {
  std::size_t n = pos.size();
  std::vector<Real> m(n * n, Real(0));
  for (std::size_t i = 0; i < n; ++i) {
    if (pos[i] == kPadPos) continue;
    for (std::size_t j = 0; j < n; ++j)
      if (pos[j] != kPadPos && pos[j] <= pos[i]) m[i * n + j] = Real(1);
  }
  return m;
}

// --- The three per-layer units -------------------------------------------
// Cost accounting charges each unit its defining matrix product, at
// output_elements * (inner_dim - 1) multiply-accumulates; biases,
// activations, similarity scores and backward passes ride along uncharged.

// rows x d -> rows x m: widen each token state, squared-ReLU gated.
template <typename Real>
DualTensor<Real> enrich(Tape<Real>* tape, DualTensor<Real> Xn,
                        LayerParams<Real>& L, FlopCounters* fc = nullptr) {
  DualTensor<Real> Z =
      relu2(tape, add_rowvec(tape, matmul(tape, Xn, L.U), L.b));
  if (fc && L.U.cols() >= 1)
    fc->enricher_flops += static_cast<std::uint64_t>(Xn.rows()) * L.U.cols() *
                          (Xn.cols() - 1);
  return Z;
}

// W x m_t -> W x m_t/2: the left half of each tail gates a data-dependent
// mixture of right halves. The mixture matrix is the learned per-position
// matrix modulated by pairwise cosine similarity of the right halves, then
// masked causally.
template <typename Real>
DualTensor<Real> contextualize(Tape<Real>* tape, DualTensor<Real> Zt,
                               LayerParams<Real>& L,
                               const std::vector<Real>& mask,
                               const ModelConfig& cfg,
                               FlopCounters* fc = nullptr) {
  std::size_t W = Zt.rows();
  std::size_t mt = Zt.cols();
  std::size_t half = mt / 2;
  require(mask.size() == W * W, "contextualize: mask size " +
                                    std::to_string(mask.size()) + " for " +
                                    std::to_string(W) + " rows");
  require(W <= L.V.rows(), "contextualize: window of " + std::to_string(W) +
                               " rows exceeds mixing matrix side " +
                               std::to_string(L.V.rows()));
  DualTensor<Real> left = slice_cols(tape, Zt, 0, half);
  DualTensor<Real> right = slice_cols(tape, Zt, half, mt);

  DualTensor<Real> V = L.V;
  if (W < V.rows()) V = slice_rows(tape, slice_cols(tape, V, 0, W), 0, W);

  DualTensor<Real> mix;
  if (cfg.ablate.static_parameterization) {
    mix = hadamard_mask(tape, V, mask);
  } else {
    DualTensor<Real> nr = row_l2_normalize(tape, right);
    DualTensor<Real> sim = matmul_nt(tape, nr, nr);
    mix = hadamard_mask(tape, hadamard(tape, V, sim), mask);
  }
  DualTensor<Real> gate =
      add_rowvec(tape, matmul(tape, mix, right), L.b2);
  if (fc && W >= 1)
    fc->contextualizer_flops +=
        static_cast<std::uint64_t>(W) * (W - 1) * half;
  return hadamard(tape, left, gate);
}

// rows x (m_h + m_t/2) -> rows x d: contract the bypassed head features and
// the contextualized tail back to model width.
template <typename Real>
DualTensor<Real> fuse(Tape<Real>* tape, DualTensor<Real> Zh,
                      DualTensor<Real> ctx, LayerParams<Real>& L,
                      const ModelConfig& cfg, FlopCounters* fc = nullptr) {
  DualTensor<Real> h = cfg.ablate.no_bypass ? scale(tape, Zh, Real(0)) : Zh;
  DualTensor<Real> cat = concat_cols(tape, h, ctx);
  DualTensor<Real> out = matmul(tape, cat, L.O);
  if (fc && cat.cols() >= 1)
    fc->fuser_flops += static_cast<std::uint64_t>(cat.rows()) * L.O.cols() *
                       (cat.cols() - 1);
  return out;
}

// One layer over a single window: pre-normalize, enrich, contextualize the
// tail under the mask, fuse, add back. x is C x d with C at most the
// mixing-matrix side.
template <typename Real>
DualTensor<Real> layer_forward(Tape<Real>* tape, DualTensor<Real> x,
                               LayerParams<Real>& L,
                               const std::vector<Real>& mask,
                               const ModelConfig& cfg,
                               FlopCounters* fc = nullptr) {
  DualTensor<Real> xn = rmsnorm(tape, x, L.gain);
  DualTensor<Real> Z = enrich(tape, xn, L, fc);
  DualTensor<Real> Zh = slice_cols(tape, Z, 0, cfg.m_h());
  DualTensor<Real> Zt = slice_cols(tape, Z, cfg.m_h(), cfg.m());
  DualTensor<Real> ctx = contextualize(tape, Zt, L, mask, cfg, fc);
  return add(tape, x, fuse(tape, Zh, ctx, L, cfg, fc));
}

// --- Whole-sequence forward ----------------------------------------------

namespace detail {

// Everything fixed about one split's window across all layers: which rows
// to gather (pad = -1), where the selected-split segments sit, the causal
// mask, and the weight column applied to those segments.
template <typename Real>
struct SplitPlan {
  std::vector<long> idx;
  std::vector<std::pair<std::size_t, std::size_t>> segs;
  std::vector<Real> mask;
  DualTensor<Real> w;  // segs.size() x 1; undefined when not weighted
  bool weighted = false;
  std::size_t cur0 = 0, cur_len = 0;
};

// Lays out one window buffer: selected splits in order, then the current
// split, then pad rows up to the fixed buffer size.
template <typename Real>
SplitPlan<Real> plan_window(const SplitSelection<Real>& sel,
                            const ModelConfig& cfg) {
  SplitPlan<Real> p;
  std::size_t W = cfg.buffer_rows();
  std::size_t S = cfg.split;
  std::vector<long> pos;
  p.idx.reserve(W);
  pos.reserve(W);
  for (std::size_t s = 0; s < sel.selected.size(); ++s) {
    std::size_t b = static_cast<std::size_t>(sel.selected[s]) * S;
    p.segs.emplace_back(p.idx.size(), p.idx.size() + S);
    for (std::size_t i = 0; i < S; ++i) {
      p.idx.push_back(static_cast<long>(b + i));
      pos.push_back(static_cast<long>(b + i));
    }
  }
  p.cur0 = p.idx.size();
  p.cur_len = sel.end - sel.begin;
  for (std::size_t i = 0; i < p.cur_len; ++i) {
    p.idx.push_back(static_cast<long>(sel.begin + i));
    pos.push_back(static_cast<long>(sel.begin + i));
  }
  while (p.idx.size() < W) {
    p.idx.push_back(kPadPos);
    pos.push_back(kPadPos);
  }
  require(p.idx.size() == W, "window plan overflows its buffer");
  p.mask = window_mask<Real>(pos);
  return p;
}

// Weight column for one split's plan. On tape (and with partners
// available) the selected scores are rebuilt from the embedding rows with
// each current row's best-match partner pinned, so gradients reach the
// embeddings through the weights; the score that set the normalizer gets
// a zero net pull through the division. Off tape the ranker's values are
// baked in as constants.
template <typename Real>
DualTensor<Real> weight_column(Tape<Real>* tape, const DualTensor<Real>& E,
                               const SplitSelection<Real>& sel) {
  std::size_t keff = sel.selected.size();
  bool constant = tape == nullptr || sel.degenerate ||
                  sel.partners.size() != keff;
  if (constant) {
    DualTensor<Real> w(keff, 1);
    for (std::size_t s = 0; s < keff; ++s) w.at(s, 0) = sel.weights[s];
    return w;
  }
  DualTensor<Real> cur = slice_rows(tape, E, sel.begin, sel.end);
  std::vector<DualTensor<Real>> scores;
  scores.reserve(keff);
  for (std::size_t s = 0; s < keff; ++s) {
    DualTensor<Real> partners = gather_rows(tape, E, sel.partners[s]);
    scores.push_back(sum_all(tape, rowwise_cosine(tape, cur, partners)));
  }
  DualTensor<Real> stacked = concat_rows(tape, scores);
  std::size_t imax = 0;
  for (std::size_t s = 1; s < keff; ++s)
    if (sel.scores[s] > sel.scores[imax]) imax = s;
  DualTensor<Real> top = slice_rows(tape, stacked, imax, imax + 1);
  return div_by_scalar(tape, stacked, top);
}

template <typename Real>
std::vector<SplitPlan<Real>> plan_windows(
    Tape<Real>* tape, const DualTensor<Real>& E,
    const std::vector<SplitSelection<Real>>& sels, const ModelConfig& cfg) {
  std::vector<SplitPlan<Real>> plans;
  plans.reserve(sels.size());
  for (const auto& sel : sels) {
    SplitPlan<Real> p = plan_window(sel, cfg);
    p.weighted = !sel.selected.empty() && !cfg.ablate.no_weighting &&
                 !sel.degenerate;
    if (p.weighted) p.w = weight_column(tape, E, sel);
    plans.push_back(std::move(p));
  }
  return plans;
}

// L layers over the full sequence. Each layer normalizes and enriches
// every row once, contextualizes each split inside its own window buffer,
// keeps only the current-split rows of each window, and fuses once.
template <typename Real>
DualTensor<Real> run_layers(Tape<Real>* tape, ModelParams<Real>& params,
                            DualTensor<Real> E,
                            std::vector<SplitPlan<Real>>& plans,
                            FlopCounters* fc) {
  const ModelConfig& cfg = params.cfg;
  DualTensor<Real> X = E;
  for (auto& L : params.layers) {
    DualTensor<Real> xn = rmsnorm(tape, X, L.gain);
    DualTensor<Real> Z = enrich(tape, xn, L, fc);
    DualTensor<Real> Zh = slice_cols(tape, Z, 0, cfg.m_h());
    DualTensor<Real> Zt = slice_cols(tape, Z, cfg.m_h(), cfg.m());
    std::vector<DualTensor<Real>> pieces;
    pieces.reserve(plans.size());
    for (auto& p : plans) {
      DualTensor<Real> G = gather_rows(tape, Zt, p.idx);
      if (p.weighted) G = scale_segments(tape, G, p.w, p.segs);
      DualTensor<Real> ctx = contextualize(tape, G, L, p.mask, cfg, fc);
      pieces.push_back(slice_rows(tape, ctx, p.cur0, p.cur0 + p.cur_len));
    }
    DualTensor<Real> ctxN = concat_rows(tape, pieces);
    X = add(tape, X, fuse(tape, Zh, ctxN, L, cfg, fc));
  }
  return X;
}

inline std::vector<long> to_long_ids(const std::vector<int>& tokens,
                                     int vocab) {
  std::vector<long> ids;
  ids.reserve(tokens.size());
  for (int t : tokens) {
    require(t >= 0 && t < vocab, "token id " + std::to_string(t) +
                                     " outside vocab " +
                                     std::to_string(vocab));
    ids.push_back(t);
  }
  return ids;
}

}  // namespace detail

// Final states -> logits: normalize, then score against the output head.
template <typename Real>
DualTensor<Real> project_logits(Tape<Real>* tape, ModelParams<Real>& params,
                                DualTensor<Real> X) {
  DualTensor<Real> xf = rmsnorm(tape, X, params.final_gain);
  return matmul_nt(tape, xf, params.output_head());
}

// Training-mode forward over one sequence: rank once on the raw embedding
// rows, then run the layer stack. Row t of the logits predicts token t+1.
// Pass a tape to make the whole thing differentiable, including the
// selected-split weights.
template <typename Real>
DualTensor<Real> forward_train(Tape<Real>* tape, ModelParams<Real>& params,
                               const std::vector<int>& tokens,
                               FlopCounters* fc = nullptr) {
  const ModelConfig& cfg = params.cfg;
  std::size_t n = tokens.size();
  require(n > 0, "forward_train: empty token sequence");
  require(n % cfg.split == 0,
          "forward_train: length " + std::to_string(n) +
              " not divisible by split length " + std::to_string(cfg.split));
  if (cfg.causal_rank) {
    // Per-token schedule: position t trains against exactly the windows
    // decoding would build for the prefix ending at t, at quadratic cost.
    // Selection weights enter as ranked values here, as they do when
    // decoding.
    RankerState<Real> ranker(cfg.split, cfg.k);
    std::vector<DualTensor<Real>> rows;
    rows.reserve(n);
    for (std::size_t t = 1; t <= n; ++t) {
      std::vector<int> prefix(tokens.begin(), tokens.begin() + t);
      auto ids = detail::to_long_ids(prefix, cfg.vocab);
      DualTensor<Real> Ep = gather_rows(tape, params.embedding, ids);
      std::vector<SplitSelection<Real>> sels =
          cfg.ablate.no_ranker ? current_only_selections<Real>(t, cfg.split)
                               : ranker.update(Ep, fc);
      auto plans = detail::plan_windows(tape, Ep, sels, cfg);
      DualTensor<Real> X = detail::run_layers(tape, params, Ep, plans, fc);
      rows.push_back(slice_rows(tape, X, t - 1, t));
    }
    return project_logits(tape, params, concat_rows(tape, rows));
  }

  auto ids = detail::to_long_ids(tokens, cfg.vocab);
  DualTensor<Real> E = gather_rows(tape, params.embedding, ids);

  std::vector<SplitSelection<Real>> sels;
  if (cfg.ablate.no_ranker) {
    sels = current_only_selections<Real>(n, cfg.split);
  } else {
    bool want_partners = tape != nullptr && !cfg.ablate.no_weighting;
    sels = rank_all(E, cfg.split, cfg.k, fc, want_partners);
  }
  auto plans = detail::plan_windows(tape, E, sels, cfg);
  DualTensor<Real> X = detail::run_layers(tape, params, E, plans, fc);
  return project_logits(tape, params, X);
}

// Inference forward over a prefix with externally supplied selections
// (frozen history plus the partial current split). Returns the final
// pre-head states for all rows.
template <typename Real>
DualTensor<Real> forward_prefix(ModelParams<Real>& params,
                                const std::vector<int>& tokens,
                                const std::vector<SplitSelection<Real>>& sels,
                                FlopCounters* fc = nullptr) {
  auto ids = detail::to_long_ids(tokens, params.cfg.vocab);
  DualTensor<Real> E =
      gather_rows<Real>(nullptr, params.embedding, ids);
  auto plans = detail::plan_windows<Real>(nullptr, E, sels, params.cfg);
  return detail::run_layers<Real>(nullptr, params, E, plans, fc);
}

// Next-token logits for a prefix, as one row. The full stack runs over the
// prefix; only the last row meets the output head.
template <typename Real>
DualTensor<Real> next_token_logits(ModelParams<Real>& params,
                                   const std::vector<int>& tokens,
                                   const std::vector<SplitSelection<Real>>& sels,
                                   FlopCounters* fc = nullptr) {
  DualTensor<Real> X = forward_prefix(params, tokens, sels, fc);
  DualTensor<Real> last =
      slice_rows<Real>(nullptr, X, X.rows() - 1, X.rows());
  return project_logits<Real>(nullptr, params, last);
}

// Draws from the temperature-scaled distribution, or takes the argmax at
// temperature zero (ties to the lowest id).
template <typename Real>
int sample_token(const DualTensor<Real>& logits, double temperature,
                 Rng& rng) {
  std::size_t V = logits.cols();
  const Real* row = logits.data();
  if (temperature <= 0.0) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < V; ++j)
      if (row[j] > row[best]) best = j;
    return static_cast<int>(best);
  }
  std::vector<Real> p = softmax_row(row, V, static_cast<Real>(temperature));
  double u = uniform01(rng);
  double acc = 0;
  for (std::size_t j = 0; j < V; ++j) {
    acc += static_cast<double>(p[j]);
    if (u < acc) return static_cast<int>(j);
  }
  return static_cast<int>(V - 1);
}

// Autoregressive decoding. Completed splits keep their frozen selections;
// the partial current split is re-ranked as each token lands. Every step
// runs the full stack over the whole prefix (no state caching), so the
// counters reflect true prefill-shaped work per emitted token. Returns the
// newly generated tokens only.
template <typename Real>
std::vector<int> generate(ModelParams<Real>& params,
                          const std::vector<int>& prompt, int max_new,
                          double temperature, std::uint64_t seed,
                          FlopCounters* fc = nullptr) {
  const ModelConfig& cfg = params.cfg;
  require(!prompt.empty(), "generate: prompt must not be empty");
  require(max_new >= 0, "generate: max_new must be non-negative");
  std::vector<int> tokens = prompt;
  std::vector<int> out;
  Rng rng(seed);
  RankerState<Real> ranker(cfg.split, cfg.k);
  for (int step = 0; step < max_new; ++step) {
    std::vector<SplitSelection<Real>> sels;
    if (cfg.ablate.no_ranker) {
      sels = current_only_selections<Real>(tokens.size(), cfg.split);
    } else {
      auto ids = detail::to_long_ids(tokens, cfg.vocab);
      DualTensor<Real> E =
          gather_rows<Real>(nullptr, params.embedding, ids);
      sels = ranker.update(E, fc);
    }
    DualTensor<Real> logits = next_token_logits(params, tokens, sels, fc);
    int next = sample_token(logits, temperature, rng);
    tokens.push_back(next);
    out.push_back(next);
  }
  return out;
}

}  // namespace avey
