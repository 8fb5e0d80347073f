#pragma once
// Evaluation: perplexity over blocked text, an audit that checks the
// instrumented operation counters against their closed forms, a
// first-token latency scaling bench, and the retrieval-accuracy sweep.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "avey/common.hpp"
#include "avey/config.hpp"
#include "avey/counters.hpp"
#include "avey/data.hpp"
#include "avey/model.hpp"
#include "avey/tensor.hpp"

namespace avey {

// exp of the mean next-byte negative log-likelihood across all blocks.
// Blocks must share one length (context + 1), so the mean of block means
// is the corpus mean.
template <typename Real>
double perplexity(ModelParams<Real>& params,
                  const std::vector<std::vector<int>>& blocks,
                  FlopCounters* fc = nullptr) {
  require(!blocks.empty(), "perplexity: no blocks");
  std::size_t need = static_cast<std::size_t>(params.cfg.context) + 1;
  double total = 0;
  for (const auto& block : blocks) {
    require(block.size() == need,
            "perplexity: block of " + std::to_string(block.size()) +
                " tokens, expected " + std::to_string(need));
    std::vector<int> inputs(block.begin(), block.end() - 1);
    std::vector<int> targets(block.begin() + 1, block.end());
    DualTensor<Real> logits =
        forward_train<Real>(nullptr, params, inputs, fc);
    total += static_cast<double>(
        softmax_cross_entropy<Real>(nullptr, logits, targets).at(0, 0));
  }
  return std::exp(total / blocks.size());
}

// --- Cost-model audit ------------------------------------------------------

struct AuditRow {
  std::string name;
  std::uint64_t counted = 0, expected = 0;
  bool match() const { return counted == expected; }
};

struct AuditReport {
  std::vector<AuditRow> rows;
  FlopCounters counters;
  bool ok = true;
};

// Closed forms for one training-mode forward over N tokens, given the
// fixed-size window buffers the layers actually use.
inline std::vector<AuditRow> expected_forward_counts(const ModelConfig& cfg) {
  std::uint64_t N = cfg.context, S = cfg.split, M = N / S;
  std::uint64_t L = cfg.layers, d = cfg.d, m = cfg.m();
  std::uint64_t W = cfg.buffer_rows(), half = cfg.half_t();
  std::uint64_t fuse_in = cfg.m_h() + half;
  std::vector<AuditRow> rows(6);
  rows[0].name = "split_pairs_scored";
  rows[1].name = "cosine_cells";
  rows[2].name = "maxsim_flops";
  if (!cfg.ablate.no_ranker) {
    rows[0].expected = M * (M + 1) / 2;
    rows[1].expected = rows[0].expected * S * S;
    rows[2].expected = rows[1].expected * d;
  }
  rows[3] = {"enricher_flops", 0, L * N * m * (d - 1)};
  rows[4] = {"contextualizer_flops", 0, L * M * W * (W - 1) * half};
  rows[5] = {"fuser_flops", 0, L * N * d * (fuse_in - 1)};
  return rows;
}

// Runs one instrumented training-mode forward on seeded random tokens and
// compares every counter with its closed form, exactly.
template <typename Real = float>
AuditReport flop_audit(const ModelConfig& cfg, std::uint64_t seed = 1) {
  ModelParams<Real> params = init_params<Real>(cfg, seed);
  Rng rng(seed + 1);
  std::vector<int> tokens(cfg.context);
  for (int& t : tokens)
    t = static_cast<int>(uniform_int(rng, cfg.vocab));
  AuditReport rep;
  forward_train<Real>(nullptr, params, tokens, &rep.counters);
  rep.rows = expected_forward_counts(cfg);
  const std::uint64_t counted[6] = {
      rep.counters.split_pairs_scored, rep.counters.cosine_cells,
      rep.counters.maxsim_flops,       rep.counters.enricher_flops,
      rep.counters.contextualizer_flops, rep.counters.fuser_flops};
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    rep.rows[i].counted = counted[i];
    rep.ok = rep.ok && rep.rows[i].match();
  }
  return rep;
}

inline std::string render_audit(const AuditReport& rep) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "counter" << std::right
     << std::setw(16) << "counted" << std::setw(16) << "expected"
     << "  status\n";
  for (const auto& r : rep.rows)
    os << std::left << std::setw(22) << r.name << std::right << std::setw(16)
       << r.counted << std::setw(16) << r.expected << "  "
       << (r.match() ? "match" : "MISMATCH") << "\n";
  os << (rep.ok ? "all counters match their closed forms\n"
                : "counter mismatch detected\n");
  return os.str();
}

// --- First-token latency scaling ------------------------------------------

struct TtftRow {
  int length = 0;
  std::uint64_t flops = 0;
  double seconds = 0;  // median wall time per first token
};

struct TtftReport {
  std::vector<TtftRow> rows;
  double slope_flops = 0;  // log-log least-squares slope of counted work
  double slope_wall = 0;   // same for wall time (informational)
};

namespace detail {

inline double loglog_slope(const std::vector<double>& x,
                           const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double denom = n * sxx - sx * sx;
  require(denom > 1e-9 * (n * sxx + 1.0),
          "slope fit needs distinct lengths");
  return (n * sxy - sx * sy) / denom;
}

}  // namespace detail

// Measures the cost of producing the first token from seeded random
// prompts of the given lengths: counted operations once, wall time as the
// median over repeats. At least three lengths are needed for the scaling
// fit.
template <typename Real = float>
TtftReport ttft_bench(ModelParams<Real>& params,
                      const std::vector<int>& lengths, int repeats = 5,
                      std::uint64_t seed = 7) {
  require(lengths.size() >= 3,
          "ttft_bench: need at least 3 prompt lengths for a scaling fit, "
          "got " +
              std::to_string(lengths.size()));
  require(repeats >= 1, "ttft_bench: repeats must be positive");
  TtftReport rep;
  for (int len : lengths) {
    require(len >= 1, "ttft_bench: prompt length must be positive");
    Rng rng(seed + static_cast<std::uint64_t>(len));
    std::vector<int> prompt(len);
    for (int& t : prompt)
      t = static_cast<int>(uniform_int(rng, params.cfg.vocab));
    TtftRow row;
    row.length = len;
    std::vector<double> times;
    times.reserve(repeats);
    for (int r = 0; r < repeats; ++r) {
      FlopCounters fc;
      auto t0 = std::chrono::steady_clock::now();
      generate<Real>(params, prompt, 1, 0.0, seed, &fc);
      auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
      if (r == 0) row.flops = fc.total();
    }
    std::sort(times.begin(), times.end());
    row.seconds = times[times.size() / 2];
    rep.rows.push_back(row);
  }
  std::vector<double> xs, yf, yw;
  for (const auto& r : rep.rows) {
    xs.push_back(r.length);
    yf.push_back(static_cast<double>(r.flops));
    yw.push_back(r.seconds);
  }
  rep.slope_flops = detail::loglog_slope(xs, yf);
  rep.slope_wall = detail::loglog_slope(xs, yw);
  return rep;
}

inline std::string render_ttft(const TtftReport& rep) {
  std::ostringstream os;
  os << "length\tfirst_token_ops\tseconds_median\n";
  for (const auto& r : rep.rows)
    os << r.length << "\t" << r.flops << "\t" << std::setprecision(6)
       << r.seconds << "\n";
  os << std::setprecision(4) << "slope(ops vs length)  = " << rep.slope_flops
     << "\nslope(wall vs length) = " << rep.slope_wall << "\n";
  return os.str();
}

// --- Retrieval sweep -------------------------------------------------------

struct SweepCell {
  int n = 0, correct = 0;
  double accuracy() const { return n ? static_cast<double>(correct) / n : 0; }
};

struct SweepReport {
  NiahKind kind = NiahKind::passkey_kv;
  std::vector<int> lengths;
  std::vector<double> depths;
  std::vector<std::vector<SweepCell>> cells;  // [length][depth]
  int total_n = 0, total_correct = 0;
  double accuracy() const {
    return total_n ? static_cast<double>(total_correct) / total_n : 0;
  }
};

// Greedy decoding over a grid of prompt lengths and needle depths,
// per_cell fresh instances each. Counters, when supplied, accumulate all
// decoding work.
template <typename Real>
SweepReport niah_sweep(ModelParams<Real>& params, NiahKind kind,
                       const std::vector<int>& lengths,
                       const std::vector<double>& depths, int per_cell,
                       std::uint64_t seed = 1, int max_new = 12,
                       FlopCounters* fc = nullptr) {
  require(!lengths.empty() && !depths.empty(),
          "niah_sweep: empty length or depth grid");
  require(per_cell >= 1, "niah_sweep: per_cell must be positive");
  SweepReport rep;
  rep.kind = kind;
  rep.lengths = lengths;
  rep.depths = depths;
  rep.cells.assign(lengths.size(),
                   std::vector<SweepCell>(depths.size()));
  for (std::size_t li = 0; li < lengths.size(); ++li) {
    for (std::size_t di = 0; di < depths.size(); ++di) {
      SweepCell& cell = rep.cells[li][di];
      for (int i = 0; i < per_cell; ++i) {
        std::uint64_t s =
            seed * 1000003ULL + (li * depths.size() + di) * 10007ULL + i;
        NiahInstance inst = gen_niah(kind, lengths[li], depths[di], s);
        std::vector<int> out =
            generate<Real>(params, inst.prompt, max_new, 0.0, s, fc);
        cell.n += 1;
        cell.correct += score_niah(byte_decode(out), inst) ? 1 : 0;
      }
      rep.total_n += cell.n;
      rep.total_correct += cell.correct;
    }
  }
  return rep;
}

inline std::string render_sweep(const SweepReport& rep) {
  std::ostringstream os;
  os << "retrieval accuracy (" << to_string(rep.kind) << "), rows = prompt "
     << "length, cols = needle depth\n";
  os << std::setw(8) << "length";
  for (double d : rep.depths)
    os << std::setw(8) << std::setprecision(2) << std::fixed << d;
  os << std::setw(8) << "all" << "\n";
  for (std::size_t li = 0; li < rep.lengths.size(); ++li) {
    os << std::setw(8) << rep.lengths[li];
    int n = 0, c = 0;
    for (std::size_t di = 0; di < rep.depths.size(); ++di) {
      const auto& cell = rep.cells[li][di];
      os << std::setw(8) << std::setprecision(2) << std::fixed
         << cell.accuracy();
      n += cell.n;
      c += cell.correct;
    }
    os << std::setw(8) << std::setprecision(2) << std::fixed
       << (n ? static_cast<double>(c) / n : 0.0) << "\n";
  }
  os << "overall " << rep.total_correct << "/" << rep.total_n << " = "
     << std::setprecision(3) << std::fixed << rep.accuracy() << "\n";
  return os.str();
}

}  // namespace avey
