#pragma once
// Cost-model instrumentation.
//
// Counters follow the architecture's own accounting: each unit charges the
// multiply-add cost of its defining operation, counted as
// output_elements * (inner_dim - 1) for a weighted sum over inner_dim
// inputs. Side computations (biases, activations, similarity row
// normalization, autodiff bookkeeping) are not part of the cost model and
// are not charged, matching how the per-unit closed forms are stated.

#include <cstdint>

namespace avey {

struct FlopCounters {
  // Ranker: one entry per (current split, candidate split) comparison.
  // Candidates run up to and including the current split itself.
  std::uint64_t split_pairs_scored = 0;
  // One cell per (current row, candidate row) cosine.
  std::uint64_t cosine_cells = 0;
  // d multiply-adds per cosine cell.
  std::uint64_t maxsim_flops = 0;

  // Neural processor units, summed over layers.
  std::uint64_t enricher_flops = 0;        // X*U projection
  std::uint64_t contextualizer_flops = 0;  // Mix * Z_tr embedding mixing
  std::uint64_t fuser_flops = 0;           // [Z_h | ctx] * O projection

  void reset() { *this = FlopCounters{}; }

  FlopCounters& operator+=(const FlopCounters& o) {
    split_pairs_scored += o.split_pairs_scored;
    cosine_cells += o.cosine_cells;
    maxsim_flops += o.maxsim_flops;
    enricher_flops += o.enricher_flops;
    contextualizer_flops += o.contextualizer_flops;
    fuser_flops += o.fuser_flops;
    return *this;
  }

  std::uint64_t ranker_total() const { return maxsim_flops; }
  std::uint64_t processor_total() const {
    return enricher_flops + contextualizer_flops + fuser_flops;
  }
  std::uint64_t total() const { return ranker_total() + processor_total(); }
};

}  // namespace avey
