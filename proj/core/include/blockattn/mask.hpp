#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "blockattn/common.hpp"

namespace blockattn {

// Ordered, contiguous, non-overlapping half-open token ranges covering [0, n).
// The last range is the query block and gets full causal attention.
struct BlockPartition {
  std::vector<std::pair<int, int>> ranges;

  int parallel_degree() const { return static_cast<int>(ranges.size()); }
  int total_len() const { return ranges.empty() ? 0 : ranges.back().second; }

  // Index of the block containing token i.
  int block_of(int i) const;

  void validate() const;

  static BlockPartition single(int n) { return BlockPartition{{{0, n}}}; }
  static BlockPartition from_boundaries(const std::vector<int>& cuts, int n);
  // Interior boundary positions (starts of blocks 1..k-1).
  std::vector<int> boundaries() const;
};

// Set of corrupted block indices for block dropout. Never contains the
// final block.
struct DropoutPlan {
  std::set<int> corrupted;
  double rate = 0.0;
};

// n x n causal attention mask stored as per-row sorted column intervals,
// so forwards can iterate only the allowed pairs.
struct AttentionMask {
  int n = 0;
  // rows[i] = sorted disjoint half-open [lo, hi) intervals of allowed j.
  std::vector<std::vector<std::pair<int, int>>> rows;

  bool allowed(int i, int j) const;
  std::size_t allowed_pair_count() const;
  bool equals(const AttentionMask& o) const;

  // Text grid of '#' (allowed) / '.' (disallowed), one row per line.
  std::string grid() const;
};

AttentionMask build_full_causal(int n);
AttentionMask build_block_mask(const BlockPartition& partition);
AttentionMask build_dropout_mask(const BlockPartition& partition, const DropoutPlan& plan);

// Each non-final block is corrupted independently with probability `rate`.
DropoutPlan sample_dropout_plan(const BlockPartition& partition, double rate,
                                std::uint64_t rng_seed);

// Direct transcriptions of the mask definitions, used as the reference
// oracle for the interval-based builders above.
bool reference_full_causal_allowed(int n, int i, int j);
bool reference_block_allowed(const BlockPartition& partition, int i, int j);
bool reference_dropout_allowed(const BlockPartition& partition, const DropoutPlan& plan,
                               int i, int j);

}  // namespace blockattn
