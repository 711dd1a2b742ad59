#include "blockattn/mask.hpp"

#include <algorithm>
#include <random>

namespace blockattn {

void BlockPartition::validate() const {
  if (ranges.empty()) throw ContractError("partition must have at least one block");
  int prev = 0;
  for (const auto& [lo, hi] : ranges) {
    if (lo != prev) throw ContractError("partition ranges must be contiguous from 0");
    if (hi <= lo) throw ContractError("partition ranges must be non-empty");
    prev = hi;
  }
}

int BlockPartition::block_of(int i) const {
  for (int b = 0; b < static_cast<int>(ranges.size()); ++b) {
    if (i >= ranges[b].first && i < ranges[b].second) return b;
  }
  throw ContractError("token index outside partition");
}

BlockPartition BlockPartition::from_boundaries(const std::vector<int>& cuts, int n) {
  if (n <= 0) throw ContractError("empty sequence");
  BlockPartition p;
  int prev = 0;
  for (int c : cuts) {
    if (c <= prev || c >= n) throw ContractError("boundary out of order or range");
    p.ranges.emplace_back(prev, c);
    prev = c;
  }
  p.ranges.emplace_back(prev, n);
  return p;
}

std::vector<int> BlockPartition::boundaries() const {
  std::vector<int> cuts;
  for (std::size_t b = 1; b < ranges.size(); ++b) cuts.push_back(ranges[b].first);
  return cuts;
}

bool AttentionMask::allowed(int i, int j) const {
  if (i < 0 || i >= n || j < 0 || j >= n) return false;
  for (const auto& [lo, hi] : rows[i]) {
    if (j >= lo && j < hi) return true;
    if (j < lo) return false;
  }
  return false;
}

std::size_t AttentionMask::allowed_pair_count() const {
  std::size_t c = 0;
  for (const auto& row : rows)
    for (const auto& [lo, hi] : row) c += static_cast<std::size_t>(hi - lo);
  return c;
}

bool AttentionMask::equals(const AttentionMask& o) const {
  if (n != o.n) return false;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j)
      if (allowed(i, j) != o.allowed(i, j)) return false;
  return true;
}

std::string AttentionMask::grid() const {
  std::string out;
  out.reserve(static_cast<std::size_t>(n) * (n + 1));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) out += allowed(i, j) ? '#' : '.';
    out += '\n';
  }
  return out;
}

AttentionMask build_full_causal(int n) {
  if (n < 1) throw ContractError("mask needs n >= 1");
  AttentionMask m;
  m.n = n;
  m.rows.resize(n);
  for (int i = 0; i < n; ++i) m.rows[i] = {{0, i + 1}};
  return m;
}

AttentionMask build_block_mask(const BlockPartition& partition) {
  partition.validate();
  const int n = partition.total_len();
  const int last = partition.parallel_degree() - 1;
  AttentionMask m;
  m.n = n;
  m.rows.resize(n);
  for (int b = 0; b <= last; ++b) {
    const auto [lo, hi] = partition.ranges[b];
    for (int i = lo; i < hi; ++i) {
      // final block: full causal; other blocks: block-local causal
      m.rows[i] = {{b == last ? 0 : lo, i + 1}};
    }
  }
  return m;
}

AttentionMask build_dropout_mask(const BlockPartition& partition, const DropoutPlan& plan) {
  partition.validate();
  const int last = partition.parallel_degree() - 1;
  if (plan.corrupted.count(last))
    throw ContractError("dropout plan must not corrupt the final block");
  for (int b : plan.corrupted)
    if (b < 0 || b > last) throw ContractError("corrupted block index out of range");
  const int n = partition.total_len();
  AttentionMask m;
  m.n = n;
  m.rows.resize(n);
  for (int b = 0; b <= last; ++b) {
    const auto [lo, hi] = partition.ranges[b];
    const bool corrupted = plan.corrupted.count(b) > 0;
    for (int i = lo; i < hi; ++i) {
      m.rows[i] = {{corrupted ? lo : 0, i + 1}};
    }
  }
  return m;
}

DropoutPlan sample_dropout_plan(const BlockPartition& partition, double rate,
                                std::uint64_t rng_seed) {
  partition.validate();
  if (rate < 0.0 || rate > 1.0) throw ContractError("dropout rate outside [0,1]");
  DropoutPlan plan;
  plan.rate = rate;
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int last = partition.parallel_degree() - 1;
  for (int b = 0; b < last; ++b) {
    if (u(rng) < rate) plan.corrupted.insert(b);
  }
  return plan;
}

bool reference_full_causal_allowed(int n, int i, int j) {
  return i >= 0 && i < n && j >= 0 && j <= i;
}

bool reference_block_allowed(const BlockPartition& partition, int i, int j) {
  const int n = partition.total_len();
  if (!reference_full_causal_allowed(n, i, j)) return false;
  const int bi = partition.block_of(i);
  if (bi == partition.parallel_degree() - 1) return true;
  return partition.block_of(j) == bi;
}

bool reference_dropout_allowed(const BlockPartition& partition, const DropoutPlan& plan,
                               int i, int j) {
  const int n = partition.total_len();
  if (!reference_full_causal_allowed(n, i, j)) return false;
  const int bi = partition.block_of(i);
  if (plan.corrupted.count(bi)) return partition.block_of(j) == bi;
  return true;
}

}  // namespace blockattn
