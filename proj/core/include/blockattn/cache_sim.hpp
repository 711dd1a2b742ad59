#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "blockattn/mask.hpp"

namespace blockattn {

// Analytic token-count model of [system prompt, retrieved docs, user query]
// request traces. Queries are always fresh content and never hit.
struct CacheScenario {
  std::int64_t system_prompt_len = 0;
  std::map<std::string, std::int64_t> docs;  // id -> length in tokens

  struct Request {
    std::vector<std::string> doc_ids;  // retrieval order
    std::int64_t query_len = 0;
  };
  std::vector<Request> requests;

  void validate() const;
  static CacheScenario from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct RequestStats {
  std::int64_t hit_tokens = 0;
  std::int64_t miss_tokens = 0;
  double hit_rate() const {
    const std::int64_t total = hit_tokens + miss_tokens;
    return total == 0 ? 0.0 : static_cast<double>(hit_tokens) / static_cast<double>(total);
  }
};

// Vanilla prefix cache: a request reuses the longest common segment prefix
// with the most recently cached monolithic prompt.
std::vector<RequestStats> simulate_prefix_cache(const CacheScenario& scenario);

// Block cache: system prompt and each document are independent blocks; a
// block hits iff previously encoded, regardless of order or prefix.
std::vector<RequestStats> simulate_block_cache(const CacheScenario& scenario);

// Attention-pair counts for prefilling `context_len` context (covered by the
// partition) plus a final query block of `query_len` tokens.
struct CostModel {
  std::uint64_t full_pairs = 0;
  std::uint64_t block_pairs = 0;
  std::uint64_t reduction_abs() const { return full_pairs - block_pairs; }
  double reduction_rel() const {
    return full_pairs == 0 ? 0.0
                           : static_cast<double>(reduction_abs()) / static_cast<double>(full_pairs);
  }
  double ttft_proxy(double per_pair_cost) const {
    return static_cast<double>(block_pairs) * per_pair_cost;
  }
};

CostModel prefill_cost(std::int64_t context_len, const BlockPartition& partition,
                       std::int64_t query_len);

}  // namespace blockattn
