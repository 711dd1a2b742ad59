#pragma once

#include <cstdint>
#include <map>
#include <shared_mutex>
#include <string>
#include <vector>

#include "blockattn/model.hpp"

namespace blockattn {

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t hit_tokens = 0;
  std::uint64_t miss_tokens = 0;

  double hit_rate() const {
    const std::uint64_t total = hit_tokens + miss_tokens;
    return total == 0 ? 0.0 : static_cast<double>(hit_tokens) / static_cast<double>(total);
  }
};

// Content-addressed store of encoded blocks. Many concurrent readers, single
// writer; encodes happen outside the write lock and the first insert wins.
class KVCacheStore {
 public:
  KVCacheStore() = default;
  KVCacheStore(KVCacheStore&& o) noexcept
      : entries_(std::move(o.entries_)), stats_(o.stats_), access_clock_(o.access_clock_) {}
  KVCacheStore& operator=(KVCacheStore&&) = delete;

  // Returns the cached block (hit) or encodes and inserts it (miss).
  std::pair<const KVBlock*, bool> get_or_encode(const Model& model,
                                                const std::vector<int>& block_tokens,
                                                int sink_count = 0);

  const KVBlock* find(const Hash256& hash) const;

  // Evicts least-recently-hit blocks until total cached tokens <= capacity.
  std::vector<Hash256> evict_lru(std::uint64_t capacity_tokens);

  void persist(const std::string& path) const;
  static KVCacheStore load(const std::string& path);

  CacheStats stats() const;
  std::size_t block_count() const;
  std::uint64_t total_tokens() const;

 private:
  struct Entry {
    KVBlock block;
    Hash256 model_fingerprint{};
    std::uint64_t last_access = 0;
  };

  mutable std::shared_mutex mu_;
  std::map<Hash256, Entry> entries_;
  CacheStats stats_;
  std::uint64_t access_clock_ = 0;
};

}  // namespace blockattn
