#include "blockattn/kv_cache.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <mutex>

namespace blockattn {

namespace {
constexpr char kMagic[4] = {'B', 'K', 'V', 'C'};
constexpr std::uint32_t kVersion = 1;

// Identity hash for a (model, tokens, sink_count) request; must match the
// hash encode_block assigns so lookups and inserts agree.
Hash256 request_hash(const Model& model, const std::vector<int>& tokens, int sink_count) {
  std::vector<std::uint8_t> buf;
  auto put = [&buf](const void* p, std::size_t sz) {
    const auto* bb = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), bb, bb + sz);
  };
  const std::uint32_t version = 1;
  put(&version, sizeof(version));
  put(model.fingerprint().data(), 32);
  const std::int32_t sc = sink_count;
  put(&sc, sizeof(sc));
  for (int t : tokens) {
    const std::int32_t t32 = t;
    put(&t32, sizeof(t32));
  }
  return sha256_bytes(buf.data(), buf.size());
}

void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& f, void* p, std::size_t n) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (f.gcount() != static_cast<std::streamsize>(n)) throw FormatError("cache file truncated");
}

void write_mat(std::ofstream& f, const Mat& m) {
  const std::int32_t dims[2] = {m.rows, m.cols};
  write_bytes(f, dims, sizeof(dims));
  write_bytes(f, m.a.data(), m.a.size() * sizeof(double));
}

Mat read_mat(std::ifstream& f) {
  std::int32_t dims[2];
  read_bytes(f, dims, sizeof(dims));
  if (dims[0] < 0 || dims[1] < 0) throw FormatError("negative tensor dims");
  Mat m(dims[0], dims[1]);
  read_bytes(f, m.a.data(), m.a.size() * sizeof(double));
  return m;
}
}  // namespace

std::pair<const KVBlock*, bool> KVCacheStore::get_or_encode(const Model& model,
                                                            const std::vector<int>& block_tokens,
                                                            int sink_count) {
  if (block_tokens.empty()) throw ContractError("cannot cache an empty block");
  const Hash256 h = request_hash(model, block_tokens, sink_count);

  {
    std::unique_lock lk(mu_);
    auto it = entries_.find(h);
    if (it != entries_.end()) {
      if (it->second.model_fingerprint != model.fingerprint())
        throw StalenessError("cached block was produced by a different model");
      if (it->second.block.tokens != block_tokens)
        throw StalenessError("hash collision: stored tokens differ from request");
      it->second.last_access = ++access_clock_;
      stats_.hits++;
      stats_.hit_tokens += block_tokens.size();
      return {&it->second.block, true};
    }
  }

  // Encode outside the lock; first insert wins on a race.
  KVBlock fresh = encode_block(model, block_tokens, sink_count);

  std::unique_lock lk(mu_);
  auto [it, inserted] = entries_.try_emplace(h);
  if (inserted) {
    it->second.block = std::move(fresh);
    it->second.model_fingerprint = model.fingerprint();
  } else if (it->second.block.tokens != block_tokens) {
    throw StalenessError("hash collision: stored tokens differ from request");
  }
  it->second.last_access = ++access_clock_;
  stats_.misses++;
  stats_.miss_tokens += block_tokens.size();
  return {&it->second.block, false};
}

const KVBlock* KVCacheStore::find(const Hash256& hash) const {
  std::shared_lock lk(mu_);
  auto it = entries_.find(hash);
  return it == entries_.end() ? nullptr : &it->second.block;
}

std::vector<Hash256> KVCacheStore::evict_lru(std::uint64_t capacity_tokens) {
  std::unique_lock lk(mu_);
  std::vector<Hash256> evicted;
  std::uint64_t total = 0;
  for (const auto& [h, e] : entries_) total += e.block.token_len();
  while (total > capacity_tokens && !entries_.empty()) {
    auto victim = entries_.begin();
    for (auto it = entries_.begin(); it != entries_.end(); ++it)
      if (it->second.last_access < victim->second.last_access) victim = it;
    total -= victim->second.block.token_len();
    evicted.push_back(victim->first);
    entries_.erase(victim);
  }
  return evicted;
}

void KVCacheStore::persist(const std::string& path) const {
  std::shared_lock lk(mu_);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open cache file for writing: " + path);
  write_bytes(f, kMagic, 4);
  write_bytes(f, &kVersion, sizeof(kVersion));
  write_bytes(f, &stats_, sizeof(stats_));
  write_bytes(f, &access_clock_, sizeof(access_clock_));
  const std::uint64_t count = entries_.size();
  write_bytes(f, &count, sizeof(count));
  for (const auto& [h, e] : entries_) {
    write_bytes(f, h.data(), 32);
    write_bytes(f, e.model_fingerprint.data(), 32);
    write_bytes(f, &e.last_access, sizeof(e.last_access));
    const std::int32_t token_len = e.block.token_len();
    const std::int32_t sink_count = e.block.sink_count;
    write_bytes(f, &token_len, sizeof(token_len));
    write_bytes(f, &sink_count, sizeof(sink_count));
    for (int t : e.block.tokens) {
      const std::int32_t t32 = t;
      write_bytes(f, &t32, sizeof(t32));
    }
    const std::int32_t layers = static_cast<std::int32_t>(e.block.keys.size());
    write_bytes(f, &layers, sizeof(layers));
    for (std::int32_t l = 0; l < layers; ++l) {
      write_mat(f, e.block.keys[l]);
      write_mat(f, e.block.values[l]);
    }
  }
  if (!f) throw FormatError("cache write failed: " + path);
}

KVCacheStore KVCacheStore::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open cache file: " + path);
  char magic[4];
  read_bytes(f, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad cache magic");
  std::uint32_t version;
  read_bytes(f, &version, sizeof(version));
  if (version != kVersion) throw FormatError("unsupported cache version");

  KVCacheStore store;
  read_bytes(f, &store.stats_, sizeof(store.stats_));
  read_bytes(f, &store.access_clock_, sizeof(store.access_clock_));
  std::uint64_t count;
  read_bytes(f, &count, sizeof(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    Hash256 h;
    Entry e;
    read_bytes(f, h.data(), 32);
    read_bytes(f, e.model_fingerprint.data(), 32);
    read_bytes(f, &e.last_access, sizeof(e.last_access));
    std::int32_t token_len, sink_count;
    read_bytes(f, &token_len, sizeof(token_len));
    read_bytes(f, &sink_count, sizeof(sink_count));
    if (token_len < 0) throw FormatError("negative token length");
    e.block.content_hash = h;
    e.block.sink_count = sink_count;
    e.block.tokens.resize(token_len);
    for (auto& t : e.block.tokens) {
      std::int32_t t32;
      read_bytes(f, &t32, sizeof(t32));
      t = t32;
    }
    std::int32_t layers;
    read_bytes(f, &layers, sizeof(layers));
    if (layers < 0) throw FormatError("negative layer count");
    for (std::int32_t l = 0; l < layers; ++l) {
      e.block.keys.push_back(read_mat(f));
      e.block.values.push_back(read_mat(f));
    }
    store.entries_.emplace(h, std::move(e));
  }
  return store;
}

CacheStats KVCacheStore::stats() const {
  std::shared_lock lk(mu_);
  return stats_;
}

std::size_t KVCacheStore::block_count() const {
  std::shared_lock lk(mu_);
  return entries_.size();
}

std::uint64_t KVCacheStore::total_tokens() const {
  std::shared_lock lk(mu_);
  std::uint64_t total = 0;
  for (const auto& [h, e] : entries_) total += e.block.token_len();
  return total;
}

}  // namespace blockattn
