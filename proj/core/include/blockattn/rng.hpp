#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace blockattn {

// All randomness in a run flows from one root seed through named streams,
// so changing how one component draws does not shift the others.
class RngSplitter {
 public:
  explicit RngSplitter(std::uint64_t root_seed) : root_(root_seed) {}

  std::uint64_t stream_seed(std::string_view name) const {
    // FNV-1a over the stream name, mixed with the root via splitmix64.
    std::uint64_t h = 14695981039346656037ull;
    for (char c : name) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 1099511628211ull;
    }
    std::uint64_t z = root_ ^ h;
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::mt19937_64 stream(std::string_view name) const {
    return std::mt19937_64(stream_seed(name));
  }

  std::uint64_t root() const { return root_; }

 private:
  std::uint64_t root_;
};

}  // namespace blockattn
