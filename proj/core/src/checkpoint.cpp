#include "blockattn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace blockattn {

namespace {
constexpr char kMagic[4] = {'B', 'K', 'V', 'M'};
constexpr std::uint32_t kVersion = 1;

void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& f, void* p, std::size_t n) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (f.gcount() != static_cast<std::streamsize>(n))
    throw FormatError("checkpoint truncated");
}
}  // namespace

void save_model(const Model& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open checkpoint for writing: " + path);
  write_bytes(f, kMagic, 4);
  write_bytes(f, &kVersion, sizeof(kVersion));
  const ModelConfig& c = model.config();
  std::int32_t ints[6] = {c.num_layers, c.num_heads, c.head_dim,
                          c.hidden_dim, c.vocab_size, c.max_seq_len};
  write_bytes(f, ints, sizeof(ints));
  write_bytes(f, &c.rope_base, sizeof(double));
  write_bytes(f, &c.seed, sizeof(std::uint64_t));
  for_each_tensor(model.params(), [&f](const std::string&, const std::vector<double>& v) {
    std::uint64_t len = v.size();
    write_bytes(f, &len, sizeof(len));
    write_bytes(f, v.data(), v.size() * sizeof(double));
  });
  if (!f) throw FormatError("checkpoint write failed: " + path);
}

Model load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint: " + path);
  char magic[4];
  read_bytes(f, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic");
  std::uint32_t version;
  read_bytes(f, &version, sizeof(version));
  if (version != kVersion) throw FormatError("unsupported checkpoint version");
  ModelConfig c;
  std::int32_t ints[6];
  read_bytes(f, ints, sizeof(ints));
  c.num_layers = ints[0];
  c.num_heads = ints[1];
  c.head_dim = ints[2];
  c.hidden_dim = ints[3];
  c.vocab_size = ints[4];
  c.max_seq_len = ints[5];
  read_bytes(f, &c.rope_base, sizeof(double));
  read_bytes(f, &c.seed, sizeof(std::uint64_t));
  c.validate();

  Model model(c);  // allocates the right shapes
  Params p = model.params();
  for_each_tensor(p, [&f](const std::string& name, std::vector<double>& v) {
    std::uint64_t len;
    read_bytes(f, &len, sizeof(len));
    if (len != v.size()) throw FormatError("tensor size mismatch for " + name);
    read_bytes(f, v.data(), v.size() * sizeof(double));
  });
  return Model(c, std::move(p));
}

}  // namespace blockattn
