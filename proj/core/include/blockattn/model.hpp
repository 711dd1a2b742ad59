#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "blockattn/common.hpp"
#include "blockattn/mask.hpp"
#include "blockattn/tensor.hpp"

namespace blockattn {

using Hash256 = std::array<std::uint8_t, 32>;
std::string hash_hex(const Hash256& h);
Hash256 sha256_bytes(const std::uint8_t* data, std::size_t len);

struct ModelConfig {
  int num_layers = 2;
  int num_heads = 2;
  int head_dim = 8;
  int hidden_dim = 16;  // = num_heads * head_dim
  int vocab_size = 64;
  int max_seq_len = 512;
  double rope_base = 10000.0;
  std::uint64_t seed = 0;

  int mlp_dim() const { return 4 * hidden_dim; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Mat wq, wk, wv, wo;  // hidden x hidden
  Mat w1;              // mlp x hidden
  Mat w2;              // hidden x mlp
  Vec ln1, ln2;        // rmsnorm gains
};

struct Params {
  Mat embed;    // vocab x hidden
  std::vector<LayerParams> layers;
  Vec ln_f;
  Mat unembed;  // vocab x hidden
};

// Visits every parameter tensor as a flat double span, in a fixed order.
void for_each_tensor(Params& p,
                     const std::function<void(const std::string&, std::vector<double>&)>& fn);
void for_each_tensor(const Params& p,
                     const std::function<void(const std::string&, const std::vector<double>&)>& fn);
std::size_t param_count(const Params& p);
Params zero_like(const Params& p);

class Model {
 public:
  explicit Model(const ModelConfig& cfg);               // seeded truncated-normal init
  Model(const ModelConfig& cfg, Params params);

  const ModelConfig& config() const { return cfg_; }
  const Params& params() const { return params_; }
  Params& mutable_params() {
    fingerprint_valid_ = false;
    return params_;
  }

  // Digest over config + parameter bytes; identifies the exact model that
  // produced a cached KV block.
  const Hash256& fingerprint() const;

 private:
  ModelConfig cfg_;
  Params params_;
  mutable Hash256 fingerprint_{};
  mutable bool fingerprint_valid_ = false;
};

struct ForwardOutput {
  Mat logits;                 // n x vocab
  Mat hidden;                 // n x hidden, final normed states (pre-head)
  std::vector<Mat> keys;      // per layer, n x hidden, rotary applied at the given positions
  std::vector<Mat> values;    // per layer, n x hidden
};

// Activation record for reverse mode. Only allocated when a trace is requested.
struct ForwardTrace {
  std::vector<int> tokens;
  std::vector<int> positions;
  AttentionMask mask;
  // per layer
  std::vector<Mat> x_in, u1, q_rot, k_rot, v, attn_concat, x_mid, u2, z1, relu_out;
  std::vector<Vec> rms1, rms2;
  // probs[layer][head][row] = softmax weights aligned with mask row intervals
  std::vector<std::vector<std::vector<std::vector<double>>>> probs;
  Mat x_out, hidden;  // pre-final-norm and final normed states
  Vec rms_f;
};

// Deterministic masked forward. positions[i] is token i's rotary position.
ForwardOutput forward(const Model& model, const std::vector<int>& tokens,
                      const AttentionMask& mask, const std::vector<int>& positions,
                      ForwardTrace* trace = nullptr);

// Convenience: full causal mask, positions 0..n-1.
ForwardOutput forward_causal(const Model& model, const std::vector<int>& tokens,
                             ForwardTrace* trace = nullptr);

// Reverse mode from d(loss)/d(logits), plus an optional extra gradient on the
// final normed hidden states (used by the cut head). Returns parameter grads.
Params backward(const Model& model, const ForwardTrace& trace, const Mat& dlogits,
                const Mat* dhidden = nullptr);

// Per-layer KV states for one block, computed at local positions 0..len-1
// under a block-local causal mask. Prefix-agnostic by construction.
struct KVBlock {
  Hash256 content_hash{};
  std::vector<int> tokens;
  int sink_count = 0;
  std::vector<Mat> keys;    // per layer, len x hidden, rotary at LOCAL positions
  std::vector<Mat> values;  // per layer, len x hidden, no positional rotation

  int token_len() const { return static_cast<int>(tokens.size()); }
  bool bytes_equal(const KVBlock& o) const;
};

KVBlock encode_block(const Model& model, const std::vector<int>& tokens, int sink_count = 0);

// KV states re-based to a global offset: key at local position p behaves as
// global position offset+p. The input block is not modified.
struct PositionedKV {
  std::vector<Mat> keys, values;
  int len = 0;
};

PositionedKV apply_position_offset(const ModelConfig& cfg, const KVBlock& block, int offset);

// Decode query tokens against an ordered list of cached blocks, offsets
// assigned cumulatively. Equals the monolithic block-mask forward on the
// concatenated sequence.
ForwardOutput assemble_and_decode(const Model& model,
                                  const std::vector<const KVBlock*>& cached,
                                  const std::vector<int>& query);

// Numerics shared with the loss code.
void softmax_row(const double* logits, int n, double* out);
double log_sum_exp(const double* logits, int n);

}  // namespace blockattn
