#include "blockattn/model.hpp"

#include <openssl/sha.h>

#include <cmath>
#include <cstring>
#include <random>

namespace blockattn {

namespace {
constexpr double kNormEps = 1e-8;

void matvec(const Mat& w, const double* x, double* y) {
  // y = W x, W is out x in
  for (int r = 0; r < w.rows; ++r) {
    const double* wr = w.row(r);
    double acc = 0.0;
    for (int c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

void matvec_t_acc(const Mat& w, const double* dy, double* dx) {
  // dx += W^T dy
  for (int r = 0; r < w.rows; ++r) {
    const double* wr = w.row(r);
    const double d = dy[r];
    if (d == 0.0) continue;
    for (int c = 0; c < w.cols; ++c) dx[c] += wr[c] * d;
  }
}

void outer_acc(Mat& dw, const double* dy, const double* x) {
  // dW += dy ⊗ x
  for (int r = 0; r < dw.rows; ++r) {
    double* wr = dw.row(r);
    const double d = dy[r];
    if (d == 0.0) continue;
    for (int c = 0; c < dw.cols; ++c) wr[c] += d * x[c];
  }
}

void rmsnorm(const double* x, const Vec& g, int h, double* y, double* rms_out) {
  double ss = 0.0;
  for (int i = 0; i < h; ++i) ss += x[i] * x[i];
  const double r = std::sqrt(ss / h + kNormEps);
  for (int i = 0; i < h; ++i) y[i] = g[i] * x[i] / r;
  if (rms_out) *rms_out = r;
}

void rmsnorm_backward(const double* x, const Vec& g, int h, double r, const double* dy,
                      double* dx_acc, Vec& dg_acc) {
  double xdot = 0.0;
  for (int i = 0; i < h; ++i) {
    dg_acc[i] += dy[i] * x[i] / r;
    xdot += x[i] * g[i] * dy[i];
  }
  const double scale = xdot / (h * r * r * r);
  for (int i = 0; i < h; ++i) dx_acc[i] += g[i] * dy[i] / r - x[i] * scale;
}

void rope_apply(double* head_vec, int head_dim, int pos, double base, bool inverse) {
  for (int t = 0; t < head_dim / 2; ++t) {
    const double theta =
        static_cast<double>(pos) * std::pow(base, -2.0 * t / head_dim) * (inverse ? -1.0 : 1.0);
    const double c = std::cos(theta), s = std::sin(theta);
    const double a = head_vec[2 * t], b = head_vec[2 * t + 1];
    head_vec[2 * t] = a * c - b * s;
    head_vec[2 * t + 1] = a * s + b * c;
  }
}

void init_mat(Mat& m, int rows, int cols, std::mt19937_64& rng, double sigma) {
  m = Mat(rows, cols);
  std::normal_distribution<double> nd(0.0, sigma);
  for (auto& v : m.a) {
    double z;
    do {
      z = nd(rng);
    } while (std::abs(z) > 2.0 * sigma);  // truncated normal
    v = z;
  }
}
}  // namespace

std::string hash_hex(const Hash256& h) {
  static const char* hex = "0123456789abcdef";
  std::string s(64, '0');
  for (int i = 0; i < 32; ++i) {
    s[2 * i] = hex[h[i] >> 4];
    s[2 * i + 1] = hex[h[i] & 0xf];
  }
  return s;
}

Hash256 sha256_bytes(const std::uint8_t* data, std::size_t len) {
  Hash256 out;
  SHA256(data, len, out.data());
  return out;
}

void ModelConfig::validate() const {
  if (num_layers < 1 || num_heads < 1 || head_dim < 2 || vocab_size < 2 || max_seq_len < 1)
    throw ContractError("model config dimensions out of range");
  if (hidden_dim > 256) throw ContractError("hidden_dim above desk-scale cap of 256");
  if (head_dim % 2 != 0) throw ContractError("head_dim must be even for rotary pairs");
  if (hidden_dim != num_heads * head_dim)
    throw ContractError("hidden_dim must equal num_heads * head_dim");
  if (rope_base <= 1.0) throw ContractError("rope_base must exceed 1");
}

void for_each_tensor(Params& p,
                     const std::function<void(const std::string&, std::vector<double>&)>& fn) {
  fn("embed", p.embed.a);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    fn(pre + "wq", L.wq.a);
    fn(pre + "wk", L.wk.a);
    fn(pre + "wv", L.wv.a);
    fn(pre + "wo", L.wo.a);
    fn(pre + "ln1", L.ln1);
    fn(pre + "w1", L.w1.a);
    fn(pre + "w2", L.w2.a);
    fn(pre + "ln2", L.ln2);
  }
  fn("ln_f", p.ln_f);
  fn("unembed", p.unembed.a);
}

void for_each_tensor(const Params& p,
                     const std::function<void(const std::string&, const std::vector<double>&)>& fn) {
  for_each_tensor(const_cast<Params&>(p),
                  [&fn](const std::string& name, std::vector<double>& v) {
                    fn(name, v);
                  });
}

std::size_t param_count(const Params& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&n](const std::string&, const std::vector<double>& v) { n += v.size(); });
  return n;
}

Params zero_like(const Params& p) {
  Params z = p;
  for_each_tensor(z, [](const std::string&, std::vector<double>& v) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  return z;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const int h = cfg_.hidden_dim;
  const double sigma = 0.02;
  init_mat(params_.embed, cfg_.vocab_size, h, rng, sigma);
  params_.layers.resize(cfg_.num_layers);
  for (auto& L : params_.layers) {
    init_mat(L.wq, h, h, rng, sigma);
    init_mat(L.wk, h, h, rng, sigma);
    init_mat(L.wv, h, h, rng, sigma);
    init_mat(L.wo, h, h, rng, sigma);
    init_mat(L.w1, cfg_.mlp_dim(), h, rng, sigma);
    init_mat(L.w2, h, cfg_.mlp_dim(), rng, sigma);
    L.ln1.assign(h, 1.0);
    L.ln2.assign(h, 1.0);
  }
  params_.ln_f.assign(h, 1.0);
  init_mat(params_.unembed, cfg_.vocab_size, h, rng, sigma);
}

Model::Model(const ModelConfig& cfg, Params params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
}

const Hash256& Model::fingerprint() const {
  if (!fingerprint_valid_) {
    std::vector<std::uint8_t> buf;
    auto put = [&buf](const void* p, std::size_t n) {
      const auto* b = static_cast<const std::uint8_t*>(p);
      buf.insert(buf.end(), b, b + n);
    };
    put(&cfg_.num_layers, sizeof(int));
    put(&cfg_.num_heads, sizeof(int));
    put(&cfg_.head_dim, sizeof(int));
    put(&cfg_.hidden_dim, sizeof(int));
    put(&cfg_.vocab_size, sizeof(int));
    put(&cfg_.max_seq_len, sizeof(int));
    put(&cfg_.rope_base, sizeof(double));
    for_each_tensor(params_, [&put](const std::string&, const std::vector<double>& v) {
      put(v.data(), v.size() * sizeof(double));
    });
    fingerprint_ = sha256_bytes(buf.data(), buf.size());
    fingerprint_valid_ = true;
  }
  return fingerprint_;
}

ForwardOutput forward(const Model& model, const std::vector<int>& tokens,
                      const AttentionMask& mask, const std::vector<int>& positions,
                      ForwardTrace* trace) {
  const ModelConfig& cfg = model.config();
  const Params& P = model.params();
  const int n = static_cast<int>(tokens.size());
  const int h = cfg.hidden_dim;
  const int hd = cfg.head_dim;
  const int nh = cfg.num_heads;
  const int mlp = cfg.mlp_dim();
  if (n == 0) throw ContractError("empty token sequence");
  if (static_cast<int>(positions.size()) != n) throw ContractError("positions length mismatch");
  if (mask.n != n) throw ContractError("mask shape mismatch");
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab_size) throw ContractError("token id outside vocab");
  for (int p : positions)
    if (p < 0 || p >= cfg.max_seq_len) throw RangeError("position index exceeds max_seq_len");

  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  ForwardOutput out;
  out.keys.resize(cfg.num_layers);
  out.values.resize(cfg.num_layers);

  if (trace) {
    trace->tokens = tokens;
    trace->positions = positions;
    trace->mask = mask;
    trace->x_in.resize(cfg.num_layers);
    trace->u1.resize(cfg.num_layers);
    trace->q_rot.resize(cfg.num_layers);
    trace->k_rot.resize(cfg.num_layers);
    trace->v.resize(cfg.num_layers);
    trace->attn_concat.resize(cfg.num_layers);
    trace->x_mid.resize(cfg.num_layers);
    trace->u2.resize(cfg.num_layers);
    trace->z1.resize(cfg.num_layers);
    trace->relu_out.resize(cfg.num_layers);
    trace->rms1.resize(cfg.num_layers);
    trace->rms2.resize(cfg.num_layers);
    trace->probs.assign(cfg.num_layers,
                        std::vector<std::vector<std::vector<double>>>(
                            nh, std::vector<std::vector<double>>(n)));
  }

  Mat x(n, h);
  for (int i = 0; i < n; ++i)
    std::memcpy(x.row(i), P.embed.row(tokens[i]), sizeof(double) * h);

  Mat u1(n, h), q_rot(n, h), k_rot(n, h), v(n, h), concat(n, h), x_mid(n, h), u2(n, h);
  Mat z1(n, mlp), relu_out(n, mlp);
  Vec rms1(n), rms2(n);
  std::vector<double> scores;

  for (int l = 0; l < cfg.num_layers; ++l) {
    const LayerParams& L = P.layers[l];
    if (trace) trace->x_in[l] = x;

    for (int i = 0; i < n; ++i) rmsnorm(x.row(i), L.ln1, h, u1.row(i), &rms1[i]);
    for (int i = 0; i < n; ++i) {
      matvec(L.wq, u1.row(i), q_rot.row(i));
      matvec(L.wk, u1.row(i), k_rot.row(i));
      matvec(L.wv, u1.row(i), v.row(i));
      for (int hh = 0; hh < nh; ++hh) {
        rope_apply(q_rot.row(i) + hh * hd, hd, positions[i], cfg.rope_base, false);
        rope_apply(k_rot.row(i) + hh * hd, hd, positions[i], cfg.rope_base, false);
      }
    }

    concat.zero();
    for (int hh = 0; hh < nh; ++hh) {
      const int off = hh * hd;
      for (int i = 0; i < n; ++i) {
        const double* qi = q_rot.row(i) + off;
        scores.clear();
        for (const auto& [lo, hi] : mask.rows[i]) {
          for (int j = lo; j < hi; ++j) {
            const double* kj = k_rot.row(j) + off;
            double s = 0.0;
            for (int d = 0; d < hd; ++d) s += qi[d] * kj[d];
            scores.push_back(s * inv_sqrt_hd);
          }
        }
        if (scores.empty()) continue;
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double z = 0.0;
        for (double& s : scores) {
          s = std::exp(s - mx);
          z += s;
        }
        double* oi = concat.row(i) + off;
        std::size_t idx = 0;
        for (const auto& [lo, hi] : mask.rows[i]) {
          for (int j = lo; j < hi; ++j, ++idx) {
            const double p = scores[idx] / z;
            scores[idx] = p;
            const double* vj = v.row(j) + off;
            for (int d = 0; d < hd; ++d) oi[d] += p * vj[d];
          }
        }
        if (trace) trace->probs[l][hh][i] = scores;
      }
    }

    for (int i = 0; i < n; ++i) {
      double attn_out[1024];
      matvec(L.wo, concat.row(i), attn_out);
      double* xm = x_mid.row(i);
      const double* xi = x.row(i);
      for (int d = 0; d < h; ++d) xm[d] = xi[d] + attn_out[d];
    }

    for (int i = 0; i < n; ++i) rmsnorm(x_mid.row(i), L.ln2, h, u2.row(i), &rms2[i]);
    for (int i = 0; i < n; ++i) {
      matvec(L.w1, u2.row(i), z1.row(i));
      double* r = relu_out.row(i);
      const double* zz = z1.row(i);
      for (int d = 0; d < mlp; ++d) r[d] = zz[d] > 0.0 ? zz[d] : 0.0;
      double mlp_out[1024];
      matvec(L.w2, r, mlp_out);
      double* xi = x.row(i);
      const double* xm = x_mid.row(i);
      for (int d = 0; d < h; ++d) xi[d] = xm[d] + mlp_out[d];
    }

    out.keys[l] = k_rot;
    out.values[l] = v;
    if (trace) {
      trace->u1[l] = u1;
      trace->q_rot[l] = q_rot;
      trace->k_rot[l] = k_rot;
      trace->v[l] = v;
      trace->attn_concat[l] = concat;
      trace->x_mid[l] = x_mid;
      trace->u2[l] = u2;
      trace->z1[l] = z1;
      trace->relu_out[l] = relu_out;
      trace->rms1[l] = rms1;
      trace->rms2[l] = rms2;
    }
  }

  out.hidden = Mat(n, h);
  Vec rms_f(n);
  for (int i = 0; i < n; ++i) rmsnorm(x.row(i), P.ln_f, h, out.hidden.row(i), &rms_f[i]);
  out.logits = Mat(n, cfg.vocab_size);
  for (int i = 0; i < n; ++i) matvec(P.unembed, out.hidden.row(i), out.logits.row(i));

  if (trace) {
    trace->x_out = x;
    trace->hidden = out.hidden;
    trace->rms_f = rms_f;
  }
  return out;
}

ForwardOutput forward_causal(const Model& model, const std::vector<int>& tokens,
                             ForwardTrace* trace) {
  const int n = static_cast<int>(tokens.size());
  std::vector<int> positions(n);
  for (int i = 0; i < n; ++i) positions[i] = i;
  return forward(model, tokens, build_full_causal(n), positions, trace);
}

Params backward(const Model& model, const ForwardTrace& trace, const Mat& dlogits,
                const Mat* dhidden) {
  const ModelConfig& cfg = model.config();
  const Params& P = model.params();
  const int n = static_cast<int>(trace.tokens.size());
  const int h = cfg.hidden_dim;
  const int hd = cfg.head_dim;
  const int nh = cfg.num_heads;
  const int mlp = cfg.mlp_dim();
  if (dlogits.rows != n || dlogits.cols != cfg.vocab_size)
    throw ContractError("dlogits shape mismatch with trace");
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  Params G = zero_like(P);

  // head
  Mat dx(n, h);
  for (int i = 0; i < n; ++i) {
    outer_acc(G.unembed, dlogits.row(i), trace.hidden.row(i));
    Vec df(h, 0.0);
    matvec_t_acc(P.unembed, dlogits.row(i), df.data());
    if (dhidden)
      for (int d = 0; d < h; ++d) df[d] += (*dhidden)(i, d);
    rmsnorm_backward(trace.x_out.row(i), P.ln_f, h, trace.rms_f[i], df.data(), dx.row(i),
                     G.ln_f);
  }

  Mat dq(n, h), dk(n, h), dv(n, h), dconcat(n, h), dx_mid(n, h), du1(n, h);
  Vec dz1(mlp), drelu(mlp), du2(h);

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const LayerParams& L = P.layers[l];
    LayerParams& GL = G.layers[l];

    // mlp block: x = x_mid + W2 relu(W1 u2)
    dx_mid.zero();
    for (int i = 0; i < n; ++i) {
      const double* dxi = dx.row(i);
      for (int d = 0; d < h; ++d) dx_mid(i, d) += dxi[d];  // residual
      outer_acc(GL.w2, dxi, trace.relu_out[l].row(i));
      std::fill(drelu.begin(), drelu.end(), 0.0);
      matvec_t_acc(L.w2, dxi, drelu.data());
      const double* zz = trace.z1[l].row(i);
      for (int d = 0; d < mlp; ++d) dz1[d] = zz[d] > 0.0 ? drelu[d] : 0.0;
      outer_acc(GL.w1, dz1.data(), trace.u2[l].row(i));
      std::fill(du2.begin(), du2.end(), 0.0);
      matvec_t_acc(L.w1, dz1.data(), du2.data());
      rmsnorm_backward(trace.x_mid[l].row(i), L.ln2, h, trace.rms2[l][i], du2.data(),
                       dx_mid.row(i), GL.ln2);
    }

    // attention block: x_mid = x_in + Wo concat
    dconcat.zero();
    dq.zero();
    dk.zero();
    dv.zero();
    for (int i = 0; i < n; ++i) {
      outer_acc(GL.wo, dx_mid.row(i), trace.attn_concat[l].row(i));
      matvec_t_acc(L.wo, dx_mid.row(i), dconcat.row(i));
    }

    for (int hh = 0; hh < nh; ++hh) {
      const int off = hh * hd;
      for (int i = 0; i < n; ++i) {
        const auto& probs = trace.probs[l][hh][i];
        if (probs.empty()) continue;
        const double* doi = dconcat.row(i) + off;
        const double* qi = trace.q_rot[l].row(i) + off;
        // dp and the softmax jacobian
        double sum_pd = 0.0;
        std::vector<double> dp(probs.size());
        std::size_t idx = 0;
        for (const auto& [lo, hi] : trace.mask.rows[i]) {
          for (int j = lo; j < hi; ++j, ++idx) {
            const double* vj = trace.v[l].row(j) + off;
            double d = 0.0;
            for (int dd = 0; dd < hd; ++dd) d += doi[dd] * vj[dd];
            dp[idx] = d;
            sum_pd += probs[idx] * d;
          }
        }
        idx = 0;
        double* dqi = dq.row(i) + off;
        for (const auto& [lo, hi] : trace.mask.rows[i]) {
          for (int j = lo; j < hi; ++j, ++idx) {
            const double p = probs[idx];
            const double ds = p * (dp[idx] - sum_pd) * inv_sqrt_hd;
            const double* kj = trace.k_rot[l].row(j) + off;
            double* dkj = dk.row(j) + off;
            double* dvj = dv.row(j) + off;
            for (int dd = 0; dd < hd; ++dd) {
              dqi[dd] += ds * kj[dd];
              dkj[dd] += ds * qi[dd];
              dvj[dd] += p * doi[dd];
            }
          }
        }
      }
    }

    // undo the rotary rotation (orthogonal, so transpose = inverse angle)
    for (int i = 0; i < n; ++i) {
      for (int hh = 0; hh < nh; ++hh) {
        rope_apply(dq.row(i) + hh * hd, hd, trace.positions[i], cfg.rope_base, true);
        rope_apply(dk.row(i) + hh * hd, hd, trace.positions[i], cfg.rope_base, true);
      }
    }

    du1.zero();
    for (int i = 0; i < n; ++i) {
      outer_acc(GL.wq, dq.row(i), trace.u1[l].row(i));
      outer_acc(GL.wk, dk.row(i), trace.u1[l].row(i));
      outer_acc(GL.wv, dv.row(i), trace.u1[l].row(i));
      matvec_t_acc(L.wq, dq.row(i), du1.row(i));
      matvec_t_acc(L.wk, dk.row(i), du1.row(i));
      matvec_t_acc(L.wv, dv.row(i), du1.row(i));
    }

    dx.zero();
    for (int i = 0; i < n; ++i) {
      for (int d = 0; d < h; ++d) dx(i, d) += dx_mid(i, d);  // residual
      rmsnorm_backward(trace.x_in[l].row(i), L.ln1, h, trace.rms1[l][i], du1.row(i),
                       dx.row(i), GL.ln1);
    }
  }

  for (int i = 0; i < n; ++i) {
    double* ge = G.embed.row(trace.tokens[i]);
    const double* dxi = dx.row(i);
    for (int d = 0; d < h; ++d) ge[d] += dxi[d];
  }
  return G;
}

bool KVBlock::bytes_equal(const KVBlock& o) const {
  if (tokens != o.tokens || sink_count != o.sink_count) return false;
  if (keys.size() != o.keys.size()) return false;
  for (std::size_t l = 0; l < keys.size(); ++l) {
    if (!keys[l].same_shape(o.keys[l]) || !values[l].same_shape(o.values[l])) return false;
    if (std::memcmp(keys[l].a.data(), o.keys[l].a.data(), keys[l].a.size() * sizeof(double)))
      return false;
    if (std::memcmp(values[l].a.data(), o.values[l].a.data(),
                    values[l].a.size() * sizeof(double)))
      return false;
  }
  return true;
}

KVBlock encode_block(const Model& model, const std::vector<int>& tokens, int sink_count) {
  if (tokens.empty()) throw ContractError("cannot encode an empty block");
  auto out = forward_causal(model, tokens);
  KVBlock b;
  b.tokens = tokens;
  b.sink_count = sink_count;
  b.keys = std::move(out.keys);
  b.values = std::move(out.values);

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
  b.content_hash = sha256_bytes(buf.data(), buf.size());
  return b;
}

PositionedKV apply_position_offset(const ModelConfig& cfg, const KVBlock& block, int offset) {
  if (offset < 0) throw ContractError("negative offset");
  if (offset + block.token_len() > cfg.max_seq_len)
    throw RangeError("offset + block length exceeds max_seq_len");
  PositionedKV p;
  p.len = block.token_len();
  p.keys = block.keys;
  p.values = block.values;
  for (auto& km : p.keys) {
    for (int i = 0; i < km.rows; ++i) {
      for (int hh = 0; hh < cfg.num_heads; ++hh) {
        // R(offset) ∘ R(local) = R(offset + local)
        rope_apply(km.row(i) + hh * cfg.head_dim, cfg.head_dim, offset, cfg.rope_base, false);
      }
    }
  }
  return p;
}

ForwardOutput assemble_and_decode(const Model& model,
                                  const std::vector<const KVBlock*>& cached,
                                  const std::vector<int>& query) {
  const ModelConfig& cfg = model.config();
  const Params& P = model.params();
  if (query.empty()) throw ContractError("empty query");
  int ctx_len = 0;
  for (const KVBlock* b : cached) ctx_len += b->token_len();
  const int nq = static_cast<int>(query.size());
  if (ctx_len + nq > cfg.max_seq_len) throw RangeError("assembled length exceeds max_seq_len");
  for (int t : query)
    if (t < 0 || t >= cfg.vocab_size) throw ContractError("token id outside vocab");

  const int h = cfg.hidden_dim;
  const int hd = cfg.head_dim;
  const int nh = cfg.num_heads;
  const int mlp = cfg.mlp_dim();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  // Re-base every cached block to its cumulative offset.
  std::vector<Mat> ctxK(cfg.num_layers, Mat(ctx_len, h)), ctxV(cfg.num_layers, Mat(ctx_len, h));
  int off = 0;
  for (const KVBlock* b : cached) {
    PositionedKV pk = apply_position_offset(cfg, *b, off);
    for (int l = 0; l < cfg.num_layers; ++l) {
      for (int i = 0; i < pk.len; ++i) {
        std::memcpy(ctxK[l].row(off + i), pk.keys[l].row(i), sizeof(double) * h);
        std::memcpy(ctxV[l].row(off + i), pk.values[l].row(i), sizeof(double) * h);
      }
    }
    off += pk.len;
  }

  ForwardOutput out;
  out.keys.resize(cfg.num_layers);
  out.values.resize(cfg.num_layers);

  Mat x(nq, h);
  for (int i = 0; i < nq; ++i)
    std::memcpy(x.row(i), P.embed.row(query[i]), sizeof(double) * h);

  Mat u1(nq, h), q_rot(nq, h), k_rot(nq, h), v(nq, h), concat(nq, h), x_mid(nq, h), u2(nq, h);
  Mat z1(nq, mlp), relu_out(nq, mlp);
  Vec rms(nq);
  std::vector<double> scores;

  for (int l = 0; l < cfg.num_layers; ++l) {
    const LayerParams& L = P.layers[l];
    for (int i = 0; i < nq; ++i) rmsnorm(x.row(i), L.ln1, h, u1.row(i), &rms[i]);
    for (int i = 0; i < nq; ++i) {
      matvec(L.wq, u1.row(i), q_rot.row(i));
      matvec(L.wk, u1.row(i), k_rot.row(i));
      matvec(L.wv, u1.row(i), v.row(i));
      for (int hh = 0; hh < nh; ++hh) {
        rope_apply(q_rot.row(i) + hh * hd, hd, ctx_len + i, cfg.rope_base, false);
        rope_apply(k_rot.row(i) + hh * hd, hd, ctx_len + i, cfg.rope_base, false);
      }
    }

    concat.zero();
    for (int hh = 0; hh < nh; ++hh) {
      const int hoff = hh * hd;
      for (int i = 0; i < nq; ++i) {
        const double* qi = q_rot.row(i) + hoff;
        const int total = ctx_len + i + 1;  // all cached + own causal prefix
        scores.resize(total);
        for (int j = 0; j < total; ++j) {
          const double* kj =
              j < ctx_len ? ctxK[l].row(j) + hoff : k_rot.row(j - ctx_len) + hoff;
          double s = 0.0;
          for (int d = 0; d < hd; ++d) s += qi[d] * kj[d];
          scores[j] = s * inv_sqrt_hd;
        }
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double z = 0.0;
        for (double& s : scores) {
          s = std::exp(s - mx);
          z += s;
        }
        double* oi = concat.row(i) + hoff;
        for (int j = 0; j < total; ++j) {
          const double p = scores[j] / z;
          const double* vj = j < ctx_len ? ctxV[l].row(j) + hoff : v.row(j - ctx_len) + hoff;
          for (int d = 0; d < hd; ++d) oi[d] += p * vj[d];
        }
      }
    }

    for (int i = 0; i < nq; ++i) {
      double attn_out[1024];
      matvec(L.wo, concat.row(i), attn_out);
      double* xm = x_mid.row(i);
      const double* xi = x.row(i);
      for (int d = 0; d < h; ++d) xm[d] = xi[d] + attn_out[d];
    }
    for (int i = 0; i < nq; ++i) rmsnorm(x_mid.row(i), L.ln2, h, u2.row(i), &rms[i]);
    for (int i = 0; i < nq; ++i) {
      matvec(L.w1, u2.row(i), z1.row(i));
      double* r = relu_out.row(i);
      const double* zz = z1.row(i);
      for (int d = 0; d < mlp; ++d) r[d] = zz[d] > 0.0 ? zz[d] : 0.0;
      double mlp_out[1024];
      matvec(L.w2, r, mlp_out);
      double* xi = x.row(i);
      const double* xm = x_mid.row(i);
      for (int d = 0; d < h; ++d) xi[d] = xm[d] + mlp_out[d];
    }
    out.keys[l] = k_rot;
    out.values[l] = v;
  }

  out.hidden = Mat(nq, h);
  for (int i = 0; i < nq; ++i) rmsnorm(x.row(i), P.ln_f, h, out.hidden.row(i), &rms[i]);
  out.logits = Mat(nq, cfg.vocab_size);
  for (int i = 0; i < nq; ++i) matvec(P.unembed, out.hidden.row(i), out.logits.row(i));
  return out;
}

void softmax_row(const double* logits, int n, double* out) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= z;
}

double log_sum_exp(const double* logits, int n) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(logits[i] - mx);
  return mx + std::log(z);
}

}  // namespace blockattn
