#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "depthprobe/gemm.hpp"
#include "depthprobe/numerics.hpp"
#include "depthprobe/rng.hpp"
#include "depthprobe/vocab.hpp"

// Pre-norm transformer with full residual-stream tracing. The same forward
// path serves plain inference, layer-skip interventions and training (via an
// optional activation cache), so traced states are bit-identical across all
// three uses.

namespace depthprobe {

enum class Objective { masked, autoregressive };

inline const char* objective_name(Objective o) {
  return o == Objective::masked ? "masked" : "autoregressive";
}

inline Objective objective_from_name(const std::string& name) {
  if (name == "masked") return Objective::masked;
  if (name == "autoregressive" || name == "ar") return Objective::autoregressive;
  throw ValueError("unknown objective: " + name);
}

struct ModelConfig {
  int num_layers = 8;
  int d_model = 64;
  int num_heads = 4;
  int d_ff = 256;
  int vocab_size = kMinVocab;
  int max_seq_len = 128;
  Objective objective = Objective::masked;

  int head_dim() const { return d_model / num_heads; }

  void validate() const {
    if (num_layers < 1) throw ValueError("config: num_layers must be >= 1");
    if (d_model < 1 || num_heads < 1 || d_ff < 1) throw ValueError("config: bad dimensions");
    if (d_model % num_heads != 0) throw ValueError("config: d_model not divisible by num_heads");
    if (vocab_size < kMinVocab) throw ValueError("config: vocab_size must be >= 25");
    if (max_seq_len < 1) throw ValueError("config: max_seq_len must be >= 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr float kMaskedScore = -1e30f;

// ---------------------------------------------------------------------------
// Activation: silu(x) = x * sigmoid(x). The float path uses a polynomial exp
// (Cephes coefficients) that auto-vectorizes; the double path uses std::exp,
// which the finite-difference gradient suite relies on.

namespace activation {

// Core of exp(x) for pre-clamped x: Cephes-style range reduction plus a
// degree-5 polynomial, reconstructed through the exponent bits. Branch-free.
inline float fast_expf_core(float x) {
  const float z = x * 1.44269504089f;
  // branchless round-to-nearest: |z| < 2^22 here, so the magic-constant
  // trick is exact
  const float magic = 12582912.0f;  // 2^23 + 2^22
  const float n = (z + magic) - magic;
  float r = x - n * 0.693359375f;
  r -= n * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float y = (p * r) * r + r + 1.0f;
  const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  return y * std::bit_cast<float>(bits);
}

inline float fast_expf(float x) {
  x = std::min(80.0f, std::max(-80.0f, x));
  return fast_expf_core(x);
}

template <typename S>
inline S exp_fn(S x) {
  if constexpr (std::is_same_v<S, float>)
    return fast_expf(x);
  else
    return std::exp(std::min(S(700), std::max(S(-700), x)));
}

// In-place exp over a buffer. The clamps run as separate conditional-store
// loops because that is the only form this compiler if-converts; each of the
// three passes then vectorizes, and results match fast_expf bit for bit.
template <typename S>
inline void exp_inplace(S* __restrict r, int n) {
  if constexpr (std::is_same_v<S, float>) {
    for (int j = 0; j < n; ++j) r[j] = r[j] > 80.0f ? 80.0f : r[j];
    for (int j = 0; j < n; ++j) r[j] = r[j] < -80.0f ? -80.0f : r[j];
    for (int j = 0; j < n; ++j) r[j] = fast_expf_core(r[j]);
  } else {
    for (int j = 0; j < n; ++j) r[j] = exp_fn<S>(r[j]);
  }
}

template <typename S>
inline S sigmoid(S x) {
  return S(1) / (S(1) + exp_fn<S>(-x));
}

template <typename S>
inline S silu(S x, S sig) {
  return x * sig;
}

template <typename S>
inline S silu_grad(S x, S sig) {
  return sig * (S(1) + x * (S(1) - sig));
}

// sig = sigmoid(u), act = u * sig, elementwise over whole buffers.
template <typename S>
inline void silu_forward(const Mat<S>& u, Mat<S>& sig, Mat<S>& act) {
  const size_t n = u.size();
  S* __restrict sg = sig.data();
  S* __restrict out = act.data();
  const S* __restrict uv = u.data();
  for (size_t i = 0; i < n; ++i) sg[i] = -uv[i];
  exp_inplace(sg, static_cast<int>(n));
  for (size_t i = 0; i < n; ++i) sg[i] = S(1) / (S(1) + sg[i]);
  for (size_t i = 0; i < n; ++i) out[i] = uv[i] * sg[i];
}

}  // namespace activation

// ---------------------------------------------------------------------------
// Parameters

template <typename S>
struct LayerParams {
  Mat<S> ln1_gain, ln1_bias;
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<S> ln2_gain, ln2_bias;
  Mat<S> w_in, b_in, w_out, b_out;
};

template <typename S>
struct ParamSet {
  Mat<S> tok_emb, pos_emb;
  std::vector<LayerParams<S>> layers;
  Mat<S> final_gain, final_bias;
  Mat<S> unembed;

  static ParamSet shaped(const ModelConfig& cfg) {
    cfg.validate();
    ParamSet p;
    p.tok_emb = Mat<S>(cfg.vocab_size, cfg.d_model);
    p.pos_emb = Mat<S>(cfg.max_seq_len, cfg.d_model);
    p.layers.resize(static_cast<size_t>(cfg.num_layers));
    for (auto& l : p.layers) {
      l.ln1_gain = Mat<S>(1, cfg.d_model);
      l.ln1_bias = Mat<S>(1, cfg.d_model);
      l.wq = Mat<S>(cfg.d_model, cfg.d_model);
      l.bq = Mat<S>(1, cfg.d_model);
      l.wk = Mat<S>(cfg.d_model, cfg.d_model);
      l.bk = Mat<S>(1, cfg.d_model);
      l.wv = Mat<S>(cfg.d_model, cfg.d_model);
      l.bv = Mat<S>(1, cfg.d_model);
      l.wo = Mat<S>(cfg.d_model, cfg.d_model);
      l.bo = Mat<S>(1, cfg.d_model);
      l.ln2_gain = Mat<S>(1, cfg.d_model);
      l.ln2_bias = Mat<S>(1, cfg.d_model);
      l.w_in = Mat<S>(cfg.d_model, cfg.d_ff);
      l.b_in = Mat<S>(1, cfg.d_ff);
      l.w_out = Mat<S>(cfg.d_ff, cfg.d_model);
      l.b_out = Mat<S>(1, cfg.d_model);
    }
    p.final_gain = Mat<S>(1, cfg.d_model);
    p.final_bias = Mat<S>(1, cfg.d_model);
    p.unembed = Mat<S>(cfg.d_model, cfg.vocab_size);
    return p;
  }
};

// Visits every tensor in a fixed order; this order defines the .dpw layout,
// the optimizer state layout and the weight-init stream.
template <typename S, typename Fn>
void for_each_tensor(ParamSet<S>& p, Fn&& fn) {
  fn("tok_emb", p.tok_emb);
  fn("pos_emb", p.pos_emb);
  for (size_t i = 0; i < p.layers.size(); ++i) {
    const std::string prefix = "layers." + std::to_string(i) + ".";
    auto& l = p.layers[i];
    fn(prefix + "ln1.gain", l.ln1_gain);
    fn(prefix + "ln1.bias", l.ln1_bias);
    fn(prefix + "attn.wq", l.wq);
    fn(prefix + "attn.bq", l.bq);
    fn(prefix + "attn.wk", l.wk);
    fn(prefix + "attn.bk", l.bk);
    fn(prefix + "attn.wv", l.wv);
    fn(prefix + "attn.bv", l.bv);
    fn(prefix + "attn.wo", l.wo);
    fn(prefix + "attn.bo", l.bo);
    fn(prefix + "ln2.gain", l.ln2_gain);
    fn(prefix + "ln2.bias", l.ln2_bias);
    fn(prefix + "mlp.w_in", l.w_in);
    fn(prefix + "mlp.b_in", l.b_in);
    fn(prefix + "mlp.w_out", l.w_out);
    fn(prefix + "mlp.b_out", l.b_out);
  }
  fn("final_norm.gain", p.final_gain);
  fn("final_norm.bias", p.final_bias);
  fn("unembed", p.unembed);
}

template <typename S, typename Fn>
void for_each_tensor(const ParamSet<S>& p, Fn&& fn) {
  for_each_tensor(const_cast<ParamSet<S>&>(p),
                  [&](const std::string& name, Mat<S>& m) { fn(name, std::as_const(m)); });
}

template <typename S>
struct ModelT {
  ModelConfig config;
  ParamSet<S> params;
};

using Model = ModelT<float>;

template <typename To, typename From>
ModelT<To> cast_model(const ModelT<From>& m) {
  ModelT<To> out;
  out.config = m.config;
  out.params = ParamSet<To>::shaped(m.config);
  std::vector<const Mat<From>*> src;
  std::vector<Mat<To>*> dst;
  for_each_tensor(m.params, [&](const std::string&, const Mat<From>& t) { src.push_back(&t); });
  for_each_tensor(out.params, [&](const std::string&, Mat<To>& t) { dst.push_back(&t); });
  for (size_t i = 0; i < src.size(); ++i)
    for (size_t j = 0; j < src[i]->size(); ++j)
      dst[i]->data()[j] = static_cast<To>(src[i]->data()[j]);
  return out;
}

// Normal(0, 0.02) weights, unit norm gains, zero unembedding so the initial
// output distribution is exactly uniform (init loss == ln V).
inline Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m;
  m.config = cfg;
  m.params = ParamSet<float>::shaped(cfg);
  Rng rng(seed);
  auto fill_normal = [&](Mat<float>& t) {
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(0.02 * rng.normal());
  };
  for_each_tensor(m.params, [&](const std::string& name, Mat<float>& t) {
    if (name.ends_with("gain")) {
      t.fill(1.0f);
    } else if (name.ends_with("bias") || name == "unembed" || name.ends_with(".bq") ||
               name.ends_with(".bk") || name.ends_with(".bv") || name.ends_with(".bo") ||
               name.ends_with(".b_in") || name.ends_with(".b_out")) {
      t.fill(0.0f);
    } else {
      fill_normal(t);
    }
  });
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass

template <typename S>
struct ResidualTraceT {
  std::vector<Mat<S>> states;        // h_0 .. h_L, each T x d
  std::vector<Mat<S>> attn_updates;  // effective attention update per block
  std::vector<Mat<S>> mlp_updates;   // effective MLP update per block
  Mat<S> logits;                     // T x V, readout of h_L
  std::vector<int> token_ids;
  std::vector<int> masked_positions;      // metadata, filled by callers
  std::vector<int> intervened_positions;  // metadata, filled by skipped_forward
};

using ResidualTrace = ResidualTraceT<float>;

// Suppresses block `source_layer`'s additive update at the given positions:
// h_{s+1}[t] = h_s[t] for intervened t, everything else runs normally.
struct SkipDirective {
  int source_layer = 0;
  std::span<const int> positions;
};

template <typename S>
struct LayerActivations {
  Mat<S> anorm, q, k, v, ctx, hmid, mnorm, u, sig;
  std::vector<Mat<S>> probs;  // per head, T x T
  std::vector<S> ln1_mu, ln1_istd, ln2_mu, ln2_istd;
};

template <typename S>
struct ForwardCache {
  std::vector<Mat<S>> x;  // block inputs h_0 .. h_{L-1} plus h_L at the back
  std::vector<LayerActivations<S>> layers;
  Mat<S> fnorm;
  std::vector<S> lnf_mu, lnf_istd;
  Mat<S> logits;
};

namespace detail {

template <typename S>
inline void layernorm_row(const S* x, int d, const S* gain, const S* bias, S* out,
                          S* mu_out, S* istd_out) {
  double mean = 0.0;
  for (int j = 0; j < d; ++j) mean += static_cast<double>(x[j]);
  mean /= d;
  double var = 0.0;
  for (int j = 0; j < d; ++j) {
    const double c = static_cast<double>(x[j]) - mean;
    var += c * c;
  }
  var /= d;
  const S mu = static_cast<S>(mean);
  const S istd = static_cast<S>(1.0 / std::sqrt(var + kLayerNormEps));
  for (int j = 0; j < d; ++j) out[j] = gain[j] * ((x[j] - mu) * istd) + bias[j];
  if (mu_out) *mu_out = mu;
  if (istd_out) *istd_out = istd;
}

template <typename S>
inline void layernorm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, Mat<S>& out,
                      std::vector<S>* mu, std::vector<S>* istd) {
  if (mu) mu->resize(static_cast<size_t>(x.rows()));
  if (istd) istd->resize(static_cast<size_t>(x.rows()));
  for (int t = 0; t < x.rows(); ++t)
    layernorm_row(x.row(t), x.cols(), gain.row(0), bias.row(0), out.row(t),
                  mu ? &(*mu)[static_cast<size_t>(t)] : nullptr,
                  istd ? &(*istd)[static_cast<size_t>(t)] : nullptr);
}

template <typename S>
inline void add_row_bias(Mat<S>& m, const Mat<S>& bias) {
  for (int i = 0; i < m.rows(); ++i) {
    S* r = m.row(i);
    const S* b = bias.row(0);
    for (int j = 0; j < m.cols(); ++j) r[j] += b[j];
  }
}

template <typename S>
inline void linear(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b, Mat<S>& out) {
  gemm_nn(x, w, out);
  add_row_bias(out, b);
}

// In-place softmax over each row; masked entries carry kMaskedScore and end
// up with negligible (but deterministic) mass. Reductions run over eight
// fixed lanes, so per-row results never depend on anything but the row.
template <typename S>
inline void softmax_rows(Mat<S>& scores) {
  const int n = scores.cols();
  for (int i = 0; i < scores.rows(); ++i) {
    S* __restrict r = scores.row(i);
    S max_lane[8] = {r[0], r[0], r[0], r[0], r[0], r[0], r[0], r[0]};
    int j = 0;
    for (; j + 8 <= n; j += 8)
      for (int l = 0; l < 8; ++l) max_lane[l] = std::max(max_lane[l], r[j + l]);
    S max_v = max_lane[0];
    for (int l = 1; l < 8; ++l) max_v = std::max(max_v, max_lane[l]);
    for (; j < n; ++j) max_v = std::max(max_v, r[j]);
    for (j = 0; j < n; ++j) r[j] -= max_v;
    activation::exp_inplace(r, n);
    S lane[8] = {};
    for (j = 0; j + 8 <= n; j += 8)
      for (int l = 0; l < 8; ++l) lane[l] += r[j + l];
    S total = ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
              ((lane[4] + lane[5]) + (lane[6] + lane[7]));
    for (; j < n; ++j) total += r[j];
    const S inv = S(1) / total;
    for (j = 0; j < n; ++j) r[j] *= inv;
  }
}

template <typename S>
inline void copy_head(const Mat<S>& src, int head, int head_dim, Mat<S>& dst) {
  for (int t = 0; t < src.rows(); ++t)
    std::memcpy(dst.row(t), src.row(t) + head * head_dim,
                static_cast<size_t>(head_dim) * sizeof(S));
}

template <typename S>
inline void paste_head(const Mat<S>& src, int head, int head_dim, Mat<S>& dst) {
  for (int t = 0; t < src.rows(); ++t)
    std::memcpy(dst.row(t) + head * head_dim, src.row(t),
                static_cast<size_t>(head_dim) * sizeof(S));
}

// Transposed head views (head_dim x T). Keeping the short axis as rows turns
// every per-head matmul into an n = T product, which is the kernel's wide
// fast path.
template <typename S>
inline void copy_head_t(const Mat<S>& src, int head, int head_dim, Mat<S>& dst) {
  for (int t = 0; t < src.rows(); ++t) {
    const S* s = src.row(t) + head * head_dim;
    for (int c = 0; c < head_dim; ++c) dst.at(c, t) = s[c];
  }
}

template <typename S>
inline void paste_head_t(const Mat<S>& src, int head, int head_dim, Mat<S>& dst) {
  for (int t = 0; t < dst.rows(); ++t) {
    S* d = dst.row(t) + head * head_dim;
    for (int c = 0; c < head_dim; ++c) d[c] = src.at(c, t);
  }
}

}  // namespace detail

// Final norm + unembedding applied to one hidden row. Every logit in the
// library flows through this function, so layer-L lens readouts and trace
// logits agree bit-exactly.
template <typename S>
inline void readout_row(const ModelT<S>& m, const S* hidden, S* logits,
                        S* fnorm_out = nullptr, S* mu_out = nullptr, S* istd_out = nullptr) {
  const int d = m.config.d_model;
  const int v = m.config.vocab_size;
  thread_local std::vector<S> fnorm;
  fnorm.resize(static_cast<size_t>(d));
  detail::layernorm_row(hidden, d, m.params.final_gain.row(0), m.params.final_bias.row(0),
                        fnorm.data(), mu_out, istd_out);
  for (int j = 0; j < v; ++j) logits[j] = S(0);
  const Mat<S>& u = m.params.unembed;
  for (int j = 0; j < d; ++j) {
    const S f = fnorm[static_cast<size_t>(j)];
    const S* urow = u.row(j);
    for (int k = 0; k < v; ++k) logits[k] += f * urow[k];
  }
  if (fnorm_out) std::memcpy(fnorm_out, fnorm.data(), static_cast<size_t>(d) * sizeof(S));
}

template <typename S>
inline std::vector<S> readout(const ModelT<S>& m, std::span<const S> hidden) {
  if (static_cast<int>(hidden.size()) != m.config.d_model)
    throw ValueError("readout: hidden size != d_model");
  std::vector<S> logits(static_cast<size_t>(m.config.vocab_size));
  readout_row(m, hidden.data(), logits.data());
  return logits;
}

template <typename S>
void forward_impl(const ModelT<S>& m, std::span<const int> tokens, ResidualTraceT<S>* trace,
                  ForwardCache<S>* cache, const SkipDirective* skip) {
  const ModelConfig& cfg = m.config;
  const int t_len = static_cast<int>(tokens.size());
  if (t_len == 0) throw ValueError("forward: empty prompt");
  if (t_len > cfg.max_seq_len) throw ValueError("forward: prompt longer than max_seq_len");
  for (int tok : tokens)
    if (tok < 0 || tok >= cfg.vocab_size)
      throw ValueError("forward: token id " + std::to_string(tok) + " out of range");
  if (skip) {
    if (skip->source_layer < 0 || skip->source_layer >= cfg.num_layers)
      throw ValueError("forward: skip source layer out of range");
    for (int p : skip->positions)
      if (p < 0 || p >= t_len) throw ValueError("forward: skip position out of range");
  }

  const int d = cfg.d_model;
  const int heads = cfg.num_heads;
  const int hd = cfg.head_dim();
  const bool causal = cfg.objective == Objective::autoregressive;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

  Mat<S> h(t_len, d);
  for (int t = 0; t < t_len; ++t) {
    const S* te = m.params.tok_emb.row(tokens[static_cast<size_t>(t)]);
    const S* pe = m.params.pos_emb.row(t);
    S* r = h.row(t);
    for (int j = 0; j < d; ++j) r[j] = te[j] + pe[j];
  }

  if (trace) {
    trace->token_ids.assign(tokens.begin(), tokens.end());
    trace->states.clear();
    trace->attn_updates.clear();
    trace->mlp_updates.clear();
    trace->states.reserve(static_cast<size_t>(cfg.num_layers) + 1);
    trace->states.push_back(h);
  }
  if (cache) {
    cache->x.clear();
    cache->layers.resize(static_cast<size_t>(cfg.num_layers));
  }

  thread_local Mat<S> qh, kh, vht, scores, ctxt;
  for (int l = 0; l < cfg.num_layers; ++l) {
    const LayerParams<S>& lp = m.params.layers[static_cast<size_t>(l)];
    LayerActivations<S> local;
    LayerActivations<S>& act = cache ? cache->layers[static_cast<size_t>(l)] : local;
    if (cache) cache->x.push_back(h);

    act.anorm.reshape(t_len, d);
    detail::layernorm(h, lp.ln1_gain, lp.ln1_bias, act.anorm, cache ? &act.ln1_mu : nullptr,
                      cache ? &act.ln1_istd : nullptr);
    act.q.reshape(t_len, d);
    act.k.reshape(t_len, d);
    act.v.reshape(t_len, d);
    detail::linear(act.anorm, lp.wq, lp.bq, act.q);
    detail::linear(act.anorm, lp.wk, lp.bk, act.k);
    detail::linear(act.anorm, lp.wv, lp.bv, act.v);

    act.ctx.reshape(t_len, d);
    if (cache) act.probs.resize(static_cast<size_t>(heads));
    qh.reshape(t_len, hd);
    kh.reshape(t_len, hd);
    vht.reshape(hd, t_len);
    scores.reshape(t_len, t_len);
    ctxt.reshape(hd, t_len);
    for (int head = 0; head < heads; ++head) {
      detail::copy_head(act.q, head, hd, qh);
      detail::copy_head(act.k, head, hd, kh);
      detail::copy_head_t(act.v, head, hd, vht);
      gemm_nt(qh, kh, scores);
      for (size_t i = 0; i < scores.size(); ++i) scores.data()[i] *= scale;
      if (causal)
        for (int i = 0; i < t_len; ++i)
          for (int j = i + 1; j < t_len; ++j) scores.at(i, j) = static_cast<S>(kMaskedScore);
      detail::softmax_rows(scores);
      if (cache) act.probs[static_cast<size_t>(head)] = scores;
      // ctx^T = V^T P^T: same per-element accumulation order as P V, but the
      // product runs on the kernel's wide path
      gemm_nt(vht, scores, ctxt);
      detail::paste_head_t(ctxt, head, hd, act.ctx);
    }

    Mat<S> attn(t_len, d);
    detail::linear(act.ctx, lp.wo, lp.bo, attn);

    act.hmid.reshape(t_len, d);
    for (size_t i = 0; i < act.hmid.size(); ++i)
      act.hmid.data()[i] = h.data()[i] + attn.data()[i];

    act.mnorm.reshape(t_len, d);
    detail::layernorm(act.hmid, lp.ln2_gain, lp.ln2_bias, act.mnorm,
                      cache ? &act.ln2_mu : nullptr, cache ? &act.ln2_istd : nullptr);
    act.u.reshape(t_len, cfg.d_ff);
    detail::linear(act.mnorm, lp.w_in, lp.b_in, act.u);
    act.sig.reshape(t_len, cfg.d_ff);
    Mat<S> activated(t_len, cfg.d_ff);
    activation::silu_forward(act.u, act.sig, activated);
    Mat<S> mlp(t_len, d);
    detail::linear(activated, lp.w_out, lp.b_out, mlp);

    Mat<S> next(t_len, d);
    for (size_t i = 0; i < next.size(); ++i)
      next.data()[i] = act.hmid.data()[i] + mlp.data()[i];

    if (skip && skip->source_layer == l) {
      for (int p : skip->positions) {
        std::memcpy(next.row(p), h.row(p), static_cast<size_t>(d) * sizeof(S));
        std::memset(attn.row(p), 0, static_cast<size_t>(d) * sizeof(S));
        std::memset(mlp.row(p), 0, static_cast<size_t>(d) * sizeof(S));
      }
    }

    if (trace) {
      trace->attn_updates.push_back(std::move(attn));
      trace->mlp_updates.push_back(std::move(mlp));
      trace->states.push_back(next);
    }
    h = std::move(next);
  }

  Mat<S> logits(t_len, cfg.vocab_size);
  if (cache) {
    cache->x.push_back(h);
    cache->fnorm = Mat<S>(t_len, d);
    cache->lnf_mu.resize(static_cast<size_t>(t_len));
    cache->lnf_istd.resize(static_cast<size_t>(t_len));
    for (int t = 0; t < t_len; ++t)
      readout_row(m, h.row(t), logits.row(t), cache->fnorm.row(t),
                  &cache->lnf_mu[static_cast<size_t>(t)],
                  &cache->lnf_istd[static_cast<size_t>(t)]);
    cache->logits = logits;
  } else {
    for (int t = 0; t < t_len; ++t) readout_row(m, h.row(t), logits.row(t));
  }
  if (trace) trace->logits = std::move(logits);
}

template <typename S>
ResidualTraceT<S> forward(const ModelT<S>& m, std::span<const int> tokens) {
  ResidualTraceT<S> trace;
  forward_impl<S>(m, tokens, &trace, nullptr, nullptr);
  return trace;
}

template <typename S>
ResidualTraceT<S> skipped_forward(const ModelT<S>& m, std::span<const int> tokens,
                                  const SkipDirective& skip) {
  ResidualTraceT<S> trace;
  forward_impl<S>(m, tokens, &trace, nullptr, &skip);
  trace.intervened_positions.assign(skip.positions.begin(), skip.positions.end());
  return trace;
}

// ---------------------------------------------------------------------------
// Prompt masking

struct MaskedPrompt {
  std::vector<int> tokens;
  std::vector<int> masked_positions;  // ascending
};

// Replaces ceil(rate * T) positions with MASK, chosen uniformly without
// replacement. The tiny epsilon keeps ceil() honest when rate * T lands on
// an integer that double arithmetic overshoots (e.g. 0.15 * 100).
inline MaskedPrompt mask_prompt(std::span<const int> tokens, double rate, Rng& rng) {
  const int t_len = static_cast<int>(tokens.size());
  if (t_len < 2) throw ValueError("mask_prompt: prompt shorter than 2 tokens");
  if (!(rate > 0.0 && rate < 1.0)) throw ValueError("mask_prompt: rate must be in (0, 1)");
  const int count = static_cast<int>(std::ceil(rate * t_len - 1e-9));
  MaskedPrompt out;
  out.tokens.assign(tokens.begin(), tokens.end());
  out.masked_positions = rng.sample_without_replacement(t_len, count);
  for (int p : out.masked_positions) out.tokens[static_cast<size_t>(p)] = kMaskToken;
  return out;
}

}  // namespace depthprobe
