#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "depthprobe/model.hpp"
#include "depthprobe/parallel.hpp"
#include "depthprobe/rng.hpp"
#include "depthprobe/synthgen.hpp"

// Desk-scale training with hand-derived reverse-mode gradients. Gradients
// accumulate per sequence into separate buffers and reduce in sequence
// order, so results are byte-identical for any worker count.

namespace depthprobe {

struct TrainConfig {
  Objective objective = Objective::masked;
  double mask_rate = 0.15;
  int steps = 3000;
  int batch_size = 32;
  int seq_len = 64;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (!(mask_rate > 0.0 && mask_rate < 1.0))
      throw ValueError("train config: mask_rate must be in (0, 1)");
    if (steps < 0) throw ValueError("train config: steps must be >= 0");
    if (batch_size < 1) throw ValueError("train config: batch_size must be >= 1");
    if (seq_len < 2) throw ValueError("train config: seq_len must be >= 2");
    if (!(learning_rate > 0.0)) throw ValueError("train config: learning_rate must be positive");
  }
};

// One training example: token sequence plus (position, target token) pairs.
struct Example {
  std::vector<int> tokens;
  std::vector<int> target_positions;
  std::vector<int> target_tokens;
};

using Batch = std::vector<Example>;

// Deterministic batch synthesis from the HMM generator. Masked examples mask
// mask_rate of positions and predict the original tokens there; AR examples
// are BOS-prefixed and predict every next token (BOS itself is never a
// target).
inline Batch make_batch(const SeqGenerator& gen, const TrainConfig& cfg, std::uint64_t batch_seed) {
  Batch batch(static_cast<size_t>(cfg.batch_size));
  for (int i = 0; i < cfg.batch_size; ++i) {
    Rng rng(derive_seed(batch_seed, {static_cast<std::uint64_t>(i)}));
    Example& ex = batch[static_cast<size_t>(i)];
    if (cfg.objective == Objective::masked) {
      const std::string seq = sample_sequence(gen, cfg.seq_len, rng);
      const auto enc = encode_sequence(seq, /*add_bos=*/false);
      const auto masked = mask_prompt(enc.tokens, cfg.mask_rate, rng);
      ex.tokens = masked.tokens;
      for (int p : masked.masked_positions) {
        ex.target_positions.push_back(p);
        ex.target_tokens.push_back(enc.tokens[static_cast<size_t>(p)]);
      }
    } else {
      const std::string seq = sample_sequence(gen, cfg.seq_len - 1, rng);
      const auto enc = encode_sequence(seq, /*add_bos=*/true);
      ex.tokens = enc.tokens;
      for (int t = 0; t + 1 < static_cast<int>(ex.tokens.size()); ++t) {
        ex.target_positions.push_back(t);
        ex.target_tokens.push_back(ex.tokens[static_cast<size_t>(t + 1)]);
      }
    }
  }
  return batch;
}

namespace detail {

template <typename S>
void zero_params(ParamSet<S>& p) {
  for_each_tensor(p, [](const std::string&, Mat<S>& t) { t.fill(S(0)); });
}

template <typename S>
void add_params(ParamSet<S>& into, const ParamSet<S>& from) {
  std::vector<Mat<S>*> dst;
  std::vector<const Mat<S>*> src;
  for_each_tensor(into, [&](const std::string&, Mat<S>& t) { dst.push_back(&t); });
  for_each_tensor(from, [&](const std::string&, const Mat<S>& t) { src.push_back(&t); });
  for (size_t i = 0; i < dst.size(); ++i)
    for (size_t j = 0; j < dst[i]->size(); ++j) dst[i]->data()[j] += src[i]->data()[j];
}

template <typename S>
void add_col_sums(const Mat<S>& m, Mat<S>& bias_grad) {
  for (int i = 0; i < m.rows(); ++i) {
    const S* r = m.row(i);
    S* b = bias_grad.row(0);
    for (int j = 0; j < m.cols(); ++j) b[j] += r[j];
  }
}

// LayerNorm backward for one normalized block. Adds parameter gradients and
// writes/accumulates input gradients.
template <typename S>
void layernorm_backward(const Mat<S>& dout, const Mat<S>& x, const std::vector<S>& mu,
                        const std::vector<S>& istd, const Mat<S>& gain, Mat<S>& dgain,
                        Mat<S>& dbias, Mat<S>& dx, bool accumulate_dx) {
  const int d = x.cols();
  for (int t = 0; t < x.rows(); ++t) {
    const S* xr = x.row(t);
    const S* dr = dout.row(t);
    const S* g = gain.row(0);
    S* dgr = dgain.row(0);
    S* dbr = dbias.row(0);
    S* dxr = dx.row(t);
    const S m = mu[static_cast<size_t>(t)];
    const S is = istd[static_cast<size_t>(t)];
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      const S xhat = (xr[j] - m) * is;
      const S dxhat = dr[j] * g[j];
      dgr[j] += dr[j] * xhat;
      dbr[j] += dr[j];
      mean_dxhat += static_cast<double>(dxhat);
      mean_dxhat_xhat += static_cast<double>(dxhat) * static_cast<double>(xhat);
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    for (int j = 0; j < d; ++j) {
      const S xhat = (xr[j] - m) * is;
      const S dxhat = dr[j] * g[j];
      const S dxv = is * (dxhat - static_cast<S>(mean_dxhat) - xhat * static_cast<S>(mean_dxhat_xhat));
      if (accumulate_dx)
        dxr[j] += dxv;
      else
        dxr[j] = dxv;
    }
  }
}

template <typename S>
struct BackwardScratch {
  Mat<S> dlogits, dfnorm, dh, dact, du, dmnorm, dhmid;
  Mat<S> dctx, dq, dk, dv, danorm;
  Mat<S> qht, kht, vh, dctxh, dctxht, dp, ds, dqht, dkht, dvht;
  Mat<S> activated;
};

// Reverse pass for one example; adds this example's contribution to `grads`.
// `inv_total_targets` carries the batch-level 1/N loss normalization.
template <typename S>
void backward_example(const ModelT<S>& model, const Example& ex, const ForwardCache<S>& cache,
                      double inv_total_targets, ParamSet<S>& grads, BackwardScratch<S>& ws) {
  const ModelConfig& cfg = model.config;
  const int t_len = static_cast<int>(ex.tokens.size());
  const int d = cfg.d_model;
  const int heads = cfg.num_heads;
  const int hd = cfg.head_dim();
  const int vocab = cfg.vocab_size;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

  // d(loss)/d(logits) = (softmax - onehot) / N at target rows, 0 elsewhere
  ws.dlogits.reshape(t_len, vocab);
  ws.dlogits.fill(S(0));
  for (size_t i = 0; i < ex.target_positions.size(); ++i) {
    const int t = ex.target_positions[i];
    const int y = ex.target_tokens[i];
    const S* logit_row = cache.logits.row(t);
    double max_l = logit_row[0];
    for (int v = 1; v < vocab; ++v) max_l = std::max(max_l, static_cast<double>(logit_row[v]));
    double total = 0.0;
    for (int v = 0; v < vocab; ++v) total += std::exp(static_cast<double>(logit_row[v]) - max_l);
    S* out = ws.dlogits.row(t);
    for (int v = 0; v < vocab; ++v) {
      const double p = std::exp(static_cast<double>(logit_row[v]) - max_l) / total;
      out[v] = static_cast<S>((p - (v == y ? 1.0 : 0.0)) * inv_total_targets);
    }
  }

  // readout: logits = fnorm * unembed
  gemm_tn(cache.fnorm, ws.dlogits, grads.unembed, /*accumulate=*/true);
  ws.dfnorm.reshape(t_len, d);
  gemm_nt(ws.dlogits, model.params.unembed, ws.dfnorm);

  ws.dh.reshape(t_len, d);
  layernorm_backward(ws.dfnorm, cache.x.back(), cache.lnf_mu, cache.lnf_istd,
                     model.params.final_gain, grads.final_gain, grads.final_bias, ws.dh,
                     /*accumulate_dx=*/false);

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const LayerParams<S>& lp = model.params.layers[static_cast<size_t>(l)];
    LayerParams<S>& lg = grads.layers[static_cast<size_t>(l)];
    const LayerActivations<S>& act = cache.layers[static_cast<size_t>(l)];
    const Mat<S>& x = cache.x[static_cast<size_t>(l)];

    // next = hmid + mlp_out; mlp_out = silu(u) * w_out + b_out
    ws.activated.reshape(t_len, cfg.d_ff);
    for (size_t i = 0; i < ws.activated.size(); ++i)
      ws.activated.data()[i] = activation::silu(act.u.data()[i], act.sig.data()[i]);
    gemm_tn(ws.activated, ws.dh, lg.w_out, true);
    add_col_sums(ws.dh, lg.b_out);
    ws.dact.reshape(t_len, cfg.d_ff);
    gemm_nt(ws.dh, lp.w_out, ws.dact);
    ws.du.reshape(t_len, cfg.d_ff);
    for (size_t i = 0; i < ws.du.size(); ++i)
      ws.du.data()[i] =
          ws.dact.data()[i] * activation::silu_grad(act.u.data()[i], act.sig.data()[i]);
    gemm_tn(act.mnorm, ws.du, lg.w_in, true);
    add_col_sums(ws.du, lg.b_in);
    ws.dmnorm.reshape(t_len, d);
    gemm_nt(ws.du, lp.w_in, ws.dmnorm);

    // dh currently holds d(next); hmid receives it both directly and through
    // the LN2 path.
    ws.dhmid.reshape(t_len, d);
    for (size_t i = 0; i < ws.dhmid.size(); ++i) ws.dhmid.data()[i] = ws.dh.data()[i];
    layernorm_backward(ws.dmnorm, act.hmid, act.ln2_mu, act.ln2_istd, lp.ln2_gain, lg.ln2_gain,
                       lg.ln2_bias, ws.dhmid, /*accumulate_dx=*/true);

    // hmid = x + attn_out; attn_out = ctx * wo + bo
    gemm_tn(act.ctx, ws.dhmid, lg.wo, true);
    add_col_sums(ws.dhmid, lg.bo);
    ws.dctx.reshape(t_len, d);
    gemm_nt(ws.dhmid, lp.wo, ws.dctx);

    ws.dq.reshape(t_len, d);
    ws.dk.reshape(t_len, d);
    ws.dv.reshape(t_len, d);
    for (int head = 0; head < heads; ++head) {
      const Mat<S>& probs = act.probs[static_cast<size_t>(head)];
      ws.qht.reshape(hd, t_len);
      ws.kht.reshape(hd, t_len);
      ws.vh.reshape(t_len, hd);
      copy_head_t(act.q, head, hd, ws.qht);
      copy_head_t(act.k, head, hd, ws.kht);
      copy_head(act.v, head, hd, ws.vh);
      ws.dctxh.reshape(t_len, hd);
      copy_head(ws.dctx, head, hd, ws.dctxh);
      ws.dctxht.reshape(hd, t_len);
      copy_head_t(ws.dctx, head, hd, ws.dctxht);

      ws.dp.reshape(t_len, t_len);
      gemm_nt(ws.dctxh, ws.vh, ws.dp);
      // dV^T = dCtx^T P
      ws.dvht.reshape(hd, t_len);
      gemm_nn(ws.dctxht, probs, ws.dvht);

      // softmax backward per row, then undo the 1/sqrt(hd) scaling
      ws.ds.reshape(t_len, t_len);
      for (int i = 0; i < t_len; ++i) {
        const S* pr = probs.row(i);
        const S* dpr = ws.dp.row(i);
        S* dsr = ws.ds.row(i);
        double dot = 0.0;
        for (int j = 0; j < t_len; ++j) dot += static_cast<double>(dpr[j]) * static_cast<double>(pr[j]);
        for (int j = 0; j < t_len; ++j)
          dsr[j] = pr[j] * (dpr[j] - static_cast<S>(dot)) * scale;
      }

      // dQ^T = K^T dS^T, dK^T = Q^T dS
      ws.dqht.reshape(hd, t_len);
      gemm_nt(ws.kht, ws.ds, ws.dqht);
      ws.dkht.reshape(hd, t_len);
      gemm_nn(ws.qht, ws.ds, ws.dkht);

      paste_head_t(ws.dqht, head, hd, ws.dq);
      paste_head_t(ws.dkht, head, hd, ws.dk);
      paste_head_t(ws.dvht, head, hd, ws.dv);
    }

    gemm_tn(act.anorm, ws.dq, lg.wq, true);
    add_col_sums(ws.dq, lg.bq);
    gemm_tn(act.anorm, ws.dk, lg.wk, true);
    add_col_sums(ws.dk, lg.bk);
    gemm_tn(act.anorm, ws.dv, lg.wv, true);
    add_col_sums(ws.dv, lg.bv);

    ws.danorm.reshape(t_len, d);
    gemm_nt(ws.dq, lp.wq, ws.danorm);
    gemm_nt(ws.dk, lp.wk, ws.danorm, true);
    gemm_nt(ws.dv, lp.wv, ws.danorm, true);

    layernorm_backward(ws.danorm, x, act.ln1_mu, act.ln1_istd, lp.ln1_gain, lg.ln1_gain,
                       lg.ln1_bias, ws.dhmid, /*accumulate_dx=*/true);
    ws.dh = ws.dhmid;  // d(x) for the previous block
  }

  for (int t = 0; t < t_len; ++t) {
    const S* src = ws.dh.row(t);
    S* tok_row = grads.tok_emb.row(ex.tokens[static_cast<size_t>(t)]);
    S* pos_row = grads.pos_emb.row(t);
    for (int j = 0; j < d; ++j) {
      tok_row[j] += src[j];
      pos_row[j] += src[j];
    }
  }
}

}  // namespace detail

// Cross-entropy of one example's targets from the cached logits; 64-bit.
template <typename S>
double example_loss(const ForwardCache<S>& cache, const Example& ex) {
  double total = 0.0;
  const int vocab = cache.logits.cols();
  for (size_t i = 0; i < ex.target_positions.size(); ++i) {
    const S* row = cache.logits.row(ex.target_positions[i]);
    double max_l = row[0];
    for (int v = 1; v < vocab; ++v) max_l = std::max(max_l, static_cast<double>(row[v]));
    double z = 0.0;
    for (int v = 0; v < vocab; ++v) z += std::exp(static_cast<double>(row[v]) - max_l);
    const double log_p =
        static_cast<double>(row[ex.target_tokens[i]]) - max_l - std::log(z);
    total -= log_p;
  }
  return total;
}

// Mean cross-entropy over all target positions in the batch, plus gradients
// for every tensor. Deterministic for any thread count.
template <typename S>
double loss_and_grads(const ModelT<S>& model, const Batch& batch, ParamSet<S>& grads,
                      int threads = 1) {
  if (batch.empty()) throw ValueError("loss_and_grads: empty batch");
  long long total_targets = 0;
  for (const Example& ex : batch) {
    if (ex.target_positions.size() != ex.target_tokens.size())
      throw ValueError("loss_and_grads: malformed example");
    total_targets += static_cast<long long>(ex.target_positions.size());
  }
  if (total_targets == 0) throw ValueError("loss_and_grads: batch has no target positions");
  const double inv_total = 1.0 / static_cast<double>(total_targets);

  std::vector<ParamSet<S>> partial(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  parallel_for(batch.size(), threads, [&](size_t i) {
    thread_local ForwardCache<S> cache;
    thread_local detail::BackwardScratch<S> scratch;
    partial[i] = ParamSet<S>::shaped(model.config);
    forward_impl<S>(model, std::span<const int>(batch[i].tokens), nullptr, &cache, nullptr);
    losses[i] = example_loss(cache, batch[i]);
    detail::backward_example(model, batch[i], cache, inv_total, partial[i], scratch);
  });

  detail::zero_params(grads);
  double loss = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    detail::add_params(grads, partial[i]);
    loss += losses[i];
  }
  return loss * inv_total;
}

// Forward-only batch loss.
template <typename S>
double batch_loss(const ModelT<S>& model, const Batch& batch, int threads = 1) {
  long long total_targets = 0;
  for (const Example& ex : batch) total_targets += static_cast<long long>(ex.target_positions.size());
  if (total_targets == 0) throw ValueError("batch_loss: batch has no target positions");
  std::vector<double> losses(batch.size(), 0.0);
  parallel_for(batch.size(), threads, [&](size_t i) {
    thread_local ForwardCache<S> cache;
    forward_impl<S>(model, std::span<const int>(batch[i].tokens), nullptr, &cache, nullptr);
    losses[i] = example_loss(cache, batch[i]);
  });
  double loss = 0.0;
  for (double l : losses) loss += l;
  return loss / static_cast<double>(total_targets);
}

struct OptimizerState {
  ParamSet<float> m;
  ParamSet<float> v;
  long long step = 0;

  static OptimizerState shaped(const ModelConfig& cfg) {
    OptimizerState s;
    s.m = ParamSet<float>::shaped(cfg);
    s.v = ParamSet<float>::shaped(cfg);
    return s;
  }
};

// Bias-corrected Adam. Rejects non-finite gradients, naming the tensor.
inline void adam_step(Model& model, const ParamSet<float>& grads, OptimizerState& state,
                      const TrainConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  std::vector<Mat<float>*> w, m, v;
  std::vector<const Mat<float>*> g;
  std::vector<std::string> names;
  for_each_tensor(model.params, [&](const std::string& n, Mat<float>& t) {
    w.push_back(&t);
    names.push_back(n);
  });
  for_each_tensor(grads, [&](const std::string&, const Mat<float>& t) { g.push_back(&t); });
  for_each_tensor(state.m, [&](const std::string&, Mat<float>& t) { m.push_back(&t); });
  for_each_tensor(state.v, [&](const std::string&, Mat<float>& t) { v.push_back(&t); });

  for (size_t i = 0; i < w.size(); ++i) {
    const float* gd = g[i]->data();
    for (size_t j = 0; j < g[i]->size(); ++j)
      if (!std::isfinite(gd[j]))
        throw Error("adam_step: non-finite gradient in tensor " + names[i]);
    float* wd = w[i]->data();
    float* md = m[i]->data();
    float* vd = v[i]->data();
    for (size_t j = 0; j < w[i]->size(); ++j) {
      const double grad = gd[j];
      const double m_new = cfg.beta1 * md[j] + (1.0 - cfg.beta1) * grad;
      const double v_new = cfg.beta2 * vd[j] + (1.0 - cfg.beta2) * grad * grad;
      md[j] = static_cast<float>(m_new);
      vd[j] = static_cast<float>(v_new);
      const double m_hat = m_new / bc1;
      const double v_hat = v_new / bc2;
      wd[j] = static_cast<float>(wd[j] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
}

struct TrainResult {
  Model model;
  std::vector<double> loss_curve;
  double init_heldout_loss = 0.0;
  double final_heldout_loss = 0.0;
};

namespace detail {
inline constexpr std::uint64_t kInitStream = 0x696e6974ull;
inline constexpr std::uint64_t kDataStream = 0x64617461ull;
inline constexpr std::uint64_t kHeldoutStream = 0x68656c64ull;
}  // namespace detail

// Full training run. Aborts with the step index if the loss goes non-finite.
template <typename ProgressFn>
TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg, const SeqGenerator& gen,
                  ProgressFn&& progress) {
  mcfg.validate();
  tcfg.validate();
  if (mcfg.objective != tcfg.objective)
    throw ValueError("train: model objective and train objective disagree");
  if (tcfg.seq_len > mcfg.max_seq_len)
    throw ValueError("train: seq_len exceeds model max_seq_len");

  TrainResult result;
  result.model = init_model(mcfg, derive_seed(tcfg.seed, {detail::kInitStream}));
  OptimizerState opt = OptimizerState::shaped(mcfg);
  ParamSet<float> grads = ParamSet<float>::shaped(mcfg);

  const Batch heldout = make_batch(gen, tcfg, derive_seed(tcfg.seed, {detail::kHeldoutStream}));
  result.init_heldout_loss = batch_loss(result.model, heldout, tcfg.threads);

  result.loss_curve.reserve(static_cast<size_t>(tcfg.steps));
  for (int step = 0; step < tcfg.steps; ++step) {
    const Batch batch =
        make_batch(gen, tcfg, derive_seed(tcfg.seed, {detail::kDataStream, static_cast<std::uint64_t>(step)}));
    const double loss = loss_and_grads(result.model, batch, grads, tcfg.threads);
    if (!std::isfinite(loss))
      throw Error("train: loss diverged (non-finite) at step " + std::to_string(step));
    adam_step(result.model, grads, opt, tcfg);
    result.loss_curve.push_back(loss);
    progress(step, loss);
  }

  result.final_heldout_loss = batch_loss(result.model, heldout, tcfg.threads);
  return result;
}

inline TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg, const SeqGenerator& gen) {
  return train(mcfg, tcfg, gen, [](int, double) {});
}

}  // namespace depthprobe
