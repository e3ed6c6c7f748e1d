#pragma once

#include <string>
#include <vector>

#include "depthprobe/csv.hpp"
#include "depthprobe/model.hpp"
#include "depthprobe/parallel.hpp"
#include "depthprobe/rng.hpp"

// LogitLens depth profiles: read every intermediate residual state through
// the model's final normalization and unembedding, and compare the implied
// distribution p_l against the final distribution p_L via KL(p_L || p_l)
// and top-1 agreement.

namespace depthprobe {

struct LensProfile {
  int num_layers = 0;
  std::vector<double> mean_kl;       // index l-1 -> layer l in [1, L]
  std::vector<double> top1_overlap;  // same indexing
  long long n_positions = 0;         // evaluated positions across all prompts
  long long clamp_count = 0;         // KL terms that hit the q floor
  std::string eval_policy;           // "masked-positions" or "all-AR-positions"
};

// Per-layer implied distributions at the given positions; index [l-1][i]
// holds softmax(readout(h_l)) at eval position i. Layer L reuses the trace's
// own logits path, so it matches the final distribution bit-exactly.
template <typename S>
std::vector<std::vector<ProbVector>> lens_distributions(const ModelT<S>& model,
                                                        const ResidualTraceT<S>& trace,
                                                        std::span<const int> positions) {
  const int layers = model.config.num_layers;
  std::vector<std::vector<ProbVector>> out(static_cast<size_t>(layers));
  std::vector<S> logits(static_cast<size_t>(model.config.vocab_size));
  std::vector<float> logits_f(logits.size());
  for (int l = 1; l <= layers; ++l) {
    auto& rows = out[static_cast<size_t>(l - 1)];
    rows.reserve(positions.size());
    for (int t : positions) {
      if (t < 0 || t >= trace.states[0].rows())
        throw ValueError("lens_distributions: position out of range");
      readout_row(model, trace.states[static_cast<size_t>(l)].row(t), logits.data());
      for (size_t i = 0; i < logits.size(); ++i) logits_f[i] = static_cast<float>(logits[i]);
      rows.push_back(softmax(logits_f));
    }
  }
  return out;
}

struct LensOptions {
  double mask_rate = 0.15;
  std::uint64_t seed = 0;
  int threads = 1;
};

namespace detail {

inline constexpr std::uint64_t kLensMaskStream = 0x6c656e73ull;

struct LensPartial {
  std::vector<double> kl_sum;
  std::vector<double> top1_sum;
  long long positions = 0;
  long long clamps = 0;
};

template <typename S>
LensPartial lens_one_prompt(const ModelT<S>& model, const Prompt& prompt,
                            const LensOptions& opts) {
  const int layers = model.config.num_layers;
  std::vector<int> tokens = prompt.tokens;
  std::vector<int> eval_positions;
  if (model.config.objective == Objective::masked) {
    Rng rng(derive_seed(opts.seed, {kLensMaskStream, token_fingerprint(prompt.tokens)}));
    auto masked = mask_prompt(tokens, opts.mask_rate, rng);
    tokens = std::move(masked.tokens);
    eval_positions = std::move(masked.masked_positions);
  } else {
    // every position that predicts a next token
    for (int t = 0; t + 1 < static_cast<int>(tokens.size()); ++t) eval_positions.push_back(t);
    if (eval_positions.empty())
      throw ValueError("lens: AR prompt too short to evaluate");
  }

  const auto trace = forward(model, tokens);
  LensPartial part;
  part.kl_sum.assign(static_cast<size_t>(layers), 0.0);
  part.top1_sum.assign(static_cast<size_t>(layers), 0.0);

  std::vector<S> logits(static_cast<size_t>(model.config.vocab_size));
  std::vector<float> logits_f(logits.size());
  for (int t : eval_positions) {
    std::vector<float> final_row(trace.logits.row(t), trace.logits.row(t) + trace.logits.cols());
    const ProbVector p_final = softmax(final_row);
    const size_t top_final = argmax_top1(p_final);
    for (int l = 1; l <= layers; ++l) {
      readout_row(model, trace.states[static_cast<size_t>(l)].row(t), logits.data());
      for (size_t i = 0; i < logits.size(); ++i) logits_f[i] = static_cast<float>(logits[i]);
      const ProbVector p_layer = softmax(logits_f);
      const KlResult kl = kl_divergence(p_final, p_layer);
      part.kl_sum[static_cast<size_t>(l - 1)] += kl.value;
      if (kl.clamped) ++part.clamps;
      if (argmax_top1(p_layer) == top_final) part.top1_sum[static_cast<size_t>(l - 1)] += 1.0;
    }
    ++part.positions;
  }
  return part;
}

}  // namespace detail

// Position-count-weighted mean KL and top-1 overlap per layer over all
// prompts. Both metric families come from a single pass.
template <typename S>
LensProfile lens_profile(const ModelT<S>& model, const std::vector<Prompt>& prompts,
                         const LensOptions& opts) {
  if (prompts.empty()) throw ValueError("lens_profile: no prompts");
  const int layers = model.config.num_layers;

  std::vector<detail::LensPartial> partial(prompts.size());
  parallel_for(prompts.size(), opts.threads, [&](size_t ip) {
    try {
      partial[ip] = detail::lens_one_prompt(model, prompts[ip], opts);
    } catch (const Error& e) {
      throw ValueError("prompt '" + prompts[ip].origin + "': " + e.what());
    }
  });

  LensProfile profile;
  profile.num_layers = layers;
  profile.eval_policy = model.config.objective == Objective::masked
                            ? "masked-positions"
                            : "all-AR-positions";
  profile.mean_kl.assign(static_cast<size_t>(layers), 0.0);
  profile.top1_overlap.assign(static_cast<size_t>(layers), 0.0);
  for (const auto& part : partial) {
    for (int l = 0; l < layers; ++l) {
      profile.mean_kl[static_cast<size_t>(l)] += part.kl_sum[static_cast<size_t>(l)];
      profile.top1_overlap[static_cast<size_t>(l)] += part.top1_sum[static_cast<size_t>(l)];
    }
    profile.n_positions += part.positions;
    profile.clamp_count += part.clamps;
  }
  if (profile.n_positions == 0) throw ValueError("lens_profile: no evaluated positions");
  for (int l = 0; l < layers; ++l) {
    profile.mean_kl[static_cast<size_t>(l)] /= static_cast<double>(profile.n_positions);
    profile.top1_overlap[static_cast<size_t>(l)] /= static_cast<double>(profile.n_positions);
  }
  return profile;
}

template <typename S>
LensProfile lens_kl_profile(const ModelT<S>& model, const std::vector<Prompt>& prompts,
                            const LensOptions& opts) {
  return lens_profile(model, prompts, opts);
}

template <typename S>
LensProfile lens_top1_profile(const ModelT<S>& model, const std::vector<Prompt>& prompts,
                              const LensOptions& opts) {
  return lens_profile(model, prompts, opts);
}

// lens_profile.csv: layer, relative_depth, mean_kl, top1_overlap, n_positions
inline void write_lens_csv(const LensProfile& profile, const std::string& path) {
  CsvWriter csv(path, {"layer", "relative_depth", "mean_kl", "top1_overlap", "n_positions"});
  for (int l = 1; l <= profile.num_layers; ++l)
    csv.row({csv_num(l), csv_num(static_cast<double>(l) / profile.num_layers),
             csv_num(profile.mean_kl[static_cast<size_t>(l - 1)]),
             csv_num(profile.top1_overlap[static_cast<size_t>(l - 1)]),
             csv_num(static_cast<long long>(profile.n_positions))});
}

}  // namespace depthprobe
