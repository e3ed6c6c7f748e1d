#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "depthprobe/csv.hpp"
#include "depthprobe/model.hpp"
#include "depthprobe/parallel.hpp"
#include "depthprobe/rng.hpp"

// Layer-skip interventions restricted to "future" positions: for causal
// models the skip applies at t <= t_s and effects are read at t > t_s; for
// masked models a random subset of masked and non-masked positions is
// intervened and effects are read on the remaining masked positions.

namespace depthprobe {

enum class InterventionKind { ar_split, masked_subset };

struct InterventionSpec {
  int source_layer = 0;
  InterventionKind kind = InterventionKind::masked_subset;
  int ar_split = -1;                    // t_s for ar_split
  std::vector<int> intervened_positions;  // ascending
  std::vector<int> eval_positions;        // ascending, disjoint from intervened
};

namespace detail {

// round(f * n) clamped so the realized fraction stays inside [0.2, 0.8]
// whenever n admits it; tiny sets clamp to leaving/taking at least one.
inline int fraction_count(double fraction, int n, int max_count) {
  if (n <= 0) return 0;
  const int lo = std::max(1, static_cast<int>(std::ceil(0.2 * n - 1e-9)));
  int hi = std::min(max_count, static_cast<int>(std::floor(0.8 * n + 1e-9)));
  if (hi < lo) hi = lo;
  const int raw = static_cast<int>(std::llround(fraction * n));
  return std::clamp(raw, lo, std::min(hi, max_count));
}

}  // namespace detail

// Draws the intervened/eval position split. Masked mode needs >= 2 masked
// positions so that at least one is left for evaluation; AR mode draws the
// split position t_s uniformly from {2, ..., T-2}.
inline InterventionSpec sample_intervention(Objective mode, int seq_len,
                                            std::span<const int> masked_positions, Rng& rng) {
  InterventionSpec spec;
  if (mode == Objective::autoregressive) {
    if (seq_len < 4) throw ValueError("sample_intervention: AR mode needs T >= 4");
    spec.kind = InterventionKind::ar_split;
    spec.ar_split = 2 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(seq_len - 3)));
    for (int t = 0; t <= spec.ar_split; ++t) spec.intervened_positions.push_back(t);
    for (int t = spec.ar_split + 1; t < seq_len; ++t) spec.eval_positions.push_back(t);
    return spec;
  }

  const int num_masked = static_cast<int>(masked_positions.size());
  if (num_masked < 2)
    throw ValueError("sample_intervention: masked mode needs >= 2 masked positions");
  spec.kind = InterventionKind::masked_subset;

  std::vector<bool> is_masked(static_cast<size_t>(seq_len), false);
  for (int p : masked_positions) {
    if (p < 0 || p >= seq_len) throw ValueError("sample_intervention: masked position out of range");
    is_masked[static_cast<size_t>(p)] = true;
  }
  std::vector<int> non_masked;
  for (int t = 0; t < seq_len; ++t)
    if (!is_masked[static_cast<size_t>(t)]) non_masked.push_back(t);

  const double masked_fraction = rng.uniform(0.2, 0.8);
  const int masked_take = detail::fraction_count(masked_fraction, num_masked, num_masked - 1);
  const auto masked_sel = rng.sample_without_replacement(num_masked, masked_take);

  const double plain_fraction = rng.uniform(0.2, 0.8);
  const int nm = static_cast<int>(non_masked.size());
  const int plain_take = detail::fraction_count(plain_fraction, nm, nm);
  const auto plain_sel = rng.sample_without_replacement(nm, plain_take);

  std::vector<bool> intervened_masked(static_cast<size_t>(num_masked), false);
  for (int idx : masked_sel) {
    spec.intervened_positions.push_back(masked_positions[static_cast<size_t>(idx)]);
    intervened_masked[static_cast<size_t>(idx)] = true;
  }
  for (int idx : plain_sel)
    spec.intervened_positions.push_back(non_masked[static_cast<size_t>(idx)]);
  std::sort(spec.intervened_positions.begin(), spec.intervened_positions.end());

  for (int i = 0; i < num_masked; ++i)
    if (!intervened_masked[static_cast<size_t>(i)])
      spec.eval_positions.push_back(masked_positions[static_cast<size_t>(i)]);
  return spec;
}

template <typename S>
ResidualTraceT<S> skipped_forward(const ModelT<S>& m, std::span<const int> tokens,
                                  const InterventionSpec& spec) {
  SkipDirective directive{spec.source_layer, spec.intervened_positions};
  return skipped_forward(m, tokens, directive);
}

struct PropagatedEffects {
  std::vector<double> l2;      // index i -> downstream state h_{s+1+i}
  std::vector<double> rel_l2;  // same, normalized by ||h_l[t]|| of the normal run
};

// Max over eval positions of ||h_l[t] - hbar_l[t]||_2 for each state after
// the skipped block.
template <typename S>
PropagatedEffects propagated_effects(const ResidualTraceT<S>& normal,
                                     const ResidualTraceT<S>& skipped, int source_layer,
                                     std::span<const int> eval_positions) {
  if (normal.states.size() != skipped.states.size())
    throw ValueError("propagated_effects: traces have different depths");
  if (eval_positions.empty()) throw ValueError("propagated_effects: empty eval set");
  const int num_states = static_cast<int>(normal.states.size());
  if (source_layer < 0 || source_layer >= num_states - 1)
    throw ValueError("propagated_effects: source layer out of range");
  PropagatedEffects out;
  for (int l = source_layer + 1; l < num_states; ++l) {
    const Mat<S>& a = normal.states[static_cast<size_t>(l)];
    const Mat<S>& b = skipped.states[static_cast<size_t>(l)];
    if (!a.same_shape(b)) throw ValueError("propagated_effects: trace shape mismatch");
    double best = 0.0;
    double best_rel = 0.0;
    for (int t : eval_positions) {
      if (t < 0 || t >= a.rows()) throw ValueError("propagated_effects: eval position out of range");
      const double diff = l2_diff(a.row_span(t), b.row_span(t));
      best = std::max(best, diff);
      const double norm = l2_norm(a.row_span(t));
      best_rel = std::max(best_rel, diff / std::max(norm, 1e-12));
    }
    out.l2.push_back(best);
    out.rel_l2.push_back(best_rel);
  }
  return out;
}

enum class OutputSpace { probabilities, logits };

// Max over eval positions of ||y[t] - ybar[t]||_2 in the chosen space.
template <typename S>
double output_effect(const ResidualTraceT<S>& normal, const ResidualTraceT<S>& skipped,
                     std::span<const int> eval_positions, OutputSpace space) {
  if (eval_positions.empty()) throw ValueError("output_effect: empty eval set");
  if (!normal.logits.same_shape(skipped.logits))
    throw ValueError("output_effect: logits shape mismatch");
  double best = 0.0;
  for (int t : eval_positions) {
    if (t < 0 || t >= normal.logits.rows())
      throw ValueError("output_effect: eval position out of range");
    if (space == OutputSpace::logits) {
      best = std::max(best, l2_diff(normal.logits.row_span(t), skipped.logits.row_span(t)));
    } else {
      std::vector<float> a_row(normal.logits.row(t), normal.logits.row(t) + normal.logits.cols());
      std::vector<float> b_row(skipped.logits.row(t), skipped.logits.row(t) + skipped.logits.cols());
      const ProbVector pa = softmax(a_row);
      const ProbVector pb = softmax(b_row);
      best = std::max(best, l2_diff(std::span<const float>(pa), std::span<const float>(pb)));
    }
  }
  return best;
}

// Aggregated results over (source layer, downstream state). Column j of the
// propagated matrices refers to residual state h_{j+1}; entries with
// j + 1 <= s are undefined and stay NaN.
struct EffectMatrix {
  int num_layers = 0;
  Mat<double> propagated;      // L x L, max ||h - hbar||
  Mat<double> propagated_rel;  // L x L, max ||h - hbar|| / ||h||
  std::vector<double> output_prob;   // per source layer, max prob-space l2
  std::vector<double> output_logit;  // per source layer, max logit-space l2
  int repeats = 0;
  int prompt_count = 0;
  std::string aggregation = "max";

  bool defined(int source, int col) const { return col >= source; }
};

struct SkiplayerOptions {
  int repeats = 4;          // intervention draws per prompt
  double mask_rate = 0.15;  // masked-mode masking rate
  std::uint64_t seed = 0;
  int threads = 1;
};

namespace detail {

inline constexpr std::uint64_t kMaskStream = 0x6d61736bull;   // prompt masking
inline constexpr std::uint64_t kSpecStream = 0x73706563ull;   // intervention draws

template <typename S>
void skiplayer_one_prompt(const ModelT<S>& model, const Prompt& prompt,
                          const SkiplayerOptions& opts, EffectMatrix& acc) {
  const int layers = model.config.num_layers;
  const std::uint64_t fp = token_fingerprint(prompt.tokens);
  std::vector<int> tokens = prompt.tokens;
  std::vector<int> masked_positions;
  if (model.config.objective == Objective::masked) {
    Rng mask_rng(derive_seed(opts.seed, {kMaskStream, fp}));
    auto masked = mask_prompt(tokens, opts.mask_rate, mask_rng);
    tokens = std::move(masked.tokens);
    masked_positions = std::move(masked.masked_positions);
  }
  ResidualTraceT<S> normal = forward(model, tokens);
  normal.masked_positions = masked_positions;

  for (int rep = 0; rep < opts.repeats; ++rep) {
    Rng spec_rng(derive_seed(opts.seed, {kSpecStream, fp, static_cast<std::uint64_t>(rep)}));
    InterventionSpec spec = sample_intervention(model.config.objective,
                                                static_cast<int>(tokens.size()),
                                                masked_positions, spec_rng);
    for (int s = 0; s < layers; ++s) {
      spec.source_layer = s;
      const auto skipped = skipped_forward(model, tokens, spec);
      const auto effects = propagated_effects(normal, skipped, s, spec.eval_positions);
      for (size_t i = 0; i < effects.l2.size(); ++i) {
        const int col = s + static_cast<int>(i);  // state h_{s+1+i} -> column
        acc.propagated.at(s, col) = std::max(acc.propagated.at(s, col), effects.l2[i]);
        acc.propagated_rel.at(s, col) = std::max(acc.propagated_rel.at(s, col), effects.rel_l2[i]);
      }
      acc.output_prob[static_cast<size_t>(s)] =
          std::max(acc.output_prob[static_cast<size_t>(s)],
                   output_effect(normal, skipped, spec.eval_positions, OutputSpace::probabilities));
      acc.output_logit[static_cast<size_t>(s)] =
          std::max(acc.output_logit[static_cast<size_t>(s)],
                   output_effect(normal, skipped, spec.eval_positions, OutputSpace::logits));
    }
  }
}

}  // namespace detail

inline EffectMatrix make_effect_matrix(int layers) {
  EffectMatrix m;
  m.num_layers = layers;
  m.propagated = Mat<double>(layers, layers, 0.0);
  m.propagated_rel = Mat<double>(layers, layers, 0.0);
  for (int s = 0; s < layers; ++s)
    for (int c = 0; c < layers; ++c)
      if (!m.defined(s, c)) {
        m.propagated.at(s, c) = std::numeric_limits<double>::quiet_NaN();
        m.propagated_rel.at(s, c) = std::numeric_limits<double>::quiet_NaN();
      }
  m.output_prob.assign(static_cast<size_t>(layers), 0.0);
  m.output_logit.assign(static_cast<size_t>(layers), 0.0);
  return m;
}

// Runs the full skip-layer experiment: for every source layer, prompt and
// repeat, suppress the block update on the sampled positions and aggregate
// the maximum downstream effects.
template <typename S>
EffectMatrix skiplayer_experiment(const ModelT<S>& model, const std::vector<Prompt>& prompts,
                                  const SkiplayerOptions& opts) {
  if (prompts.empty()) throw ValueError("skiplayer_experiment: no prompts");
  if (opts.repeats < 1) throw ValueError("skiplayer_experiment: repeats must be >= 1");
  const int layers = model.config.num_layers;

  std::vector<EffectMatrix> partial(prompts.size());
  parallel_for(prompts.size(), opts.threads, [&](size_t ip) {
    partial[ip] = make_effect_matrix(layers);
    try {
      detail::skiplayer_one_prompt(model, prompts[ip], opts, partial[ip]);
    } catch (const Error& e) {
      throw ValueError("prompt '" + prompts[ip].origin + "': " + e.what());
    }
  });

  EffectMatrix total = make_effect_matrix(layers);
  total.repeats = opts.repeats;
  total.prompt_count = static_cast<int>(prompts.size());
  for (const EffectMatrix& p : partial) {
    for (int s = 0; s < layers; ++s) {
      for (int c = s; c < layers; ++c) {
        total.propagated.at(s, c) = std::max(total.propagated.at(s, c), p.propagated.at(s, c));
        total.propagated_rel.at(s, c) =
            std::max(total.propagated_rel.at(s, c), p.propagated_rel.at(s, c));
      }
      total.output_prob[static_cast<size_t>(s)] =
          std::max(total.output_prob[static_cast<size_t>(s)], p.output_prob[static_cast<size_t>(s)]);
      total.output_logit[static_cast<size_t>(s)] =
          std::max(total.output_logit[static_cast<size_t>(s)], p.output_logit[static_cast<size_t>(s)]);
    }
  }
  return total;
}

// skiplayer_propagated.csv: source_layer, downstream_layer, max_l2, max_rel_l2
inline void write_propagated_csv(const EffectMatrix& m, const std::string& path) {
  CsvWriter csv(path, {"source_layer", "downstream_layer", "max_l2", "max_rel_l2"});
  for (int s = 0; s < m.num_layers; ++s)
    for (int c = s; c < m.num_layers; ++c)
      csv.row({csv_num(s), csv_num(c + 1), csv_num(m.propagated.at(s, c)),
               csv_num(m.propagated_rel.at(s, c))});
}

// skiplayer_output.csv: source_layer, max_prob_l2, max_logit_l2
inline void write_output_effect_csv(const EffectMatrix& m, const std::string& path) {
  CsvWriter csv(path, {"source_layer", "max_prob_l2", "max_logit_l2"});
  for (int s = 0; s < m.num_layers; ++s)
    csv.row({csv_num(s), csv_num(m.output_prob[static_cast<size_t>(s)]),
             csv_num(m.output_logit[static_cast<size_t>(s)])});
}

}  // namespace depthprobe
