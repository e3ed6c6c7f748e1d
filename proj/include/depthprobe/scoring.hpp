#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "depthprobe/assay.hpp"
#include "depthprobe/csv.hpp"
#include "depthprobe/model.hpp"
#include "depthprobe/parallel.hpp"

// Layer-wise zero-shot mutation scoring. Masked models use masked-marginals
// (mask the mutated position, score log p(mutant) - log p(wildtype) from the
// layer-l readout); autoregressive models use the likelihood ratio of summed
// next-token log-probabilities. Multi-mutation variants sum per-mutation
// terms (masked) or rescore the fully mutated sequence (AR).

namespace depthprobe {

namespace detail {

// log-probabilities at one masked position for every layer: rows l-1 in
// [0, L), columns over the vocabulary.
template <typename S>
Mat<double> masked_position_logprobs(const ModelT<S>& model, std::span<const int> wildtype_tokens,
                                     int position_index) {
  std::vector<int> tokens(wildtype_tokens.begin(), wildtype_tokens.end());
  tokens[static_cast<size_t>(position_index)] = kMaskToken;
  const auto trace = forward(model, tokens);
  const int layers = model.config.num_layers;
  const int vocab = model.config.vocab_size;
  Mat<double> out(layers, vocab);
  std::vector<S> logits(static_cast<size_t>(vocab));
  std::vector<float> logits_f(logits.size());
  for (int l = 1; l <= layers; ++l) {
    readout_row(model, trace.states[static_cast<size_t>(l)].row(position_index), logits.data());
    for (size_t i = 0; i < logits.size(); ++i) logits_f[i] = static_cast<float>(logits[i]);
    const auto lsm = log_softmax(logits_f);
    for (int v = 0; v < vocab; ++v) out.at(l - 1, v) = lsm[static_cast<size_t>(v)];
  }
  return out;
}

}  // namespace detail

inline std::vector<int> encode_wildtype(const std::string& wildtype) {
  const auto enc = encode_sequence(wildtype, /*add_bos=*/false);
  if (enc.unknown_count > 0)
    throw ValueError("wildtype contains letters outside the amino-acid alphabet");
  return enc.tokens;
}

// Masked-marginal score at one layer: one forward pass per mutation with only
// that position masked, summed over the mutation set.
template <typename S>
double masked_marginal_score(const ModelT<S>& model, const std::string& wildtype,
                             const std::vector<Mutation>& mutations, int layer) {
  if (model.config.objective != Objective::masked)
    throw ValueError("masked_marginal_score: model is not a masked model");
  if (layer < 1 || layer > model.config.num_layers)
    throw ValueError("masked_marginal_score: layer out of range");
  const auto tokens = encode_wildtype(wildtype);
  double total = 0.0;
  for (const Mutation& m : mutations) {
    if (m.position < 1 || m.position > static_cast<int>(tokens.size()))
      throw ValueError("masked_marginal_score: mutation position out of range");
    const auto logprobs = detail::masked_position_logprobs(model, tokens, m.position - 1);
    const int mut_tok = aa_to_token(m.mutant_aa);
    const int wt_tok = aa_to_token(m.wildtype_aa);
    if (mut_tok < 0 || wt_tok < 0)
      throw ValueError("masked_marginal_score: letter outside the amino-acid alphabet");
    total += logprobs.at(layer - 1, mut_tok) - logprobs.at(layer - 1, wt_tok);
  }
  return total;
}

// Summed next-token log-likelihood of a BOS-prefixed token sequence using the
// layer-l readout at every predictive position. BOS is never a target.
template <typename S>
double ar_score(const ModelT<S>& model, std::span<const int> tokens_with_bos, int layer,
                bool length_normalize = false) {
  if (model.config.objective != Objective::autoregressive)
    throw ValueError("ar_score: model is not an autoregressive model");
  if (layer < 1 || layer > model.config.num_layers)
    throw ValueError("ar_score: layer out of range");
  if (tokens_with_bos.size() < 2) throw ValueError("ar_score: need BOS plus at least one token");
  if (tokens_with_bos[0] != kBosToken) throw ValueError("ar_score: sequence must start with BOS");
  if (static_cast<int>(tokens_with_bos.size()) > model.config.max_seq_len)
    throw ValueError("ar_score: sequence exceeds max_seq_len (long sequences are rejected, not windowed)");

  const auto trace = forward(model, tokens_with_bos);
  const int vocab = model.config.vocab_size;
  std::vector<S> logits(static_cast<size_t>(vocab));
  std::vector<float> logits_f(logits.size());
  double total = 0.0;
  const int targets = static_cast<int>(tokens_with_bos.size()) - 1;
  for (int t = 0; t < targets; ++t) {
    readout_row(model, trace.states[static_cast<size_t>(layer)].row(t), logits.data());
    for (size_t i = 0; i < logits.size(); ++i) logits_f[i] = static_cast<float>(logits[i]);
    const auto lsm = log_softmax(logits_f);
    total += lsm[static_cast<size_t>(tokens_with_bos[static_cast<size_t>(t + 1)])];
  }
  return length_normalize ? total / targets : total;
}

template <typename S>
double ar_score(const ModelT<S>& model, const std::string& sequence, int layer,
                bool length_normalize = false) {
  const auto enc = encode_sequence(sequence, /*add_bos=*/true);
  return ar_score(model, std::span<const int>(enc.tokens), layer, length_normalize);
}

struct ScoreTable {
  std::string assay_id;
  int num_layers = 0;
  std::vector<std::string> variant_codes;
  Mat<double> scores;  // layers x variants
  std::vector<std::optional<double>> spearman_per_layer;

  double relative_depth(int layer) const {
    return static_cast<double>(layer) / num_layers;
  }
};

struct ScoringOptions {
  bool length_normalize = false;  // AR only: mean per-token log-likelihood
  int threads = 1;
};

// Scores every variant at every layer and correlates against measurements.
// The scorer is picked from the model's objective.
template <typename S>
ScoreTable layerwise_spearman(const ModelT<S>& model, const Assay& assay,
                              const ScoringOptions& opts = {}) {
  if (assay.variants.size() < 2) throw ValueError("layerwise_spearman: need at least 2 variants");
  const int layers = model.config.num_layers;
  const int num_variants = static_cast<int>(assay.variants.size());

  ScoreTable table;
  table.assay_id = assay.id;
  table.num_layers = layers;
  table.scores = Mat<double>(layers, num_variants);
  for (const Variant& v : assay.variants)
    table.variant_codes.push_back(format_mutation_set(v.mutations));

  if (model.config.objective == Objective::masked) {
    const auto wt_tokens = encode_wildtype(assay.wildtype);
    // One forward per distinct mutated position, shared by every variant and
    // layer; scores therefore cannot depend on variant ordering.
    std::vector<int> positions;
    for (const Variant& v : assay.variants)
      for (const Mutation& m : v.mutations) {
        if (m.position < 1 || m.position > static_cast<int>(wt_tokens.size()))
          throw ValueError("layerwise_spearman: mutation position out of range");
        positions.push_back(m.position);
      }
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());

    std::vector<Mat<double>> by_position(positions.size());
    parallel_for(positions.size(), opts.threads, [&](size_t i) {
      by_position[i] = detail::masked_position_logprobs(model, wt_tokens, positions[i] - 1);
    });
    std::map<int, const Mat<double>*> logprobs;
    for (size_t i = 0; i < positions.size(); ++i) logprobs[positions[i]] = &by_position[i];

    for (int vi = 0; vi < num_variants; ++vi) {
      for (int l = 1; l <= layers; ++l) {
        double total = 0.0;
        for (const Mutation& m : assay.variants[static_cast<size_t>(vi)].mutations) {
          const Mat<double>& lp = *logprobs.at(m.position);
          total += lp.at(l - 1, aa_to_token(m.mutant_aa)) - lp.at(l - 1, aa_to_token(m.wildtype_aa));
        }
        table.scores.at(l - 1, vi) = total;
      }
    }
  } else {
    // Likelihood ratio against the wildtype at every layer.
    std::vector<double> wt_scores(static_cast<size_t>(layers));
    for (int l = 1; l <= layers; ++l)
      wt_scores[static_cast<size_t>(l - 1)] =
          ar_score(model, assay.wildtype, l, opts.length_normalize);
    std::vector<std::vector<double>> variant_scores(assay.variants.size());
    parallel_for(assay.variants.size(), opts.threads, [&](size_t vi) {
      const std::string mutant = apply_mutations(assay.wildtype, assay.variants[vi].mutations);
      std::vector<double> per_layer(static_cast<size_t>(layers));
      for (int l = 1; l <= layers; ++l)
        per_layer[static_cast<size_t>(l - 1)] = ar_score(model, mutant, l, opts.length_normalize);
      variant_scores[vi] = std::move(per_layer);
    });
    for (int vi = 0; vi < num_variants; ++vi)
      for (int l = 0; l < layers; ++l)
        table.scores.at(l, vi) = variant_scores[static_cast<size_t>(vi)][static_cast<size_t>(l)] -
                                 wt_scores[static_cast<size_t>(l)];
  }

  std::vector<double> measurements;
  for (const Variant& v : assay.variants) measurements.push_back(v.measurement);
  for (int l = 0; l < layers; ++l) {
    std::vector<double> row(table.scores.row(l), table.scores.row(l) + num_variants);
    table.spearman_per_layer.push_back(spearman(row, measurements));
  }
  return table;
}

// Mean of per-assay correlations; layers where any assay is undefined stay
// undefined in the mean.
inline std::vector<std::optional<double>> mean_spearman(const std::vector<ScoreTable>& tables) {
  if (tables.empty()) return {};
  const int layers = tables.front().num_layers;
  std::vector<std::optional<double>> out(static_cast<size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    double acc = 0.0;
    bool ok = true;
    for (const ScoreTable& t : tables) {
      const auto& rho = t.spearman_per_layer[static_cast<size_t>(l)];
      if (!rho) {
        ok = false;
        break;
      }
      acc += *rho;
    }
    if (ok) out[static_cast<size_t>(l)] = acc / static_cast<double>(tables.size());
  }
  return out;
}

// scores.csv: layer, relative_depth, assay_id, spearman (NA when undefined)
inline void write_scores_csv(const std::vector<ScoreTable>& tables, const std::string& path) {
  CsvWriter csv(path, {"layer", "relative_depth", "assay_id", "spearman"});
  for (const ScoreTable& t : tables)
    for (int l = 1; l <= t.num_layers; ++l) {
      const auto& rho = t.spearman_per_layer[static_cast<size_t>(l - 1)];
      csv.row({csv_num(l), csv_num(t.relative_depth(l)), t.assay_id,
               rho ? csv_num(*rho) : "NA"});
    }
}

// variant_scores.csv: layer, assay_id, mutant, score
inline void write_variant_scores_csv(const std::vector<ScoreTable>& tables,
                                     const std::string& path) {
  CsvWriter csv(path, {"layer", "assay_id", "mutant", "score"});
  for (const ScoreTable& t : tables)
    for (int l = 1; l <= t.num_layers; ++l)
      for (size_t vi = 0; vi < t.variant_codes.size(); ++vi)
        csv.row({csv_num(l), t.assay_id, t.variant_codes[vi],
                 csv_num(t.scores.at(l - 1, static_cast<int>(vi)))});
}

}  // namespace depthprobe
