#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "depthprobe/assay.hpp"
#include "depthprobe/numerics.hpp"
#include "depthprobe/rng.hpp"
#include "depthprobe/vocab.hpp"

// Hidden-Markov sequence generator over the amino-acid alphabet. It stands
// in for a real corpus: sequences have learnable structure and the forward
// algorithm gives an exact log-likelihood, which doubles as the ground-truth
// fitness used to build synthetic DMS assays.

namespace depthprobe {

struct SeqGenerator {
  int num_states = 0;
  Mat<double> transition;          // K x K, rows sum to 1
  Mat<double> emission;            // K x 20, rows sum to 1
  std::vector<double> initial;     // length K, sums to 1
};

// Rows drawn from a symmetric Dirichlet with the given concentration; large
// concentration approaches uniform rows, small concentration gives peaky ones.
inline SeqGenerator build_generator(int num_states, double concentration, Rng& rng) {
  if (num_states < 2) throw ValueError("build_generator: need at least 2 hidden states");
  if (!(concentration > 0.0)) throw ValueError("build_generator: concentration must be positive");
  SeqGenerator gen;
  gen.num_states = num_states;
  gen.transition = Mat<double>(num_states, num_states);
  gen.emission = Mat<double>(num_states, kNumAminoAcids);
  for (int s = 0; s < num_states; ++s) {
    const auto trow = rng.dirichlet(num_states, concentration);
    for (int j = 0; j < num_states; ++j) gen.transition.at(s, j) = trow[static_cast<size_t>(j)];
    const auto erow = rng.dirichlet(kNumAminoAcids, concentration);
    for (int j = 0; j < kNumAminoAcids; ++j) gen.emission.at(s, j) = erow[static_cast<size_t>(j)];
  }
  gen.initial = rng.dirichlet(num_states, concentration);
  return gen;
}

namespace detail {

inline int categorical(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace detail

inline std::string sample_sequence(const SeqGenerator& gen, int length, Rng& rng) {
  if (length < 1) throw ValueError("sample_sequence: length must be >= 1");
  std::string seq;
  seq.reserve(static_cast<size_t>(length));
  int state = detail::categorical(gen.initial, rng);
  for (int t = 0; t < length; ++t) {
    const int aa = detail::categorical(gen.emission.row_span(state), rng);
    seq += kAminoAcids[aa];
    state = detail::categorical(gen.transition.row_span(state), rng);
  }
  return seq;
}

// Exact forward-algorithm log-likelihood with log-space accumulation.
inline double true_loglik(const SeqGenerator& gen, const std::string& seq) {
  if (seq.empty()) throw ValueError("true_loglik: empty sequence");
  const int k = gen.num_states;
  const auto safe_log = [](double p) {
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  };
  const auto logsumexp = [](std::span<const double> v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - mx);
    return mx + std::log(acc);
  };

  std::vector<double> alpha(static_cast<size_t>(k));
  std::vector<double> next(static_cast<size_t>(k));
  std::vector<double> terms(static_cast<size_t>(k));
  for (size_t t = 0; t < seq.size(); ++t) {
    const int aa = aa_to_token(seq[t]) - kNumSpecialTokens;
    if (aa < 0 || aa >= kNumAminoAcids)
      throw ValueError("true_loglik: letter '" + std::string(1, seq[t]) + "' outside amino-acid alphabet");
    if (t == 0) {
      for (int s = 0; s < k; ++s)
        alpha[static_cast<size_t>(s)] = safe_log(gen.initial[static_cast<size_t>(s)]) +
                                        safe_log(gen.emission.at(s, aa));
      continue;
    }
    for (int j = 0; j < k; ++j) {
      for (int i = 0; i < k; ++i)
        terms[static_cast<size_t>(i)] = alpha[static_cast<size_t>(i)] + safe_log(gen.transition.at(i, j));
      next[static_cast<size_t>(j)] = logsumexp(terms) + safe_log(gen.emission.at(j, aa));
    }
    std::swap(alpha, next);
  }
  return logsumexp(alpha);
}

// Synthetic DMS assay: every single substitution at every position, measured
// as the exact log-likelihood change plus Gaussian noise.
inline Assay make_assay(const SeqGenerator& gen, const std::string& wildtype, double noise_sigma,
                        Rng& rng, const std::string& id = "synthetic") {
  if (noise_sigma < 0.0) throw ValueError("make_assay: noise_sigma must be >= 0");
  Assay assay;
  assay.id = id;
  assay.wildtype = wildtype;
  const double wt_loglik = true_loglik(gen, wildtype);
  for (int pos = 1; pos <= static_cast<int>(wildtype.size()); ++pos) {
    const char wt_aa = wildtype[static_cast<size_t>(pos - 1)];
    for (int a = 0; a < kNumAminoAcids; ++a) {
      const char mut_aa = kAminoAcids[a];
      if (mut_aa == wt_aa) continue;
      Variant v;
      v.mutations = {Mutation{wt_aa, pos, mut_aa}};
      std::string mutant = wildtype;
      mutant[static_cast<size_t>(pos - 1)] = mut_aa;
      v.measurement = true_loglik(gen, mutant) - wt_loglik + noise_sigma * rng.normal();
      assay.variants.push_back(std::move(v));
    }
  }
  return assay;
}

inline void write_assay_csv(const Assay& assay, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write assay CSV: " + path);
  out << "mutant,DMS_score\n";
  char buf[40];
  for (const Variant& v : assay.variants) {
    std::snprintf(buf, sizeof(buf), "%.9g", v.measurement);
    out << format_mutation_set(v.mutations) << ',' << buf << '\n';
  }
}

}  // namespace depthprobe
