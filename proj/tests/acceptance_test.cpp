// Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
// Tolerances and thresholds are pinned in code, not configurable.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <gtest/gtest.h>
#include <sstream>

#include "depthprobe/intervention.hpp"
#include "depthprobe/lens.hpp"
#include "depthprobe/model_io.hpp"
#include "depthprobe/scoring.hpp"
#include "depthprobe/synthgen.hpp"
#include "depthprobe/trainer.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace depthprobe;
using clock_type = std::chrono::steady_clock;

namespace {

double elapsed_s(clock_type::time_point start) {
  return std::chrono::duration<double>(clock_type::now() - start).count();
}

struct CriterionReport {
  int number;
  const char* name;
  clock_type::time_point start = clock_type::now();

  CriterionReport(int number, const char* name) : number(number), name(name) {}
  ~CriterionReport() {
    const bool failed = ::testing::Test::HasFailure();
    std::printf("[criterion %d] %s: %s (%.1f s)\n", number, name, failed ? "FAIL" : "PASS",
                elapsed_s(start));
    std::fflush(stdout);
  }
};

ModelConfig toy_config(Objective obj) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.d_ff = 16;
  cfg.max_seq_len = 16;
  cfg.objective = obj;
  return cfg;
}

// Random weights at scales where finite differences with h = 1e-3 stay in
// their linear regime (LayerNorm inputs get O(1) variance).
Model random_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = init_model(cfg, seed);
  Rng rng(derive_seed(seed, {0x77}));
  for_each_tensor(m.params, [&](const std::string& name, Mat<float>& t) {
    if (name.ends_with("gain")) return;
    const double scale = (name == "tok_emb" || name == "pos_emb") ? 1.0 : 0.2;
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(scale * rng.normal());
  });
  return m;
}

// The default trained fixture for criterion 7, built once. Seed frozen after
// confirming the depth trends and the rho_L floor.
constexpr std::uint64_t kFixtureSeed = 2024;

struct TrainedFixture {
  SeqGenerator generator;
  Model model;
  double init_loss = 0.0;
  double final_loss = 0.0;
  double train_seconds = 0.0;
};

const TrainedFixture& trained_fixture() {
  static const TrainedFixture fixture = [] {
    TrainedFixture f;
    Rng gen_rng(derive_seed(kFixtureSeed, {0x67656ell}));
    f.generator = build_generator(6, 0.2, gen_rng);
    ModelConfig mcfg;  // defaults: L=8, d=64, heads=4, d_ff=256, V=25, T=128
    TrainConfig tcfg;  // defaults: 3000 steps, batch 32, seq 64, lr 3e-4
    tcfg.seed = kFixtureSeed;
    tcfg.threads = default_thread_count();
    const auto t0 = clock_type::now();
    auto result = train(mcfg, tcfg, f.generator);
    f.train_seconds = elapsed_s(t0);
    f.model = std::move(result.model);
    f.init_loss = result.init_heldout_loss;
    f.final_loss = result.final_heldout_loss;
    std::printf("[fixture] trained 8x64 model: held-out loss %.4f -> %.4f in %.0f s\n",
                f.init_loss, f.final_loss, f.train_seconds);
    std::fflush(stdout);
    return f;
  }();
  return fixture;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DEPTHPROBE_CLI_PATH) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

// Criterion 1: every parameter's reverse-mode gradient matches central finite
// differences (h = 1e-3, 64-bit weights) with max relative error < 1e-4.
// Relative error uses the standard small-denominator guard
// |fd - an| / max(|fd|, |an|, 1e-4), since for near-zero gradients the pure
// ratio is dominated by the O(h^2) truncation of the difference quotient
// rather than by the gradient code under test.
TEST(Acceptance, Criterion1_GradientOracle) {
  CriterionReport report(1, "gradient oracle vs central finite differences");
  const ModelConfig cfg = toy_config(Objective::masked);
  const Model mf = random_model(cfg, 3);
  const auto md = cast_model<double>(mf);

  Batch batch(2);
  batch[0].tokens = {5, kMaskToken, 7, 8, kMaskToken, 9};
  batch[0].target_positions = {1, 4};
  batch[0].target_tokens = {6, 10};
  batch[1].tokens = {11, 12, kMaskToken, 13};
  batch[1].target_positions = {2};
  batch[1].target_tokens = {14};

  ParamSet<double> grads = ParamSet<double>::shaped(cfg);
  loss_and_grads(md, batch, grads);

  std::vector<Mat<double>*> tensors, gtensors;
  std::vector<std::string> names;
  auto& md_mut = const_cast<ModelT<double>&>(md);
  for_each_tensor(md_mut.params, [&](const std::string& n, Mat<double>& t) {
    tensors.push_back(&t);
    names.push_back(n);
  });
  for_each_tensor(grads, [&](const std::string&, Mat<double>& t) { gtensors.push_back(&t); });

  const double h = 1e-3;
  double max_rel = 0.0;
  std::string worst;
  long long checked = 0;
  for (size_t ti = 0; ti < tensors.size(); ++ti) {
    Mat<double>& t = *tensors[ti];
    for (size_t i = 0; i < t.size(); ++i) {
      const double orig = t.data()[i];
      t.data()[i] = orig + h;
      const double lp = batch_loss(md_mut, batch);
      t.data()[i] = orig - h;
      const double lm = batch_loss(md_mut, batch);
      t.data()[i] = orig;
      const double fd = (lp - lm) / (2 * h);
      const double an = gtensors[ti]->data()[i];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4});
      if (rel > max_rel) {
        max_rel = rel;
        worst = names[ti] + "[" + std::to_string(i) + "]";
      }
      ++checked;
    }
  }
  std::printf("  checked %lld parameters, max relative error %.3e at %s\n", checked, max_rel,
              worst.c_str());
  EXPECT_LT(max_rel, 1e-4);
  EXPECT_LT(elapsed_s(report.start), 60.0);
}

// Criterion 2: traced forward matches the straight-line oracle within 1e-5
// per element in both attention modes.
TEST(Acceptance, Criterion2_ForwardOracle) {
  CriterionReport report(2, "forward trace vs straight-line oracle");
  for (auto obj : {Objective::masked, Objective::autoregressive}) {
    const Model m = random_model(toy_config(obj), 5);
    const std::vector<int> tokens = {kBosToken, 5, 11, 7, 24, 9};
    const auto trace = forward(m, tokens);
    const auto ref = oracle::forward(m, tokens);
    double max_err = 0.0;
    for (size_t l = 0; l < ref.states.size(); ++l)
      for (int t = 0; t < 6; ++t)
        for (int j = 0; j < m.config.d_model; ++j)
          max_err = std::max(max_err, std::abs(double(trace.states[l].at(t, j)) -
                                               double(ref.states[l][t][j])));
    for (int t = 0; t < 6; ++t)
      for (int v = 0; v < m.config.vocab_size; ++v)
        max_err =
            std::max(max_err, std::abs(double(trace.logits.at(t, v)) - double(ref.logits[t][v])));
    std::printf("  %s mode: max |impl - oracle| = %.3e\n", objective_name(obj), max_err);
    EXPECT_LT(max_err, 1e-5);
  }
  EXPECT_LT(elapsed_s(report.start), 10.0);
}

// Criterion 3: intervention exactness.
TEST(Acceptance, Criterion3_InterventionExactness) {
  CriterionReport report(3, "intervention exactness");
  // (a) empty intervention: zero effect everywhere
  {
    const Model m = random_model(toy_config(Objective::masked), 7);
    const std::vector<int> tokens = {5, 6, 7, 8, 9, 10};
    InterventionSpec spec;
    spec.source_layer = 0;
    spec.eval_positions = {0, 1, 2, 3, 4, 5};
    const auto normal = forward(m, tokens);
    const auto skipped = skipped_forward(m, tokens, spec);
    const auto effects = propagated_effects(normal, skipped, 0, spec.eval_positions);
    for (double e : effects.l2) EXPECT_EQ(e, 0.0);
    EXPECT_EQ(output_effect(normal, skipped, spec.eval_positions, OutputSpace::probabilities), 0.0);
  }
  // (b) zero-update source layer: all-zero EffectMatrix row
  {
    Model m = random_model(toy_config(Objective::masked), 8);
    m.params.layers[0].wo.fill(0.f);
    m.params.layers[0].bo.fill(0.f);
    m.params.layers[0].w_out.fill(0.f);
    m.params.layers[0].b_out.fill(0.f);
    std::vector<Prompt> prompts = {{{5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16}, "p"}};
    SkiplayerOptions opts;
    opts.repeats = 2;
    opts.seed = 3;
    const auto matrix = skiplayer_experiment(m, prompts, opts);
    for (int c = 0; c < matrix.num_layers; ++c) EXPECT_EQ(matrix.propagated.at(0, c), 0.0);
    EXPECT_EQ(matrix.output_prob[0], 0.0);
  }
  // (c) locality: at layer s+1 only intervened positions differ, bit-exact
  // elsewhere
  {
    const Model m = random_model(toy_config(Objective::masked), 9);
    const std::vector<int> tokens = {5, 6, 7, 8, 9, 10};
    InterventionSpec spec;
    spec.source_layer = 0;
    spec.intervened_positions = {1, 4};
    const auto normal = forward(m, tokens);
    const auto skipped = skipped_forward(m, tokens, spec);
    for (int t = 0; t < 6; ++t) {
      const bool intervened = t == 1 || t == 4;
      const bool identical = std::memcmp(normal.states[1].row(t), skipped.states[1].row(t),
                                         sizeof(float) * m.config.d_model) == 0;
      if (intervened) {
        EXPECT_TRUE(std::memcmp(skipped.states[1].row(t), normal.states[0].row(t),
                                sizeof(float) * m.config.d_model) == 0);
      } else {
        EXPECT_TRUE(identical);
      }
    }
  }
  // (d) AR causality: outputs at positions <= t_s unaffected by any change
  // at positions > t_s
  {
    const Model m = random_model(toy_config(Objective::autoregressive), 10);
    std::vector<int> a = {kBosToken, 5, 6, 7, 8, 9};
    std::vector<int> b = a;
    b[4] = 21;
    b[5] = 22;
    const int t_s = 3;
    const auto ta = forward(m, a);
    const auto tb = forward(m, b);
    for (int t = 0; t <= t_s; ++t)
      EXPECT_TRUE(std::memcmp(ta.logits.row(t), tb.logits.row(t),
                              sizeof(float) * m.config.vocab_size) == 0);
  }
  EXPECT_LT(elapsed_s(report.start), 30.0);
}

// Criterion 4: lens exactness at the final layer, KL floor everywhere.
TEST(Acceptance, Criterion4_LensExactness) {
  CriterionReport report(4, "lens exactness");
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    for (auto obj : {Objective::masked, Objective::autoregressive}) {
      ModelConfig cfg = toy_config(obj);
      cfg.num_layers = 3;
      const Model m = random_model(cfg, seed);
      std::vector<Prompt> prompts;
      Rng rng(seed + 100);
      for (int i = 0; i < 4; ++i) {
        Prompt p;
        p.origin = "p" + std::to_string(i);
        if (obj == Objective::autoregressive) p.tokens.push_back(kBosToken);
        for (int t = 0; t < 14; ++t)
          p.tokens.push_back(kNumSpecialTokens + static_cast<int>(rng.uniform_int(20)));
        prompts.push_back(std::move(p));
      }
      LensOptions opts;
      opts.seed = seed;
      const auto profile = lens_profile(m, prompts, opts);
      EXPECT_LE(std::abs(profile.mean_kl.back()), 1e-9);
      EXPECT_EQ(profile.top1_overlap.back(), 1.0);
      for (double kl : profile.mean_kl) EXPECT_GE(kl, -1e-9);
    }
  }
  EXPECT_LT(elapsed_s(report.start), 30.0);
}

// Criterion 5: scoring oracles on a 2-layer model with T <= 8.
TEST(Acceptance, Criterion5_ScoringOracle) {
  CriterionReport report(5, "scoring oracle");
  // masked-marginal vs explicit mask/forward/log-softmax oracle
  {
    const Model m = random_model(toy_config(Objective::masked), 15);
    const std::string wildtype = "ACDEFGHI";
    for (int pos = 1; pos <= 8; ++pos) {
      const char wt_aa = wildtype[pos - 1];
      const char mut_aa = wt_aa == 'W' ? 'Y' : 'W';
      for (int layer = 1; layer <= 2; ++layer) {
        std::vector<int> tokens = encode_wildtype(wildtype);
        tokens[pos - 1] = kMaskToken;
        const auto ref = oracle::forward(m, tokens);
        const auto& h = ref.states[layer][pos - 1];
        std::vector<float> logits(25);
        double mean = 0;
        for (float x : h) mean += x;
        mean /= h.size();
        double var = 0;
        for (float x : h) var += (x - mean) * (x - mean);
        var /= h.size();
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (int v = 0; v < 25; ++v) {
          double acc = 0;
          for (size_t j = 0; j < h.size(); ++j)
            acc += (m.params.final_gain.at(0, j) * ((h[j] - mean) * inv) +
                    m.params.final_bias.at(0, j)) *
                   m.params.unembed.at(j, v);
          logits[v] = static_cast<float>(acc);
        }
        const auto lsm = oracle::log_softmax(logits);
        const double expected = lsm[aa_to_token(mut_aa)] - lsm[aa_to_token(wt_aa)];
        const double actual =
            masked_marginal_score(m, wildtype, {Mutation{wt_aa, pos, mut_aa}}, layer);
        EXPECT_NEAR(actual, expected, 1e-6);
      }
    }
    // multi-mutation additivity is exact
    const Mutation m1{'C', 2, 'W'};
    const Mutation m2{'G', 6, 'K'};
    const double s1 = masked_marginal_score(m, wildtype, {m1}, 2);
    const double s2 = masked_marginal_score(m, wildtype, {m2}, 2);
    EXPECT_EQ(masked_marginal_score(m, wildtype, {m1, m2}, 2), s1 + s2);
    // layer-L scoring matches the model's native logits bit-exactly
    std::vector<int> tokens = encode_wildtype(wildtype);
    tokens[1] = kMaskToken;
    const auto trace = forward(m, tokens);
    std::vector<float> row(trace.logits.row(1), trace.logits.row(1) + 25);
    const auto lsm = log_softmax(row);
    const double native = lsm[aa_to_token('W')] - lsm[aa_to_token('C')];
    EXPECT_EQ(masked_marginal_score(m, wildtype, {m1}, 2), native);
  }
  // AR likelihood vs per-position enumeration oracle
  {
    const Model m = random_model(toy_config(Objective::autoregressive), 16);
    const std::string seq = "ACDEFGH";
    const auto enc = encode_sequence(seq, true);
    for (int layer = 1; layer <= 2; ++layer) {
      const auto ref = oracle::forward(m, enc.tokens);
      double expected = 0.0;
      for (size_t t = 0; t + 1 < enc.tokens.size(); ++t) {
        const auto& h = ref.states[layer][t];
        std::vector<float> logits(25);
        double mean = 0;
        for (float x : h) mean += x;
        mean /= h.size();
        double var = 0;
        for (float x : h) var += (x - mean) * (x - mean);
        var /= h.size();
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (int v = 0; v < 25; ++v) {
          double acc = 0;
          for (size_t j = 0; j < h.size(); ++j)
            acc += (m.params.final_gain.at(0, j) * ((h[j] - mean) * inv) +
                    m.params.final_bias.at(0, j)) *
                   m.params.unembed.at(j, v);
          logits[v] = static_cast<float>(acc);
        }
        expected += oracle::log_softmax(logits)[enc.tokens[t + 1]];
      }
      EXPECT_NEAR(ar_score(m, seq, layer), expected, 1e-6);
    }
  }
  EXPECT_LT(elapsed_s(report.start), 60.0);
}

// Criterion 6: Spearman vs the independent rank-then-Pearson oracle.
TEST(Acceptance, Criterion6_SpearmanOracle) {
  CriterionReport report(6, "Spearman oracle");
  EXPECT_DOUBLE_EQ(*spearman(std::vector<double>{1, 2, 3}, std::vector<double>{5, 9, 11}), 1.0);
  EXPECT_DOUBLE_EQ(*spearman(std::vector<double>{1, 2, 3}, std::vector<double>{4, 2, 0}), -1.0);
  Rng rng(2718);
  int compared = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = 2 + static_cast<int>(rng.uniform_int(49));  // n <= 50
    std::vector<double> a(n), b(n);
    for (auto& x : a) x = static_cast<double>(rng.uniform_int(10));  // tie-bearing
    for (auto& x : b) x = static_cast<double>(rng.uniform_int(10));
    const auto ours = spearman(a, b);
    bool a_const = true, b_const = true;
    for (double x : a) a_const = a_const && x == a[0];
    for (double x : b) b_const = b_const && x == b[0];
    if (a_const || b_const) {
      EXPECT_FALSE(ours.has_value());
      continue;
    }
    ASSERT_TRUE(ours.has_value());
    EXPECT_NEAR(*ours, oracle::spearman(a, b), 1e-9);
    ++compared;
  }
  std::printf("  compared %d random tie-bearing vectors\n", compared);
}

// Criterion 7: qualitative depth trends on the trained 8-layer fixture.
TEST(Acceptance, Criterion7_DepthTrends) {
  CriterionReport report(7, "depth-trend reproduction on trained fixture");
  const auto& fixture = trained_fixture();
  const auto analyses_start = clock_type::now();
  EXPECT_LT(fixture.final_loss, fixture.init_loss);
  // trained-model quality bar, measured once on the frozen fixture
  EXPECT_LT(fixture.final_loss, 0.8 * std::log(25.0));

  // 40 prompts of length 64 from the same generator family
  std::vector<Prompt> prompts;
  for (int i = 0; i < 40; ++i) {
    Rng rng(derive_seed(kFixtureSeed, {0x70726f6dull, static_cast<std::uint64_t>(i)}));
    Prompt p;
    p.origin = "prompt" + std::to_string(i);
    const auto enc = encode_sequence(sample_sequence(fixture.generator, 64, rng), false);
    p.tokens = enc.tokens;
    prompts.push_back(std::move(p));
  }

  const int layers = fixture.model.config.num_layers;  // 8
  const int third = layers / 3;                        // 2

  // (a) skiplayer: early sources propagate more than late sources. The
  // statistic uses strictly-propagated entries (downstream state >= s + 2)
  // so structural zeros at s + 1 play no part.
  {
    SkiplayerOptions opts;
    opts.repeats = 4;
    opts.seed = kFixtureSeed;
    opts.threads = default_thread_count();
    const auto matrix = skiplayer_experiment(fixture.model, prompts, opts);
    double first_sum = 0.0, last_sum = 0.0;
    int first_n = 0, last_n = 0;
    for (int s = 0; s < layers; ++s) {
      for (int c = s + 1; c < layers; ++c) {  // state h_{c+1} >= h_{s+2}
        if (s < third) {
          first_sum += matrix.propagated.at(s, c);
          ++first_n;
        } else if (s >= layers - third) {
          last_sum += matrix.propagated.at(s, c);
          ++last_n;
        }
      }
    }
    ASSERT_GT(first_n, 0);
    ASSERT_GT(last_n, 0);
    const double first_mean = first_sum / first_n;
    const double last_mean = last_sum / last_n;
    std::printf("  (a) propagated effect: first-third mean %.4f vs last-third mean %.4f\n",
                first_mean, last_mean);
    EXPECT_GT(first_mean, last_mean);
  }

  // (b) lens KL decreases toward the output
  {
    LensOptions opts;
    opts.seed = kFixtureSeed;
    opts.threads = default_thread_count();
    const auto profile = lens_profile(fixture.model, prompts, opts);
    const int quartile = layers / 4;  // 2
    double first_q = 0.0, last_q = 0.0;
    for (int l = 0; l < quartile; ++l) first_q += profile.mean_kl[l];
    for (int l = layers - quartile; l < layers; ++l) last_q += profile.mean_kl[l];
    first_q /= quartile;
    last_q /= quartile;
    std::printf("  (b) lens KL: first-quartile mean %.4f vs last-quartile mean %.6f\n", first_q,
                last_q);
    EXPECT_LT(last_q, first_q);
  }

  // (c) layer-wise Spearman on a zero-noise synthetic assay improves with
  // depth; final layer clears the frozen floor.
  {
    Rng wt_rng(derive_seed(kFixtureSeed, {0x7774ull}));
    const std::string wildtype = sample_sequence(fixture.generator, 40, wt_rng);
    Rng assay_rng(derive_seed(kFixtureSeed, {0x617373ull}));
    const Assay assay = make_assay(fixture.generator, wildtype, 0.0, assay_rng);
    ScoringOptions opts;
    opts.threads = default_thread_count();
    const auto table = layerwise_spearman(fixture.model, assay, opts);
    const int quartile = layers / 4;
    double first_q = 0.0, last_q = 0.0;
    for (int l = 0; l < quartile; ++l) {
      ASSERT_TRUE(table.spearman_per_layer[l].has_value());
      first_q += *table.spearman_per_layer[l];
    }
    for (int l = layers - quartile; l < layers; ++l) {
      ASSERT_TRUE(table.spearman_per_layer[l].has_value());
      last_q += *table.spearman_per_layer[l];
    }
    first_q /= quartile;
    last_q /= quartile;
    const double rho_final = *table.spearman_per_layer.back();
    std::printf("  (c) Spearman: first-quartile mean %.4f, last-quartile mean %.4f, rho_L %.4f\n",
                first_q, last_q, rho_final);
    EXPECT_GT(last_q, first_q);
    EXPECT_GT(rho_final, 0.3);
  }

  const double total = fixture.train_seconds + elapsed_s(analyses_start);
  std::printf("  end-to-end runtime %.0f s (train %.0f s)\n", total, fixture.train_seconds);
  EXPECT_LT(total, 900.0);
}

// Criterion 8: byte-identical CSVs for every subcommand, independent of
// --threads.
TEST(Acceptance, Criterion8_Reproducibility) {
  CriterionReport report(8, "byte-identical CSVs across seeds and threads");
  const fs::path synth1 = fresh_dir("dp_accept_synth1");
  const fs::path synth2 = fresh_dir("dp_accept_synth2");
  const std::string synth_args = "synth --seed 31 --count 4 --length 24 --assay --noise 0.1 "
                                 "--wildtype-length 8 ";
  ASSERT_EQ(run_cli(synth_args + "--out " + synth1.string()), 0);
  ASSERT_EQ(run_cli(synth_args + "--out " + synth2.string()), 0);
  EXPECT_EQ(read_file(synth1 / "prompts.fasta"), read_file(synth2 / "prompts.fasta"));
  EXPECT_EQ(read_file(synth1 / "assay.csv"), read_file(synth2 / "assay.csv"));

  const fs::path train1 = fresh_dir("dp_accept_train1");
  const fs::path train2 = fresh_dir("dp_accept_train2");
  const std::string train_args = "train --seed 32 --steps 20 --batch 4 --seqlen 16 --layers 2 "
                                 "--dmodel 16 --heads 2 --dff 32 --maxseq 32 ";
  ASSERT_EQ(run_cli(train_args + "--threads 1 --out " + train1.string()), 0);
  ASSERT_EQ(run_cli(train_args + "--threads 4 --out " + train2.string()), 0);
  EXPECT_EQ(read_file(train1 / "train_curve.csv"), read_file(train2 / "train_curve.csv"));
  EXPECT_EQ(read_file(train1 / "model.dpw"), read_file(train2 / "model.dpw"));

  const std::string model = (train1 / "model.dpw").string();
  const std::string prompts = (synth1 / "prompts.fasta").string();

  const fs::path skip1 = fresh_dir("dp_accept_skip1");
  const fs::path skip2 = fresh_dir("dp_accept_skip2");
  const std::string skip_args =
      "skiplayer --model " + model + " --prompts " + prompts + " --seed 33 --repeats 2 ";
  ASSERT_EQ(run_cli(skip_args + "--threads 1 --out " + skip1.string()), 0);
  ASSERT_EQ(run_cli(skip_args + "--threads 4 --out " + skip2.string()), 0);
  EXPECT_EQ(read_file(skip1 / "skiplayer_propagated.csv"),
            read_file(skip2 / "skiplayer_propagated.csv"));
  EXPECT_EQ(read_file(skip1 / "skiplayer_output.csv"), read_file(skip2 / "skiplayer_output.csv"));

  const fs::path lens1 = fresh_dir("dp_accept_lens1");
  const fs::path lens2 = fresh_dir("dp_accept_lens2");
  const std::string lens_args = "lens --model " + model + " --prompts " + prompts + " --seed 34 ";
  ASSERT_EQ(run_cli(lens_args + "--threads 1 --out " + lens1.string()), 0);
  ASSERT_EQ(run_cli(lens_args + "--threads 4 --out " + lens2.string()), 0);
  EXPECT_EQ(read_file(lens1 / "lens_profile.csv"), read_file(lens2 / "lens_profile.csv"));

  const fs::path score1 = fresh_dir("dp_accept_score1");
  const fs::path score2 = fresh_dir("dp_accept_score2");
  const std::string score_args = "score --model " + model + " --assay " +
                                 (synth1 / "assay.csv").string() + " --wildtype " +
                                 (synth1 / "wildtype.fasta").string() + " --seed 35 ";
  ASSERT_EQ(run_cli(score_args + "--threads 1 --out " + score1.string()), 0);
  ASSERT_EQ(run_cli(score_args + "--threads 4 --out " + score2.string()), 0);
  EXPECT_EQ(read_file(score1 / "scores.csv"), read_file(score2 / "scores.csv"));
  EXPECT_EQ(read_file(score1 / "variant_scores.csv"), read_file(score2 / "variant_scores.csv"));
}

// Criterion 9: container and FASTA robustness.
TEST(Acceptance, Criterion9_FormatRobustness) {
  CriterionReport report(9, "format robustness");
  const Model m = random_model(toy_config(Objective::masked), 41);
  const fs::path dir = fresh_dir("dp_accept_fmt");
  const std::string path = (dir / "model.dpw").string();
  save_model(m, path);
  const Model loaded = load_model(path);
  const std::vector<int> tokens = {5, 6, 7, 8};
  EXPECT_TRUE(forward(m, tokens).logits == forward(loaded, tokens).logits);

  auto bytes = serialize_model(m);
  {
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(deserialize_model(bad), FormatError);
  }
  {
    auto bad = bytes;
    bad.resize(bad.size() - 8);
    try {
      deserialize_model(bad);
      FAIL() << "expected truncation error";
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("truncated payload"), std::string::npos);
    }
  }
  {
    const std::uint32_t header_len = detail::get_u32_le(bytes.data() + 4);
    auto header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    header["tensors"][0]["shape"] = {8, 64};
    const std::string header_text = header.dump();
    std::vector<std::uint8_t> patched(bytes.begin(), bytes.begin() + 4);
    detail::put_u32_le(patched, static_cast<std::uint32_t>(header_text.size()));
    patched.insert(patched.end(), header_text.begin(), header_text.end());
    patched.insert(patched.end(), bytes.begin() + 8 + header_len, bytes.end());
    try {
      deserialize_model(patched);
      FAIL() << "expected shape mismatch";
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos);
    }
  }
  {
    const fs::path fasta = dir / "unknowns.fasta";
    std::ofstream out(fasta);
    out << ">seq\nACDXBZ\n";
    out.close();
    const auto set = load_prompts(fasta.string(), false);
    EXPECT_EQ(set.unknown_count, 3);  // X, B, Z
    EXPECT_EQ(set.prompts[0].tokens[3], kUnkToken);
  }
}
