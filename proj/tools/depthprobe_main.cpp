// depthprobe: train a desk-scale transformer on synthetic protein-like
// sequences and measure how much each layer contributes to downstream
// computation (layer-skip effects, LogitLens depth profiles, layer-wise
// mutation-effect scoring).

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "depthprobe/csv.hpp"
#include "depthprobe/intervention.hpp"
#include "depthprobe/lens.hpp"
#include "depthprobe/log.hpp"
#include "depthprobe/manifest.hpp"
#include "depthprobe/model_io.hpp"
#include "depthprobe/scoring.hpp"
#include "depthprobe/svg.hpp"
#include "depthprobe/synthgen.hpp"
#include "depthprobe/trainer.hpp"
#include "depthprobe/version.hpp"

namespace fs = std::filesystem;
using namespace depthprobe;

namespace {

constexpr std::uint64_t kSynthGeneratorStream = 0x67656ell;
constexpr std::uint64_t kSynthPromptStream = 0x70726f6dull;
constexpr std::uint64_t kSynthAssayStream = 0x61737361ull;
constexpr std::uint64_t kTrainGeneratorStream = 0x67656ell;  // same scheme as synth

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

struct CommonArgs {
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = default_thread_count();
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--out", args.out_dir, "output directory")->required();
  cmd->add_option("--seed", args.seed, "master seed");
  cmd->add_option("--threads", args.threads, "worker thread cap");
}

RunManifest base_manifest(const std::string& command, const CommonArgs& args) {
  RunManifest m;
  m.command = command;
  m.seed = args.seed;
  m.config["threads"] = args.threads;
  return m;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonArgs& args, int count, int length, int hmm_states,
              double concentration, bool with_assay, double noise, int wildtype_length) {
  fs::create_directories(args.out_dir);
  Rng gen_rng(derive_seed(args.seed, {kSynthGeneratorStream}));
  const SeqGenerator gen = build_generator(hmm_states, concentration, gen_rng);

  std::vector<FastaRecord> records;
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(args.seed, {kSynthPromptStream, static_cast<std::uint64_t>(i)}));
    records.push_back({"synth_" + std::to_string(i), sample_sequence(gen, length, rng)});
  }
  write_fasta_file(args.out_dir + "/prompts.fasta", records);

  RunManifest manifest = base_manifest("synth", args);
  manifest.config["count"] = count;
  manifest.config["length"] = length;
  manifest.config["hmm_states"] = hmm_states;
  manifest.config["concentration"] = concentration;

  if (with_assay) {
    Rng assay_rng(derive_seed(args.seed, {kSynthAssayStream}));
    const std::string wildtype = sample_sequence(gen, wildtype_length, assay_rng);
    const Assay assay = make_assay(gen, wildtype, noise, assay_rng, "synthetic");
    write_fasta_file(args.out_dir + "/wildtype.fasta", {{"wildtype", wildtype}});
    write_assay_csv(assay, args.out_dir + "/assay.csv");
    manifest.config["assay_noise"] = noise;
    manifest.config["wildtype_length"] = wildtype_length;
    log::info("synth: wrote " + std::to_string(assay.variants.size()) + " assay variants");
  }
  log::info("synth: wrote " + std::to_string(records.size()) + " prompts to " + args.out_dir);
  write_manifest(manifest, args.out_dir);
  return 0;
}

int cmd_train(const CommonArgs& args, const ModelConfig& mcfg, TrainConfig tcfg, int hmm_states,
              double concentration) {
  fs::create_directories(args.out_dir);
  tcfg.seed = args.seed;
  tcfg.threads = args.threads;

  Rng gen_rng(derive_seed(args.seed, {kTrainGeneratorStream}));
  const SeqGenerator gen = build_generator(hmm_states, concentration, gen_rng);

  const auto result = train(mcfg, tcfg, gen, [&](int step, double loss) {
    if (step % 100 == 0)
      log::info("train: step " + std::to_string(step) + " loss " + csv_num(loss));
  });
  log::info("train: held-out loss " + csv_num(result.init_heldout_loss) + " -> " +
            csv_num(result.final_heldout_loss));

  const std::string model_path = args.out_dir + "/model.dpw";
  save_model(result.model, model_path);
  {
    CsvWriter curve(args.out_dir + "/train_curve.csv", {"step", "loss"});
    for (size_t i = 0; i < result.loss_curve.size(); ++i)
      curve.row({csv_num(static_cast<int>(i)), csv_num(result.loss_curve[i])});
  }

  RunManifest manifest = base_manifest("train", args);
  manifest.config["model"] = config_to_json(mcfg);
  manifest.config["steps"] = tcfg.steps;
  manifest.config["batch_size"] = tcfg.batch_size;
  manifest.config["seq_len"] = tcfg.seq_len;
  manifest.config["learning_rate"] = tcfg.learning_rate;
  manifest.config["mask_rate"] = tcfg.mask_rate;
  manifest.config["hmm_states"] = hmm_states;
  manifest.config["concentration"] = concentration;
  manifest.config["init_heldout_loss"] = result.init_heldout_loss;
  manifest.config["final_heldout_loss"] = result.final_heldout_loss;
  manifest.model_fingerprint = file_fingerprint(model_path);
  write_manifest(manifest, args.out_dir);
  return 0;
}

int cmd_skiplayer(const CommonArgs& args, const std::string& model_path,
                  const std::string& prompts_path, int repeats, double mask_rate) {
  fs::create_directories(args.out_dir);
  const Model model = load_model(model_path);
  const auto prompt_set =
      load_prompts(prompts_path, model.config.objective == Objective::autoregressive);
  if (prompt_set.unknown_count > 0)
    log::info("skiplayer: " + std::to_string(prompt_set.unknown_count) +
              " letters mapped to UNK");

  SkiplayerOptions opts;
  opts.repeats = repeats;
  opts.mask_rate = mask_rate;
  opts.seed = args.seed;
  opts.threads = args.threads;
  const EffectMatrix effects = skiplayer_experiment(model, prompt_set.prompts, opts);

  write_propagated_csv(effects, args.out_dir + "/skiplayer_propagated.csv");
  write_output_effect_csv(effects, args.out_dir + "/skiplayer_output.csv");
  write_text(args.out_dir + "/skiplayer_propagated.svg",
             emit_heatmap(effects.propagated, "downstream layer", "source layer",
                          "max propagated effect of skipping each layer"));
  {
    const int layers = effects.num_layers;
    Series prob{"prob space", {}};
    Series logit{"logit space", {}};
    for (int s = 0; s < layers; ++s) {
      const double depth = static_cast<double>(s) / layers;
      prob.points.push_back({depth, effects.output_prob[static_cast<size_t>(s)]});
      logit.points.push_back({depth, effects.output_logit[static_cast<size_t>(s)]});
    }
    write_text(args.out_dir + "/skiplayer_output.svg",
               emit_lines({prob, logit}, "source layer relative depth", "max output l2 change",
                          "output change under layer skipping"));
  }

  RunManifest manifest = base_manifest("skiplayer", args);
  manifest.config["prompts"] = prompts_path;
  manifest.config["repeats"] = repeats;
  manifest.config["mask_rate"] = mask_rate;
  manifest.config["aggregation"] = effects.aggregation;
  manifest.model_fingerprint = file_fingerprint(model_path);
  write_manifest(manifest, args.out_dir);
  return 0;
}

int cmd_lens(const CommonArgs& args, const std::string& model_path,
             const std::string& prompts_path, double mask_rate) {
  fs::create_directories(args.out_dir);
  const Model model = load_model(model_path);
  const auto prompt_set =
      load_prompts(prompts_path, model.config.objective == Objective::autoregressive);
  if (prompt_set.unknown_count > 0)
    log::info("lens: " + std::to_string(prompt_set.unknown_count) + " letters mapped to UNK");

  LensOptions opts;
  opts.mask_rate = mask_rate;
  opts.seed = args.seed;
  opts.threads = args.threads;
  const LensProfile profile = lens_profile(model, prompt_set.prompts, opts);

  write_lens_csv(profile, args.out_dir + "/lens_profile.csv");
  Series kl{"mean KL(p_L || p_l)", {}};
  Series top1{"top-1 overlap", {}};
  for (int l = 1; l <= profile.num_layers; ++l) {
    const double depth = static_cast<double>(l) / profile.num_layers;
    kl.points.push_back({depth, profile.mean_kl[static_cast<size_t>(l - 1)]});
    top1.points.push_back({depth, profile.top1_overlap[static_cast<size_t>(l - 1)]});
  }
  write_text(args.out_dir + "/lens_kl.svg",
             emit_lines({kl}, "relative depth", "KL divergence", "LogitLens KL profile"));
  write_text(args.out_dir + "/lens_top1.svg",
             emit_lines({top1}, "relative depth", "top-1 overlap", "LogitLens top-1 profile"));

  RunManifest manifest = base_manifest("lens", args);
  manifest.config["prompts"] = prompts_path;
  manifest.config["mask_rate"] = mask_rate;
  manifest.config["eval_policy"] = profile.eval_policy;
  manifest.config["aggregation"] = "mean";
  manifest.config["n_positions"] = profile.n_positions;
  manifest.config["kl_clamp_count"] = profile.clamp_count;
  manifest.model_fingerprint = file_fingerprint(model_path);
  write_manifest(manifest, args.out_dir);
  return 0;
}

int cmd_score(const CommonArgs& args, const std::string& model_path,
              const std::vector<std::string>& assay_paths, const std::string& wildtype_path,
              bool length_normalize) {
  fs::create_directories(args.out_dir);
  const Model model = load_model(model_path);
  const auto wildtypes = read_fasta_file(wildtype_path);
  if (wildtypes.size() != assay_paths.size() && wildtypes.size() != 1)
    throw ValueError("score: wildtype FASTA must have 1 record or one per assay");

  ScoringOptions opts;
  opts.length_normalize = length_normalize;
  opts.threads = args.threads;

  std::vector<ScoreTable> tables;
  for (size_t i = 0; i < assay_paths.size(); ++i) {
    std::ifstream in(assay_paths[i]);
    if (!in) throw FormatError("cannot open assay CSV: " + assay_paths[i]);
    const std::string wildtype =
        wildtypes.size() == 1 ? wildtypes[0].sequence : wildtypes[i].sequence;
    const Assay assay = parse_assay(in, wildtype, stem_of(assay_paths[i]));
    tables.push_back(layerwise_spearman(model, assay, opts));
    log::info("score: assay '" + tables.back().assay_id + "' with " +
              std::to_string(assay.variants.size()) + " variants");
  }

  write_scores_csv(tables, args.out_dir + "/scores.csv");
  write_variant_scores_csv(tables, args.out_dir + "/variant_scores.csv");

  std::vector<Series> series;
  for (const ScoreTable& t : tables) {
    Series s{t.assay_id, {}};
    for (int l = 1; l <= t.num_layers; ++l) {
      const auto& rho = t.spearman_per_layer[static_cast<size_t>(l - 1)];
      if (rho) s.points.push_back({t.relative_depth(l), *rho});
    }
    if (!s.points.empty()) series.push_back(std::move(s));
  }
  if (tables.size() > 1) {
    const auto mean = mean_spearman(tables);
    Series s{"mean", {}};
    for (int l = 1; l <= tables.front().num_layers; ++l)
      if (mean[static_cast<size_t>(l - 1)])
        s.points.push_back({tables.front().relative_depth(l), *mean[static_cast<size_t>(l - 1)]});
    if (!s.points.empty()) series.push_back(std::move(s));
  }
  if (!series.empty())
    write_text(args.out_dir + "/score_spearman.svg",
               emit_lines(series, "relative depth", "Spearman rho",
                          "layer-wise mutation-effect prediction"));

  RunManifest manifest = base_manifest("score", args);
  manifest.config["assays"] = assay_paths;
  manifest.config["wildtype"] = wildtype_path;
  manifest.config["length_normalize"] = length_normalize;
  manifest.config["ar_score_normalization"] =
      length_normalize ? "mean-per-token" : "unnormalized-sum";
  manifest.model_fingerprint = file_fingerprint(model_path);
  write_manifest(manifest, args.out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"depth-analysis toolkit for a desk-scale protein transformer"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic prompts and assays");
  CommonArgs synth_args;
  add_common(synth, synth_args);
  int synth_count = 40;
  int synth_length = 64;
  int synth_states = 6;
  double synth_conc = 0.2;
  bool synth_assay = false;
  double synth_noise = 0.0;
  int synth_wt_len = 40;
  synth->add_option("--count", synth_count, "number of prompt sequences");
  synth->add_option("--length", synth_length, "prompt length");
  synth->add_option("--hmm-states", synth_states, "hidden states in the generator");
  synth->add_option("--concentration", synth_conc, "Dirichlet concentration for generator rows");
  synth->add_flag("--assay", synth_assay, "also emit wildtype.fasta and assay.csv");
  synth->add_option("--noise", synth_noise, "assay measurement noise sigma");
  synth->add_option("--wildtype-length", synth_wt_len, "assay wildtype length");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model on synthetic sequences");
  CommonArgs train_args;
  add_common(train_cmd, train_args);
  ModelConfig mcfg;
  TrainConfig tcfg;
  std::string train_objective = "masked";
  int train_states = 6;
  double train_conc = 0.2;
  train_cmd->add_option("--objective", train_objective, "masked|autoregressive");
  train_cmd->add_option("--steps", tcfg.steps, "optimizer steps");
  train_cmd->add_option("--batch", tcfg.batch_size, "sequences per batch");
  train_cmd->add_option("--seqlen", tcfg.seq_len, "training sequence length");
  train_cmd->add_option("--lr", tcfg.learning_rate, "Adam step size");
  train_cmd->add_option("--mask-rate", tcfg.mask_rate, "masking rate for the masked objective");
  train_cmd->add_option("--layers", mcfg.num_layers, "transformer blocks");
  train_cmd->add_option("--dmodel", mcfg.d_model, "residual width");
  train_cmd->add_option("--heads", mcfg.num_heads, "attention heads");
  train_cmd->add_option("--dff", mcfg.d_ff, "MLP hidden width");
  train_cmd->add_option("--vocab", mcfg.vocab_size, "vocabulary size (>= 25)");
  train_cmd->add_option("--maxseq", mcfg.max_seq_len, "maximum sequence length");
  train_cmd->add_option("--hmm-states", train_states, "hidden states in the data generator");
  train_cmd->add_option("--concentration", train_conc, "Dirichlet concentration");

  // skiplayer
  auto* skip = app.add_subcommand("skiplayer", "layer-skip intervention experiment");
  CommonArgs skip_args;
  add_common(skip, skip_args);
  std::string skip_model, skip_prompts;
  int skip_repeats = 4;
  double skip_mask_rate = 0.15;
  skip->add_option("--model", skip_model, "model .dpw path")->required();
  skip->add_option("--prompts", skip_prompts, "FASTA or plain-text prompts")->required();
  skip->add_option("--repeats", skip_repeats, "intervention draws per prompt");
  skip->add_option("--mask-rate", skip_mask_rate, "masking rate (masked models)");

  // lens
  auto* lens = app.add_subcommand("lens", "LogitLens depth profile");
  CommonArgs lens_args;
  add_common(lens, lens_args);
  std::string lens_model, lens_prompts;
  double lens_mask_rate = 0.15;
  lens->add_option("--model", lens_model, "model .dpw path")->required();
  lens->add_option("--prompts", lens_prompts, "FASTA or plain-text prompts")->required();
  lens->add_option("--mask-rate", lens_mask_rate, "masking rate (masked models)");

  // score
  auto* score = app.add_subcommand("score", "layer-wise mutation-effect scoring");
  CommonArgs score_args;
  add_common(score, score_args);
  std::string score_model, score_wildtype;
  std::vector<std::string> score_assays;
  bool score_norm = false;
  score->add_option("--model", score_model, "model .dpw path")->required();
  score->add_option("--assay", score_assays, "assay CSV (repeatable)")->required();
  score->add_option("--wildtype", score_wildtype, "wildtype FASTA")->required();
  score->add_flag("--length-normalize", score_norm, "AR scores as mean per-token log-likelihood");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return cmd_synth(synth_args, synth_count, synth_length, synth_states, synth_conc,
                       synth_assay, synth_noise, synth_wt_len);
    if (train_cmd->parsed()) {
      mcfg.objective = objective_from_name(train_objective);
      tcfg.objective = mcfg.objective;
      return cmd_train(train_args, mcfg, tcfg, train_states, train_conc);
    }
    if (skip->parsed())
      return cmd_skiplayer(skip_args, skip_model, skip_prompts, skip_repeats, skip_mask_rate);
    if (lens->parsed()) return cmd_lens(lens_args, lens_model, lens_prompts, lens_mask_rate);
    if (score->parsed())
      return cmd_score(score_args, score_model, score_assays, score_wildtype, score_norm);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
