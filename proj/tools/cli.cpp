#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "svmixer/encoder.hpp"
#include "svmixer/errors.hpp"
#include "svmixer/eval.hpp"
#include "svmixer/gradcheck.hpp"
#include "svmixer/io.hpp"
#include "svmixer/profiler.hpp"
#include "svmixer/synth.hpp"
#include "svmixer/trainer.hpp"

namespace svmixer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags shared by every subcommand. Unset optionals leave the config value alone.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> variant;
  std::optional<std::size_t> frames;
  std::string out;

  std::optional<std::size_t> H, L, G, expansion, conv_channels, embed_dim;
  bool no_lgm = false, no_msm = false, no_gcm = false;

  std::optional<double> lr0, weight_decay, lr_factor, crop_seconds;
  std::optional<std::size_t> batch_size, max_steps, max_epochs, plateau_patience,
      early_stop_patience, n_speakers, utterances_per_speaker, val_utts_per_speaker;

  std::optional<std::string> mode, penalty_scope;
  std::vector<std::size_t> matched_layers;
  std::optional<std::size_t> hard_k;
  std::optional<double> hard_multiplier, aam_scale, aam_margin, lambda_kd, lambda_cls;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Run config (flat JSON)");
  app->add_option("--seed", c.seed, "Seed for model init, shuffling and heads");
  app->add_option("--threads", c.threads, "Worker threads (1 is the reference)");
  app->add_option("--variant", c.variant, "svmixer or mlpmixer");
  app->add_option("--frames", c.frames, "Frames T per crop / for MAC counts");
  app->add_option("--out", c.out, "Output path");

  app->add_option("--H", c.H, "Channel width");
  app->add_option("--L", c.L, "Encoder blocks");
  app->add_option("--G", c.G, "GCM groups");
  app->add_option("--expansion", c.expansion, "MLP expansion factor");
  app->add_option("--conv-channels", c.conv_channels, "Frontend conv channels");
  app->add_option("--embed-dim", c.embed_dim, "Speaker embedding size");
  app->add_flag("--no-lgm", c.no_lgm, "Disable local-global mixing");
  app->add_flag("--no-msm", c.no_msm, "Disable multi-scale mixing");
  app->add_flag("--no-gcm", c.no_gcm, "Disable group channel mixing");

  app->add_option("--lr0", c.lr0);
  app->add_option("--weight-decay", c.weight_decay);
  app->add_option("--lr-factor", c.lr_factor);
  app->add_option("--crop-seconds", c.crop_seconds);
  app->add_option("--batch-size", c.batch_size);
  app->add_option("--max-steps", c.max_steps);
  app->add_option("--max-epochs", c.max_epochs);
  app->add_option("--plateau-patience", c.plateau_patience);
  app->add_option("--early-stop-patience", c.early_stop_patience);
  app->add_option("--n-speakers", c.n_speakers);
  app->add_option("--utterances-per-speaker", c.utterances_per_speaker);
  app->add_option("--val-utts-per-speaker", c.val_utts_per_speaker);

  app->add_option("--mode", c.mode, "final_state or multi_head");
  app->add_option("--matched-layers", c.matched_layers, "Teacher layers for multi_head");
  app->add_option("--penalty-scope", c.penalty_scope, "class or utterance");
  app->add_option("--hard-k", c.hard_k);
  app->add_option("--hard-multiplier", c.hard_multiplier);
  app->add_option("--aam-scale", c.aam_scale);
  app->add_option("--aam-margin", c.aam_margin);
  app->add_option("--lambda-kd", c.lambda_kd);
  app->add_option("--lambda-cls", c.lambda_cls);
}

template <class T>
void set_if(T& dst, const std::optional<T>& v) {
  if (v) dst = *v;
}

io::RunConfig resolve(const Common& c, io::RunConfig base) {
  io::RunConfig r = c.config_path.empty() ? base : io::read_run_config(c.config_path, base);
  EncoderConfig& e = r.encoder;
  set_if(e.H, c.H);
  set_if(e.L, c.L);
  set_if(e.G, c.G);
  set_if(e.expansion, c.expansion);
  set_if(e.conv_channels, c.conv_channels);
  set_if(e.embed_dim, c.embed_dim);
  set_if(e.frames, c.frames);
  if (c.variant) e.block_variant = parse_block_variant(*c.variant);
  if (c.no_lgm) e.use_lgm = false;
  if (c.no_msm) e.use_msm = false;
  if (c.no_gcm) e.use_gcm = false;

  TrainConfig& t = r.train;
  set_if(t.seed, c.seed);
  set_if(t.threads, c.threads);
  set_if(t.lr0, c.lr0);
  set_if(t.weight_decay, c.weight_decay);
  set_if(t.lr_factor, c.lr_factor);
  set_if(t.crop_seconds, c.crop_seconds);
  set_if(t.batch_size, c.batch_size);
  set_if(t.max_steps, c.max_steps);
  set_if(t.max_epochs, c.max_epochs);
  set_if(t.plateau_patience, c.plateau_patience);
  set_if(t.early_stop_patience, c.early_stop_patience);
  set_if(t.n_speakers, c.n_speakers);
  set_if(t.utterances_per_speaker, c.utterances_per_speaker);
  set_if(t.val_utts_per_speaker, c.val_utts_per_speaker);

  DistillConfig& d = r.distill;
  if (c.mode) d.mode = parse_distill_mode(*c.mode);
  if (!c.matched_layers.empty()) d.matched_teacher_layers = c.matched_layers;
  if (c.penalty_scope) d.penalty_scope = parse_penalty_scope(*c.penalty_scope);
  set_if(d.hard_k, c.hard_k);
  set_if(d.hard_multiplier, c.hard_multiplier);
  set_if(d.aam_scale, c.aam_scale);
  set_if(d.aam_margin, c.aam_margin);
  set_if(d.lambda_kd, c.lambda_kd);
  set_if(d.lambda_cls, c.lambda_cls);
  r.validate();
  return r;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::size_t crop_samples(const TrainConfig& t) {
  return static_cast<std::size_t>(std::llround(t.crop_seconds * kSampleRate));
}

std::vector<Utterance> synthetic_corpus(const TrainConfig& t) {
  SyntheticCorpus c;
  c.n_speakers = t.n_speakers;
  c.utterances_per_speaker = t.utterances_per_speaker;
  c.seed = t.corpus_seed;
  c.samples = crop_samples(t);
  return make_corpus(c);
}

void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    io::write_file(path, text);
  }
}

// ---- summary ---------------------------------------------------------------

int cmd_summary(const Common& c, std::ostream& out) {
  const io::RunConfig rc = resolve(c, io::RunConfig());
  const SvMixerModel model(rc.encoder, rc.train.seed);
  const profiler::VerifyReport v = profiler::verify_against_model(model);
  const EncoderConfig& e = rc.encoder;
  out << fmt("SvMixerModel variant=%s H=%zu L=%zu G=%zu expansion=%zu frames=%zu\n",
             to_string(e.block_variant).c_str(), e.H, e.L, e.G, e.expansion, e.frames);
  out << fmt("  stages per block: %s%s%s%s\n", e.lgm_enabled() ? "lgm " : "",
             e.msm_enabled() ? "msm " : "", e.token_mix_enabled() ? "token " : "",
             e.gcm_enabled() ? "gcm" : "channel");
  out << fmt("  %-26s %12s %12s\n", "module", "analytic", "census");
  for (const auto& r : v.rows) {
    out << fmt("  %-26s %12llu %12llu%s\n", r.name.c_str(), (unsigned long long)r.analytic,
               (unsigned long long)r.census, r.analytic == r.census ? "" : "  MISMATCH");
  }
  for (const auto& n : v.unaccounted) out << "  unaccounted tensor: " << n << "\n";
  out << fmt("total params %llu (analytic %llu)\n", (unsigned long long)v.census_total,
             (unsigned long long)v.analytic_total);
  if (!v.ok) throw CheckError("parameter census disagrees with the analytic count");
  return 0;
}

// ---- profile ---------------------------------------------------------------

json cost_json(const profiler::CostReport& r) {
  json rows = json::array();
  for (const auto& l : r.per_layer) rows.push_back({{"name", l.name}, {"params", l.params}, {"macs", l.macs}});
  return {{"model", r.model},
          {"frames", r.frames},
          {"config", json::parse(io::dump_encoder_config(r.config))},
          {"per_layer", rows},
          {"total_params", r.total_params},
          {"total_macs", r.total_macs}};
}

int cmd_profile(const Common& c, std::size_t ffn_dim, std::ostream& out) {
  io::RunConfig base;
  base.encoder = EncoderConfig();  // published-scale encoder unless overridden
  Common rest = c;
  rest.frames.reset();  // --frames is the MAC evaluation length here
  const io::RunConfig rc = resolve(rest, base);
  const std::size_t T = c.frames ? *c.frames : rc.encoder.frames;
  if (T == 0) throw ConfigError("profile: --frames must be at least 1");

  EncoderConfig mixer = rc.encoder;
  mixer.block_variant = BlockVariant::mlpmixer;
  EncoderConfig sv = rc.encoder;
  sv.block_variant = BlockVariant::svmixer;
  const std::vector<profiler::CostReport> reports{
      profiler::transformer_layer_cost(rc.encoder.H, ffn_dim, T),
      profiler::encoder_layer_cost(mixer, T), profiler::encoder_layer_cost(sv, T)};

  out << fmt("per-layer cost at H=%zu, T=%zu, expansion=%zu, G=%zu\n", rc.encoder.H, T,
             rc.encoder.expansion, rc.encoder.G);
  out << fmt("%-14s %14s %10s %12s %10s\n", "model", "params/layer", "M", "GMACs/layer", "vs transf.");
  const auto& tr = reports.front();
  for (const auto& r : reports) {
    out << fmt("%-14s %14llu %10.3f %12.4f %5.3f/%5.3f\n", r.model.c_str(),
               (unsigned long long)r.total_params, r.total_params / 1e6, r.total_macs / 1e9,
               double(r.total_params) / double(tr.total_params),
               double(r.total_macs) / double(tr.total_macs));
  }
  if (!c.out.empty()) {
    json j = {{"frames", T}, {"models", json::array()}};
    for (const auto& r : reports) j["models"].push_back(cost_json(r));
    io::write_file(c.out, j.dump(2) + "\n");
  }
  return 0;
}

// ---- gradcheck -------------------------------------------------------------

int cmd_gradcheck(const Common& c, const std::string& dims, const std::string& sabotage,
                  std::ostream& out) {
  if (dims != "small") throw ConfigError("gradcheck: only --dims small is supported");
  gradcheck::Options opt;
  if (c.seed) opt.seed = *c.seed;
  if (sabotage == "gelu") {
    ad::testing::set_sabotage(ad::testing::Sabotage::gelu);
  } else if (!sabotage.empty() && sabotage != "none") {
    throw ConfigError("gradcheck: unknown --sabotage '" + sabotage + "'");
  }
  gradcheck::Report rep;
  try {
    rep = gradcheck::run_all(opt);
  } catch (...) {
    ad::testing::set_sabotage(ad::testing::Sabotage::none);
    throw;
  }
  ad::testing::set_sabotage(ad::testing::Sabotage::none);
  out << rep.format();
  return rep.ok() ? 0 : 4;
}

// ---- train -----------------------------------------------------------------

int cmd_train(const Common& c, const std::vector<std::string>& feature_paths, std::ostream& out) {
  const io::RunConfig rc = resolve(c, io::RunConfig());
  const std::string dir = c.out.empty() ? "svmixer-run" : c.out;
  fs::create_directories(dir);

  Split split = split_corpus(synthetic_corpus(rc.train), rc.train.val_utts_per_speaker);
  std::unique_ptr<TeacherSource> teacher;
  if (feature_paths.empty()) {
    teacher = std::make_unique<SyntheticTeacher>(teacher_config(rc.encoder, rc.train),
                                                 rc.train.teacher_seed);
  } else {
    std::vector<io::FeatureFile> files;
    for (const auto& p : feature_paths) files.push_back(io::read_features(p));
    teacher = std::make_unique<FeatureFileTeacher>(std::move(files));
  }
  SvMixerModel model(rc.encoder, rc.train.seed);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    out << fmt("epoch %3zu  steps %5zu  train %.6f (kd %.6f, cls %.6f)  val %.6f  lr %.3e\n", m.epoch,
               m.steps, m.train_loss, m.train_kd, m.train_cls, m.val_loss, m.lr);
    out.flush();
  };
  const TrainResult r = train(model, split, *teacher, rc.train, rc.distill, hooks);

  io::save_checkpoint((fs::path(dir) / "model.ckpt").string(), model);
  io::write_file((fs::path(dir) / "metrics.jsonl").string(), metrics_jsonl(r));
  std::string steps;
  for (double l : r.step_losses) steps += fmt("%.17g\n", l);
  io::write_file((fs::path(dir) / "step_losses.txt").string(), steps);
  io::write_file((fs::path(dir) / "run_config.json").string(), io::dump_run_config(rc));

  if (!split.val.empty()) {
    const io::Embeddings emb = embed_utterances(model, split.val, crop_samples(rc.train));
    std::vector<std::size_t> spk;
    for (const auto& u : split.val) spk.push_back(u.speaker);
    const auto trials = score_all_pairs(emb, spk);
    const bool both = std::any_of(trials.begin(), trials.end(), [](const auto& t) { return t.target; }) &&
                      std::any_of(trials.begin(), trials.end(), [](const auto& t) { return !t.target; });
    if (both)
      out << fmt("validation pairs %zu  EER %.4f  MinDCF(0.05) %.4f\n", trials.size(),
               eval::eer(trials).eer, eval::min_dcf(trials));
  }
  out << fmt("%zu steps%s; wrote %s\n", r.steps, r.early_stopped ? " (early stop)" : "", dir.c_str());
  return 0;
}

// ---- embed -----------------------------------------------------------------

int cmd_embed(const Common& c, const std::string& model_path, const std::vector<std::string>& wavs,
              bool allow_any_rate, std::ostream& out) {
  if (model_path.empty()) throw ConfigError("embed: --model is required");
  if (wavs.empty()) throw ConfigError("embed: no input WAV files");
  const SvMixerModel model = io::load_model(model_path);
  const std::size_t samples = samples_for_frames(model.config(), model.config().frames);
  io::Embeddings emb;
  for (const auto& p : wavs) {
    const io::Wave w = io::read_wav(p, allow_any_rate);
    if (frames_for_samples(model.config(), w.samples.numel()) < model.config().frames) {
      throw DataError("embed: '" + p + "' has " + std::to_string(w.samples.numel()) +
                      " samples; the model needs at least " + std::to_string(samples));
    }
    // Centre crop to the longest input that still yields exactly `frames` frames.
    const std::size_t n = std::min(w.samples.numel(),
                                   samples_for_frames(model.config(), model.config().frames + 1) - 1);
    emb.emplace_back(fs::path(p).stem().string(), model.encode(center_crop(w.samples, n)).embedding);
  }
  write_output(c.out, io::format_embeddings(emb), out);
  return 0;
}

// ---- score -----------------------------------------------------------------

int cmd_score(const Common& c, const std::string& emb_path, const std::string& trials_path,
              double p_target, std::ostream& out, std::ostream& err) {
  if (emb_path.empty() || trials_path.empty()) {
    throw ConfigError("score: --embeddings and --trials are required");
  }
  const io::Embeddings emb = io::read_embeddings(emb_path);
  const std::vector<io::Trial> trials = io::read_trials(trials_path);
  std::map<std::string, const Tensor*> index;
  for (const auto& [id, v] : emb) index[id] = &v;
  std::vector<eval::TrialScore> scores;
  for (const auto& t : trials) {
    const auto a = index.find(t.enroll_id), b = index.find(t.test_id);
    if (a == index.end() || b == index.end()) {
      throw DataError("score: no embedding for '" + (a == index.end() ? t.enroll_id : t.test_id) + "'");
    }
    scores.push_back({t.enroll_id, t.test_id, eval::cosine_score(*a->second, *b->second), t.target});
  }
  write_output(c.out, io::format_scores(scores), out);
  std::size_t n_tar = 0;
  for (const auto& s : scores) n_tar += s.target ? 1 : 0;
  if (n_tar > 0 && n_tar < scores.size()) {
    err << fmt("trials %zu  EER %.6f  MinDCF(%.3g) %.6f\n", scores.size(), eval::eer(scores).eer,
               p_target, eval::min_dcf(scores, p_target));
  }
  return 0;
}

// ---- export-synth ----------------------------------------------------------

int cmd_export_synth(const Common& c, std::ostream& out) {
  const io::RunConfig rc = resolve(c, io::RunConfig());
  if (c.out.empty()) throw ConfigError("export-synth: --out DIR is required");
  const fs::path dir(c.out);
  fs::create_directories(dir / "wav");
  const std::vector<Utterance> corpus = synthetic_corpus(rc.train);

  std::string utt2spk;
  for (const auto& u : corpus) {
    io::write_wav((dir / "wav" / (u.id + ".wav")).string(), u.waveform);
    utt2spk += u.id + " " + fmt("spk%03zu", u.speaker) + "\n";
  }
  io::write_file((dir / "utt2spk.txt").string(), utt2spk);

  const Split split = split_corpus(corpus, rc.train.val_utts_per_speaker);
  std::vector<io::Trial> trials;
  for (std::size_t i = 0; i < split.val.size(); ++i)
    for (std::size_t j = i + 1; j < split.val.size(); ++j)
      trials.push_back({split.val[i].id, split.val[j].id, split.val[i].speaker == split.val[j].speaker});
  io::write_file((dir / "trials.txt").string(), io::format_trials(trials));

  // Frozen synthetic teacher targets, one file per layer the run needs.
  SyntheticTeacher teacher(teacher_config(rc.encoder, rc.train), rc.train.teacher_seed);
  std::vector<std::optional<std::size_t>> layers;
  if (rc.distill.mode == DistillMode::final_state) {
    layers.push_back(std::nullopt);
  } else {
    for (std::size_t l : rc.distill.matched_teacher_layers) layers.push_back(l);
  }
  const std::size_t samples = crop_samples(rc.train);
  for (const auto& l : layers) {
    io::FeatureFile f;
    f.teacher_name = fmt("synthetic-svmixer-H%zu-L%zu-seed%llu", rc.train.teacher_H,
                         rc.train.teacher_L, (unsigned long long)rc.train.teacher_seed);
    f.layer = l;
    f.T = teacher.frames();
    f.H = teacher.hidden();
    for (const auto& u : corpus) {
      f.ids.push_back(u.id);
      f.blocks.push_back(teacher.features(u, center_crop(u.waveform, samples), l));
    }
    const std::string name = l ? fmt("teacher_layer%zu.svft", *l) : std::string("teacher_final.svft");
    io::write_features((dir / name).string(), f);
  }
  out << fmt("wrote %zu utterances, %zu trials, %zu feature file(s) to %s\n", corpus.size(),
             trials.size(), layers.size(), dir.string().c_str());
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"SV-Mixer speaker encoder: cost model, gradient checks, distillation and scoring"};
  app.require_subcommand(1);

  Common common;
  auto* summary = app.add_subcommand("summary", "Module tree and parameter census");
  auto* profile = app.add_subcommand("profile", "Per-layer params and GMACs");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  auto* train = app.add_subcommand("train", "Desk-scale distillation run");
  auto* embed = app.add_subcommand("embed", "Embed WAV files with a checkpoint");
  auto* score = app.add_subcommand("score", "Cosine-score a trial list");
  auto* export_synth = app.add_subcommand("export-synth", "Write the synthetic corpus and teacher features");
  for (auto* s : {summary, profile, gradcheck, train, embed, score, export_synth}) add_common(s, common);

  std::size_t ffn_dim = 2048;
  profile->add_option("--ffn-dim", ffn_dim, "Transformer FFN width");
  std::string dims = "small", sabotage;
  gradcheck->add_option("--dims", dims, "Problem size (small)");
  gradcheck->add_option("--sabotage", sabotage, "Test only: break an op's derivative (gelu)");
  std::vector<std::string> features;
  train->add_option("--features", features, "Teacher feature file(s) instead of the synthetic teacher");
  std::string model_path;
  std::vector<std::string> wavs;
  bool allow_any_rate = false;
  embed->add_option("--model", model_path, "Checkpoint");
  embed->add_option("wavs", wavs, "Input WAV files");
  embed->add_flag("--allow-any-rate", allow_any_rate, "Accept sample rates other than 16 kHz");
  std::string emb_path, trials_path;
  double p_target = 0.05;
  score->add_option("--embeddings", emb_path, "Embedding file");
  score->add_option("--trials", trials_path, "Trial list");
  score->add_option("--p-target", p_target, "MinDCF target prior");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (summary->parsed()) return cmd_summary(common, out);
    if (profile->parsed()) return cmd_profile(common, ffn_dim, out);
    if (gradcheck->parsed()) return cmd_gradcheck(common, dims, sabotage, out);
    if (train->parsed()) return cmd_train(common, features, out);
    if (embed->parsed()) return cmd_embed(common, model_path, wavs, allow_any_rate, out);
    if (score->parsed()) return cmd_score(common, emb_path, trials_path, p_target, out, err);
    if (export_synth->parsed()) return cmd_export_synth(common, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const CheckError& e) {
    err << "check failed: " << e.what() << "\n";
    return 4;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace svmixer::cli
