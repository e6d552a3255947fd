// Exit-gate checks. One PASS/FAIL line per criterion; the exit code is nonzero
// when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "svmixer/distill.hpp"
#include "svmixer/encoder.hpp"
#include "svmixer/eval.hpp"
#include "svmixer/gradcheck.hpp"
#include "svmixer/io.hpp"
#include "svmixer/ops.hpp"
#include "svmixer/profiler.hpp"
#include "svmixer/random.hpp"
#include "svmixer/synth.hpp"
#include "svmixer/trainer.hpp"

using namespace svmixer;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%s", ok ? "ok" : "FAILED");
    if (!detail.empty()) detail += "; ";
    detail += what + " " + buf;
    pass = pass && ok;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double rel(double got, double want) { return std::abs(got - want) / want; }

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(-1.0, 1.0);
  return t;
}

Tensor run_stage(const ParameterStore& store, const Tensor& x,
                 const std::function<ad::Var(ad::Var, const BoundParams&)>& f) {
  ad::Tape tape(ad::GradMode::disabled);
  BoundParams p(tape, store, false);
  return f(tape.leaf_ref(x, false), p).value();
}

// ---- 1 ----------------------------------------------------------------------

Outcome table_costs() {
  const auto t0 = Clock::now();
  Outcome o;
  EncoderConfig mixer_cfg;
  mixer_cfg.block_variant = BlockVariant::mlpmixer;
  const auto mixer = profiler::encoder_layer_cost(mixer_cfg, 149);
  const auto tr = profiler::transformer_layer_cost(1024, 2048, 149);
  const auto sv = profiler::encoder_layer_cost(EncoderConfig(), 149);
  o.require(rel(double(mixer.total_params), 8.58e6) <= 0.005, fmt("mlp-mixer params %.4gM", mixer.total_params / 1e6));
  o.require(rel(double(mixer.total_macs), 1.43e9) <= 0.005, fmt("mlp-mixer GMACs %.4g", mixer.total_macs / 1e9));
  o.require(rel(double(tr.total_params), 8.40e6) <= 0.01, fmt("transformer params %.4gM", tr.total_params / 1e6));
  o.require(rel(double(tr.total_macs), 1.25e9) <= 0.05, fmt("transformer GMACs %.4g", tr.total_macs / 1e9));
  o.require(rel(double(sv.total_params), 3.75e6) <= 0.15, fmt("sv-mixer params %.4gM vs 3.75M", sv.total_params / 1e6));
  o.require(rel(double(sv.total_macs), 0.63e9) <= 0.20, fmt("sv-mixer GMACs %.4g vs 0.63", sv.total_macs / 1e9));
  const double pr = double(sv.total_params) / double(tr.total_params);
  const double mr = double(sv.total_macs) / double(tr.total_macs);
  o.require(pr <= 0.50, fmt("params ratio %.3f <= 0.50", pr));
  o.require(mr <= 0.55, fmt("MACs ratio %.3f <= 0.55", mr));
  const double dt = seconds_since(t0);
  o.require(dt < 1.0, fmt("%.3fs", dt));
  return o;
}

// ---- 2 ----------------------------------------------------------------------

Outcome frame_arithmetic() {
  Outcome o;
  const EncoderConfig cfg;
  const auto iterate = [&](std::size_t n) {
    for (std::size_t i = 0; i < cfg.conv_kernels.size(); ++i) n = (n - cfg.conv_kernels[i]) / cfg.conv_strides[i] + 1;
    return n;
  };
  o.require(frames_for_samples(cfg, 48000) == 149 && iterate(48000) == 149, "48000 -> 149");
  o.require(frames_for_samples(cfg, 16000) == 49 && iterate(16000) == 49, "16000 -> 49");
  bool all = true;
  for (std::size_t n = 400; n <= 50000; n += 37) all = all && frames_for_samples(cfg, n) == iterate(n);
  o.require(all, "formula agrees on 400..50000");
  o.require(frames_for_samples(cfg, 399) == 0 && samples_for_frames(cfg, 1) == 400, "minimum input 400");
  // The actual frontend produces the same count.
  EncoderConfig small = EncoderConfig::desk_student();
  const SvMixerModel m(small, 1);
  ad::Tape tape(ad::GradMode::disabled);
  BoundParams p(tape, m.params(), false);
  const Tensor w = synth_utterance(0, 0, 1);
  o.require(nn::frontend_forward(tape.leaf_ref(w, false), p, small).shape() == Shape{149, small.H},
            "frontend output [149 x H]");
  return o;
}

// ---- 3 ----------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  Outcome o;
  const gradcheck::Report rep = gradcheck::run_all();
  double worst = 0;
  std::string failed;
  for (const auto& r : rep.rows) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed += " " + r.name;
  }
  bool has_e2e = false;
  for (const auto& r : rep.rows) has_e2e = has_e2e || r.name == "end_to_end_2_blocks";
  o.require(rep.ok(), fmt("%zu checks, max rel err %.2e%s", rep.rows.size(), worst,
                          failed.empty() ? "" : (" failing:" + failed).c_str()));
  o.require(has_e2e, "2-block end-to-end row present");
  const double dt = seconds_since(t0);
  o.require(dt <= 120.0, fmt("%.1fs", dt));
  return o;
}

// ---- 4 ----------------------------------------------------------------------

Outcome structural() {
  Outcome o;
  {
    EncoderConfig cfg = EncoderConfig::desk_student();
    cfg.G = 1;
    Rng rng(3);
    ParameterStore g;
    add_gcm_params(g, "m", cfg, rng);
    for (auto& [n, t] : g.entries())
      if (n.find(".norm.") != std::string::npos)
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] += 0.1 * double(i % 5);
    ParameterStore ch;
    ch.add("m.norm.gamma", g.get("m.norm.gamma"));
    ch.add("m.norm.beta", g.get("m.norm.beta"));
    for (const char* n : {"w1", "b1", "w2", "b2"}) ch.add(std::string("m.mlp.") + n, g.get(std::string("m.group0.") + n));
    const Tensor x = random_tensor({149, cfg.H}, 4);
    const double d = max_abs_diff(
        run_stage(g, x, [](ad::Var v, const BoundParams& p) { return nn::gcm_forward(v, p, "m", 1); }),
        run_stage(ch, x, [](ad::Var v, const BoundParams& p) { return nn::channel_mix_forward(v, p, "m"); }));
    o.require(d <= 1e-12, fmt("GCM(G=1) vs channel-mix %.1e", d));
  }
  {
    SvMixerModel m(EncoderConfig::desk_student(), 5);
    m.zero_stage_projections();
    const EncodeOutput out = m.encode(synth_utterance(1, 2, 3));
    double d = 0;
    for (const auto& l : out.layer_outputs) d = std::max(d, max_abs_diff(l, out.layer_outputs[0]));
    o.require(d <= 1e-10, fmt("zeroed projections %.1e", d));
  }
  {
    bool exact = true;
    for (std::size_t t : {2, 9, 148, 149}) {
      Tensor c({3, t});
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t i = 0; i < t; ++i) c.at(r, i) = 0.1 + 0.7 * double(r) - 1.3e-3;
      const Tensor pooled = ops::avg_pool1d(c);
      const Tensor up = ops::linear_upsample(pooled, t);
      exact = exact && bitwise_equal(up, c);
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t i = 0; i < pooled.cols(); ++i) exact = exact && pooled.at(r, i) == c.at(r, 0);
    }
    o.require(exact, "constant pool/upsample exact");
  }
  return o;
}

// ---- 5 ----------------------------------------------------------------------

Outcome degenerations() {
  Outcome o;
  double ce_err = 0;
  bool plain = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor e = random_tensor({12}, 100 + seed), w = random_tensor({6, 12}, 200 + seed);
    const std::size_t y = seed % 6;
    const Tensor cos = distill::cosines(e, w);
    double z = 0;
    for (double c : cos.data()) z += std::exp(c);
    const double ce = std::log(z) - cos[y];
    ce_err = std::max(ce_err, std::abs(distill::aam_softmax_loss(e, w, y, 1.0, 0.0).loss - ce));
    const double base = distill::aam_softmax_loss(e, w, y, 30.0, 0.2).loss;
    for (std::size_t k = 0; k <= 5; ++k) {
      const Tensor pen = distill::hard_impostor_penalty(cos.reshaped({1, 6}), {y}, k, 1.0);
      plain = plain && distill::aam_softmax_loss(e, w, y, 30.0, 0.2, pen.reshaped({6})).loss == base;
    }
  }
  o.require(ce_err <= 1e-10, fmt("AAM(m=0,s=1) vs CE %.1e", ce_err));
  o.require(plain, "multiplier 1 equals plain AAM");
  const Tensor x = random_tensor({149, 32}, 7);
  o.require(distill::mse_distill_loss(x, x) == 0.0, "MSE(x,x)=0");
  return o;
}

// ---- 6 ----------------------------------------------------------------------

std::vector<std::pair<double, double>> brute_points(const std::vector<eval::TrialScore>& t) {
  std::set<double> th{std::numeric_limits<double>::infinity()};
  for (const auto& x : t) th.insert(x.score);
  double nt = 0, ni = 0;
  for (const auto& x : t) (x.target ? nt : ni) += 1;
  std::vector<std::pair<double, double>> pts;
  for (double h : th) {
    double fa = 0, miss = 0;
    for (const auto& x : t) {
      if (x.target && x.score < h) ++miss;
      if (!x.target && x.score >= h) ++fa;
    }
    pts.push_back({fa / ni, miss / nt});
  }
  return pts;
}

Outcome eer_oracles() {
  Outcome o;
  double eer_err = 0, dcf_err = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(mix_seed(42, s));
    std::vector<eval::TrialScore> t;
    for (std::size_t i = 0; i < 100; ++i) {
      const bool target = i < 5 || (i >= 95 ? false : rng.uniform() < 0.3);
      double v = rng.normal() * 0.3 + (target ? 0.4 : 0.0);
      if (s % 4 == 0) v = std::round(v * 10.0) / 10.0;  // ties
      t.push_back({"e", "t", v, target});
    }
    const auto pts = brute_points(t);
    // Exhaustive hull EER: best dual weight among all pairwise crossings.
    std::vector<double> ws{0.0, 1.0};
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j) {
        const double da = pts[i].first - pts[i].second, db = pts[j].first - pts[j].second;
        if (da != db) {
          const double w = (pts[j].second - pts[i].second) / (da - db);
          if (w > 0 && w < 1) ws.push_back(w);
        }
      }
    double eer = 0;
    for (double w : ws) {
      double lo = 2;
      for (const auto& [fa, miss] : pts) lo = std::min(lo, w * fa + (1 - w) * miss);
      eer = std::max(eer, lo);
    }
    double dcf = 1e300;
    for (const auto& [fa, miss] : pts) dcf = std::min(dcf, 0.05 * miss + 0.95 * fa);
    dcf /= 0.05;
    eer_err = std::max(eer_err, std::abs(eval::eer(t).eer - eer));
    dcf_err = std::max(dcf_err, std::abs(eval::min_dcf(t) - dcf));
  }
  o.require(eer_err <= 1e-9, fmt("EER max diff %.1e", eer_err));
  o.require(dcf_err <= 1e-9, fmt("MinDCF max diff %.1e", dcf_err));
  return o;
}

// ---- 7 ----------------------------------------------------------------------

struct Run {
  TrainResult result;
  std::string checkpoint;
  double val_eer = 1.0;
  double val_eer_before = 1.0;
  double seconds = 0;
};

Run desk_run() {
  const auto t0 = Clock::now();
  const io::RunConfig rc;
  TrainConfig tcfg = rc.train;
  tcfg.max_steps = 200;
  SyntheticCorpus c;
  c.n_speakers = tcfg.n_speakers;
  c.utterances_per_speaker = tcfg.utterances_per_speaker;
  c.seed = tcfg.corpus_seed;
  const Split split = split_corpus(make_corpus(c), tcfg.val_utts_per_speaker);
  SyntheticTeacher teacher(teacher_config(rc.encoder, tcfg), tcfg.teacher_seed);
  SvMixerModel student(rc.encoder, tcfg.seed);

  std::vector<std::size_t> spk;
  for (const auto& u : split.val) spk.push_back(u.speaker);
  Run run;
  run.val_eer_before = eval::eer(score_all_pairs(embed_utterances(student, split.val, c.samples), spk)).eer;
  run.result = train(student, split, teacher, tcfg, rc.distill);
  run.val_eer = eval::eer(score_all_pairs(embed_utterances(student, split.val, c.samples), spk)).eer;
  run.checkpoint = io::encode_checkpoint(student);
  run.seconds = seconds_since(t0);
  return run;
}

Outcome desk_distillation() {
  Outcome o;
  const Run a = desk_run();
  const auto& l = a.result.step_losses;
  o.require(l.size() == 200, fmt("%zu steps", l.size()));
  if (l.size() < 20) return o;
  double early = 0, late = 0;
  for (std::size_t i = 0; i < 10; ++i) early += l[i] / 10, late += l[l.size() - 10 + i] / 10;
  o.require(late <= 0.5 * early, fmt("loss %.3f -> %.3f (ratio %.3f)", early, late, late / early));
  o.require(a.val_eer < 0.5, fmt("val EER %.3f -> %.3f", a.val_eer_before, a.val_eer));
  o.require(a.seconds <= 600.0, fmt("run %.0fs", a.seconds));
  const Run b = desk_run();
  o.require(a.checkpoint == b.checkpoint && a.result.step_losses == b.result.step_losses,
            "second run bitwise identical");
  return o;
}

// ---- 8 ----------------------------------------------------------------------

Outcome compression_knobs() {
  Outcome o;
  std::uint64_t prev = 0;
  bool inc = true;
  for (std::size_t L : {2, 4, 6, 8, 12}) {
    EncoderConfig c;
    c.L = L;
    const auto n = profiler::count_params(c).total_params;
    inc = inc && n > prev;
    prev = n;
  }
  o.require(inc, "params increase with L");
  prev = 0;
  inc = true;
  for (std::size_t H : {256, 512, 1024}) {
    EncoderConfig c;
    c.H = H;
    const auto n = profiler::count_params(c).total_params;
    inc = inc && n > prev;
    prev = n;
  }
  o.require(inc, "params increase with H");

  // Same student, teacher and batch scored under both modes.
  const io::RunConfig rc;
  SyntheticCorpus corpus;
  corpus.n_speakers = 4;
  corpus.utterances_per_speaker = 1;
  const auto utts = make_corpus(corpus);
  SyntheticTeacher teacher(teacher_config(rc.encoder, rc.train), rc.train.teacher_seed);
  const SvMixerModel student(rc.encoder, 9);
  DistillConfig fs = rc.distill;
  fs.hard_k = 2;
  DistillConfig mh = fs;
  mh.mode = DistillMode::multi_head;
  mh.matched_teacher_layers = {rc.train.teacher_L};
  const ParameterStore hf = distill::make_heads(fs, rc.encoder.H, teacher.hidden(), rc.encoder.embed_dim, 4, 11);
  const ParameterStore hm = distill::make_heads(mh, rc.encoder.H, teacher.hidden(), rc.encoder.embed_dim, 4, 11);
  std::vector<const Utterance*> batch;
  for (const auto& u : utts) batch.push_back(&u);
  const std::vector<std::size_t> offsets(batch.size(), 0);
  const double a = batch_loss(student, hf, batch, offsets, teacher, rc.train, fs);
  const double b = batch_loss(student, hm, batch, offsets, teacher, rc.train, mh);
  o.require(std::abs(a - b) <= 1e-12, fmt("multi_head vs final_state %.1e", std::abs(a - b)));
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "per-layer cost rows", table_costs},
      {2, "frame arithmetic", frame_arithmetic},
      {3, "gradient correctness", gradients},
      {4, "structural identities", structural},
      {5, "loss degenerations", degenerations},
      {6, "EER/MinDCF oracle equivalence", eer_oracles},
      {7, "desk-scale distillation smoke", desk_distillation},
      {8, "compression knobs", compression_knobs},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", int(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
