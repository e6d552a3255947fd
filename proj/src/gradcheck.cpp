#include "svmixer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "svmixer/config.hpp"
#include "svmixer/distill.hpp"
#include "svmixer/encoder.hpp"
#include "svmixer/errors.hpp"
#include "svmixer/params.hpp"
#include "svmixer/random.hpp"

namespace svmixer::gradcheck {

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

Row check(const std::string& name, const std::vector<Tensor*>& inputs, const Builder& build,
          const Options& opt) {
  Row row;
  row.name = name;

  ad::Tape tape;
  auto [out, leaves] = build(tape);
  if (leaves.size() != inputs.size()) {
    throw Error("gradcheck " + name + ": builder returned " + std::to_string(leaves.size()) +
                " leaves for " + std::to_string(inputs.size()) + " inputs");
  }
  Rng rng(mix_seed(opt.seed, std::hash<std::string>{}(name)));
  Tensor cot(out.shape());
  for (std::size_t i = 0; i < cot.numel(); ++i) cot[i] = rng.normal();
  tape.backward(out, cot);
  std::vector<Tensor> analytic;
  for (const ad::Var& v : leaves) analytic.push_back(tape.grad(v));

  auto objective = [&] {
    ad::Tape t(ad::GradMode::disabled);
    return dot(build(t).first.value(), cot);
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = *inputs[k];
    for (std::size_t e = 0; e < x.numel(); ++e) {
      const double orig = x[e];
      x[e] = orig + opt.step;
      const double fp = objective();
      x[e] = orig - opt.step;
      const double fm = objective();
      x[e] = orig;
      const double num = (fp - fm) / (2.0 * opt.step);
      const double ana = analytic[k][e];
      const double abs_err = std::abs(ana - num);
      const double rel = abs_err / std::max({std::abs(ana), std::abs(num), opt.floor});
      row.max_abs_error = std::max(row.max_abs_error, abs_err);
      row.max_rel_error = std::max(row.max_rel_error, rel);
      ++row.checked;
    }
  }
  row.passed = row.max_rel_error <= opt.tolerance;
  return row;
}

bool Report::ok() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const Row& r) { return r.passed; });
}

std::string Report::format() const {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-28s %8s %14s %14s  %s\n", "check", "entries", "max_rel_err",
                "max_abs_err", "result");
  out += buf;
  for (const Row& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-28s %8zu %14.3e %14.3e  %s\n", r.name.c_str(), r.checked,
                  r.max_rel_error, r.max_abs_error, r.passed ? "ok" : "FAIL");
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "tolerance %.1e: %s\n", tolerance, ok() ? "all passed" : "FAILED");
  out += buf;
  return out;
}

namespace {

// Leaves for tensors that the builder refers to by pointer.
std::vector<ad::Var> bind(ad::Tape& t, const std::vector<Tensor*>& xs) {
  std::vector<ad::Var> v;
  for (Tensor* x : xs) v.push_back(t.leaf_ref(*x, true));
  return v;
}

std::vector<Tensor*> store_ptrs(ParameterStore& s) {
  std::vector<Tensor*> p;
  for (auto& [name, t] : s.entries()) p.push_back(&t);
  return p;
}

std::vector<ad::Var> store_leaves(const BoundParams& bp, const ParameterStore& s) {
  std::vector<ad::Var> v;
  for (const auto& [name, t] : s.entries()) v.push_back(bp(name));
  return v;
}

EncoderConfig toy_config() {
  EncoderConfig c;
  c.H = 8;
  c.L = 2;
  c.G = 2;
  c.expansion = 2;
  c.frames = 12;
  c.conv_channels = 4;
  c.embed_dim = 6;
  return c;
}

}  // namespace

Report run_all(const Options& opt) {
  Report rep;
  rep.tolerance = opt.tolerance;
  Rng rng(opt.seed);

  // Simple ops: inputs owned here, referenced by the builders.
  using VarFn = std::function<ad::Var(const std::vector<ad::Var>&)>;
  auto op = [&](const std::string& name, std::vector<Tensor> values, VarFn f) {
    auto held = std::make_shared<std::vector<Tensor>>(std::move(values));
    std::vector<Tensor*> ptrs;
    for (Tensor& t : *held) ptrs.push_back(&t);
    rep.rows.push_back(check(
        name, ptrs,
        [&, ptrs](ad::Tape& t) {
          auto leaves = bind(t, ptrs);
          return std::make_pair(f(leaves), leaves);
        },
        opt));
  };
  auto R = [&](Shape s) { return random_tensor(std::move(s), rng); };

  op("matmul", {R({3, 4}), R({4, 5})}, [](auto& v) { return ad::matmul(v[0], v[1]); });
  op("transpose", {R({3, 4})}, [](auto& v) { return ad::transpose(v[0]); });
  op("add", {R({3, 4}), R({3, 4})}, [](auto& v) { return ad::add(v[0], v[1]); });
  op("sub", {R({3, 4}), R({3, 4})}, [](auto& v) { return ad::sub(v[0], v[1]); });
  op("scale", {R({3, 4})}, [](auto& v) { return ad::scale(v[0], 1.7); });
  op("add_row_bias", {R({3, 4}), R({4})}, [](auto& v) { return ad::add_row_bias(v[0], v[1]); });
  op("conv1d", {R({3, 11}), R({4, 3, 3}), R({4})},
     [](auto& v) { return ad::conv1d(v[0], v[1], 2, 1, v[2]); });
  op("conv1d_depthwise", {R({4, 9}), R({4, 1, 3})},
     [](auto& v) { return ad::conv1d(v[0], v[1], 1, 4); });
  op("pad_time", {R({3, 5})}, [](auto& v) { return ad::pad_time(v[0], 2, 1); });
  op("avg_pool1d", {R({3, 7})}, [](auto& v) { return ad::avg_pool1d(v[0]); });
  op("linear_upsample", {R({3, 4})}, [](auto& v) { return ad::linear_upsample(v[0], 7); });
  op("gelu", {random_tensor({3, 4}, rng, -3.0, 3.0)}, [](auto& v) { return ad::gelu(v[0]); });
  op("layer_norm", {R({3, 5}), R({5}), R({5})},
     [](auto& v) { return ad::layer_norm(v[0], v[1], v[2]); });
  op("softmax", {random_tensor({6}, rng, -2.0, 2.0)}, [](auto& v) { return ad::softmax(v[0]); });
  op("slice_cols", {R({3, 6})}, [](auto& v) { return ad::slice_cols(v[0], 1, 3); });
  op("concat_cols", {R({3, 2}), R({3, 4})},
     [](auto& v) { return ad::concat_cols({v[0], v[1]}); });
  op("mean_std_pool", {R({5, 4})}, [](auto& v) { return ad::mean_std_pool(v[0]); });
  op("reshape", {R({3, 4})}, [](auto& v) { return ad::reshape(v[0], {4, 3}); });
  op("weighted_sum", {R({2, 3}), R({2, 3}), R({2, 3}), R({3})},
     [](auto& v) { return ad::weighted_sum({v[0], v[1], v[2]}, v[3]); });
  op("mse", {R({3, 4}), R({3, 4})}, [](auto& v) { return ad::mse(v[0], v[1]); });
  op("sum", {R({3, 4})}, [](auto& v) { return ad::sum(v[0]); });

  Tensor term_w({5}, 1.0);
  term_w[1] = 10.0;
  term_w[4] = 10.0;
  op("aam_softmax", {R({6}), R({5, 6})}, [term_w](auto& v) {
    return distill::aam_softmax(v[0], v[1], 2, 30.0, 0.2, term_w);
  });
  op("mse_distill_head", {R({4, 3}), R({4, 5}), R({3, 5}), R({5})}, [](auto& v) {
    distill::HeadVars h{v[2], v[3]};
    return distill::mse_distill(v[0], v[1], &h);
  });

  // Encoder stages over a [T x H] input with freshly initialized parameters.
  const EncoderConfig cfg = toy_config();
  auto stage = [&](const std::string& name,
                   std::function<void(ParameterStore&, Rng&)> add,
                   std::function<ad::Var(ad::Var, const BoundParams&)> fwd) {
    auto store = std::make_shared<ParameterStore>();
    add(*store, rng);
    // Non-trivial norm parameters so their gradients are exercised away from 1/0.
    for (auto& [n, t] : store->entries())
      for (std::size_t i = 0; i < t.numel(); ++i) t[i] += rng.uniform(-0.3, 0.3);
    auto x = std::make_shared<Tensor>(random_tensor({cfg.frames, cfg.H}, rng));
    std::vector<Tensor*> ptrs = store_ptrs(*store);
    ptrs.insert(ptrs.begin(), x.get());
    rep.rows.push_back(check(
        name, ptrs,
        [store, x, fwd](ad::Tape& t) {
          BoundParams bp(t, *store, true);
          ad::Var xv = t.leaf_ref(*x, true);
          std::vector<ad::Var> leaves{xv};
          auto rest = store_leaves(bp, *store);
          leaves.insert(leaves.end(), rest.begin(), rest.end());
          return std::make_pair(fwd(xv, bp), leaves);
        },
        opt));
  };
  stage("lgm", [&](ParameterStore& s, Rng& r) { add_lgm_params(s, "m", cfg, r); },
        [&](ad::Var x, const BoundParams& p) { return nn::lgm_forward(x, p, "m", cfg); });
  stage("msm", [&](ParameterStore& s, Rng& r) { add_msm_params(s, "m", cfg, r); },
        [](ad::Var x, const BoundParams& p) { return nn::msm_forward(x, p, "m"); });
  stage("gcm", [&](ParameterStore& s, Rng& r) { add_gcm_params(s, "m", cfg, r); },
        [&](ad::Var x, const BoundParams& p) { return nn::gcm_forward(x, p, "m", cfg.G); });
  stage("token_mix", [&](ParameterStore& s, Rng& r) { add_token_mix_params(s, "m", cfg, r); },
        [](ad::Var x, const BoundParams& p) { return nn::token_mix_forward(x, p, "m"); });
  stage("channel_mix", [&](ParameterStore& s, Rng& r) { add_channel_mix_params(s, "m", cfg, r); },
        [](ad::Var x, const BoundParams& p) { return nn::channel_mix_forward(x, p, "m"); });
  stage("block", [&](ParameterStore& s, Rng& r) { add_block_params(s, "m", cfg, r); },
        [&](ad::Var x, const BoundParams& p) { return nn::block_forward(x, p, "m", cfg); });

  // End to end: waveform -> 2 blocks -> aggregation -> embedding, under the
  // full distillation loss (projection head + AAM with hard-impostor weights).
  {
    auto model = std::make_shared<SvMixerModel>(cfg, mix_seed(opt.seed, 1));
    for (auto& [n, t] : model->params().entries())
      if (n == "layer_weights")
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-0.5, 0.5);
    DistillConfig dcfg;
    const std::size_t teacher_h = 10, classes = 4;
    auto heads = std::make_shared<ParameterStore>(
        distill::make_heads(dcfg, cfg.H, teacher_h, cfg.embed_dim, classes, mix_seed(opt.seed, 2)));
    auto wave = std::make_shared<Tensor>(
        random_tensor({samples_for_frames(cfg, cfg.frames)}, rng));
    auto teacher = std::make_shared<Tensor>(random_tensor({cfg.frames, teacher_h}, rng));
    Tensor tw({classes}, 1.0);
    tw[3] = 10.0;
    std::vector<Tensor*> ptrs = store_ptrs(model->params());
    auto hp = store_ptrs(*heads);
    ptrs.insert(ptrs.end(), hp.begin(), hp.end());
    rep.rows.push_back(check(
        "end_to_end_2_blocks", ptrs,
        [model, heads, wave, teacher, tw, dcfg](ad::Tape& t) {
          BoundParams mp(t, model->params(), true);
          BoundParams hb(t, *heads, true);
          nn::EncodeVars enc = model->encode(t.leaf_ref(*wave, false), mp);
          distill::LossParts lp = distill::total_loss(enc, {teacher.get()}, 1, hb, tw, 1.0, dcfg);
          auto leaves = store_leaves(mp, model->params());
          auto hl = store_leaves(hb, *heads);
          leaves.insert(leaves.end(), hl.begin(), hl.end());
          return std::make_pair(lp.total, leaves);
        },
        opt));
  }
  return rep;
}

}  // namespace svmixer::gradcheck
