#include "svmixer/encoder.hpp"

#include <cmath>

#include "svmixer/errors.hpp"
#include "svmixer/ops.hpp"

namespace svmixer {
namespace {

// Initial values are rounded to real32 so checkpoints reproduce them bitwise.
Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

std::string stage(const std::string& prefix, const char* name) { return prefix + "." + name; }

}  // namespace

LinearParams LinearParams::random(std::size_t d, std::size_t expansion, Rng& rng) {
  const std::size_t h = d * expansion;
  return {uniform_tensor({d, h}, 1.0 / std::sqrt(double(d)), rng), Tensor({h}),
          uniform_tensor({h, d}, 1.0 / std::sqrt(double(h)), rng), Tensor({d})};
}

Tensor mlp_mix(const Tensor& x, const LinearParams& p) {
  const bool vec = x.rank() == 1;
  const Tensor x2 = vec ? x.reshaped({1, x.numel()}) : x;
  if (p.d_out() != x2.cols() || p.d_in() != x2.cols()) {
    throw DimensionError("mlp_mix: input width " + std::to_string(x2.cols()) +
                         " vs params d_in=" + std::to_string(p.d_in()) +
                         " d_out=" + std::to_string(p.d_out()));
  }
  Tensor h = ops::gelu(ops::add_row_bias(ops::matmul(x2, p.w1), p.b1));
  Tensor y = ops::add_row_bias(ops::matmul(h, p.w2), p.b2);
  return vec ? y.reshaped({y.numel()}) : y;
}

namespace nn {

MlpVars mlp_vars(const BoundParams& p, const std::string& prefix) {
  return {p(prefix + ".w1"), p(prefix + ".b1"), p(prefix + ".w2"), p(prefix + ".b2")};
}

ad::Var mlp_mix(ad::Var x, const MlpVars& p) {
  const std::size_t d = x.value().cols();
  if (p.w1.value().rows() != d || p.w2.value().cols() != d) {
    throw DimensionError("mlp_mix: MLP built for width " + std::to_string(p.w1.value().rows()) +
                         ", input " + shape_str(x.shape()));
  }
  ad::Var h = ad::gelu(ad::add_row_bias(ad::matmul(x, p.w1), p.b1));
  return ad::add_row_bias(ad::matmul(h, p.w2), p.b2);
}

ad::Var time_mix(ad::Var x, const MlpVars& p) {
  const std::size_t t = x.value().rows();
  if (p.w1.value().rows() != t) {
    throw DimensionError("time-mixing MLP built for T=" + std::to_string(p.w1.value().rows()) +
                         " but input has T=" + std::to_string(t));
  }
  return ad::transpose(mlp_mix(ad::transpose(x), p));
}

namespace {

ad::Var pre_norm(ad::Var x, const BoundParams& p, const std::string& prefix) {
  return ad::layer_norm(x, p(prefix + ".norm.gamma"), p(prefix + ".norm.beta"));
}

}  // namespace

ad::Var lgm_forward(ad::Var x, const BoundParams& p, const std::string& prefix,
                    const EncoderConfig& cfg) {
  const std::size_t t = x.value().rows();
  const std::size_t k = cfg.lgm_conv_kernel;
  if (t < k) {
    throw DimensionError("lgm: T=" + std::to_string(t) + " shorter than conv kernel " +
                         std::to_string(k));
  }
  const MlpVars mlp = mlp_vars(p, prefix + ".mlp");
  if (mlp.w1.value().rows() != t) {
    throw DimensionError("lgm: time-mixing MLP built for T=" +
                         std::to_string(mlp.w1.value().rows()) + " but input has T=" +
                         std::to_string(t));
  }
  const std::size_t h = x.value().cols();
  // [H x T] layout: depthwise "same" conv over time, then the global MLP along T.
  ad::Var z = ad::transpose(pre_norm(x, p, prefix));
  z = ad::pad_time(z, k / 2, k - 1 - k / 2);
  z = ad::gelu(ad::conv1d(z, p(prefix + ".conv.weight"), 1, h, p(prefix + ".conv.bias")));
  z = mlp_mix(z, mlp);
  return ad::add(x, ad::transpose(z));
}

ad::Var msm_forward(ad::Var x, const BoundParams& p, const std::string& prefix) {
  const std::size_t t = x.value().rows();
  if (t < 2) throw DimensionError("msm: need T >= 2, got " + std::to_string(t));
  const MlpVars full = mlp_vars(p, prefix + ".full");
  const MlpVars low = mlp_vars(p, prefix + ".low");
  if (full.w1.value().rows() != t || low.w1.value().rows() != t / 2) {
    throw DimensionError("msm: branch MLPs built for T=" + std::to_string(full.w1.value().rows()) +
                         "/" + std::to_string(low.w1.value().rows()) + " but input has T=" +
                         std::to_string(t));
  }
  ad::Var z = ad::transpose(pre_norm(x, p, prefix));
  ad::Var a = mlp_mix(z, full);
  ad::Var b = ad::linear_upsample(mlp_mix(ad::avg_pool1d(z), low), t);
  return ad::add(x, ad::transpose(ad::add(a, b)));
}

ad::Var gcm_forward(ad::Var x, const BoundParams& p, const std::string& prefix,
                    std::size_t groups) {
  const std::size_t h = x.value().cols();
  if (groups == 0 || h % groups != 0) {
    throw DimensionError("gcm: H=" + std::to_string(h) + " not divisible by G=" +
                         std::to_string(groups));
  }
  const std::size_t width = h / groups;
  ad::Var z = pre_norm(x, p, prefix);
  std::vector<ad::Var> outs;
  outs.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    outs.push_back(mlp_mix(ad::slice_cols(z, g * width, width),
                           mlp_vars(p, prefix + ".group" + std::to_string(g))));
  }
  return ad::add(x, groups == 1 ? outs.front() : ad::concat_cols(outs));
}

ad::Var token_mix_forward(ad::Var x, const BoundParams& p, const std::string& prefix) {
  return ad::add(x, time_mix(pre_norm(x, p, prefix), mlp_vars(p, prefix + ".mlp")));
}

ad::Var channel_mix_forward(ad::Var x, const BoundParams& p, const std::string& prefix) {
  return ad::add(x, mlp_mix(pre_norm(x, p, prefix), mlp_vars(p, prefix + ".mlp")));
}

ad::Var block_forward(ad::Var x, const BoundParams& p, const std::string& prefix,
                      const EncoderConfig& cfg) {
  if (cfg.lgm_enabled()) x = lgm_forward(x, p, stage(prefix, "lgm"), cfg);
  if (cfg.msm_enabled()) x = msm_forward(x, p, stage(prefix, "msm"));
  if (cfg.token_mix_enabled()) x = token_mix_forward(x, p, stage(prefix, "token"));
  if (cfg.gcm_enabled()) return gcm_forward(x, p, stage(prefix, "gcm"), cfg.G);
  return channel_mix_forward(x, p, stage(prefix, "channel"));
}

ad::Var frontend_forward(ad::Var waveform, const BoundParams& p, const EncoderConfig& cfg) {
  const Tensor& w = waveform.value();
  if (w.rank() != 1) throw DimensionError("frontend: waveform must be 1-D, got " + shape_str(w.shape()));
  const std::size_t min_len = samples_for_frames(cfg, 1);
  if (w.numel() < min_len) {
    throw DataError("frontend: waveform of " + std::to_string(w.numel()) +
                    " samples is too short, minimum length is " + std::to_string(min_len) +
                    " samples");
  }
  ad::Var x = ad::reshape(waveform, {1, w.numel()});
  ad::Var frames;
  for (std::size_t i = 0; i < cfg.conv_kernels.size(); ++i) {
    const std::string name = "frontend.conv" + std::to_string(i);
    if (i > 0) x = ad::transpose(frames);
    x = ad::gelu(ad::conv1d(x, p(name + ".weight"), cfg.conv_strides[i], 1));
    // Layer norm over channels, per frame: [T x C].
    frames = ad::layer_norm(ad::transpose(x), p(name + ".norm.gamma"), p(name + ".norm.beta"));
  }
  return ad::add_row_bias(ad::matmul(frames, p("frontend.proj.weight")), p("frontend.proj.bias"));
}

EncodeVars encode(ad::Var waveform, const BoundParams& p, const EncoderConfig& cfg) {
  EncodeVars out;
  ad::Var x = frontend_forward(waveform, p, cfg);
  if (x.value().rows() != cfg.frames) {
    throw DimensionError("encode: waveform yields T=" + std::to_string(x.value().rows()) +
                         " frames but the model is built for T=" + std::to_string(cfg.frames));
  }
  out.layer_outputs.push_back(x);
  for (std::size_t l = 0; l < cfg.L; ++l) {
    x = block_forward(x, p, "blocks." + std::to_string(l), cfg);
    out.layer_outputs.push_back(x);
  }
  out.layer_weights = ad::softmax(p("layer_weights"));
  out.aggregated = ad::weighted_sum(out.layer_outputs, out.layer_weights);
  const std::size_t h = cfg.H;
  ad::Var pooled = ad::reshape(ad::mean_std_pool(out.aggregated), {1, 2 * h});
  ad::Var e = ad::add_row_bias(ad::matmul(pooled, p("backend.proj.weight")), p("backend.proj.bias"));
  out.embedding = ad::reshape(e, {cfg.embed_dim});
  return out;
}

}  // namespace nn

void add_linear_params(ParameterStore& store, const std::string& prefix, std::size_t d,
                       std::size_t expansion, Rng& rng) {
  LinearParams lp = LinearParams::random(d, expansion, rng);
  store.add(prefix + ".w1", std::move(lp.w1));
  store.add(prefix + ".b1", std::move(lp.b1));
  store.add(prefix + ".w2", std::move(lp.w2));
  store.add(prefix + ".b2", std::move(lp.b2));
}

void add_norm_params(ParameterStore& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".gamma", Tensor({dim}, 1.0));
  store.add(prefix + ".beta", Tensor({dim}));
}

void add_lgm_params(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                    Rng& rng) {
  const std::size_t k = cfg.lgm_conv_kernel;
  add_norm_params(store, prefix + ".norm", cfg.H);
  store.add(prefix + ".conv.weight", uniform_tensor({cfg.H, 1, k}, 1.0 / std::sqrt(double(k)), rng));
  store.add(prefix + ".conv.bias", Tensor({cfg.H}));
  add_linear_params(store, prefix + ".mlp", cfg.frames, cfg.expansion, rng);
}

void add_msm_params(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                    Rng& rng) {
  add_norm_params(store, prefix + ".norm", cfg.H);
  add_linear_params(store, prefix + ".full", cfg.frames, cfg.expansion, rng);
  add_linear_params(store, prefix + ".low", cfg.frames / 2, cfg.expansion, rng);
}

void add_gcm_params(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                    Rng& rng) {
  add_norm_params(store, prefix + ".norm", cfg.H);
  for (std::size_t g = 0; g < cfg.G; ++g)
    add_linear_params(store, prefix + ".group" + std::to_string(g), cfg.H / cfg.G, cfg.expansion,
                      rng);
}

void add_token_mix_params(ParameterStore& store, const std::string& prefix,
                          const EncoderConfig& cfg, Rng& rng) {
  add_norm_params(store, prefix + ".norm", cfg.H);
  add_linear_params(store, prefix + ".mlp", cfg.frames, cfg.expansion, rng);
}

void add_channel_mix_params(ParameterStore& store, const std::string& prefix,
                            const EncoderConfig& cfg, Rng& rng) {
  add_norm_params(store, prefix + ".norm", cfg.H);
  add_linear_params(store, prefix + ".mlp", cfg.H, cfg.expansion, rng);
}

void add_block_params(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                      Rng& rng) {
  if (cfg.lgm_enabled()) add_lgm_params(store, stage(prefix, "lgm"), cfg, rng);
  if (cfg.msm_enabled()) add_msm_params(store, stage(prefix, "msm"), cfg, rng);
  if (cfg.token_mix_enabled()) add_token_mix_params(store, stage(prefix, "token"), cfg, rng);
  if (cfg.gcm_enabled()) {
    add_gcm_params(store, stage(prefix, "gcm"), cfg, rng);
  } else {
    add_channel_mix_params(store, stage(prefix, "channel"), cfg, rng);
  }
}

std::vector<std::string> block_stage_prefixes(const EncoderConfig& cfg, std::size_t l) {
  const std::string prefix = "blocks." + std::to_string(l);
  std::vector<std::string> out;
  if (cfg.lgm_enabled()) out.push_back(stage(prefix, "lgm"));
  if (cfg.msm_enabled()) out.push_back(stage(prefix, "msm"));
  if (cfg.token_mix_enabled()) out.push_back(stage(prefix, "token"));
  out.push_back(stage(prefix, cfg.gcm_enabled() ? "gcm" : "channel"));
  return out;
}

SvMixerModel::SvMixerModel(EncoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  std::size_t c_in = 1;
  for (std::size_t i = 0; i < cfg_.conv_kernels.size(); ++i) {
    const std::string name = "frontend.conv" + std::to_string(i);
    const std::size_t k = cfg_.conv_kernels[i];
    params_.add(name + ".weight", uniform_tensor({cfg_.conv_channels, c_in, k},
                                                 1.0 / std::sqrt(double(c_in * k)), rng));
    add_norm_params(params_, name + ".norm", cfg_.conv_channels);
    c_in = cfg_.conv_channels;
  }
  params_.add("frontend.proj.weight",
              uniform_tensor({cfg_.conv_channels, cfg_.H}, 1.0 / std::sqrt(double(c_in)), rng));
  params_.add("frontend.proj.bias", Tensor({cfg_.H}));
  for (std::size_t l = 0; l < cfg_.L; ++l) add_block_params(params_, "blocks." + std::to_string(l), cfg_, rng);
  params_.add("layer_weights", Tensor({cfg_.L + 1}));
  params_.add("backend.proj.weight", uniform_tensor({2 * cfg_.H, cfg_.embed_dim},
                                                    1.0 / std::sqrt(double(2 * cfg_.H)), rng));
  params_.add("backend.proj.bias", Tensor({cfg_.embed_dim}));
}

nn::EncodeVars SvMixerModel::encode(ad::Var waveform, const BoundParams& p) const {
  return nn::encode(waveform, p, cfg_);
}

EncodeOutput SvMixerModel::encode(const Tensor& waveform) const {
  ad::Tape tape(ad::GradMode::disabled);
  BoundParams p(tape, params_, false);
  const nn::EncodeVars v = nn::encode(tape.leaf_ref(waveform, false), p, cfg_);
  EncodeOutput out;
  for (const ad::Var& x : v.layer_outputs) out.layer_outputs.push_back(x.value());
  out.layer_weights = v.layer_weights.value();
  out.aggregated = v.aggregated.value();
  out.embedding = v.embedding.value();
  return out;
}

void SvMixerModel::zero_stage_projections() {
  for (auto& [name, t] : params_.entries()) {
    if (!has_prefix(name, "blocks")) continue;
    const bool proj = name.ends_with(".w2") || name.ends_with(".b2");
    if (proj) t = Tensor(t.shape());
  }
}

Tensor center_crop(const Tensor& waveform, std::size_t samples) {
  if (waveform.numel() < samples) {
    throw DataError("waveform has " + std::to_string(waveform.numel()) + " samples, need " +
                    std::to_string(samples));
  }
  const std::size_t start = (waveform.numel() - samples) / 2;
  std::vector<double> out(waveform.storage().begin() + start,
                          waveform.storage().begin() + start + samples);
  return Tensor({samples}, std::move(out));
}

}  // namespace svmixer
