#include "svmixer/profiler.hpp"

#include "svmixer/encoder.hpp"
#include "svmixer/errors.hpp"
#include "svmixer/params.hpp"

namespace svmixer::profiler {
namespace {

using u64 = std::uint64_t;

void finish(CostReport& r) {
  r.total_params = 0;
  r.total_macs = 0;
  for (const auto& row : r.per_layer) {
    r.total_params += row.params;
    r.total_macs += row.macs;
  }
}

// Time-mixing MLP over T frames applied to each of H channels.
LayerCost time_mlp(u64 h, u64 t, u64 e) {
  return {"", mlp_params(t, e), 2 * h * t * (e * t)};
}

// Channel MLP over width d applied to each of T frames.
LayerCost channel_mlp(u64 d, u64 t, u64 e) {
  return {"", mlp_params(d, e), 2 * t * d * (e * d)};
}

void block_rows(const EncoderConfig& cfg, u64 t, const std::string& prefix,
                std::vector<LayerCost>& rows) {
  const u64 h = cfg.H, e = cfg.expansion;
  if (cfg.lgm_enabled()) {
    const u64 k = cfg.lgm_conv_kernel;
    const LayerCost mlp = time_mlp(h, t, e);
    rows.push_back({prefix + ".lgm", norm_params(h) + h * k + h + mlp.params, h * k * t + mlp.macs});
  }
  if (cfg.msm_enabled()) {
    const LayerCost full = time_mlp(h, t, e);
    const LayerCost low = time_mlp(h, t / 2, e);
    rows.push_back({prefix + ".msm", norm_params(h) + full.params + low.params, full.macs + low.macs});
  }
  if (cfg.token_mix_enabled()) {
    const LayerCost mlp = time_mlp(h, t, e);
    rows.push_back({prefix + ".token", norm_params(h) + mlp.params, mlp.macs});
  }
  if (cfg.gcm_enabled()) {
    const u64 g = cfg.G;
    const LayerCost group = channel_mlp(h / g, t, e);
    rows.push_back({prefix + ".gcm", norm_params(h) + g * group.params, g * group.macs});
  } else {
    const LayerCost mlp = channel_mlp(h, t, e);
    rows.push_back({prefix + ".channel", norm_params(h) + mlp.params, mlp.macs});
  }
}

CostReport model_report(const EncoderConfig& cfg, std::size_t frames) {
  cfg.validate();
  CostReport r;
  r.model = to_string(cfg.block_variant);
  r.frames = frames;
  r.config = cfg;
  r.config.frames = frames;
  const u64 c = cfg.conv_channels;
  // Frontend lengths for the shortest input producing `frames` frames.
  u64 len = frames ? samples_for_frames(cfg, frames) : 0;
  u64 c_in = 1;
  for (std::size_t i = 0; i < cfg.conv_kernels.size(); ++i) {
    const u64 k = cfg.conv_kernels[i];
    len = len >= k ? (len - k) / cfg.conv_strides[i] + 1 : 0;
    r.per_layer.push_back({"frontend.conv" + std::to_string(i), c * c_in * k + norm_params(c),
                           c * c_in * k * len});
    c_in = c;
  }
  r.per_layer.push_back({"frontend.proj", c * cfg.H + cfg.H, u64(frames) * c * cfg.H});
  for (std::size_t l = 0; l < cfg.L; ++l) block_rows(cfg, frames, "blocks." + std::to_string(l), r.per_layer);
  r.per_layer.push_back({"layer_weights", cfg.L + 1, 0});
  r.per_layer.push_back({"backend", 2 * cfg.H * cfg.embed_dim + cfg.embed_dim,
                         frames ? 2 * u64(cfg.H) * cfg.embed_dim : 0});
  finish(r);
  return r;
}

std::uint64_t sum_prefix(const std::vector<LayerCost>& rows, const std::string& prefix, bool macs) {
  u64 n = 0;
  for (const auto& row : rows)
    if (has_prefix(row.name, prefix)) n += macs ? row.macs : row.params;
  return n;
}

}  // namespace

std::uint64_t CostReport::params_with_prefix(const std::string& prefix) const {
  return sum_prefix(per_layer, prefix, false);
}

std::uint64_t CostReport::macs_with_prefix(const std::string& prefix) const {
  return sum_prefix(per_layer, prefix, true);
}

std::uint64_t mlp_params(std::uint64_t d, std::uint64_t expansion) {
  const u64 hidden = expansion * d;
  return d * hidden + hidden + hidden * d + d;
}

std::uint64_t norm_params(std::uint64_t dim) { return 2 * dim; }

CostReport count_params(const EncoderConfig& cfg) { return model_report(cfg, cfg.frames); }

CostReport count_macs(const EncoderConfig& cfg, std::size_t frames) {
  return model_report(cfg, frames);
}

CostReport encoder_layer_cost(const EncoderConfig& cfg, std::size_t frames) {
  cfg.validate();
  CostReport r;
  r.model = to_string(cfg.block_variant);
  r.frames = frames;
  r.config = cfg;
  r.config.frames = frames;
  block_rows(cfg, frames, "block", r.per_layer);
  finish(r);
  return r;
}

CostReport transformer_layer_cost(std::size_t hidden, std::size_t ffn_dim, std::size_t frames) {
  const u64 h = hidden, f = ffn_dim, t = frames;
  CostReport r;
  r.model = "transformer";
  r.frames = frames;
  r.config.H = hidden;
  r.config.frames = frames;
  r.per_layer.push_back({"block.attention.proj", 4 * (h * h + h), 4 * t * h * h});
  r.per_layer.push_back({"block.attention.scores", 0, 2 * t * t * h});
  r.per_layer.push_back({"block.ffn", h * f + f + f * h + h, 2 * t * h * f});
  r.per_layer.push_back({"block.norms", 2 * norm_params(h), 0});
  finish(r);
  return r;
}

VerifyReport verify_against_model(const SvMixerModel& model) {
  const CostReport analytic = count_params(model.config());
  const ParameterStore& store = model.params();
  VerifyReport v;
  for (const auto& row : analytic.per_layer) {
    CensusRow c{row.name, row.params, store.numel_with_prefix(row.name)};
    if (c.analytic != c.census) {
      v.ok = false;
      v.mismatched.push_back(row.name);
    }
    v.rows.push_back(std::move(c));
  }
  for (const auto& [name, t] : store.entries()) {
    bool found = false;
    for (const auto& row : analytic.per_layer) found = found || has_prefix(name, row.name);
    if (!found) {
      v.ok = false;
      v.unaccounted.push_back(name);
    }
  }
  v.analytic_total = analytic.total_params;
  v.census_total = store.numel();
  if (v.analytic_total != v.census_total) v.ok = false;
  return v;
}

}  // namespace svmixer::profiler
