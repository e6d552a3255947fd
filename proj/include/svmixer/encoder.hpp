#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "svmixer/autodiff.hpp"
#include "svmixer/config.hpp"
#include "svmixer/params.hpp"
#include "svmixer/random.hpp"
#include "svmixer/tensor.hpp"

namespace svmixer {

// Two-layer MLP y = GELU(x W1 + b1) W2 + b2 applied to each row of x.
//   w1: [d_in x d_hidden], b1: [d_hidden], w2: [d_hidden x d_out], b2: [d_out]
struct LinearParams {
  Tensor w1, b1, w2, b2;

  std::size_t d_in() const { return w1.rows(); }
  std::size_t d_hidden() const { return w1.cols(); }
  std::size_t d_out() const { return w2.cols(); }

  static LinearParams random(std::size_t d, std::size_t expansion, Rng& rng);
};

// x: [d] or [n x d].
Tensor mlp_mix(const Tensor& x, const LinearParams& p);

namespace nn {

struct MlpVars {
  ad::Var w1, b1, w2, b2;
};
MlpVars mlp_vars(const BoundParams& p, const std::string& prefix);

// Row-wise MLP over the last axis of [n x d].
ad::Var mlp_mix(ad::Var x, const MlpVars& p);
// Time mixing of [T x H]: the MLP runs along T for every channel.
ad::Var time_mix(ad::Var x, const MlpVars& p);

// Each stage takes and returns [T x H] and wraps its body in a pre-norm residual.
ad::Var lgm_forward(ad::Var x, const BoundParams& p, const std::string& prefix,
                    const EncoderConfig& cfg);
ad::Var msm_forward(ad::Var x, const BoundParams& p, const std::string& prefix);
ad::Var gcm_forward(ad::Var x, const BoundParams& p, const std::string& prefix, std::size_t groups);
ad::Var token_mix_forward(ad::Var x, const BoundParams& p, const std::string& prefix);
ad::Var channel_mix_forward(ad::Var x, const BoundParams& p, const std::string& prefix);

ad::Var block_forward(ad::Var x, const BoundParams& p, const std::string& prefix,
                      const EncoderConfig& cfg);

// waveform: [T_samples] -> [T x H].
ad::Var frontend_forward(ad::Var waveform, const BoundParams& p, const EncoderConfig& cfg);

struct EncodeVars {
  std::vector<ad::Var> layer_outputs;  // L + 1 entries, frontend first
  ad::Var layer_weights;               // softmax-normalized, [L + 1]
  ad::Var aggregated;                  // [T x H]
  ad::Var embedding;                   // [embed_dim]
};

EncodeVars encode(ad::Var waveform, const BoundParams& p, const EncoderConfig& cfg);

}  // namespace nn

// Parameter-layout builders. Each registers tensors under `prefix` with fresh
// random values (weights uniform in +-1/sqrt(fan_in), biases 0, norms 1/0).
void add_linear_params(ParameterStore& store, const std::string& prefix, std::size_t d,
                       std::size_t expansion, Rng& rng);
void add_norm_params(ParameterStore& store, const std::string& prefix, std::size_t dim);
void add_lgm_params(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                    Rng& rng);
void add_msm_params(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                    Rng& rng);
void add_gcm_params(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                    Rng& rng);
void add_token_mix_params(ParameterStore& store, const std::string& prefix,
                          const EncoderConfig& cfg, Rng& rng);
void add_channel_mix_params(ParameterStore& store, const std::string& prefix,
                            const EncoderConfig& cfg, Rng& rng);
void add_block_params(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                      Rng& rng);

struct EncodeOutput {
  std::vector<Tensor> layer_outputs;
  Tensor layer_weights;
  Tensor aggregated;
  Tensor embedding;
};

// Conv frontend, L blocks, learnable layer aggregation and a mean+std pooling
// backend. Parameter names are hierarchical and stable:
//   frontend.conv{i}.weight, frontend.conv{i}.norm.{gamma,beta}, frontend.proj.{weight,bias}
//   blocks.{l}.{lgm,msm,gcm,token,channel}.*, layer_weights, backend.proj.{weight,bias}
class SvMixerModel {
 public:
  SvMixerModel(EncoderConfig cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  nn::EncodeVars encode(ad::Var waveform, const BoundParams& p) const;
  // Inference on a throwaway tape with gradients off.
  EncodeOutput encode(const Tensor& waveform) const;

  // Sets every stage's output projection (w2, b2) to zero: the blocks become identities.
  void zero_stage_projections();

 private:
  EncoderConfig cfg_;
  ParameterStore params_;
};

// Name prefixes of the stages present in block `l`, in forward order.
std::vector<std::string> block_stage_prefixes(const EncoderConfig& cfg, std::size_t l);

// Center crop (or exact pass-through) of a waveform to `samples` samples.
Tensor center_crop(const Tensor& waveform, std::size_t samples);

}  // namespace svmixer
