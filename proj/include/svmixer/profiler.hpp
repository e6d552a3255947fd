#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "svmixer/config.hpp"

namespace svmixer {
class SvMixerModel;
}

// Closed-form parameter and multiply-accumulate counts. Only matmul/conv MACs
// are counted; norms, activations, pooling and interpolation are free.
namespace svmixer::profiler {

struct LayerCost {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

struct CostReport {
  std::string model;              // "svmixer", "mlpmixer" or "transformer"
  std::size_t frames = 0;         // T the MACs were evaluated at
  EncoderConfig config;
  std::vector<LayerCost> per_layer;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;

  // Sum over rows whose name equals `prefix` or starts with `prefix.`.
  std::uint64_t params_with_prefix(const std::string& prefix) const;
  std::uint64_t macs_with_prefix(const std::string& prefix) const;
};

// Two-layer MLP on width d with hidden width e*d.
std::uint64_t mlp_params(std::uint64_t d, std::uint64_t expansion);
// Norm affine (gamma, beta).
std::uint64_t norm_params(std::uint64_t dim);

// Whole-model report at config.frames: frontend rows, one row per block stage
// (named like the parameter prefixes, e.g. "blocks.0.gcm"), layer_weights, backend.
CostReport count_params(const EncoderConfig& cfg);
// Same rows with the time-mixing MLPs and frontend evaluated at `frames`.
CostReport count_macs(const EncoderConfig& cfg, std::size_t frames);

// Rows of a single encoder block at `frames`.
CostReport encoder_layer_cost(const EncoderConfig& cfg, std::size_t frames);

// Transformer encoder layer cost model: 4 H^2 attention projections (with biases),
// an FFN of width ffn_dim, two norms, plus 2 T^2 H for the score and value products.
CostReport transformer_layer_cost(std::size_t hidden, std::size_t ffn_dim, std::size_t frames);

struct CensusRow {
  std::string name;
  std::uint64_t analytic = 0;
  std::uint64_t census = 0;
};

struct VerifyReport {
  bool ok = true;
  std::vector<CensusRow> rows;
  std::vector<std::string> mismatched;    // row names whose counts disagree
  std::vector<std::string> unaccounted;   // parameter names matching no analytic row
  std::uint64_t analytic_total = 0;
  std::uint64_t census_total = 0;
};

// Compares count_params(model.config()) with the model's actual tensors.
VerifyReport verify_against_model(const SvMixerModel& model);

}  // namespace svmixer::profiler
