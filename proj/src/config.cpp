#include "svmixer/config.hpp"

#include <cmath>

#include "svmixer/errors.hpp"

namespace svmixer {

std::string to_string(BlockVariant v) {
  return v == BlockVariant::svmixer ? "svmixer" : "mlpmixer";
}

BlockVariant parse_block_variant(const std::string& s) {
  if (s == "svmixer") return BlockVariant::svmixer;
  if (s == "mlpmixer") return BlockVariant::mlpmixer;
  throw ConfigError("block_variant must be svmixer or mlpmixer, got '" + s + "'");
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("EncoderConfig: " + msg); };
  if (H == 0 || L == 0 || G == 0 || expansion == 0 || conv_channels == 0 || embed_dim == 0)
    fail("H, L, G, expansion, conv_channels and embed_dim must be positive");
  if (H % G != 0) fail("H=" + std::to_string(H) + " is not divisible by G=" + std::to_string(G));
  if (conv_kernels.size() != 7 || conv_strides.size() != 7)
    fail("conv_kernels and conv_strides must both have 7 entries");
  for (std::size_t i = 0; i < 7; ++i)
    if (conv_kernels[i] == 0 || conv_strides[i] == 0) fail("conv kernels/strides must be positive");
  if (frames < 2) fail("frames must be at least 2 (multi-scale pooling)");
  if (lgm_conv_kernel == 0) fail("lgm_conv_kernel must be positive");
  if (lgm_enabled() && frames < lgm_conv_kernel) fail("frames shorter than lgm_conv_kernel");
}

EncoderConfig EncoderConfig::desk_student() {
  EncoderConfig c;
  c.H = 32;
  c.L = 2;
  c.G = 4;
  c.conv_channels = 16;
  return c;
}

EncoderConfig EncoderConfig::desk_teacher() {
  EncoderConfig c = desk_student();
  c.H = 64;
  return c;
}

std::size_t frames_for_samples(const EncoderConfig& cfg, std::size_t samples) {
  std::size_t len = samples;
  for (std::size_t i = 0; i < cfg.conv_kernels.size(); ++i) {
    if (len < cfg.conv_kernels[i]) return 0;
    len = (len - cfg.conv_kernels[i]) / cfg.conv_strides[i] + 1;
  }
  return len;
}

std::size_t samples_for_frames(const EncoderConfig& cfg, std::size_t frames) {
  if (frames == 0) throw ConfigError("samples_for_frames: frames must be positive");
  std::size_t len = frames;
  for (std::size_t i = cfg.conv_kernels.size(); i-- > 0;)
    len = (len - 1) * cfg.conv_strides[i] + cfg.conv_kernels[i];
  return len;
}

std::string to_string(DistillMode m) {
  return m == DistillMode::final_state ? "final_state" : "multi_head";
}

std::string to_string(PenaltyScope s) {
  return s == PenaltyScope::class_terms ? "class" : "utterance";
}

DistillMode parse_distill_mode(const std::string& s) {
  if (s == "final_state") return DistillMode::final_state;
  if (s == "multi_head") return DistillMode::multi_head;
  throw ConfigError("mode must be final_state or multi_head, got '" + s + "'");
}

PenaltyScope parse_penalty_scope(const std::string& s) {
  if (s == "class") return PenaltyScope::class_terms;
  if (s == "utterance") return PenaltyScope::utterance;
  throw ConfigError("penalty_scope must be class or utterance, got '" + s + "'");
}

void DistillConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("DistillConfig: " + msg); };
  if (hard_multiplier < 1.0) fail("hard_multiplier must be >= 1");
  if (!(aam_scale > 0.0)) fail("aam_scale must be positive");
  if (!(aam_margin >= 0.0 && aam_margin < std::acos(0.0))) fail("aam_margin must lie in [0, pi/2)");
  if (lambda_kd < 0.0 || lambda_cls < 0.0) fail("loss weights must be non-negative");
  if (mode == DistillMode::multi_head && matched_teacher_layers.empty())
    fail("multi_head mode needs at least one matched teacher layer");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("TrainConfig: " + msg); };
  if (!(lr0 > 0.0)) fail("lr0 must be positive");
  if (plateau_patience == 0 || early_stop_patience == 0) fail("patience values must be positive");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) fail("lr_factor must lie in (0, 1)");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(crop_seconds > 0.0)) fail("crop_seconds must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (val_utts_per_speaker >= utterances_per_speaker)
    fail("val_utts_per_speaker must leave at least one training utterance per speaker");
  if (threads == 0) fail("threads must be positive");
  if (teacher_H == 0 || teacher_L == 0) fail("teacher_H and teacher_L must be positive");
}

}  // namespace svmixer
