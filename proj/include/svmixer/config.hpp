#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace svmixer {

enum class BlockVariant { svmixer, mlpmixer };

std::string to_string(BlockVariant v);
BlockVariant parse_block_variant(const std::string& s);

// Architecture hyperparameters. Field names double as run-config keys.
struct EncoderConfig {
  std::size_t H = 1024;          // channel dim
  std::size_t L = 12;            // encoder blocks
  std::size_t G = 4;             // GCM groups
  std::size_t expansion = 4;     // MLP hidden = expansion * input dim
  std::size_t frames = 149;      // T the time-mixing MLPs are built for (3 s at 16 kHz)
  std::vector<std::size_t> conv_kernels{10, 3, 3, 3, 3, 2, 2};
  std::vector<std::size_t> conv_strides{5, 2, 2, 2, 2, 2, 2};
  std::size_t conv_channels = 512;
  std::size_t lgm_conv_kernel = 3;
  std::size_t embed_dim = 192;
  BlockVariant block_variant = BlockVariant::svmixer;
  bool use_gcm = true;
  bool use_lgm = true;
  bool use_msm = true;

  // Throws ConfigError on violated invariants.
  void validate() const;

  // Effective stage switches after the variant is applied.
  bool lgm_enabled() const { return block_variant == BlockVariant::svmixer && use_lgm; }
  bool msm_enabled() const { return block_variant == BlockVariant::svmixer && use_msm; }
  bool gcm_enabled() const { return block_variant == BlockVariant::svmixer && use_gcm; }
  // Vanilla token mixing runs when neither temporal replacement is on.
  bool token_mix_enabled() const { return !lgm_enabled() && !msm_enabled(); }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;

  // Student used by the desk-scale pipeline: small widths, 3-s crops.
  static EncoderConfig desk_student();
  // Wider frozen teacher for the synthetic distillation setup.
  static EncoderConfig desk_teacher();
};

// Frame count produced by the conv frontend for `samples` input samples;
// 0 when the input is too short for the first frame.
std::size_t frames_for_samples(const EncoderConfig& cfg, std::size_t samples);
// Smallest input length producing `frames` frames (frames >= 1).
std::size_t samples_for_frames(const EncoderConfig& cfg, std::size_t frames);

enum class DistillMode { final_state, multi_head };
enum class PenaltyScope { class_terms, utterance };

std::string to_string(DistillMode m);
std::string to_string(PenaltyScope s);
DistillMode parse_distill_mode(const std::string& s);
PenaltyScope parse_penalty_scope(const std::string& s);

struct DistillConfig {
  DistillMode mode = DistillMode::final_state;
  // Teacher layer indices matched in multi_head mode (0 = frontend output).
  std::vector<std::size_t> matched_teacher_layers{};
  double lambda_kd = 1.0;
  double lambda_cls = 1.0;
  double aam_scale = 30.0;
  double aam_margin = 0.2;
  std::size_t hard_k = 5;
  double hard_multiplier = 10.0;
  PenaltyScope penalty_scope = PenaltyScope::class_terms;

  void validate() const;
  friend bool operator==(const DistillConfig&, const DistillConfig&) = default;
};

struct TrainConfig {
  double lr0 = 2e-4;
  double weight_decay = 2e-5;
  std::size_t plateau_patience = 5;
  std::size_t early_stop_patience = 10;
  double lr_factor = 0.5;
  std::size_t batch_size = 8;
  double crop_seconds = 3.0;
  std::uint64_t seed = 0;
  std::size_t max_epochs = 100;
  // 0 = unlimited; otherwise training stops after this many optimizer steps.
  std::size_t max_steps = 0;
  std::size_t n_speakers = 8;
  std::size_t utterances_per_speaker = 20;
  std::size_t val_utts_per_speaker = 4;
  std::uint64_t corpus_seed = 1234;
  std::uint64_t teacher_seed = 77;
  // Synthetic teacher: the student architecture widened to teacher_H, with teacher_L blocks.
  std::size_t teacher_H = 64;
  std::size_t teacher_L = 2;
  std::size_t threads = 1;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline constexpr std::size_t kSampleRate = 16000;

}  // namespace svmixer
