#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "svmixer/config.hpp"
#include "svmixer/encoder.hpp"
#include "svmixer/eval.hpp"
#include "svmixer/io.hpp"
#include "svmixer/params.hpp"
#include "svmixer/synth.hpp"
#include "svmixer/tensor.hpp"

namespace svmixer {

// Supplies frozen teacher targets per utterance. `layer` is a teacher layer
// index (0 = frontend output) or empty for the final layer.
class TeacherSource {
 public:
  virtual ~TeacherSource() = default;
  virtual std::size_t hidden() const = 0;
  virtual std::size_t frames() const = 0;
  // `waveform` is the crop the student sees.
  virtual const Tensor& features(const Utterance& utt, const Tensor& waveform,
                                 std::optional<std::size_t> layer) = 0;
  // False when targets are tied to a fixed clip and the student must see that clip.
  virtual bool supports_random_crops() const = 0;
};

// A fixed-seed SV-Mixer run in inference mode. Outputs are cached per
// (utterance, crop offset) and never modified.
class SyntheticTeacher final : public TeacherSource {
 public:
  SyntheticTeacher(EncoderConfig cfg, std::uint64_t seed);

  std::size_t hidden() const override { return model_.config().H; }
  std::size_t frames() const override { return model_.config().frames; }
  const Tensor& features(const Utterance& utt, const Tensor& waveform,
                         std::optional<std::size_t> layer) override;
  bool supports_random_crops() const override { return true; }

  const SvMixerModel& model() const { return model_; }
  // Checksum over every cached feature block, in key order.
  std::uint32_t cache_crc32() const;

 private:
  SvMixerModel model_;
  std::map<std::string, std::vector<Tensor>> cache_;
};

// Precomputed targets from feature files, one per available layer. Targets
// describe each utterance's centre crop.
class FeatureFileTeacher final : public TeacherSource {
 public:
  explicit FeatureFileTeacher(std::vector<io::FeatureFile> files);

  std::size_t hidden() const override { return hidden_; }
  std::size_t frames() const override { return frames_; }
  const Tensor& features(const Utterance& utt, const Tensor& waveform,
                         std::optional<std::size_t> layer) override;
  bool supports_random_crops() const override { return false; }

 private:
  std::vector<io::FeatureFile> files_;
  std::size_t hidden_ = 0;
  std::size_t frames_ = 0;
};

// Teacher config for a run: the student architecture at teacher_H x teacher_L.
EncoderConfig teacher_config(const EncoderConfig& student, const TrainConfig& train);

struct Split {
  std::vector<Utterance> train;
  std::vector<Utterance> val;
};

// The last val_utts_per_speaker utterances of each speaker are held out.
Split split_corpus(std::vector<Utterance> all, std::size_t val_per_speaker);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t steps = 0;  // cumulative optimizer steps
  double train_loss = 0.0;
  double train_kd = 0.0;
  double train_cls = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::vector<double> step_losses;
  ParameterStore heads;
  std::size_t steps = 0;
  bool early_stopped = false;
};

// One line per epoch: {"epoch", "steps", "train_loss", "train_kd", "train_cls", "val_loss", "lr"}.
std::string metrics_jsonl(const TrainResult& r);

struct TrainHooks {
  // Called after every epoch with its metrics.
  std::function<void(const EpochMetrics&)> on_epoch;
};

// Distills `teacher` into `student` on `split.train`, validating on `split.val`.
// The student model is updated in place.
TrainResult train(SvMixerModel& student, const Split& split, TeacherSource& teacher,
                  const TrainConfig& tcfg, const DistillConfig& dcfg, const TrainHooks& hooks = {});

// Loss of one batch without updating anything (validation).
double batch_loss(const SvMixerModel& student, const ParameterStore& heads,
                  const std::vector<const Utterance*>& batch,
                  const std::vector<std::size_t>& offsets, TeacherSource& teacher,
                  const TrainConfig& tcfg, const DistillConfig& dcfg);

// Embeds utterances (centre crop to `samples`) and scores every unordered pair.
io::Embeddings embed_utterances(const SvMixerModel& model, const std::vector<Utterance>& utts,
                                std::size_t samples);
std::vector<eval::TrialScore> score_all_pairs(const io::Embeddings& emb,
                                              const std::vector<std::size_t>& speakers);

}  // namespace svmixer
