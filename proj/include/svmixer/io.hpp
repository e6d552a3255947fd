#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "svmixer/config.hpp"
#include "svmixer/encoder.hpp"
#include "svmixer/eval.hpp"
#include "svmixer/params.hpp"
#include "svmixer/tensor.hpp"

namespace svmixer::io {

// ---- WAV (PCM16 mono RIFF/WAVE) -------------------------------------------

struct Wave {
  Tensor samples;  // int16 / 32768
  std::uint32_t sample_rate = kSampleRate;
};

Wave read_wav(const std::string& path, bool allow_any_rate = false);
Wave decode_wav(std::string_view bytes, bool allow_any_rate = false);
// Samples are quantized as round(x * 32768) clamped to the int16 range.
void write_wav(const std::string& path, const Tensor& samples,
               std::uint32_t sample_rate = kSampleRate);
std::string encode_wav(const Tensor& samples, std::uint32_t sample_rate = kSampleRate);

// ---- Teacher feature files -------------------------------------------------
//
// Layout (little-endian):
//   "SVFT1" | u32 version (1) | u32 header_len | header JSON | payload
// The header holds n_utts, T, H_t, dtype ("float32"), teacher_name, layer
// (index or "final"), ids (payload order), payload_bytes and payload_crc32.
// The payload is n_utts contiguous float32 [T x H_t] blocks.

inline constexpr std::uint32_t kFormatVersion = 1;

struct FeatureFile {
  std::string teacher_name;
  std::optional<std::size_t> layer;  // empty = final layer
  std::size_t T = 0;
  std::size_t H = 0;
  std::vector<std::string> ids;
  std::vector<Tensor> blocks;

  std::size_t size() const { return ids.size(); }
  // nullptr when `id` is absent.
  const Tensor* find(std::string_view id) const;
};

std::string encode_features(const FeatureFile& f);
FeatureFile decode_features(std::string_view bytes);
void write_features(const std::string& path, const FeatureFile& f);
FeatureFile read_features(const std::string& path);
// Also checks the block shape against what the consumer expects.
FeatureFile read_features(const std::string& path, std::size_t expected_T, std::size_t expected_H);

// ---- Checkpoints -----------------------------------------------------------
//
//   "SVMX1" | u32 version (1) | u32 header_len | header JSON | payload
// Header: config (encoder config echo), params [{name, shape, offset}],
// payload_bytes, payload_crc32. Payload: float32 tensors in parameter order.

std::string encode_checkpoint(const SvMixerModel& model);
void save_checkpoint(const std::string& path, const SvMixerModel& model);
// Loads into an existing model; the stored config must equal model.config().
void load_checkpoint(const std::string& path, SvMixerModel& model);
void decode_checkpoint_into(std::string_view bytes, SvMixerModel& model);
// Builds a model from the config stored in the file.
SvMixerModel load_model(const std::string& path);

// ---- Run config ------------------------------------------------------------
//
// Flat JSON object; keys are the field names of the three config structs.
// Unknown keys are rejected.

struct RunConfig {
  EncoderConfig encoder = EncoderConfig::desk_student();
  DistillConfig distill;
  TrainConfig train;

  void validate() const;
};

RunConfig parse_run_config(std::string_view text, const RunConfig& base = RunConfig());
RunConfig read_run_config(const std::string& path, const RunConfig& base = RunConfig());
std::string dump_run_config(const RunConfig& cfg);
std::string dump_encoder_config(const EncoderConfig& cfg);
EncoderConfig parse_encoder_config(std::string_view text);

// ---- Trials, scores and embeddings (text) ----------------------------------

struct Trial {
  std::string enroll_id;
  std::string test_id;
  bool target = false;
};

// Lines `enroll test label`, label in {target, impostor, nontarget, 1, 0}.
// Blank lines and lines starting with '#' are skipped.
std::vector<Trial> parse_trials(std::string_view text);
std::vector<Trial> read_trials(const std::string& path);
std::string format_trials(const std::vector<Trial>& trials);

// Lines `enroll test score`, scores printed with round-trip precision.
std::string format_scores(const std::vector<eval::TrialScore>& scores);

using Embeddings = std::vector<std::pair<std::string, Tensor>>;
// Lines `id v1 ... vD`.
std::string format_embeddings(const Embeddings& e);
Embeddings parse_embeddings(std::string_view text);
Embeddings read_embeddings(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

std::uint32_t crc32(std::string_view bytes);

}  // namespace svmixer::io
