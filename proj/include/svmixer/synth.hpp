#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "svmixer/config.hpp"
#include "svmixer/tensor.hpp"

namespace svmixer {

struct SyntheticCorpus {
  std::size_t n_speakers = 8;
  std::size_t utterances_per_speaker = 20;
  std::size_t sample_rate = kSampleRate;
  std::uint64_t seed = 1234;
  std::size_t samples = 48000;
};

// Harmonic source with a per-speaker fundamental and formant envelope, plus
// per-utterance pitch drift, syllable-rate amplitude modulation and noise.
// Peak-normalized so max |sample| == 1.
Tensor synth_utterance(std::size_t speaker, std::size_t utt, std::uint64_t seed,
                       std::size_t samples = 48000, std::size_t sample_rate = kSampleRate);

std::string utterance_id(std::size_t speaker, std::size_t utt);

struct Utterance {
  std::string id;
  std::size_t speaker = 0;
  Tensor waveform;
};

std::vector<Utterance> make_corpus(const SyntheticCorpus& corpus);

}  // namespace svmixer
