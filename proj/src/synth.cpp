#include "svmixer/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "svmixer/random.hpp"

namespace svmixer {
namespace {

constexpr std::size_t kHarmonics = 16;

struct Voice {
  double f0;
  double formant1, formant2, bw1, bw2;
  double tilt;
};

Voice speaker_voice(std::size_t speaker, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5000 + speaker));
  Voice v{};
  v.f0 = rng.uniform(90.0, 260.0);
  v.formant1 = rng.uniform(300.0, 900.0);
  v.formant2 = rng.uniform(1100.0, 2600.0);
  v.bw1 = rng.uniform(80.0, 200.0);
  v.bw2 = rng.uniform(120.0, 300.0);
  v.tilt = rng.uniform(0.5, 1.5);
  return v;
}

double envelope(const Voice& v, double f) {
  auto peak = [](double f, double c, double bw) {
    const double z = (f - c) / bw;
    return std::exp(-0.5 * z * z);
  };
  return (0.15 + peak(f, v.formant1, v.bw1) + 0.7 * peak(f, v.formant2, v.bw2)) *
         std::pow(v.f0 / f, 0.5 * v.tilt);
}

}  // namespace

std::string utterance_id(std::size_t speaker, std::size_t utt) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "spk%03zu-utt%03zu", speaker, utt);
  return buf;
}

Tensor synth_utterance(std::size_t speaker, std::size_t utt, std::uint64_t seed,
                       std::size_t samples, std::size_t sample_rate) {
  const Voice voice = speaker_voice(speaker, seed);
  Rng rng(mix_seed(mix_seed(seed, speaker), 0x9000 + utt));
  const double sr = static_cast<double>(sample_rate);
  const double drift = rng.uniform(-0.04, 0.04);
  const double vibrato_rate = rng.uniform(4.0, 6.5);
  const double vibrato_depth = rng.uniform(0.005, 0.02);
  const double syllable_rate = rng.uniform(2.5, 5.0);
  const double syllable_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double noise_level = rng.uniform(0.02, 0.06);
  std::vector<double> phases(kHarmonics);
  for (double& p : phases) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<double> amps(kHarmonics);
  for (std::size_t h = 0; h < kHarmonics; ++h) amps[h] = envelope(voice, voice.f0 * double(h + 1));

  std::vector<double> out(samples);
  double phase = 0.0;
  for (std::size_t n = 0; n < samples; ++n) {
    const double t = static_cast<double>(n) / sr;
    const double f0 = voice.f0 * (1.0 + drift * t / 3.0) *
                      (1.0 + vibrato_depth * std::sin(2.0 * std::numbers::pi * vibrato_rate * t));
    phase += 2.0 * std::numbers::pi * f0 / sr;
    double s = 0.0;
    for (std::size_t h = 0; h < kHarmonics; ++h) {
      if (voice.f0 * double(h + 1) >= 0.5 * sr) break;
      s += amps[h] * std::sin(double(h + 1) * phase + phases[h]);
    }
    const double am = 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * syllable_rate * t + syllable_phase);
    out[n] = am * s + noise_level * rng.normal();
  }
  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  for (double& v : out) v /= peak;
  return Tensor({samples}, std::move(out));
}

std::vector<Utterance> make_corpus(const SyntheticCorpus& corpus) {
  std::vector<Utterance> out;
  out.reserve(corpus.n_speakers * corpus.utterances_per_speaker);
  for (std::size_t s = 0; s < corpus.n_speakers; ++s)
    for (std::size_t u = 0; u < corpus.utterances_per_speaker; ++u)
      out.push_back({utterance_id(s, u), s,
                     synth_utterance(s, u, corpus.seed, corpus.samples, corpus.sample_rate)});
  return out;
}

}  // namespace svmixer
