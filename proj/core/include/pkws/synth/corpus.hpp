#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pkws/dsp/frontend.hpp"
#include "pkws/train/dataset.hpp"

namespace pkws::synth {

/// Tone-sequence "keywords". A small inventory of harmonic gliding tones plays
/// the role of phonemes; each class is a distinct phoneme sequence, so unseen
/// classes recombine sounds the encoder has heard. Utterances jitter pitch,
/// timing, duration and level, and carry additive white noise.
struct CorpusConfig {
  int classes = 30;
  int train_per_class = 40;
  int test_per_class = 20;
  std::uint64_t seed = 7;
  int segments = 4;
  int phonemes = 8;
  double min_hz = 180.0;
  double max_hz = 3600.0;
  double pitch_jitter = 0.03;     // relative, uniform +-
  double time_jitter_s = 0.08;    // onset shift, uniform +-
  double stretch_jitter = 0.10;   // relative duration change, uniform +-
  double snr_low_db = 5.0;
  double snr_high_db = 20.0;
  int noise_clips = 6;
  double noise_seconds = 3.0;

  void validate() const;
};

std::string class_name(int id);

/// Utterance `index` of class `cls`; deterministic in (cfg.seed, cls, index).
dsp::Waveform utterance(const CorpusConfig& cfg, int cls, int index);
/// Coloured background noise clip `index` (for the augmentation pool).
dsp::Waveform noise_clip(const CorpusConfig& cfg, int index);

struct Corpus {
  train::Dataset train;
  train::Dataset test;
  std::vector<dsp::Waveform> noise;
};

/// In-memory corpus; utterances [0, train_per_class) form the train split.
Corpus make_corpus(const CorpusConfig& cfg);

/// Writes <root>/<class>/<class>_NNNN.wav, <root>/testing_list.txt (the test
/// utterances, relative paths) and <root>/_noise_/noise_NN.wav.
void write_corpus(const CorpusConfig& cfg, const std::filesystem::path& root);

}  // namespace pkws::synth
