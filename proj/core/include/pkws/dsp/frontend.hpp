#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "pkws/rng.hpp"

namespace pkws::dsp {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kClipSamples = 16000;

/// Mono audio at a fixed sample rate, samples in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const noexcept { return samples.size(); }
};

/// frames x coeffs matrix of cepstral coefficients, row-major.
struct FeatureMap {
  int frames = 0;
  int coeffs = 0;
  std::vector<double> values;

  double at(int frame, int coeff) const { return values[static_cast<std::size_t>(frame) * coeffs + coeff]; }
  double& at(int frame, int coeff) { return values[static_cast<std::size_t>(frame) * coeffs + coeff]; }
};

struct FrontendConfig {
  int sample_rate = kSampleRate;
  double window_ms = 40.0;
  double hop_fraction = 0.5;
  int n_mels = 40;
  int n_mfcc = 10;
  double log_floor = 1e-10;
  double f_min = 20.0;
  double f_max = 8000.0;

  int window_length() const;
  int hop_length() const;
  /// Throws ValidationError on inconsistent settings.
  void validate() const;
  bool operator==(const FrontendConfig&) const = default;
};

/// Number of frames produced for a waveform of `length` samples.
int frame_count(std::size_t length, const FrontendConfig& cfg);

/// Loads a 16 kHz mono 16-bit WAV and pads (symmetrically, with zeros) or
/// center-crops it to exactly `target_len` samples.
Waveform load_clip(const std::filesystem::path& path, std::size_t target_len = kClipSamples);

/// Pads or center-crops in memory; the same rule load_clip applies.
Waveform fit_length(Waveform w, std::size_t target_len);

/// MFCC extractor: periodic Hann window, power spectrum, triangular Mel
/// filterbank, natural log with a floor, orthonormal DCT-II. No pre-emphasis
/// and no liftering. Holds an FFT plan; copies share it.
class MfccExtractor {
 public:
  explicit MfccExtractor(const FrontendConfig& cfg = {});

  FeatureMap operator()(const Waveform& w) const;

  /// |DFT|^2 of one Hann-windowed frame starting at `offset`; window_length/2+1 bins.
  std::vector<double> power_spectrum(std::span<const double> samples, std::size_t offset) const;
  /// Filterbank energies (before the log) for a power spectrum.
  std::vector<double> mel_energies(std::span<const double> power) const;

  const FrontendConfig& config() const noexcept { return cfg_; }
  /// n_mels x (window_length/2+1) filterbank weights, row-major.
  const std::vector<double>& filterbank() const noexcept { return filterbank_; }
  const std::vector<double>& window() const noexcept { return window_; }

 private:
  struct Plan;
  FrontendConfig cfg_;
  int window_length_;
  int hop_length_;
  int bins_;
  std::vector<double> window_;
  std::vector<double> filterbank_;
  std::vector<double> dct_;  // n_mfcc x n_mels
  std::shared_ptr<Plan> plan_;
};

/// Convenience wrapper; builds a fresh extractor per call.
FeatureMap mfcc(const Waveform& w, const FrontendConfig& cfg = {});

double mean_power(std::span<const double> x);

/// Gain applied to `noise` so that signal + gain*noise has the requested SNR.
double noise_gain(double signal_power, double noise_power, double snr_db);

/// signal + g*noise with g = noise_gain(P_signal, P_noise, snr_db).
/// Lengths must match; throws ValidationError on zero signal power or
/// silent noise.
Waveform mix_noise(const Waveform& signal, const Waveform& noise, double snr_db);

struct AugmentationPolicy {
  double apply_probability = 0.95;
  double snr_low_db = 0.0;
  double snr_high_db = 5.0;
  std::shared_ptr<const std::vector<Waveform>> noise_pool;

  void validate() const;
  bool enabled() const noexcept {
    return apply_probability > 0.0 && noise_pool && !noise_pool->empty();
  }
};

/// With probability apply_probability, mixes a random crop of a random
/// noise-pool entry at an SNR drawn uniformly from [snr_low_db, snr_high_db].
/// A silent crop is redrawn at a new offset; after 5 failures the signal is
/// returned unchanged. Silent signals are returned unchanged.
Waveform augment(const Waveform& signal, const AugmentationPolicy& policy, Rng& rng);

/// Loads every .wav file under `dir` (recursively, sorted by path) as a noise
/// pool entry at its full length.
std::vector<Waveform> load_noise_dir(const std::filesystem::path& dir);

}  // namespace pkws::dsp
