#include "pkws/dsp/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <string>

#include "pkws/dsp/wav.hpp"
#include "pkws/error.hpp"

namespace pkws::dsp {
namespace {

// FFTW planning is not thread-safe; execution with new-array execute is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

struct MfccExtractor::Plan {
  fftw_plan plan = nullptr;
  explicit Plan(int n) {
    std::vector<double> in(static_cast<std::size_t>(n));
    std::vector<fftw_complex> out(static_cast<std::size_t>(n / 2 + 1));
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in.data(), out.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (plan == nullptr) throw NumericError("FFTW failed to create a plan of size " + std::to_string(n));
  }
  ~Plan() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
};

int FrontendConfig::window_length() const {
  return static_cast<int>(std::lround(window_ms * 1e-3 * sample_rate));
}

int FrontendConfig::hop_length() const {
  return static_cast<int>(std::lround(window_length() * hop_fraction));
}

void FrontendConfig::validate() const {
  if (sample_rate <= 0) throw ValidationError("frontend.sample_rate must be positive");
  if (!(window_ms > 0.0) || window_length() < 2) throw ValidationError("frontend.window_ms too small");
  if (!(hop_fraction > 0.0 && hop_fraction <= 1.0)) throw ValidationError("frontend.hop_fraction must be in (0, 1]");
  if (n_mels < 1) throw ValidationError("frontend.n_mels must be >= 1");
  if (n_mfcc < 1 || n_mfcc > n_mels) throw ValidationError("frontend.n_mfcc must be in [1, n_mels]");
  if (!(log_floor > 0.0)) throw ValidationError("frontend.log_floor must be positive");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
    throw ValidationError("frontend.f_min/f_max must satisfy 0 <= f_min < f_max <= sample_rate/2");
  }
}

int frame_count(std::size_t length, const FrontendConfig& cfg) {
  const auto win = static_cast<std::size_t>(cfg.window_length());
  if (length < win) return 0;
  return static_cast<int>((length - win) / static_cast<std::size_t>(cfg.hop_length()) + 1);
}

Waveform fit_length(Waveform w, std::size_t target_len) {
  const std::size_t n = w.samples.size();
  if (n == target_len) return w;
  std::vector<double> out(target_len, 0.0);
  if (n < target_len) {
    const std::size_t left = (target_len - n) / 2;
    std::copy(w.samples.begin(), w.samples.end(), out.begin() + static_cast<std::ptrdiff_t>(left));
  } else {
    const std::size_t start = (n - target_len) / 2;
    std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(start), target_len, out.begin());
  }
  w.samples = std::move(out);
  return w;
}

Waveform load_clip(const std::filesystem::path& path, std::size_t target_len) {
  const WavData wav = read_wav(path);
  if (wav.channels != 1) {
    throw ValidationError(path.string() + ": expected mono audio, got " +
                          std::to_string(wav.channels) + " channels");
  }
  if (wav.sample_rate != kSampleRate) {
    throw ValidationError(path.string() + ": expected 16000 Hz, got " +
                          std::to_string(wav.sample_rate) + " Hz");
  }
  Waveform w;
  w.sample_rate = wav.sample_rate;
  w.samples.resize(wav.samples.size());
  std::transform(wav.samples.begin(), wav.samples.end(), w.samples.begin(),
                 [](std::int16_t s) { return static_cast<double>(s) / 32768.0; });
  return fit_length(std::move(w), target_len);
}

MfccExtractor::MfccExtractor(const FrontendConfig& cfg)
    : cfg_(cfg),
      window_length_(cfg.window_length()),
      hop_length_(cfg.hop_length()),
      bins_(cfg.window_length() / 2 + 1) {
  cfg_.validate();

  window_.resize(static_cast<std::size_t>(window_length_));
  for (int n = 0; n < window_length_; ++n) {
    window_[static_cast<std::size_t>(n)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / window_length_);
  }

  // Triangles are evaluated at the exact bin frequencies rather than snapped
  // to integer bins, so narrow low-frequency filters never collapse.
  filterbank_.assign(static_cast<std::size_t>(cfg_.n_mels * bins_), 0.0);
  const double mel_lo = hz_to_mel(cfg_.f_min);
  const double mel_hi = hz_to_mel(cfg_.f_max);
  std::vector<double> edges(static_cast<std::size_t>(cfg_.n_mels + 2));
  for (int i = 0; i < cfg_.n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg_.n_mels + 1));
  }
  for (int m = 0; m < cfg_.n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < bins_; ++k) {
      const double f = static_cast<double>(k) * cfg_.sample_rate / window_length_;
      double v = 0.0;
      if (f > left && f <= center) {
        v = (f - left) / (center - left);
      } else if (f > center && f < right) {
        v = (right - f) / (right - center);
      }
      filterbank_[static_cast<std::size_t>(m * bins_ + k)] = v;
    }
  }

  dct_.resize(static_cast<std::size_t>(cfg_.n_mfcc * cfg_.n_mels));
  for (int k = 0; k < cfg_.n_mfcc; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / cfg_.n_mels);
    for (int m = 0; m < cfg_.n_mels; ++m) {
      dct_[static_cast<std::size_t>(k * cfg_.n_mels + m)] =
          scale * std::cos(std::numbers::pi * k * (m + 0.5) / cfg_.n_mels);
    }
  }

  plan_ = std::make_shared<Plan>(window_length_);
}

std::vector<double> MfccExtractor::power_spectrum(std::span<const double> samples,
                                                  std::size_t offset) const {
  const auto win = static_cast<std::size_t>(window_length_);
  if (offset + win > samples.size()) throw ValidationError("frame exceeds waveform length");
  std::vector<double> frame(win);
  for (std::size_t n = 0; n < win; ++n) frame[n] = samples[offset + n] * window_[n];
  std::vector<fftw_complex> spec(static_cast<std::size_t>(bins_));
  fftw_execute_dft_r2c(plan_->plan, frame.data(), spec.data());
  std::vector<double> power(static_cast<std::size_t>(bins_));
  for (int k = 0; k < bins_; ++k) {
    const auto& c = spec[static_cast<std::size_t>(k)];
    power[static_cast<std::size_t>(k)] = c[0] * c[0] + c[1] * c[1];
  }
  return power;
}

std::vector<double> MfccExtractor::mel_energies(std::span<const double> power) const {
  if (power.size() != static_cast<std::size_t>(bins_)) throw ValidationError("power spectrum has wrong bin count");
  std::vector<double> mel(static_cast<std::size_t>(cfg_.n_mels), 0.0);
  for (int m = 0; m < cfg_.n_mels; ++m) {
    const double* row = filterbank_.data() + static_cast<std::size_t>(m * bins_);
    double acc = 0.0;
    for (int k = 0; k < bins_; ++k) acc += row[k] * power[static_cast<std::size_t>(k)];
    mel[static_cast<std::size_t>(m)] = acc;
  }
  return mel;
}

FeatureMap MfccExtractor::operator()(const Waveform& w) const {
  if (w.sample_rate != cfg_.sample_rate) {
    throw ValidationError("waveform sample rate " + std::to_string(w.sample_rate) +
                          " does not match frontend rate " + std::to_string(cfg_.sample_rate));
  }
  const int frames = frame_count(w.size(), cfg_);
  if (frames < 1) {
    throw ValidationError("waveform of " + std::to_string(w.size()) +
                          " samples is shorter than one analysis window");
  }
  FeatureMap fm;
  fm.frames = frames;
  fm.coeffs = cfg_.n_mfcc;
  fm.values.assign(static_cast<std::size_t>(frames * cfg_.n_mfcc), 0.0);
  std::vector<double> logmel(static_cast<std::size_t>(cfg_.n_mels));
  for (int t = 0; t < frames; ++t) {
    const auto power = power_spectrum(w.samples, static_cast<std::size_t>(t) * hop_length_);
    const auto mel = mel_energies(power);
    for (int m = 0; m < cfg_.n_mels; ++m) {
      logmel[static_cast<std::size_t>(m)] = std::log(std::max(mel[static_cast<std::size_t>(m)], cfg_.log_floor));
    }
    for (int k = 0; k < cfg_.n_mfcc; ++k) {
      const double* basis = dct_.data() + static_cast<std::size_t>(k * cfg_.n_mels);
      double acc = 0.0;
      for (int m = 0; m < cfg_.n_mels; ++m) acc += basis[m] * logmel[static_cast<std::size_t>(m)];
      fm.at(t, k) = acc;
    }
  }
  return fm;
}

FeatureMap mfcc(const Waveform& w, const FrontendConfig& cfg) { return MfccExtractor(cfg)(w); }

double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

double noise_gain(double signal_power, double noise_power, double snr_db) {
  return std::sqrt(signal_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
}

Waveform mix_noise(const Waveform& signal, const Waveform& noise, double snr_db) {
  if (signal.size() != noise.size()) {
    throw ValidationError("mix_noise: signal and noise lengths differ (" + std::to_string(signal.size()) +
                          " vs " + std::to_string(noise.size()) + ")");
  }
  const double ps = mean_power(signal.samples);
  const double pn = mean_power(noise.samples);
  if (!(ps > 0.0)) throw ValidationError("mix_noise: signal power is zero");
  if (!(pn > 0.0)) throw ValidationError("mix_noise: noise segment is silent");
  const double g = noise_gain(ps, pn, snr_db);
  Waveform out = signal;
  for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] += g * noise.samples[i];
  return out;
}

void AugmentationPolicy::validate() const {
  if (!(apply_probability >= 0.0 && apply_probability <= 1.0)) {
    throw ValidationError("augmentation apply_probability must be in [0, 1]");
  }
  if (!(snr_low_db <= snr_high_db)) throw ValidationError("augmentation requires snr_low_db <= snr_high_db");
}

Waveform augment(const Waveform& signal, const AugmentationPolicy& policy, Rng& rng) {
  if (!policy.enabled()) return signal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) >= policy.apply_probability) return signal;
  if (!(mean_power(signal.samples) > 0.0)) return signal;

  const auto& pool = *policy.noise_pool;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  const Waveform& source = pool[pick(rng)];
  const double snr = std::uniform_real_distribution<double>(policy.snr_low_db, policy.snr_high_db)(rng);
  if (source.samples.empty()) return signal;

  Waveform segment;
  segment.sample_rate = signal.sample_rate;
  segment.samples.resize(signal.size());
  std::uniform_int_distribution<std::size_t> offset_dist(0, source.size() - 1);
  for (int attempt = 0; attempt < 5; ++attempt) {
    // Noise shorter than the clip wraps around.
    const std::size_t offset = offset_dist(rng);
    for (std::size_t i = 0; i < segment.samples.size(); ++i) {
      segment.samples[i] = source.samples[(offset + i) % source.size()];
    }
    if (mean_power(segment.samples) > 0.0) return mix_noise(signal, segment, snr);
  }
  return signal;
}

std::vector<Waveform> load_noise_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("noise directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Waveform> pool;
  pool.reserve(files.size());
  for (const auto& f : files) {
    const WavData wav = read_wav(f);
    if (wav.channels != 1 || wav.sample_rate != kSampleRate) {
      throw ValidationError(f.string() + ": noise files must be 16 kHz mono");
    }
    Waveform w;
    w.samples.resize(wav.samples.size());
    std::transform(wav.samples.begin(), wav.samples.end(), w.samples.begin(),
                   [](std::int16_t s) { return static_cast<double>(s) / 32768.0; });
    pool.push_back(std::move(w));
  }
  return pool;
}

}  // namespace pkws::dsp
