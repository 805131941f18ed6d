#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "pkws/dsp/frontend.hpp"
#include "pkws/dsp/wav.hpp"
#include "pkws/error.hpp"
#include "pkws/rng.hpp"

namespace fs = std::filesystem;
using namespace pkws;
using namespace pkws::dsp;

namespace {

Waveform sine(double hz, double amp, std::size_t n = kClipSamples) {
  Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / kSampleRate);
  return w;
}

Waveform noise(std::uint64_t seed, std::size_t n = kClipSamples, double sigma = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, sigma);
  Waveform w;
  w.samples.resize(n);
  for (double& v : w.samples) v = d(rng);
  return w;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pkws_dsp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Hand-rolled RIFF writer so rate/channel validation can be exercised.
void write_raw_wav(const fs::path& path, int rate, int channels, const std::vector<std::int16_t>& data) {
  std::ofstream f(path, std::ios::binary);
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  const auto bytes = static_cast<std::uint32_t>(data.size() * 2);
  f.write("RIFF", 4);
  u32(36 + bytes);
  f.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(static_cast<std::uint16_t>(channels));
  u32(static_cast<std::uint32_t>(rate));
  u32(static_cast<std::uint32_t>(rate * channels * 2));
  u16(static_cast<std::uint16_t>(channels * 2));
  u16(16);
  f.write("data", 4);
  u32(bytes);
  f.write(reinterpret_cast<const char*>(data.data()), bytes);
}

}  // namespace

TEST(Frontend, OneSecondClipIs49By10) {
  const FeatureMap f = mfcc(sine(440.0, 0.3));
  EXPECT_EQ(f.frames, 49);
  EXPECT_EQ(f.coeffs, 10);
  EXPECT_EQ(f.values.size(), 490u);
}

TEST(Frontend, DefaultGeometry) {
  const FrontendConfig cfg;
  EXPECT_EQ(cfg.window_length(), 640);
  EXPECT_EQ(cfg.hop_length(), 320);
  EXPECT_EQ(frame_count(16000, cfg), 49);
  EXPECT_EQ(frame_count(639, cfg), 0);
  EXPECT_EQ(frame_count(640, cfg), 1);
}

TEST(Frontend, PeriodicHannWindow) {
  const MfccExtractor m;
  const auto& w = m.window();
  ASSERT_EQ(w.size(), 640u);
  EXPECT_DOUBLE_EQ(w[0], 0.0);
  EXPECT_NEAR(w[320], 1.0, 1e-15);
  for (std::size_t n = 1; n < 640; ++n) EXPECT_NEAR(w[n], w[640 - n], 1e-15);
}

TEST(Frontend, PowerSpectrumMatchesDirectDft) {
  const MfccExtractor m;
  const Waveform x = noise(3);
  const std::size_t offset = 320 * 7;
  const auto power = m.power_spectrum(x.samples, offset);
  ASSERT_EQ(power.size(), 321u);
  const auto& w = m.window();
  for (std::size_t k = 0; k < power.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < 640; ++n) {
      acc += x.samples[offset + n] * w[n] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * n) / 640.0);
    }
    const double expected = std::norm(acc);
    EXPECT_NEAR(power[k], expected, 1e-6 * std::max(expected, 1e-12)) << "bin " << k;
  }
}

TEST(Frontend, FilterbankIsHtkTrianglesBetween20And8000Hz) {
  const MfccExtractor m;
  const auto& fb = m.filterbank();
  ASSERT_EQ(fb.size(), 40u * 321u);
  auto mel = [](double f) { return 1127.0 * std::log(1.0 + f / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::exp(m / 1127.0) - 1.0); };
  for (int j = 0; j < 40; ++j) {
    const double l = hz(mel(20.0) + (mel(8000.0) - mel(20.0)) * j / 41.0);
    const double c = hz(mel(20.0) + (mel(8000.0) - mel(20.0)) * (j + 1) / 41.0);
    const double r = hz(mel(20.0) + (mel(8000.0) - mel(20.0)) * (j + 2) / 41.0);
    for (int k = 0; k < 321; ++k) {
      const double f = k * 25.0;
      const double expected = (f > l && f <= c) ? (f - l) / (c - l) : (f > c && f < r) ? (r - f) / (r - c) : 0.0;
      EXPECT_NEAR(fb[static_cast<std::size_t>(j * 321 + k)], expected, 1e-9) << "filter " << j << " bin " << k;
    }
  }
}

TEST(Frontend, MatchesIndependentReferenceOnSine) {
  // Frame 10 of a 1 kHz sine at amplitude 0.5, computed with an independent
  // numpy implementation (rfft, periodic Hann, HTK mel, orthonormal DCT-II).
  const double expected[10] = {-131.3172214926629,  9.837388034287725,  -10.55309093880389, -19.857831644073745,
                               -8.76867678165403,   10.839908287983635, 18.738462657850118, 7.444008977970236,
                               -10.650343574075983, -16.95044886156081};
  const FeatureMap f = mfcc(sine(1000.0, 0.5));
  for (int k = 0; k < 10; ++k) EXPECT_NEAR(f.at(10, k), expected[k], 1e-6) << "coefficient " << k;
}

TEST(Frontend, LogFloorBoundsSilence) {
  const FeatureMap f = mfcc(Waveform{std::vector<double>(kClipSamples, 0.0), kSampleRate});
  // All 40 log energies equal ln(1e-10): c0 = sqrt(40) ln(1e-10), the rest vanish.
  EXPECT_NEAR(f.at(0, 0), std::sqrt(40.0) * std::log(1e-10), 1e-9);
  for (int k = 1; k < 10; ++k) EXPECT_NEAR(f.at(0, k), 0.0, 1e-9);
}

TEST(Frontend, RejectsWrongRateAndShortInput) {
  const MfccExtractor m;
  Waveform w = sine(440.0, 0.3);
  w.sample_rate = 8000;
  EXPECT_THROW(m(w), ValidationError);
  EXPECT_THROW(m(sine(440.0, 0.3, 100)), ValidationError);
  FrontendConfig bad;
  bad.n_mfcc = 50;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Frontend, FitLengthPadsSymmetricallyAndCropsCentre) {
  Waveform w{std::vector<double>(8000, 1.0), kSampleRate};
  const Waveform padded = fit_length(w, 16000);
  EXPECT_EQ(padded.samples[3999], 0.0);
  EXPECT_EQ(padded.samples[4000], 1.0);
  EXPECT_EQ(padded.samples[11999], 1.0);
  EXPECT_EQ(padded.samples[12000], 0.0);
  Waveform ramp;
  for (int i = 0; i < 20000; ++i) ramp.samples.push_back(i);
  const Waveform cropped = fit_length(ramp, 16000);
  EXPECT_EQ(cropped.samples.front(), 2000.0);
  EXPECT_EQ(cropped.samples.back(), 17999.0);
}

TEST(Wav, RoundTripIsExactOnTheSixteenBitGrid) {
  const fs::path dir = temp_dir("roundtrip");
  std::vector<double> x;
  for (int i = -32768; i < 32768; i += 97) x.push_back(i / 32768.0);
  write_wav(dir / "a.wav", x, kSampleRate);
  const Waveform back = load_clip(dir / "a.wav", x.size());
  ASSERT_EQ(back.samples.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(back.samples[i], x[i]);
}

TEST(Wav, RejectsForeignFormatsWithPath) {
  const fs::path dir = temp_dir("reject");
  write_raw_wav(dir / "cd.wav", 44100, 1, std::vector<std::int16_t>(441, 0));
  write_raw_wav(dir / "stereo.wav", 16000, 2, std::vector<std::int16_t>(320, 0));
  try {
    load_clip(dir / "cd.wav");
    FAIL() << "44.1 kHz accepted";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("cd.wav"), std::string::npos);
  }
  EXPECT_THROW(load_clip(dir / "stereo.wav"), ValidationError);
  std::ofstream(dir / "junk.wav") << "not audio";
  EXPECT_THROW(read_wav(dir / "junk.wav"), ValidationError);
  EXPECT_THROW(read_wav(dir / "missing.wav"), IoError);
}

TEST(Noise, MixingHitsRequestedSnr) {
  const Waveform s = sine(700.0, 0.4);
  const Waveform n = noise(11);
  for (double snr : {0.0, 2.5, 5.0, 20.0}) {
    const Waveform mixed = mix_noise(s, n, snr);
    std::vector<double> added(mixed.samples.size());
    for (std::size_t i = 0; i < added.size(); ++i) added[i] = mixed.samples[i] - s.samples[i];
    const double measured = 10.0 * std::log10(mean_power(s.samples) / mean_power(added));
    EXPECT_NEAR(measured, snr, 1e-9);
  }
}

TEST(Noise, GainFormula) {
  EXPECT_NEAR(noise_gain(1.0, 1.0, 0.0), 1.0, 1e-15);
  EXPECT_NEAR(noise_gain(1.0, 1.0, 20.0), 0.1, 1e-15);
  EXPECT_NEAR(noise_gain(4.0, 1.0, 0.0), 2.0, 1e-15);
}

TEST(Noise, MixingRejectsDegenerateInputs) {
  const Waveform s = sine(700.0, 0.4);
  EXPECT_THROW(mix_noise(s, noise(1, 100), 5.0), ValidationError);
  EXPECT_THROW(mix_noise(s, Waveform{std::vector<double>(kClipSamples, 0.0), kSampleRate}, 5.0), ValidationError);
  EXPECT_THROW(mix_noise(Waveform{std::vector<double>(kClipSamples, 0.0), kSampleRate}, noise(1), 5.0), ValidationError);
}

TEST(Augment, RespectsProbabilityAndSnrRange) {
  AugmentationPolicy policy;
  policy.noise_pool = std::make_shared<const std::vector<Waveform>>(std::vector<Waveform>{noise(5, 48000)});
  const Waveform s = sine(500.0, 0.3);
  int changed = 0;
  for (std::uint64_t i = 0; i < 400; ++i) {
    Rng rng = make_rng(9, {i});
    const Waveform out = augment(s, policy, rng);
    std::vector<double> added(out.samples.size());
    for (std::size_t j = 0; j < added.size(); ++j) added[j] = out.samples[j] - s.samples[j];
    const double p = mean_power(added);
    if (p == 0.0) continue;
    ++changed;
    const double snr = 10.0 * std::log10(mean_power(s.samples) / p);
    EXPECT_GE(snr, -1e-9);
    EXPECT_LE(snr, 5.0 + 1e-9);
  }
  // Binomial(400, 0.95): mean 380, sd 4.4.
  EXPECT_GT(changed, 360);
  EXPECT_LT(changed, 400);
}

TEST(Augment, DisabledOrDeterministic) {
  AugmentationPolicy policy;
  const Waveform s = sine(500.0, 0.3);
  Rng rng(1);
  EXPECT_EQ(augment(s, policy, rng).samples, s.samples);
  policy.noise_pool = std::make_shared<const std::vector<Waveform>>(std::vector<Waveform>{noise(5, 40000)});
  policy.apply_probability = 1.0;
  Rng a(42), b(42);
  EXPECT_EQ(augment(s, policy, a).samples, augment(s, policy, b).samples);
  policy.snr_low_db = 6.0;
  policy.snr_high_db = 5.0;
  EXPECT_THROW(policy.validate(), ValidationError);
}
