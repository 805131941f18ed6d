#include "pkws/synth/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "pkws/dsp/wav.hpp"
#include "pkws/error.hpp"
#include "pkws/rng.hpp"

namespace pkws::synth {
namespace {

constexpr std::uint64_t kClassTag = 0x636c617373;
constexpr std::uint64_t kUttTag = 0x757474;
constexpr std::uint64_t kNoiseTag = 0x6e6f697365;
constexpr std::uint64_t kPhonemeTag = 0x70686f6e;

struct Segment {
  double hz;
  double glide;     // end frequency / start frequency
  double duration;  // seconds
};

std::vector<Segment> phoneme_inventory(const CorpusConfig& cfg) {
  Rng rng = make_rng(cfg.seed, {kPhonemeTag});
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  std::uniform_real_distribution<double> glide(-0.35, 0.35);
  std::uniform_real_distribution<double> dur(0.10, 0.19);
  // Log-spaced centre frequencies with jitter keep the phonemes distinct.
  const double lo = std::log(cfg.min_hz), hi = std::log(cfg.max_hz);
  const double step = (hi - lo) / cfg.phonemes;
  std::vector<Segment> inv;
  for (int p = 0; p < cfg.phonemes; ++p) {
    inv.push_back({std::exp(lo + step * (p + 0.5 + u(rng))), std::exp(glide(rng)), dur(rng)});
  }
  return inv;
}

// Phoneme sequences of all classes; any two differ in all but one position
// when the inventory allows it.
std::vector<std::vector<int>> class_sequences(const CorpusConfig& cfg) {
  Rng rng = make_rng(cfg.seed, {kClassTag});
  std::uniform_int_distribution<int> pick(0, cfg.phonemes - 1);
  std::vector<std::vector<int>> seqs;
  int attempts = 0;
  while (static_cast<int>(seqs.size()) < cfg.classes) {
    std::vector<int> s(static_cast<std::size_t>(cfg.segments));
    for (int& v : s) v = pick(rng);
    const int need = ++attempts < 100000 ? std::max(1, cfg.segments - 1) : 1;
    bool ok = true;
    for (const auto& o : seqs) {
      int diff = 0;
      for (std::size_t i = 0; i < s.size(); ++i) diff += s[i] != o[i];
      if (diff < need) {
        ok = false;
        break;
      }
    }
    if (ok) seqs.push_back(std::move(s));
  }
  return seqs;
}

void add_white(std::vector<double>& x, double snr_db, Rng& rng) {
  const double ps = dsp::mean_power(x);
  if (ps <= 0.0) return;
  std::normal_distribution<double> n(0.0, 1.0);
  const double sigma = std::sqrt(ps / std::pow(10.0, snr_db / 10.0));
  for (double& v : x) v += sigma * n(rng);
}

}  // namespace

void CorpusConfig::validate() const {
  if (classes < 1 || train_per_class < 1 || test_per_class < 0) throw ValidationError("corpus sizes must be positive");
  if (segments < 1) throw ValidationError("corpus needs at least one tone segment");
  if (phonemes < 2) throw ValidationError("corpus needs at least two phonemes");
  double distinct = 1.0;
  for (int i = 0; i < segments; ++i) distinct *= phonemes;
  if (distinct < classes) throw ValidationError("too few phoneme sequences for the class count");
  if (!(min_hz > 0.0 && max_hz > min_hz && max_hz < 7000.0)) throw ValidationError("tone range must lie in (0, 7000) Hz");
  if (snr_high_db < snr_low_db) throw ValidationError("corpus SNR range is inverted");
  if (noise_clips < 0 || noise_seconds < 1.0) throw ValidationError("noise clips must be at least 1 s long");
}

std::string class_name(int id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "kw%02d", id);
  return buf;
}

dsp::Waveform utterance(const CorpusConfig& cfg, int cls, int index) {
  const auto inv = phoneme_inventory(cfg);
  const auto seq = class_sequences(cfg).at(static_cast<std::size_t>(cls));
  std::vector<Segment> segs;
  for (int p : seq) segs.push_back(inv[static_cast<std::size_t>(p)]);
  Rng rng = make_rng(cfg.seed, {kUttTag, static_cast<std::uint64_t>(cls), static_cast<std::uint64_t>(index)});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double pitch = 1.0 + cfg.pitch_jitter * u(rng);
  const double stretch = 1.0 + cfg.stretch_jitter * u(rng);
  const double level = std::exp(std::log(0.3) + 0.7 * u(rng));
  double t0 = 0.5 - 0.5 * stretch * [&] {
    double total = 0.0;
    for (const auto& s : segs) total += s.duration;
    return total;
  }() + cfg.time_jitter_s * u(rng);

  const double sr = dsp::kSampleRate;
  std::vector<double> x(dsp::kClipSamples, 0.0);
  for (const auto& seg : segs) {
    const double dur = seg.duration * stretch;
    const double f0 = seg.hz * pitch;
    const double f1 = f0 * seg.glide;
    double phase = 0.0;
    const auto start = static_cast<long>(std::lround(t0 * sr));
    const auto len = static_cast<long>(std::lround(dur * sr));
    for (long n = 0; n < len; ++n) {
      const long idx = start + n;
      const double frac = static_cast<double>(n) / static_cast<double>(len);
      const double f = f0 + (f1 - f0) * frac;
      phase += 2.0 * std::numbers::pi * f / sr;
      if (idx < 0 || idx >= static_cast<long>(x.size())) continue;
      const double env = std::sin(std::numbers::pi * frac);
      double v = std::sin(phase);
      if (2.0 * f < 0.45 * sr) v += 0.5 * std::sin(2.0 * phase);
      if (3.0 * f < 0.45 * sr) v += 0.25 * std::sin(3.0 * phase);
      x[static_cast<std::size_t>(idx)] += level * env * v / 1.75;
    }
    t0 += dur;
  }
  std::uniform_real_distribution<double> snr(cfg.snr_low_db, cfg.snr_high_db);
  add_white(x, snr(rng), rng);
  return {std::move(x), dsp::kSampleRate};
}

dsp::Waveform noise_clip(const CorpusConfig& cfg, int index) {
  Rng rng = make_rng(cfg.seed, {kNoiseTag, static_cast<std::uint64_t>(index)});
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> pole(0.0, 0.97);
  const double a = pole(rng);
  const auto len = static_cast<std::size_t>(cfg.noise_seconds * dsp::kSampleRate);
  std::vector<double> x(len);
  double prev = 0.0;
  for (double& v : x) {
    prev = a * prev + n(rng);
    v = prev;
  }
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  for (double& v : x) v *= 0.5 / peak;
  return {std::move(x), dsp::kSampleRate};
}

Corpus make_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  std::vector<std::string> names;
  for (int c = 0; c < cfg.classes; ++c) names.push_back(class_name(c));
  std::vector<int> train_labels, test_labels;
  std::vector<dsp::Waveform> train_clips, test_clips;
  for (int c = 0; c < cfg.classes; ++c) {
    for (int i = 0; i < cfg.train_per_class + cfg.test_per_class; ++i) {
      const bool is_train = i < cfg.train_per_class;
      (is_train ? train_labels : test_labels).push_back(c);
      (is_train ? train_clips : test_clips).push_back(utterance(cfg, c, i));
    }
  }
  Corpus corpus;
  corpus.train = train::Dataset::from_memory(names, train_labels, std::move(train_clips));
  corpus.test = train::Dataset::from_memory(names, test_labels, std::move(test_clips));
  for (int i = 0; i < cfg.noise_clips; ++i) corpus.noise.push_back(noise_clip(cfg, i));
  return corpus;
}

void write_corpus(const CorpusConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  std::ofstream testing(root / "testing_list.txt");
  if (!testing) throw IoError("cannot write " + (root / "testing_list.txt").string());
  for (int c = 0; c < cfg.classes; ++c) {
    const std::string name = class_name(c);
    fs::create_directories(root / name, ec);
    if (ec) throw IoError("cannot create " + (root / name).string() + ": " + ec.message());
    for (int i = 0; i < cfg.train_per_class + cfg.test_per_class; ++i) {
      char file[64];
      std::snprintf(file, sizeof file, "%s_%04d.wav", name.c_str(), i);
      const dsp::Waveform w = utterance(cfg, c, i);
      dsp::write_wav(root / name / file, w.samples, w.sample_rate);
      if (i >= cfg.train_per_class) testing << name << "/" << file << "\n";
    }
  }
  fs::create_directories(root / "_noise_", ec);
  if (ec) throw IoError("cannot create " + (root / "_noise_").string() + ": " + ec.message());
  for (int i = 0; i < cfg.noise_clips; ++i) {
    char file[32];
    std::snprintf(file, sizeof file, "noise_%02d.wav", i);
    const dsp::Waveform w = noise_clip(cfg, i);
    dsp::write_wav(root / "_noise_" / file, w.samples, w.sample_rate);
  }
  if (!testing) throw IoError("failed writing testing_list.txt");
}

}  // namespace pkws::synth
