#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "pkws/dsp/frontend.hpp"
#include "pkws/nn/encoder.hpp"
#include "pkws/openset/classifier.hpp"
#include "pkws/train/losses.hpp"

using namespace pkws;

namespace {

dsp::Waveform tone_clip() {
  dsp::Waveform w;
  w.samples.resize(dsp::kClipSamples);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = 0.3 * std::sin(2.0 * std::numbers::pi * 440.0 * static_cast<double>(i) / dsp::kSampleRate);
  return w;
}

nn::Activations random_batch(int batch) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  nn::Activations x(1, batch, 49, 10);
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data(i) = n(rng);
  return x;
}

Eigen::MatrixXd random_rows(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

}  // namespace

static void BM_Mfcc(benchmark::State& state) {
  const dsp::MfccExtractor mfcc;
  const dsp::Waveform w = tone_clip();
  for (auto _ : state) benchmark::DoNotOptimize(mfcc(w));
}
BENCHMARK(BM_Mfcc);

static void BM_EmbedSmall(benchmark::State& state) {
  const nn::Encoder enc(nn::EncoderConfig::small(nn::Head::kNorm), 1);
  const nn::Activations x = random_batch(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(enc.embed(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EmbedSmall)->Arg(1)->Arg(32);

static void BM_EmbedLarge(benchmark::State& state) {
  const nn::Encoder enc(nn::EncoderConfig::large(nn::Head::kNorm), 1);
  const nn::Activations x = random_batch(8);
  for (auto _ : state) benchmark::DoNotOptimize(enc.embed(x));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_EmbedLarge)->Unit(benchmark::kMillisecond);

static void BM_TrainStepSmall(benchmark::State& state) {
  nn::Encoder enc(nn::EncoderConfig::small(nn::Head::kNorm), 1);
  const nn::Activations x = random_batch(32);
  const train::EpisodeLayout layout{4, 2, 6};
  for (auto _ : state) {
    enc.zero_grad();
    const auto l = train::pn_episode_loss(enc.forward(x, nn::Mode::kTrain), layout);
    enc.backward(l.grad);
  }
}
BENCHMARK(BM_TrainStepSmall)->Unit(benchmark::kMillisecond);

static void BM_PnEpisodeLoss(benchmark::State& state) {
  const train::EpisodeLayout layout = train::EpisodeLayout::standard(train::LossKind::kPN);
  const Eigen::MatrixXd e = random_rows(layout.rows(), 64, 3);
  for (auto _ : state) benchmark::DoNotOptimize(train::pn_episode_loss(e, layout));
}
BENCHMARK(BM_PnEpisodeLoss);

static void BM_TripletLoss(benchmark::State& state) {
  const train::EpisodeLayout layout = train::EpisodeLayout::standard(train::LossKind::kTL);
  const Eigen::MatrixXd e = random_rows(layout.rows(), 64, 4);
  Rng rng(5);
  const auto triplets = train::sample_triplets(layout.groups(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(train::tl_loss(e, triplets, 0.5));
}
BENCHMARK(BM_TripletLoss);

static void BM_ScoreOpenMax(benchmark::State& state) {
  std::vector<Eigen::MatrixXd> shots;
  for (int i = 0; i < 10; ++i) shots.push_back(random_rows(10, 64, 100 + static_cast<std::uint64_t>(i)));
  const openset::Enrollment enr = openset::enroll(shots, openset::ClassifierKind::kOpenMax);
  const Eigen::RowVectorXd q = random_rows(1, 64, 9).row(0);
  for (auto _ : state) benchmark::DoNotOptimize(openset::score(enr, q));
}
BENCHMARK(BM_ScoreOpenMax);
BENCHMARK_MAIN();
