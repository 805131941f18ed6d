#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "pkws/dsp/frontend.hpp"
#include "pkws/nn/container.hpp"
#include "pkws/nn/encoder.hpp"
#include "pkws/train/adam.hpp"
#include "pkws/train/dataset.hpp"
#include "pkws/train/episode.hpp"
#include "pkws/train/generator.hpp"

namespace pkws::train {

struct LossConfig {
  LossKind kind = LossKind::kTL;
  double margin = 0.5;
  double ap_w_init = 10.0;
  double ap_b_init = -5.0;
  int dproto_unknown_classes = 16;
  int dproto_dummies = 3;

  void validate(const EpisodeLayout& layout) const;
  bool operator==(const LossConfig&) const = default;
};

struct TrainSchedule {
  int epochs = 40;
  int episodes_per_epoch = 400;
  double learning_rate = 1e-3;
  int decay_after_epochs = 20;
  double decay_factor = 0.1;
  std::uint64_t seed = 0;

  int total_episodes() const noexcept { return epochs * episodes_per_epoch; }
  /// Learning rate for a 1-based epoch number.
  double lr_at(int epoch) const noexcept {
    return epoch > decay_after_epochs ? learning_rate * decay_factor : learning_rate;
  }
  void validate() const;
  bool operator==(const TrainSchedule&) const = default;
};

struct EpisodeRecord {
  int epoch = 0;    // 1-based
  int episode = 0;  // 1-based within the epoch
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  LossConfig loss;
  EpisodeLayout layout = EpisodeLayout::standard(LossKind::kTL);
  TrainSchedule schedule;
  dsp::FrontendConfig frontend;
  dsp::AugmentationPolicy augmentation;
  /// When set, `epoch_NNN.pkws` and `last.pkws` are written after every epoch.
  std::filesystem::path checkpoint_dir;
  /// When set, `epoch,episode,loss,lr` lines are appended per episode.
  std::filesystem::path log_path;
  std::function<void(const EpisodeRecord&)> on_episode;
};

/// Everything needed to continue training bit-exactly: encoder, optional
/// dummy-prototype generator, angular-loss scalars and optimizer moments.
struct TrainState {
  nn::Encoder encoder;
  LossConfig loss;
  std::optional<DummyProtoGenerator> generator;
  nn::Tensor ap_w{"ap.w", {1}};
  nn::Tensor ap_b{"ap.b", {1}};
  Adam optimizer;
  int epochs_done = 0;

  TrainState(nn::Encoder enc, const LossConfig& loss_cfg, std::uint64_t seed);

  std::vector<nn::Tensor*> trainable();
  void zero_grad();
};

nn::Container to_container(const TrainState& state);
TrainState from_container(const nn::Container& c);
void save_train_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path);

/// One optimizer step on episode `episode_index` (0-based, global). Returns the loss.
double train_step(TrainState& state, const Dataset& ds, const TrainOptions& opts, const dsp::MfccExtractor& mfcc,
                  std::uint64_t episode_index, double lr);

/// Runs epochs state.epochs_done+1 .. schedule.epochs. Episode contents depend
/// only on (schedule.seed, global episode index), so a run resumed from an
/// epoch checkpoint reproduces the uninterrupted loss trace. Throws
/// NumericError on a non-finite loss; earlier checkpoints stay intact.
std::vector<EpisodeRecord> train(TrainState& state, const Dataset& ds, const TrainOptions& opts);

}  // namespace pkws::train
