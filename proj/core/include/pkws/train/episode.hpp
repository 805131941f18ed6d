#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pkws/dsp/frontend.hpp"
#include "pkws/rng.hpp"
#include "pkws/train/dataset.hpp"

namespace pkws::train {

enum class LossKind { kPN, kAP, kTL, kDProto };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

/// Rows of an episode's embedding matrix are class-major: class slot j owns
/// rows [j*(support+query), (j+1)*(support+query)), support rows first. The
/// triplet loss uses `support` as the flat per-class pool and `query = 0`.
struct EpisodeLayout {
  int classes = 0;
  int support = 0;
  int query = 0;

  int per_class() const noexcept { return support + query; }
  int rows() const noexcept { return classes * per_class(); }
  int support_row(int cls, int i) const noexcept { return cls * per_class() + i; }
  int query_row(int cls, int i) const noexcept { return cls * per_class() + support + i; }
  /// All rows of each class slot.
  std::vector<std::vector<int>> groups() const;
  std::vector<std::vector<int>> support_groups() const;

  /// 40 classes x (10 support + 30 query) for PN/AP/DProto; 80 x 20 for TL.
  static EpisodeLayout standard(LossKind kind);
  void validate(LossKind kind) const;
  bool operator==(const EpisodeLayout&) const = default;
};

struct EpisodicBatch {
  EpisodeLayout layout;
  std::vector<int> classes;          // dataset class id per slot
  std::vector<std::size_t> samples;  // dataset item per row
};

/// Draws `layout.classes` distinct classes among those holding at least
/// per_class() items, then per_class() distinct items from each.
EpisodicBatch build_episode(const Dataset& ds, const EpisodeLayout& layout, Rng& rng);

/// Features for every row of the batch. Augmentation randomness for row r is
/// drawn from derive_seed(seed, {episode_index, r}) so the result does not
/// depend on evaluation order.
std::vector<dsp::FeatureMap> episode_features(const Dataset& ds, const EpisodicBatch& batch,
                                              const dsp::MfccExtractor& mfcc,
                                              const dsp::AugmentationPolicy& policy, std::uint64_t seed,
                                              std::uint64_t episode_index);

}  // namespace pkws::train
