#include "pkws/train/episode.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "pkws/error.hpp"

namespace pkws::train {
namespace {

// First `k` entries of a partial Fisher-Yates shuffle of [0, n).
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kPN: return "PN";
    case LossKind::kAP: return "AP";
    case LossKind::kTL: return "TL";
    case LossKind::kDProto: return "DPROTO";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (u == "PN") return LossKind::kPN;
  if (u == "AP") return LossKind::kAP;
  if (u == "TL") return LossKind::kTL;
  if (u == "DPROTO") return LossKind::kDProto;
  throw ValidationError("unknown loss kind '" + s + "' (expected PN, AP, TL or DPROTO)");
}

std::vector<std::vector<int>> EpisodeLayout::groups() const {
  std::vector<std::vector<int>> g(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class(); ++i) g[static_cast<std::size_t>(c)].push_back(c * per_class() + i);
  }
  return g;
}

std::vector<std::vector<int>> EpisodeLayout::support_groups() const {
  std::vector<std::vector<int>> g(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < support; ++i) g[static_cast<std::size_t>(c)].push_back(support_row(c, i));
  }
  return g;
}

EpisodeLayout EpisodeLayout::standard(LossKind kind) {
  if (kind == LossKind::kTL) return {80, 20, 0};
  return {40, 10, 30};
}

void EpisodeLayout::validate(LossKind kind) const {
  if (classes < 2) throw ValidationError("an episode needs at least 2 classes");
  if (kind == LossKind::kTL) {
    if (support < 2) throw ValidationError("triplet episodes need at least 2 samples per class");
  } else if (support < 1 || query < 1) {
    throw ValidationError("prototype episodes need at least 1 support and 1 query sample per class");
  }
}

EpisodicBatch build_episode(const Dataset& ds, const EpisodeLayout& layout, Rng& rng) {
  const auto need = static_cast<std::size_t>(layout.per_class());
  std::vector<int> eligible;
  for (int c = 0; c < ds.num_classes(); ++c) {
    if (ds.members(c).size() >= need) eligible.push_back(c);
  }
  if (eligible.size() < static_cast<std::size_t>(layout.classes)) {
    throw ValidationError("episode needs " + std::to_string(layout.classes) + " classes with >= " +
                          std::to_string(need) + " samples; dataset has " + std::to_string(eligible.size()));
  }
  EpisodicBatch batch;
  batch.layout = layout;
  for (std::size_t slot : draw_without_replacement(eligible.size(), static_cast<std::size_t>(layout.classes), rng)) {
    batch.classes.push_back(eligible[slot]);
  }
  batch.samples.reserve(static_cast<std::size_t>(layout.rows()));
  for (int cls : batch.classes) {
    const auto& members = ds.members(cls);
    for (std::size_t pick : draw_without_replacement(members.size(), need, rng)) {
      batch.samples.push_back(members[pick]);
    }
  }
  return batch;
}

std::vector<dsp::FeatureMap> episode_features(const Dataset& ds, const EpisodicBatch& batch,
                                              const dsp::MfccExtractor& mfcc,
                                              const dsp::AugmentationPolicy& policy, std::uint64_t seed,
                                              std::uint64_t episode_index) {
  std::vector<dsp::FeatureMap> out;
  out.reserve(batch.samples.size());
  for (std::size_t r = 0; r < batch.samples.size(); ++r) {
    dsp::Waveform w = ds.waveform(batch.samples[r]);
    if (policy.enabled()) {
      Rng rng = make_rng(seed, {episode_index, r});
      w = dsp::augment(w, policy, rng);
    }
    out.push_back(mfcc(w));
  }
  return out;
}

}  // namespace pkws::train
