#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pkws/dsp/frontend.hpp"

namespace pkws::train {

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory unless absolute
  std::string label;
};

/// One record per line: `relative/path.wav<TAB>class_label`. Blank lines and
/// lines starting with '#' are ignored.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, std::span<const ManifestEntry> entries);

/// Labeled utterances. Audio is read from disk on demand unless preloaded or
/// built in memory; copies and subsets share loaded audio.
class Dataset {
 public:
  Dataset() = default;

  static Dataset from_manifest(const std::filesystem::path& manifest, std::filesystem::path root = {});
  /// Classes get ids in the order of `class_names`.
  static Dataset from_memory(std::vector<std::string> class_names, std::span<const int> labels,
                             std::vector<dsp::Waveform> clips);

  std::size_t size() const noexcept { return items_.size(); }
  int num_classes() const noexcept { return static_cast<int>(class_names_.size()); }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const std::string& class_name(int id) const { return class_names_.at(static_cast<std::size_t>(id)); }
  /// -1 when absent.
  int class_id(const std::string& name) const;

  int label(std::size_t i) const { return items_.at(i).label; }
  const std::filesystem::path& path(std::size_t i) const { return items_.at(i).path; }
  const std::vector<std::size_t>& members(int class_id) const { return members_.at(static_cast<std::size_t>(class_id)); }

  /// Waveform of item i fitted to exactly one clip length.
  dsp::Waveform waveform(std::size_t i) const;
  void preload();

  /// Keeps only the named classes (in the given order); ids are reassigned.
  Dataset select_classes(std::span<const std::string> names) const;
  Dataset drop_classes(std::span<const std::string> names) const;

 private:
  struct Item {
    std::filesystem::path path;
    int label = 0;
    std::shared_ptr<const std::vector<float>> audio;
  };
  void rebuild_index();

  std::vector<std::string> class_names_;
  std::vector<Item> items_;
  std::vector<std::vector<std::size_t>> members_;
};

/// Eval-mode features (no augmentation) for the given items, in order.
std::vector<dsp::FeatureMap> extract_features(const Dataset& ds, std::span<const std::size_t> items,
                                              const dsp::MfccExtractor& mfcc);

}  // namespace pkws::train
