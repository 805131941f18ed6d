#include "pkws/train/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "pkws/error.hpp"

namespace pkws::train {

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw ValidationError(manifest.string() + ":" + std::to_string(lineno) +
                            ": expected 'path<TAB>label'");
    }
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

void write_manifest(const std::filesystem::path& manifest, std::span<const ManifestEntry> entries) {
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + manifest.string());
  for (const auto& e : entries) out << e.path << '\t' << e.label << '\n';
  if (!out) throw IoError("write failed for " + manifest.string());
}

Dataset Dataset::from_manifest(const std::filesystem::path& manifest, std::filesystem::path root) {
  const auto entries = read_manifest(manifest);
  if (root.empty()) root = manifest.parent_path();
  std::set<std::string> names;
  for (const auto& e : entries) names.insert(e.label);
  Dataset ds;
  ds.class_names_.assign(names.begin(), names.end());
  std::map<std::string, int> ids;
  for (std::size_t i = 0; i < ds.class_names_.size(); ++i) ids[ds.class_names_[i]] = static_cast<int>(i);
  ds.items_.reserve(entries.size());
  for (const auto& e : entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = root / p;
    ds.items_.push_back({p, ids.at(e.label), nullptr});
  }
  ds.rebuild_index();
  return ds;
}

Dataset Dataset::from_memory(std::vector<std::string> class_names, std::span<const int> labels,
                             std::vector<dsp::Waveform> clips) {
  if (labels.size() != clips.size()) throw ValidationError("labels and clips differ in length");
  Dataset ds;
  ds.class_names_ = std::move(class_names);
  ds.items_.reserve(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= ds.num_classes()) throw ValidationError("label out of range");
    if (clips[i].sample_rate != dsp::kSampleRate) throw ValidationError("in-memory clip is not 16 kHz");
    auto audio = std::make_shared<std::vector<float>>(clips[i].samples.begin(), clips[i].samples.end());
    ds.items_.push_back({"<memory>/" + std::to_string(i), labels[i], std::move(audio)});
  }
  ds.rebuild_index();
  return ds;
}

void Dataset::rebuild_index() {
  members_.assign(class_names_.size(), {});
  for (std::size_t i = 0; i < items_.size(); ++i) {
    members_[static_cast<std::size_t>(items_[i].label)].push_back(i);
  }
}

int Dataset::class_id(const std::string& name) const {
  auto it = std::find(class_names_.begin(), class_names_.end(), name);
  return it == class_names_.end() ? -1 : static_cast<int>(it - class_names_.begin());
}

dsp::Waveform Dataset::waveform(std::size_t i) const {
  const Item& item = items_.at(i);
  if (!item.audio) return dsp::load_clip(item.path, dsp::kClipSamples);
  dsp::Waveform w;
  w.samples.assign(item.audio->begin(), item.audio->end());
  return dsp::fit_length(std::move(w), dsp::kClipSamples);
}

void Dataset::preload() {
  for (auto& item : items_) {
    if (item.audio) continue;
    const dsp::Waveform w = dsp::load_clip(item.path, dsp::kClipSamples);
    item.audio = std::make_shared<std::vector<float>>(w.samples.begin(), w.samples.end());
  }
}

Dataset Dataset::select_classes(std::span<const std::string> names) const {
  Dataset out;
  std::vector<int> remap(class_names_.size(), -1);
  for (const auto& n : names) {
    const int id = class_id(n);
    if (id < 0) throw ValidationError("class '" + n + "' is not present in the dataset");
    if (remap[static_cast<std::size_t>(id)] >= 0) continue;
    remap[static_cast<std::size_t>(id)] = out.num_classes();
    out.class_names_.push_back(n);
  }
  for (const auto& item : items_) {
    const int to = remap[static_cast<std::size_t>(item.label)];
    if (to >= 0) out.items_.push_back({item.path, to, item.audio});
  }
  out.rebuild_index();
  return out;
}

Dataset Dataset::drop_classes(std::span<const std::string> names) const {
  std::vector<std::string> keep;
  for (const auto& n : class_names_) {
    if (std::find(names.begin(), names.end(), n) == names.end()) keep.push_back(n);
  }
  return select_classes(keep);
}

std::vector<dsp::FeatureMap> extract_features(const Dataset& ds, std::span<const std::size_t> items,
                                              const dsp::MfccExtractor& mfcc) {
  std::vector<dsp::FeatureMap> out;
  out.reserve(items.size());
  for (std::size_t i : items) out.push_back(mfcc(ds.waveform(i)));
  return out;
}

}  // namespace pkws::train
