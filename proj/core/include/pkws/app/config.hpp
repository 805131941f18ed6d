#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pkws/dsp/frontend.hpp"
#include "pkws/eval/harness.hpp"
#include "pkws/nn/container.hpp"
#include "pkws/nn/encoder.hpp"
#include "pkws/openset/classifier.hpp"
#include "pkws/train/trainer.hpp"

namespace pkws::app {

struct EncoderSection {
  nn::SizeVariant size = nn::SizeVariant::kLarge;
  nn::Head head = nn::Head::kNorm;

  nn::EncoderConfig build() const;
  bool operator==(const EncoderSection&) const = default;
};

struct TrainSection {
  train::LossConfig loss;
  train::TrainSchedule schedule;
  /// episode_classes = 0 selects the loss's default episode shape.
  int episode_classes = 0;
  int episode_support = 0;
  int episode_query = 0;
  double augment_probability = 0.95;
  double snr_low_db = 0.0;
  double snr_high_db = 5.0;
  std::string noise_dir;  // empty: no augmentation
  nn::Precision precision = nn::Precision::kFloat64;

  train::EpisodeLayout layout() const;
  bool operator==(const TrainSection&) const = default;
};

struct EvalSection {
  openset::ClassifierKind classifier = openset::ClassifierKind::kOpenNcm;
  eval::EvalProtocol protocol;
  double gamma = 0.0;  // default threshold for `infer`

  bool operator==(const EvalSection&) const = default;
};

struct PathsSection {
  std::string data_root;
  std::string manifest_dir;  // holds train.tsv, test.tsv and the class lists
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";

  bool operator==(const PathsSection&) const = default;
};

/// Every default reproduces the training setup of the original recipe, so an
/// empty file is a complete configuration.
struct AppConfig {
  dsp::FrontendConfig frontend;
  EncoderSection encoder;
  TrainSection train;
  EvalSection eval;
  PathsSection paths;

  /// Throws ValidationError naming the offending key.
  void validate() const;
  bool operator==(const AppConfig&) const = default;
};

/// INI text: [section] headers, key = value lines, '#' or ';' comments.
/// Unknown sections or keys and malformed values raise ValidationError.
AppConfig parse_config(const std::string& text);
AppConfig load_config(const std::filesystem::path& path);
/// Writes every key, so parse_config(dump_config(c)) == c.
std::string dump_config(const AppConfig& cfg);

}  // namespace pkws::app
