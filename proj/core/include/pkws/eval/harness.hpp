#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pkws/dsp/frontend.hpp"
#include "pkws/eval/metrics.hpp"
#include "pkws/nn/encoder.hpp"
#include "pkws/openset/classifier.hpp"
#include "pkws/train/dataset.hpp"
#include "pkws/train/generator.hpp"

namespace pkws::eval {

/// Google Speech Commands partition: 10 target keywords, 20 negatives, 5 fillers.
std::vector<std::string> gsc_positive_classes();
std::vector<std::string> gsc_negative_classes();
std::vector<std::string> gsc_filler_classes();

struct EvalProtocol {
  int shots = 10;
  std::vector<std::string> positive = gsc_positive_classes();
  std::vector<std::string> negative = gsc_negative_classes();
  std::vector<std::string> filler = gsc_filler_classes();
  int repetitions = 10;
  double far_target = 0.05;
  std::uint64_t seed = 0;
  int tail_size = 5;

  int ways() const noexcept { return static_cast<int>(positive.size()); }
  /// Class lists must be nonempty (filler may be empty) and pairwise disjoint.
  void validate() const;
  bool operator==(const EvalProtocol&) const = default;
};

/// What the classifier needs besides the encoder.
struct ClassifierSetup {
  openset::ClassifierKind kind = openset::ClassifierKind::kOpenNcm;
  bool normalize = false;
  const train::DummyProtoGenerator* generator = nullptr;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for one repetition
};

struct RepetitionResult {
  std::uint64_t seed = 0;
  double gamma = 0.0;
  Metrics metrics;
  double auroc = 0.0;
  bool few_shot_warning = false;
  /// (N+1) x (N+1), rows = true label (0 = negative), columns = decision.
  Eigen::MatrixXi confusion;
};

struct EvalReport {
  std::string classifier;
  int ways = 0;
  int shots = 0;
  double far_target = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> keywords;
  std::vector<int> positive_counts;  // test utterances per keyword
  int negative_count = 0;
  std::vector<RepetitionResult> repetitions;
  Summary acc, frr, far, auroc;

  std::vector<double> gammas() const;
  Eigen::MatrixXi total_confusion() const;
};

Summary summarize(const std::vector<double>& values);

/// Per repetition: draw K shots per keyword (and K filler utterances for
/// openNCM) from `enroll_split`, enroll, score the positive and negative
/// classes of `test_split`, tune gamma on the negatives, compute metrics.
/// Repetition r uses derive_seed(protocol.seed, {r}). Embeddings are cached.
EvalReport run_eval(const nn::Encoder& encoder, const ClassifierSetup& setup, const EvalProtocol& protocol,
                    const train::Dataset& enroll_split, const train::Dataset& test_split,
                    const dsp::FrontendConfig& frontend = {});

/// Text report without the timestamp header line.
std::string format_report(const EvalReport& report);
/// Writes "# generated <UTC time>" followed by format_report().
void write_report(const EvalReport& report, const std::filesystem::path& path);
/// One `metric,repetition,value` line per metric and repetition.
void write_records(const EvalReport& report, const std::filesystem::path& path);

}  // namespace pkws::eval
