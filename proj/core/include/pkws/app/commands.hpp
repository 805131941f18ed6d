#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>

#include "pkws/app/config.hpp"
#include "pkws/eval/harness.hpp"
#include "pkws/openset/classifier.hpp"

namespace pkws::app {

namespace fs = std::filesystem;

struct PrepareOptions {
  fs::path data_root;
  fs::path out_dir;
  /// Used only when data_root has no testing_list.txt.
  double test_fraction = 0.1;
};

struct ClassCount {
  int train = 0;
  int test = 0;
};

/// Scans class subdirectories of data_root (names starting with '_' or '.'
/// are skipped), validates every WAV, and writes train.tsv, test.tsv and
/// positive.txt / negative.txt / filler.txt (the protocol lists of `cfg`).
/// Files named in data_root/testing_list.txt form the test split; otherwise
/// a stable hash of the relative path decides.
std::map<std::string, ClassCount> prepare(const AppConfig& cfg, const PrepareOptions& opts, std::ostream& log);

struct TrainCommandOptions {
  fs::path manifest;  // train.tsv
  fs::path out_dir;   // checkpoints
  bool resume = false;
};

/// Trains on every manifest class except the protocol's positive keywords.
/// Writes epoch_NNN.pkws, last.pkws, final.pkws and train_log.csv into
/// out_dir and returns the path of final.pkws.
fs::path train_command(const AppConfig& cfg, const TrainCommandOptions& opts, std::ostream& log);

struct EnrollCommandOptions {
  fs::path checkpoint;
  fs::path shots_dir;   // one subdirectory of clips per keyword
  fs::path filler_dir;  // openNCM: clips of non-keyword speech
  fs::path output;      // enrollment file
};

/// Uses the first K clips (sorted by name) of each keyword directory. The
/// enrollment file also carries the encoder and frontend settings, so it is
/// all `infer` needs.
fs::path enroll_command(const AppConfig& cfg, const EnrollCommandOptions& opts, std::ostream& log);

struct InferResult {
  int label = 0;
  std::string name;  // "unknown" for label 0
  openset::ScoreVector p;
  std::vector<std::string> class_names;
};

InferResult infer_command(const fs::path& enrollment, const fs::path& clip, double gamma);
void print_inference(const InferResult& r, std::ostream& out);

struct EvalCommandOptions {
  fs::path checkpoint;
  fs::path enroll_manifest;  // train.tsv
  fs::path test_manifest;    // test.tsv
  fs::path out_dir;
};

/// Writes report.txt and records.csv into out_dir.
eval::EvalReport eval_command(const AppConfig& cfg, const EvalCommandOptions& opts, std::ostream& log);

}  // namespace pkws::app
