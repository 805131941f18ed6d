// pkws: few-shot open-set keyword spotting from the command line.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "pkws/app/commands.hpp"
#include "pkws/app/config.hpp"
#include "pkws/error.hpp"
#include "pkws/synth/corpus.hpp"

namespace fs = std::filesystem;
using namespace pkws;

namespace {

enum Exit { kOk = 0, kFailure = 1, kValidation = 2, kIo = 4 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

app::AppConfig resolve(const Globals& g) {
  app::AppConfig cfg;
  if (!g.config.empty()) cfg = app::load_config(g.config);
  if (g.seed) {
    cfg.train.schedule.seed = *g.seed;
    cfg.eval.protocol.seed = *g.seed;
  }
  return cfg;
}

fs::path pick(const std::string& flag, const std::string& configured, const char* fallback) {
  if (!flag.empty()) return flag;
  if (!configured.empty()) return configured;
  return fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Few-shot open-set keyword spotting"};
  cli.require_subcommand(1);
  cli.fallthrough();
  Globals g;
  cli.add_option("--config", g.config, "INI configuration file")->check(CLI::ExistingFile);
  cli.add_option("--seed", g.seed, "Overrides train.seed and eval.seed");
  cli.add_option("--out", g.out, "Output directory of the command");

  std::string data_root;
  double test_fraction = 0.1;
  auto* prepare = cli.add_subcommand("prepare", "Validate a class-per-directory corpus and write manifests");
  prepare->add_option("--data-root", data_root, "Corpus root (default: paths.data_root)");
  prepare->add_option("--test-fraction", test_fraction, "Hash split fraction when there is no testing_list.txt");

  std::string manifest;
  bool resume = false;
  auto* train = cli.add_subcommand("train", "Episodic training of the encoder");
  train->add_option("--manifest", manifest, "Training manifest (default: <paths.manifest_dir>/train.tsv)");
  train->add_flag("--resume", resume, "Continue from last.pkws in the output directory");

  std::string checkpoint, shots_dir, filler_dir, classifier;
  std::optional<int> shots;
  auto* enroll = cli.add_subcommand("enroll", "Build an enrollment file from keyword clips");
  enroll->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  enroll->add_option("--shots-dir", shots_dir, "One subdirectory of clips per keyword")->required();
  enroll->add_option("--filler-dir", filler_dir, "Non-keyword clips (openNCM)");
  enroll->add_option("--classifier", classifier, "openNCM, OpenMAX or DProto (default: eval.classifier)");
  enroll->add_option("--shots", shots, "Clips per keyword (default: eval.shots)");

  std::string enrollment, clip;
  std::optional<double> gamma;
  auto* infer = cli.add_subcommand("infer", "Classify one clip");
  infer->add_option("--enrollment", enrollment, "Enrollment file")->required();
  infer->add_option("--clip", clip, "16 kHz mono WAV")->required();
  infer->add_option("--gamma", gamma, "Acceptance threshold (default: eval.gamma)");

  std::string eval_checkpoint, eval_classifier, enroll_manifest, test_manifest;
  auto* evaluate = cli.add_subcommand("eval", "K-shot N-way open-set evaluation");
  evaluate->add_option("--checkpoint", eval_checkpoint, "Trained checkpoint")->required();
  evaluate->add_option("--classifier", eval_classifier, "openNCM, OpenMAX or DProto (default: eval.classifier)");
  evaluate->add_option("--enroll-manifest", enroll_manifest, "Default: <paths.manifest_dir>/train.tsv");
  evaluate->add_option("--test-manifest", test_manifest, "Default: <paths.manifest_dir>/test.tsv");

  std::uint64_t synth_seed = synth::CorpusConfig{}.seed;
  auto* make_synth = cli.add_subcommand("synth", "Write the synthetic tone-keyword corpus");
  make_synth->add_option("--corpus-seed", synth_seed, "Corpus seed");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    const app::AppConfig base = resolve(g);
    if (prepare->parsed()) {
      app::PrepareOptions o;
      o.data_root = pick(data_root, base.paths.data_root, "");
      o.out_dir = pick(g.out, base.paths.manifest_dir, "manifests");
      o.test_fraction = test_fraction;
      app::prepare(base, o, std::cout);
    } else if (train->parsed()) {
      app::TrainCommandOptions o;
      const fs::path mdir = pick("", base.paths.manifest_dir, "manifests");
      o.manifest = manifest.empty() ? mdir / "train.tsv" : fs::path(manifest);
      o.out_dir = pick(g.out, base.paths.checkpoint_dir, "checkpoints");
      o.resume = resume;
      app::train_command(base, o, std::cout);
    } else if (enroll->parsed()) {
      app::AppConfig cfg = base;
      if (!classifier.empty()) cfg.eval.classifier = openset::parse_classifier_kind(classifier);
      if (shots) cfg.eval.protocol.shots = *shots;
      if (cfg.eval.protocol.shots < 1) throw ValidationError("--shots must be >= 1");
      app::EnrollCommandOptions o;
      o.checkpoint = checkpoint;
      o.shots_dir = shots_dir;
      o.filler_dir = filler_dir;
      o.output = pick(g.out, "", ".") / "enrollment.pkws";
      app::enroll_command(cfg, o, std::cout);
    } else if (infer->parsed()) {
      const auto r = app::infer_command(enrollment, clip, gamma.value_or(base.eval.gamma));
      app::print_inference(r, std::cout);
    } else if (evaluate->parsed()) {
      app::AppConfig cfg = base;
      if (!eval_classifier.empty()) cfg.eval.classifier = openset::parse_classifier_kind(eval_classifier);
      app::EvalCommandOptions o;
      const fs::path mdir = pick("", base.paths.manifest_dir, "manifests");
      o.checkpoint = eval_checkpoint;
      o.enroll_manifest = enroll_manifest.empty() ? mdir / "train.tsv" : fs::path(enroll_manifest);
      o.test_manifest = test_manifest.empty() ? mdir / "test.tsv" : fs::path(test_manifest);
      o.out_dir = pick(g.out, base.paths.report_dir, "reports");
      app::eval_command(cfg, o, std::cout);
    } else if (make_synth->parsed()) {
      synth::CorpusConfig sc;
      sc.seed = synth_seed;
      const fs::path root = pick(g.out, "", "synthetic");
      synth::write_corpus(sc, root);
      std::cout << "wrote " << sc.classes << " classes to " << root.string() << "\n";
    }
  } catch (const pkws::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
