#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "pkws/app/commands.hpp"
#include "pkws/app/config.hpp"
#include "pkws/dsp/wav.hpp"
#include "pkws/error.hpp"
#include "pkws/nn/checkpoint.hpp"
#include "pkws/synth/corpus.hpp"

namespace fs = std::filesystem;
using namespace pkws;
using namespace pkws::app;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string drop_first_line(const std::string& s) { return s.substr(s.find('\n') + 1); }

const char* kSmallConfig = R"(# tiny run
[encoder]
size = S
head = NORM

[train]
loss = TL
epochs = 1
episodes_per_epoch = 2
episode_classes = 4
episode_support = 3
episode_query = 0

[eval]
shots = 3
repetitions = 2
)";

std::vector<std::string> all_classes() {
  std::vector<std::string> names = eval::gsc_positive_classes();
  for (const auto& n : eval::gsc_negative_classes()) names.push_back(n);
  for (const auto& n : eval::gsc_filler_classes()) names.push_back(n);
  names.push_back("extra");
  return names;
}

// A GSC-shaped corpus of tone keywords: 36 class folders with 8 clips each,
// the last two listed in testing_list.txt, plus a _noise_ folder.
struct Workspace {
  fs::path root = fs::temp_directory_path() / ("pkws_app_" + std::to_string(::getpid()));
  fs::path data = root / "data";
  fs::path manifests = root / "manifests";
  AppConfig cfg = parse_config(kSmallConfig);

  Workspace() {
    fs::remove_all(root);
    const auto names = all_classes();
    synth::CorpusConfig sc;
    sc.classes = static_cast<int>(names.size());
    std::ofstream listing;
    fs::create_directories(data);
    listing.open(data / "testing_list.txt");
    for (std::size_t c = 0; c < names.size(); ++c) {
      fs::create_directories(data / names[c]);
      for (int i = 0; i < 8; ++i) {
        const std::string rel = names[c] + "/clip" + std::to_string(i) + ".wav";
        dsp::write_wav(data / rel, synth::utterance(sc, static_cast<int>(c), i).samples, dsp::kSampleRate);
        if (i >= 6) listing << rel << "\n";
      }
    }
    listing.close();
    fs::create_directories(data / "_noise_");
    dsp::write_wav(data / "_noise_" / "n.wav", synth::noise_clip(sc, 0).samples, dsp::kSampleRate);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

fs::path prepared() {
  Workspace& w = ws();
  if (!fs::exists(w.manifests / "test.tsv")) {
    std::ostringstream log;
    prepare(w.cfg, {w.data, w.manifests, 0.1}, log);
  }
  return w.manifests;
}

fs::path trained_tl() {
  Workspace& w = ws();
  const fs::path out = w.root / "ckpt_tl";
  if (!fs::exists(out / "final.pkws")) {
    std::ostringstream log;
    train_command(w.cfg, {prepared() / "train.tsv", out, false}, log);
  }
  return out / "final.pkws";
}

// Four clips per keyword and one clip per filler class.
void make_shot_dirs(const fs::path& shots, const fs::path& filler) {
  if (fs::exists(filler)) return;
  for (const auto& k : eval::gsc_positive_classes()) {
    fs::create_directories(shots / k);
    for (int i = 0; i < 4; ++i) {
      const std::string name = "clip" + std::to_string(i) + ".wav";
      fs::copy_file(ws().data / k / name, shots / k / name);
    }
  }
  fs::create_directories(filler);
  for (const auto& k : eval::gsc_filler_classes()) fs::copy_file(ws().data / k / "clip0.wav", filler / (k + ".wav"));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PKWS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, EmptyFileGivesRecipeDefaults) {
  const AppConfig c = parse_config("");
  EXPECT_EQ(c, AppConfig{});
  EXPECT_EQ(c.encoder.size, nn::SizeVariant::kLarge);
  EXPECT_EQ(c.encoder.head, nn::Head::kNorm);
  EXPECT_EQ(c.train.loss.kind, train::LossKind::kTL);
  EXPECT_EQ(c.train.layout(), (train::EpisodeLayout{80, 20, 0}));
  EXPECT_EQ(c.train.schedule.epochs, 40);
  EXPECT_EQ(c.train.schedule.episodes_per_epoch, 400);
  EXPECT_EQ(c.train.augment_probability, 0.95);
  EXPECT_EQ(c.eval.protocol.shots, 10);
  EXPECT_EQ(c.eval.classifier, openset::ClassifierKind::kOpenNcm);
  EXPECT_EQ(c.frontend.n_mfcc, 10);
}

TEST(Config, DumpParseRoundTrip) {
  AppConfig c = parse_config(kSmallConfig);
  c.train.schedule.learning_rate = 0.1 + 0.2;
  c.train.noise_dir = "/tmp/noise dir";
  c.train.precision = nn::Precision::kFloat32;
  c.eval.protocol.positive = {"a", "b"};
  c.eval.classifier = openset::ClassifierKind::kOpenMax;
  c.paths.data_root = "/data";
  EXPECT_EQ(parse_config(dump_config(c)), c);
  EXPECT_EQ(c.train.layout(), (train::EpisodeLayout{4, 3, 0}));
}

TEST(Config, RejectsUnknownAndMalformed) {
  EXPECT_THROW(parse_config("[train]\nepochz = 3\n"), ValidationError);
  EXPECT_THROW(parse_config("[nonsense]\nx = 1\n"), ValidationError);
  EXPECT_THROW(parse_config("stray = 1\n"), ValidationError);
  EXPECT_THROW(parse_config("[train]\nepochs = three\n"), ValidationError);
  EXPECT_THROW(parse_config("[encoder]\nhead = SOFTMAX\n"), ValidationError);
  try {
    parse_config("[eval]\nfar_target = 1.5\n").validate();
    FAIL() << "far_target accepted";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("[eval]"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_config(ws().root / "absent.ini"), IoError);
}

TEST(Prepare, WritesManifestsAndProtocolLists) {
  const fs::path m = prepared();
  const auto train_entries = train::read_manifest(m / "train.tsv");
  const auto test_entries = train::read_manifest(m / "test.tsv");
  EXPECT_EQ(train_entries.size(), 36u * 6u);
  EXPECT_EQ(test_entries.size(), 36u * 2u);
  for (const auto& e : test_entries) {
    EXPECT_TRUE(e.path.ends_with("clip6.wav") || e.path.ends_with("clip7.wav")) << e.path;
    EXPECT_TRUE(fs::path(e.path).is_absolute());
  }
  int filler_lines = 0;
  std::ifstream f(m / "filler.txt");
  for (std::string l; std::getline(f, l);) filler_lines += !l.empty();
  EXPECT_EQ(filler_lines, 5);
  EXPECT_TRUE(fs::exists(m / "positive.txt"));
  EXPECT_TRUE(fs::exists(m / "negative.txt"));
}

TEST(Prepare, HashSplitWithoutListing) {
  const fs::path root = ws().root / "nolist";
  fs::remove_all(root);
  for (const char* c : {"a", "b"}) {
    fs::create_directories(root / c);
    for (int i = 0; i < 20; ++i) {
      fs::copy_file(ws().data / "yes" / "clip0.wav", root / c / ("x" + std::to_string(i) + ".wav"));
    }
  }
  std::ostringstream log;
  const fs::path out = ws().root / "nolist_manifests";
  const auto counts = prepare(ws().cfg, {root, out / "a", 0.25}, log);
  ASSERT_EQ(counts.size(), 2u);
  EXPECT_EQ(counts.at("a").train + counts.at("a").test, 20);
  EXPECT_NE(log.str().find("class train test"), std::string::npos);
  std::ostringstream again;
  prepare(ws().cfg, {root, out / "b", 0.25}, again);
  EXPECT_EQ(slurp(out / "a" / "test.tsv"), slurp(out / "b" / "test.tsv"));
}

TEST(Prepare, RejectsForeignRateWithPath) {
  const fs::path root = ws().root / "cd";
  fs::remove_all(root);
  fs::create_directories(root / "a");
  dsp::write_wav(root / "a" / "bad.wav", std::vector<double>(4410, 0.0), 44100);
  std::ostringstream log;
  try {
    prepare(ws().cfg, {root, ws().root / "cd_manifests", 0.1}, log);
    FAIL() << "44.1 kHz accepted";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.wav"), std::string::npos) << e.what();
  }
  fs::remove_all(root / "a");
  EXPECT_THROW(prepare(ws().cfg, {root, ws().root / "cd_manifests", 0.1}, log), ValidationError);
}

TEST(TrainCommand, TripletNormCheckpoint) {
  const fs::path final_path = trained_tl();
  const fs::path dir = final_path.parent_path();
  EXPECT_TRUE(fs::exists(dir / "last.pkws"));
  EXPECT_TRUE(fs::exists(dir / "epoch_001.pkws"));
  EXPECT_TRUE(fs::exists(dir / "train_log.csv"));
  const nn::Encoder enc = nn::load_checkpoint(final_path);
  EXPECT_EQ(enc.config().head, nn::Head::kNorm);
  EXPECT_EQ(enc.config().channels, 64);
  const dsp::MfccExtractor mfcc;
  const std::vector<dsp::FeatureMap> f{mfcc(dsp::load_clip(ws().data / "yes" / "clip0.wav"))};
  EXPECT_NEAR(enc.embed(f).row(0).norm(), 1.0, 1e-6);
}

TEST(TrainCommand, DummyPrototypeRunStoresGenerator) {
  AppConfig cfg = ws().cfg;
  cfg.train.loss.kind = train::LossKind::kDProto;
  cfg.train.episode_classes = 4;
  cfg.train.episode_support = 2;
  cfg.train.episode_query = 2;
  cfg.train.loss.dproto_unknown_classes = 2;
  cfg.train.noise_dir = (ws().data / "_noise_").string();
  std::ostringstream log;
  const fs::path out = ws().root / "ckpt_dproto";
  fs::remove_all(out);
  const fs::path p = train_command(cfg, {prepared() / "train.tsv", out, false}, log);
  const nn::Container c = nn::read_container(p);
  bool generator = false;
  for (const auto& r : c.records()) generator = generator || r.name.rfind("generator.", 0) == 0;
  EXPECT_TRUE(generator);
}

TEST(TrainCommand, ResumeSkipsFinishedEpochs) {
  trained_tl();
  AppConfig cfg = ws().cfg;
  cfg.train.schedule.epochs = 2;
  const fs::path out = ws().root / "ckpt_resume";
  fs::remove_all(out);
  fs::create_directories(out);
  fs::copy_file(trained_tl().parent_path() / "last.pkws", out / "last.pkws");
  std::ostringstream log;
  train_command(cfg, {prepared() / "train.tsv", out, true}, log);
  EXPECT_TRUE(fs::exists(out / "epoch_002.pkws"));
  EXPECT_FALSE(fs::exists(out / "epoch_001.pkws"));
}

TEST(EnrollInfer, OpenNcmRoundTrip) {
  const fs::path ckpt = trained_tl();
  const fs::path shots = ws().root / "shots";
  const fs::path filler = ws().root / "filler";
  make_shot_dirs(shots, filler);

  std::ostringstream log;
  const fs::path out = ws().root / "enrollment.pkws";
  enroll_command(ws().cfg, {ckpt, shots, filler, out}, log);
  const nn::Container c = nn::read_container(out);
  const openset::Enrollment enr = openset::restore_enrollment(c);
  EXPECT_EQ(enr.ways(), 10);
  EXPECT_EQ(enr.shots, 3);
  EXPECT_EQ(enr.unknown_prototypes.rows(), 1);
  EXPECT_EQ(enr.class_names.front(), "down");

  const InferResult r = infer_command(out, shots / "yes" / "clip0.wav", 0.0);
  ASSERT_EQ(r.p.size(), 11u);
  EXPECT_NE(r.label, 0);
  EXPECT_EQ(infer_command(out, shots / "yes" / "clip0.wav", 1.0).label, 0);
  std::ostringstream printed;
  print_inference(r, printed);
  EXPECT_EQ(printed.str().rfind("label " + r.name + "\np0 unknown ", 0), 0u);
  EXPECT_THROW(infer_command(out, shots / "yes" / "clip0.wav", 1.5), ValidationError);
  EXPECT_THROW(infer_command(ckpt, shots / "yes" / "clip0.wav", 0.0), ValidationError);
}

TEST(EvalCommand, ReportIsReproducible) {
  const fs::path ckpt = trained_tl();
  const fs::path m = prepared();
  std::ostringstream log;
  const fs::path a = ws().root / "eval_a", b = ws().root / "eval_b";
  const eval::EvalReport r = eval_command(ws().cfg, {ckpt, m / "train.tsv", m / "test.tsv", a}, log);
  eval_command(ws().cfg, {ckpt, m / "train.tsv", m / "test.tsv", b}, log);
  EXPECT_EQ(r.repetitions.size(), 2u);
  EXPECT_EQ(r.shots, 3);
  EXPECT_EQ(slurp(a / "records.csv"), slurp(b / "records.csv"));
  EXPECT_EQ(drop_first_line(slurp(a / "report.txt")), drop_first_line(slurp(b / "report.txt")));
  EXPECT_EQ(drop_first_line(slurp(a / "report.txt")), eval::format_report(r));
}

TEST(Cli, ExitCodes) {
  const std::string root = ws().root.string();
  const std::string cfg = root + "/cli.ini";
  std::ofstream(cfg) << kSmallConfig;
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("infer --clip x.wav"), 2);
  EXPECT_EQ(run_cli("--config " + root + "/absent.ini infer --enrollment a --clip b"), 2);
  EXPECT_EQ(run_cli("infer --enrollment " + root + "/absent.pkws --clip " + root + "/absent.wav"), 4);
  std::ofstream(root + "/bad.ini") << "[train]\nepochs = -1\n";
  EXPECT_EQ(run_cli("--config " + root + "/bad.ini train --manifest " + prepared().string() + "/train.tsv"), 2);

  // A huge learning rate drives the weights to overflow.
  std::string diverge = kSmallConfig;
  diverge.insert(diverge.find("[eval]"), "learning_rate = 1e300\n");
  std::ofstream(root + "/diverge.ini") << diverge;
  EXPECT_EQ(run_cli("--config " + root + "/diverge.ini --out " + root + "/ckpt_diverge train --manifest " +
                    prepared().string() + "/train.tsv"),
            3);

  EXPECT_EQ(run_cli("--config " + cfg + " --seed 4 --out " + root + "/cli_prep prepare --data-root " + ws().data.string()), 0);
  EXPECT_TRUE(fs::exists(ws().root / "cli_prep" / "train.tsv"));
  EXPECT_EQ(run_cli("prepare --data-root " + ws().data.string() + " --out " + root + "/cli_prep2 --seed 4"), 0);
  make_shot_dirs(ws().root / "shots", ws().root / "filler");
  EXPECT_EQ(run_cli("--config " + cfg + " --out " + root + "/cli_enroll enroll --checkpoint " + trained_tl().string() +
                    " --shots-dir " + root + "/shots --filler-dir " + root + "/filler --shots 2"),
            0);
  EXPECT_EQ(run_cli("infer --enrollment " + root + "/cli_enroll/enrollment.pkws --clip " + ws().data.string() +
                    "/yes/clip7.wav --gamma 0"),
            0);
}
