#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "pkws/error.hpp"
#include "pkws/eval/harness.hpp"
#include "pkws/eval/metrics.hpp"
#include "pkws/synth/corpus.hpp"
#include "pkws/synth/experiment.hpp"
#include "pkws/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace pkws;
using namespace pkws::eval;

namespace {

// Probability vector over 41 entries whose only maximum is keyword 1 at `s`
// (s >= 0.05), or the unknown entry when `unknown` is set.
ScoreVector peaked(double s, bool unknown = false) {
  ScoreVector p(41, (1.0 - s) / 40.0);
  p[unknown ? 0 : 1] = s;
  return p;
}

std::vector<ScoreVector> random_score_sets(std::mt19937_64& rng, int count, int ways) {
  std::gamma_distribution<double> g(0.5, 1.0);
  std::vector<ScoreVector> out(static_cast<std::size_t>(count));
  for (auto& p : out) {
    p.resize(static_cast<std::size_t>(ways + 1));
    double z = 0.0;
    for (double& x : p) z += (x = g(rng));
    for (double& x : p) x /= z;
  }
  return out;
}

double pairwise_auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double a : pos)
    for (double b : neg) wins += a > b ? 1.0 : a == b ? 0.5 : 0.0;
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

struct SmallWorld {
  synth::CorpusConfig cfg;
  synth::Corpus corpus;
  nn::Encoder encoder{nn::EncoderConfig::small(nn::Head::kNorm), 1};

  SmallWorld() {
    cfg.train_per_class = 12;
    cfg.test_per_class = 8;
    corpus = synth::make_corpus(cfg);
    train::TrainOptions opts = synth::experiment_options(corpus, train::LossKind::kTL, 3);
    opts.schedule.epochs = 1;
    opts.schedule.episodes_per_epoch = 150;
    opts.layout = {10, 4, 0};
    const auto roles = synth::class_roles(cfg);
    const train::Dataset ds = corpus.train.select_classes(roles.train);
    train::TrainState state(encoder, opts.loss, 3);
    train::train(state, ds, opts);
    encoder = state.encoder;
  }

  EvalProtocol protocol(int shots) const {
    EvalProtocol p = synth::experiment_protocol(cfg, 5);
    p.shots = shots;
    return p;
  }
};

const SmallWorld& world() {
  static const SmallWorld w;
  return w;
}

}  // namespace

TEST(Gamma, TwentyNegativesAtFivePercent) {
  std::vector<ScoreVector> neg;
  for (int k = 1; k <= 20; ++k) neg.push_back(peaked(k / 20.0));
  EXPECT_EQ(tune_gamma(neg, 0.05), 1.0);
  EXPECT_EQ(false_acceptance_rate(neg, 1.0), 0.05);
  // 10% admits the top two.
  EXPECT_EQ(tune_gamma(neg, 0.10), 0.95);
}

TEST(Gamma, AlreadyRejectedNegativesGiveZero) {
  std::vector<ScoreVector> neg;
  for (int k = 2; k <= 20; ++k) neg.push_back(peaked(k / 20.0, true));
  EXPECT_EQ(tune_gamma(neg, 0.01), 0.0);
  EXPECT_EQ(false_acceptance_rate(neg, 0.0), 0.0);
}

TEST(Gamma, CertainNegativesRejectEverything) {
  const std::vector<ScoreVector> neg{peaked(1.0), peaked(1.0)};
  const double g = tune_gamma(neg, 0.05);
  EXPECT_GT(g, 1.0);
  EXPECT_EQ(false_acceptance_rate(neg, g), 0.0);
  EXPECT_THROW(tune_gamma(neg, 0.0), ValidationError);
  EXPECT_THROW(tune_gamma(neg, 1.0), ValidationError);
}

TEST(Gamma, FarNonincreasingOverCandidateGrid) {
  std::mt19937_64 rng(1);
  for (int set = 0; set < 10; ++set) {
    const auto neg = random_score_sets(rng, 200, 10);
    std::vector<double> grid{0.0, 1.0};
    for (const auto& p : neg) grid.push_back(openset::detection_score(p));
    std::sort(grid.begin(), grid.end());
    double prev = 2.0;
    for (double g : grid) {
      const double far = false_acceptance_rate(neg, g);
      EXPECT_LE(far, prev);
      prev = far;
    }
    const double g = tune_gamma(neg, 0.05);
    EXPECT_LE(false_acceptance_rate(neg, g), 0.05);
    // Smallest admissible: every smaller grid point exceeds the target.
    for (double c : grid) {
      if (c < g) {
        EXPECT_GT(false_acceptance_rate(neg, c), 0.05);
      }
    }
  }
}

TEST(Metrics, CountsDecisions) {
  std::vector<Outcome> pos;
  for (int i = 0; i < 6; ++i) pos.push_back({1, peaked(0.9)});
  for (int i = 0; i < 2; ++i) pos.push_back({2, peaked(0.9)});
  for (int i = 0; i < 2; ++i) pos.push_back({1, peaked(0.9, true)});
  const std::vector<ScoreVector> neg{peaked(0.5), peaked(0.5, true), peaked(0.9, true), peaked(0.2, true)};
  const Metrics m = compute_metrics(pos, neg, 0.0);
  EXPECT_DOUBLE_EQ(m.acc, 0.6);
  EXPECT_DOUBLE_EQ(m.frr, 0.2);
  EXPECT_DOUBLE_EQ(m.far, 0.25);
  const Metrics strict = compute_metrics(pos, neg, 0.95);
  EXPECT_EQ(strict.acc, 0.0);
  EXPECT_EQ(strict.frr, 1.0);
  EXPECT_EQ(strict.far, 0.0);
  EXPECT_THROW(compute_metrics({}, neg, 0.0), ValidationError);
}

TEST(Auroc, MatchesPairwiseCounting) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> pos(1000), neg(1000);
  for (double& x : pos) x = n(rng) + 0.8;
  for (double& x : neg) x = n(rng);
  EXPECT_NEAR(auroc(pos, neg), pairwise_auroc(pos, neg), 1e-9);
  // Heavy ties.
  for (double& x : pos) x = std::round(x);
  for (double& x : neg) x = std::round(x);
  EXPECT_NEAR(auroc(pos, neg), pairwise_auroc(pos, neg), 1e-9);
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> pos(300), neg(200);
  for (double& x : pos) x = u(rng) * 1.2;
  for (double& x : neg) x = u(rng);
  const double base = auroc(pos, neg);
  auto f = [](double x) { return std::exp(3.0 * x) - 7.0; };
  std::vector<double> tp, tn;
  for (double x : pos) tp.push_back(f(x));
  for (double x : neg) tn.push_back(f(x));
  EXPECT_NEAR(auroc(tp, tn), base, 1e-12);
  EXPECT_EQ(auroc(std::vector<double>{1.0}, std::vector<double>{0.0}), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{0.5}, std::vector<double>{0.5}), 0.5);
  EXPECT_THROW(auroc(std::vector<double>{}, neg), ValidationError);
}

TEST(Protocol, GscPartition) {
  const EvalProtocol p;
  EXPECT_EQ(p.positive, (std::vector<std::string>{"yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"}));
  EXPECT_EQ(p.negative.size(), 20u);
  EXPECT_EQ(p.filler.size(), 5u);
  EXPECT_EQ(p.shots, 10);
  EXPECT_EQ(p.far_target, 0.05);
  EXPECT_NO_THROW(p.validate());
  EvalProtocol overlap = p;
  overlap.negative.push_back("yes");
  EXPECT_THROW(overlap.validate(), ValidationError);
}

TEST(Harness, RepetitionsAndConfusion) {
  const SmallWorld& w = world();
  const EvalProtocol protocol = w.protocol(5);
  const EvalReport r = run_eval(w.encoder, {}, protocol, w.corpus.train, w.corpus.test);
  ASSERT_EQ(r.repetitions.size(), 10u);
  EXPECT_EQ(r.gammas().size(), 10u);
  EXPECT_EQ(r.ways, 10);
  EXPECT_EQ(r.shots, 5);
  EXPECT_EQ(r.negative_count, 15 * 8);
  for (const RepetitionResult& rep : r.repetitions) {
    ASSERT_EQ(rep.confusion.rows(), 11);
    EXPECT_EQ(rep.confusion.row(0).sum(), r.negative_count);
    for (int i = 1; i <= 10; ++i) EXPECT_EQ(rep.confusion.row(i).sum(), 8);
    EXPECT_LE(rep.metrics.far, protocol.far_target);
    EXPECT_NEAR(rep.metrics.acc, rep.confusion.diagonal().tail(10).sum() / 80.0, 1e-15);
    EXPECT_GE(rep.auroc, 0.0);
    EXPECT_LE(rep.auroc, 1.0);
  }
  const std::vector<double> accs = [&] {
    std::vector<double> v;
    for (const auto& rep : r.repetitions) v.push_back(rep.metrics.acc);
    return v;
  }();
  const Summary s = summarize(accs);
  EXPECT_NEAR(r.acc.mean, s.mean, 1e-15);
  EXPECT_NEAR(r.acc.std, s.std, 1e-15);
}

TEST(Harness, Deterministic) {
  const SmallWorld& w = world();
  const EvalReport a = run_eval(w.encoder, {}, w.protocol(5), w.corpus.train, w.corpus.test);
  const EvalReport b = run_eval(w.encoder, {}, w.protocol(5), w.corpus.train, w.corpus.test);
  EXPECT_EQ(format_report(a), format_report(b));
  EvalProtocol other = w.protocol(5);
  other.seed = 6;
  EXPECT_NE(format_report(a), format_report(run_eval(w.encoder, {}, other, w.corpus.train, w.corpus.test)));
}

TEST(Harness, MoreShotsDoNotHurt) {
  const SmallWorld& w = world();
  const EvalReport k5 = run_eval(w.encoder, {}, w.protocol(5), w.corpus.train, w.corpus.test);
  const EvalReport k10 = run_eval(w.encoder, {}, w.protocol(10), w.corpus.train, w.corpus.test);
  EXPECT_GE(k10.acc.mean, k5.acc.mean);
  EXPECT_GT(k5.acc.mean, 0.3);
  RecordProperty("acc_k5", std::to_string(k5.acc.mean));
  RecordProperty("acc_k10", std::to_string(k10.acc.mean));
}

TEST(Harness, OpenMaxAndValidation) {
  const SmallWorld& w = world();
  ClassifierSetup setup;
  setup.kind = openset::ClassifierKind::kOpenMax;
  const EvalReport r = run_eval(w.encoder, setup, w.protocol(3), w.corpus.train, w.corpus.test);
  EXPECT_EQ(r.classifier, "OpenMAX");
  EXPECT_TRUE(r.repetitions.front().few_shot_warning);
  EXPECT_THROW(run_eval(w.encoder, {}, w.protocol(13), w.corpus.train, w.corpus.test), ValidationError);
  setup.kind = openset::ClassifierKind::kDProto;
  EXPECT_THROW(run_eval(w.encoder, setup, w.protocol(5), w.corpus.train, w.corpus.test), ValidationError);
}

TEST(Harness, WritesReportAndRecords) {
  const SmallWorld& w = world();
  const EvalReport r = run_eval(w.encoder, {}, w.protocol(5), w.corpus.train, w.corpus.test);
  const fs::path dir = fs::temp_directory_path() / "pkws_eval_report";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_report(r, dir / "report.txt");
  write_records(r, dir / "records.csv");
  std::ifstream rep(dir / "report.txt");
  std::string first;
  std::getline(rep, first);
  EXPECT_EQ(first.rfind("# generated ", 0), 0u);
  const std::string rest((std::istreambuf_iterator<char>(rep)), {});
  EXPECT_EQ(rest, format_report(r));
  std::ifstream rec(dir / "records.csv");
  int lines = 0;
  for (std::string l; std::getline(rec, l);) ++lines;
  EXPECT_EQ(lines, 1 + 5 * 10);
}
