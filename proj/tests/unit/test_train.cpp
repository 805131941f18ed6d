#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "gradcheck.hpp"
#include "pkws/error.hpp"
#include "pkws/synth/corpus.hpp"
#include "pkws/train/adam.hpp"
#include "pkws/train/episode.hpp"
#include "pkws/train/generator.hpp"
#include "pkws/train/losses.hpp"
#include "pkws/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace pkws;
using namespace pkws::train;
using pkws::testing::kGradTolerance;
using pkws::testing::numeric_gradient;
using pkws::testing::random_matrix;
using pkws::testing::relative_error;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pkws_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Six tone-sequence classes of eight utterances each, kept in memory.
Dataset tiny_dataset() {
  synth::CorpusConfig cfg;
  cfg.classes = 6;
  std::vector<std::string> names;
  std::vector<int> labels;
  std::vector<dsp::Waveform> clips;
  for (int c = 0; c < cfg.classes; ++c) {
    names.push_back(synth::class_name(c));
    for (int i = 0; i < 8; ++i) {
      labels.push_back(c);
      clips.push_back(synth::utterance(cfg, c, i));
    }
  }
  return Dataset::from_memory(names, labels, std::move(clips));
}

TrainOptions tiny_options(LossKind kind) {
  TrainOptions o;
  o.loss.kind = kind;
  o.layout = kind == LossKind::kTL ? EpisodeLayout{4, 3, 0} : EpisodeLayout{4, 2, 2};
  o.loss.dproto_unknown_classes = 2;
  o.schedule.epochs = 2;
  o.schedule.episodes_per_epoch = 3;
  o.schedule.decay_after_epochs = 1;
  o.schedule.seed = 99;
  return o;
}

}  // namespace

TEST(Losses, PrototypicalGradient) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd q = random_matrix(6, 5, rng), c = random_matrix(3, 5, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  const PrototypeLoss l = pn_loss(q, labels, c);
  EXPECT_LT(relative_error(l.grad_queries, numeric_gradient([&](const auto& x) { return pn_loss(x, labels, c).loss; }, q)),
            kGradTolerance);
  EXPECT_LT(relative_error(l.grad_prototypes, numeric_gradient([&](const auto& x) { return pn_loss(q, labels, x).loss; }, c)),
            kGradTolerance);
}

TEST(Losses, AngularGradientIncludingScalars) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd q = random_matrix(8, 6, rng), c = random_matrix(4, 6, rng);
  const std::vector<int> labels{0, 1, 2, 3, 3, 2, 1, 0};
  const double w = 3.0, b = -0.7, m = 0.5;
  const PrototypeLoss l = ap_loss(q, labels, c, w, b, m);
  EXPECT_LT(relative_error(l.grad_queries,
                           numeric_gradient([&](const auto& x) { return ap_loss(x, labels, c, w, b, m).loss; }, q)),
            kGradTolerance);
  EXPECT_LT(relative_error(l.grad_prototypes,
                           numeric_gradient([&](const auto& x) { return ap_loss(q, labels, x, w, b, m).loss; }, c)),
            kGradTolerance);
  Eigen::MatrixXd wb(1, 2);
  wb << w, b;
  const Eigen::MatrixXd g = numeric_gradient([&](const auto& x) { return ap_loss(q, labels, c, x(0), x(1), m).loss; }, wb);
  Eigen::MatrixXd analytic(1, 2);
  analytic << l.grad_w, l.grad_b;
  EXPECT_LT(relative_error(analytic, g), kGradTolerance);
}

TEST(Losses, TripletGradient) {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd e = random_matrix(8, 4, rng, 0.5);
  Rng trng(4);
  const auto triplets = sample_triplets(EpisodeLayout{4, 2, 0}.groups(), trng);
  const EmbeddingLoss l = tl_loss(e, triplets, 0.5);
  ASSERT_GT(l.loss, 0.0);
  EXPECT_LT(relative_error(l.grad, numeric_gradient([&](const auto& x) { return tl_loss(x, triplets, 0.5).loss; }, e)),
            kGradTolerance);
}

TEST(Losses, EpisodeWrappersRouteThroughPrototypes) {
  std::mt19937_64 rng(5);
  const EpisodeLayout layout{3, 2, 2};
  const Eigen::MatrixXd e = random_matrix(layout.rows(), 5, rng);
  EXPECT_LT(relative_error(pn_episode_loss(e, layout).grad,
                           numeric_gradient([&](const auto& x) { return pn_episode_loss(x, layout).loss; }, e)),
            kGradTolerance);
  const EmbeddingLoss ap = ap_episode_loss(e, layout, 4.0, -1.0, 0.5);
  EXPECT_LT(relative_error(ap.grad, numeric_gradient(
                                        [&](const auto& x) { return ap_episode_loss(x, layout, 4.0, -1.0, 0.5).loss; }, e)),
            kGradTolerance);
}

TEST(Losses, DummyPrototypeGradient) {
  std::mt19937_64 rng(6);
  const EpisodeLayout layout{4, 2, 2};
  const Eigen::MatrixXd e = random_matrix(layout.rows(), 6, rng);
  DummyProtoGenerator gen(6, 3, 7);
  gen.zero_grad();
  const EmbeddingLoss l = dproto_episode_loss(e, layout, 2, gen);
  auto f = [&](const Eigen::MatrixXd& x) {
    DummyProtoGenerator g = gen;
    return dproto_episode_loss(x, layout, 2, g).loss;
  };
  EXPECT_LT(relative_error(l.grad, numeric_gradient(f, e)), kGradTolerance);

  for (nn::Tensor* t : gen.parameters()) {
    const Eigen::VectorXd analytic = t->grad;
    Eigen::VectorXd numeric(t->size());
    for (Eigen::Index i = 0; i < t->size(); ++i) {
      const double keep = t->value(i);
      t->value(i) = keep + pkws::testing::kStep;
      const double up = f(e);
      t->value(i) = keep - pkws::testing::kStep;
      const double down = f(e);
      t->value(i) = keep;
      numeric(i) = (up - down) / (2.0 * pkws::testing::kStep);
    }
    EXPECT_LT(relative_error(analytic, numeric), kGradTolerance) << t->name;
  }
}

TEST(Losses, ReferenceValues) {
  // Query on c_1 with c_2 at distance 2: ln(1 + e^-2).
  Eigen::MatrixXd q(1, 2), c(2, 2);
  q << 0.0, 0.0;
  c << 0.0, 0.0, 2.0, 0.0;
  const std::vector<int> first{0};
  EXPECT_NEAR(pn_loss(q, first, c).loss, 0.1269280110429725, 1e-15);
  // Equidistant prototypes: ln 2.
  q << 1.0, 0.0;
  EXPECT_NEAR(pn_loss(q, first, c).loss, std::log(2.0), 1e-15);
  // Collapsed embeddings over M classes: ln M.
  const EpisodeLayout layout{5, 1, 1};
  EXPECT_NEAR(pn_episode_loss(Eigen::MatrixXd::Ones(layout.rows(), 3), layout).loss, std::log(5.0), 1e-12);
  // Angular: w = 2, b = 0, m = 0.5, orthogonal prototypes, q on c_1: ln(1 + e^-1).
  Eigen::MatrixXd a(2, 2);
  a << 1.0, 0.0, 0.0, 1.0;
  q << 1.0, 0.0;
  EXPECT_NEAR(ap_loss(q, first, a, 2.0, 0.0, 0.5).loss, 0.31326168751822286, 1e-15);
}

TEST(Losses, TripletHingeExamples) {
  Eigen::MatrixXd e(3, 1);
  e << 0.0, 1.0, -2.0;  // |a-p| = 1, |a-n| = 2
  const std::vector<Triplet> t{{0, 1, 2}};
  EXPECT_EQ(tl_loss(e, t, 0.5).loss, 0.0);
  EXPECT_EQ(tl_loss(e, t, 0.5).grad.cwiseAbs().maxCoeff(), 0.0);
  e << 0.0, 1.0, 0.2;  // 1 - 0.2 + 0.5
  EXPECT_NEAR(tl_loss(e, t, 0.5).loss, 1.3, 1e-15);
}

TEST(Losses, AngularRejectsZeroVectors) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(1, 2), c = Eigen::MatrixXd::Identity(2, 2);
  const std::vector<int> l{0};
  EXPECT_THROW(ap_loss(q, l, c, 1.0, 0.0, 0.5), ValidationError);
  q << 1.0, 0.0;
  c.row(1).setZero();
  EXPECT_THROW(ap_loss(q, l, c, 1.0, 0.0, 0.5), ValidationError);
}

TEST(Losses, PrototypesMatchBruteForce) {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd e = random_matrix(20, 7, rng, 100.0);
  const std::vector<std::vector<int>> groups{{0, 3, 5}, {1, 2, 19, 7, 11}, {4}};
  const Eigen::MatrixXd p = compute_prototypes(e, groups);
  for (std::size_t j = 0; j < groups.size(); ++j) {
    for (Eigen::Index d = 0; d < e.cols(); ++d) {
      double s = 0.0;
      for (int r : groups[j]) s += e(r, d);
      EXPECT_NEAR(p(static_cast<Eigen::Index>(j), d), s / static_cast<double>(groups[j].size()), 1e-12);
    }
  }
}

TEST(Losses, PrototypicalLossIsTranslationInvariant) {
  std::mt19937_64 rng(9);
  const EpisodeLayout layout{4, 2, 3};
  const Eigen::MatrixXd e = random_matrix(layout.rows(), 6, rng);
  const Eigen::RowVectorXd shift = random_matrix(1, 6, rng, 10.0);
  const double base = pn_episode_loss(e, layout).loss;
  EXPECT_NEAR(pn_episode_loss(e.rowwise() + shift, layout).loss, base, 1e-12);
}

TEST(Losses, AngularLossIsScaleInvariant) {
  std::mt19937_64 rng(10);
  const EpisodeLayout layout{4, 2, 3};
  const Eigen::MatrixXd e = random_matrix(layout.rows(), 6, rng);
  const double base = ap_episode_loss(e, layout, 5.0, -2.0, 0.5).loss;
  EXPECT_NEAR(ap_episode_loss(e * 37.5, layout, 5.0, -2.0, 0.5).loss, base, 1e-12);
}

TEST(Losses, TripletSamplingRespectsGroups) {
  const auto groups = EpisodeLayout{5, 4, 0}.groups();
  Rng rng(11);
  const auto triplets = sample_triplets(groups, rng);
  ASSERT_EQ(triplets.size(), 20u);
  for (const Triplet& t : triplets) {
    EXPECT_EQ(t.anchor / 4, t.positive / 4);
    EXPECT_NE(t.anchor, t.positive);
    EXPECT_NE(t.anchor / 4, t.negative / 4);
  }
}

TEST(Episodes, StandardLayouts) {
  EXPECT_EQ(EpisodeLayout::standard(LossKind::kTL), (EpisodeLayout{80, 20, 0}));
  EXPECT_EQ(EpisodeLayout::standard(LossKind::kPN), (EpisodeLayout{40, 10, 30}));
  EXPECT_EQ(EpisodeLayout::standard(LossKind::kDProto), (EpisodeLayout{40, 10, 30}));
  const LossConfig loss;
  EXPECT_EQ(loss.margin, 0.5);
  EXPECT_EQ(loss.dproto_unknown_classes, 16);
  const TrainSchedule s;
  EXPECT_EQ(s.total_episodes(), 16000);
  EXPECT_EQ(s.lr_at(1), 1e-3);
  EXPECT_EQ(s.lr_at(20), 1e-3);
  EXPECT_DOUBLE_EQ(s.lr_at(21), 1e-4);
  EXPECT_DOUBLE_EQ(s.lr_at(25), 1e-4);
  const dsp::AugmentationPolicy aug;
  EXPECT_EQ(aug.apply_probability, 0.95);
  EXPECT_EQ(aug.snr_low_db, 0.0);
  EXPECT_EQ(aug.snr_high_db, 5.0);
}

TEST(Episodes, BalancedAndDeterministic) {
  const Dataset ds = tiny_dataset();
  const EpisodeLayout layout{4, 2, 3};
  Rng a(12), b(12);
  const EpisodicBatch x = build_episode(ds, layout, a);
  const EpisodicBatch y = build_episode(ds, layout, b);
  EXPECT_EQ(x.classes, y.classes);
  EXPECT_EQ(x.samples, y.samples);
  ASSERT_EQ(x.samples.size(), static_cast<std::size_t>(layout.rows()));
  EXPECT_EQ(std::set<int>(x.classes.begin(), x.classes.end()).size(), 4u);
  EXPECT_EQ(std::set<std::size_t>(x.samples.begin(), x.samples.end()).size(), x.samples.size());
  for (int c = 0; c < layout.classes; ++c) {
    for (int i = 0; i < layout.per_class(); ++i) {
      EXPECT_EQ(ds.label(x.samples[static_cast<std::size_t>(c * layout.per_class() + i)]), x.classes[static_cast<std::size_t>(c)]);
    }
  }
  EXPECT_THROW(build_episode(ds, EpisodeLayout{7, 2, 3}, a), ValidationError);
  EXPECT_THROW(build_episode(ds, EpisodeLayout{4, 5, 5}, a), ValidationError);
}

TEST(Episodes, FeaturesIndependentOfOrder) {
  const Dataset ds = tiny_dataset();
  dsp::AugmentationPolicy aug;
  aug.noise_pool = std::make_shared<const std::vector<dsp::Waveform>>(
      std::vector<dsp::Waveform>{synth::noise_clip(synth::CorpusConfig{}, 0)});
  const dsp::MfccExtractor mfcc;
  Rng rng(13);
  const EpisodicBatch batch = build_episode(ds, EpisodeLayout{2, 1, 1}, rng);
  const auto f1 = episode_features(ds, batch, mfcc, aug, 5, 17);
  const auto f2 = episode_features(ds, batch, mfcc, aug, 5, 17);
  const auto f3 = episode_features(ds, batch, mfcc, aug, 5, 18);
  ASSERT_EQ(f1.size(), 4u);
  for (std::size_t i = 0; i < f1.size(); ++i) EXPECT_EQ(f1[i].values, f2[i].values);
  EXPECT_NE(f1[0].values, f3[0].values);
}

TEST(Adam, MatchesHandComputedSteps) {
  nn::Tensor t("x", {2});
  t.value << 1.0, -2.0;
  Adam adam;
  const double g1[2] = {0.5, -0.1}, g2[2] = {-0.3, 0.2};
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
  const double* gs[2] = {g1, g2};
  for (int step = 1; step <= 2; ++step) {
    t.grad << gs[step - 1][0], gs[step - 1][1];
    adam.step({&t}, 0.01);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * gs[step - 1][i];
      v[i] = 0.999 * v[i] + 0.001 * gs[step - 1][i] * gs[step - 1][i];
      const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
      x[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(t.value(i), x[i], 1e-15);
    }
  }
  EXPECT_EQ(adam.steps(), 2);
}

TEST(Adam, StateRoundTrip) {
  nn::Tensor t("x", {3});
  t.grad << 0.1, 0.2, -0.3;
  Adam a;
  a.step({&t}, 1e-3);
  nn::Container c;
  a.store(c);
  Adam b = Adam::restore(c);
  nn::Tensor u = t;
  a.step({&t}, 1e-3);
  b.step({&u}, 1e-3);
  EXPECT_EQ(t.value, u.value);
  EXPECT_EQ(b.steps(), 2);
}

TEST(Generator, PermutationInvariant) {
  DummyProtoGenerator gen(5, 3, 14);
  std::mt19937_64 rng(15);
  const Eigen::MatrixXd p = random_matrix(6, 5, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  const Eigen::MatrixXd a = gen.generate(p), b = gen.generate(perm * p);
  ASSERT_EQ(a.rows(), 3);
  ASSERT_EQ(a.cols(), 5);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Generator, JointTrainingReducesLoss) {
  // Free embeddings plus generator, optimized with Adam on a fixed episode.
  const EpisodeLayout layout{6, 2, 3};
  std::mt19937_64 rng(16);
  nn::Tensor emb("emb", {layout.rows(), 4});
  emb.value = Eigen::Map<const Eigen::VectorXd>(random_matrix(layout.rows(), 4, rng).data(), layout.rows() * 4);
  DummyProtoGenerator gen(4, 3, 17);
  Adam adam;
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 200; ++step) {
    gen.zero_grad();
    const Eigen::Map<const Eigen::MatrixXd> e(emb.value.data(), layout.rows(), 4);
    const EmbeddingLoss l = dproto_episode_loss(e, layout, 2, gen);
    emb.grad = Eigen::Map<const Eigen::VectorXd>(l.grad.data(), l.grad.size());
    std::vector<nn::Tensor*> params = gen.parameters();
    params.push_back(&emb);
    adam.step(params, 0.01);
    if (step == 0) first = l.loss;
    last = l.loss;
  }
  EXPECT_LT(last, 0.5 * first);
}

TEST(Generator, StoreRestore) {
  DummyProtoGenerator gen(4, 3, 18);
  nn::Container c;
  gen.store(c);
  const DummyProtoGenerator back = DummyProtoGenerator::restore(c);
  std::mt19937_64 rng(19);
  const Eigen::MatrixXd p = random_matrix(5, 4, rng);
  EXPECT_EQ(gen.generate(p), back.generate(p));
}

TEST(Trainer, ResumeReproducesTrace) {
  const Dataset ds = tiny_dataset();
  const fs::path dir = temp_dir("resume");
  TrainOptions opts = tiny_options(LossKind::kPN);
  opts.checkpoint_dir = dir / "ckpt";
  TrainState full(nn::Encoder(nn::EncoderConfig::custom(nn::Head::kNorm, 8, 2), 20), opts.loss, 20);
  const auto trace = train::train(full, ds, opts);
  ASSERT_EQ(trace.size(), 6u);
  EXPECT_EQ(trace.back().lr, opts.schedule.learning_rate * 0.1);
  ASSERT_TRUE(fs::exists(dir / "ckpt" / "epoch_001.pkws"));
  ASSERT_TRUE(fs::exists(dir / "ckpt" / "last.pkws"));

  TrainState resumed = load_train_state(dir / "ckpt" / "epoch_001.pkws");
  EXPECT_EQ(resumed.epochs_done, 1);
  opts.checkpoint_dir.clear();
  const auto rest = train::train(resumed, ds, opts);
  ASSERT_EQ(rest.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(rest[i].loss, trace[i + 3].loss);
  const auto a = full.encoder.parameters();
  const auto b = resumed.encoder.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
}

TEST(Trainer, SameSeedSameTraceForEveryLoss) {
  const Dataset ds = tiny_dataset();
  for (LossKind kind : {LossKind::kPN, LossKind::kAP, LossKind::kTL, LossKind::kDProto}) {
    TrainOptions opts = tiny_options(kind);
    opts.schedule.epochs = 1;
    TrainState a(nn::Encoder(nn::EncoderConfig::custom(nn::Head::kNorm, 8, 2), 21), opts.loss, 21);
    TrainState b(nn::Encoder(nn::EncoderConfig::custom(nn::Head::kNorm, 8, 2), 21), opts.loss, 21);
    const auto ta = train::train(a, ds, opts), tb = train::train(b, ds, opts);
    ASSERT_EQ(ta.size(), tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
      EXPECT_EQ(ta[i].loss, tb[i].loss) << to_string(kind);
      EXPECT_TRUE(std::isfinite(ta[i].loss));
    }
    EXPECT_EQ(a.generator.has_value(), kind == LossKind::kDProto);
  }
}

TEST(Trainer, WritesLogAndValidates) {
  const Dataset ds = tiny_dataset();
  const fs::path dir = temp_dir("log");
  TrainOptions opts = tiny_options(LossKind::kTL);
  opts.log_path = dir / "train_log.csv";
  TrainState s(nn::Encoder(nn::EncoderConfig::custom(nn::Head::kNorm, 8, 2), 22), opts.loss, 22);
  train::train(s, ds, opts);
  std::ifstream in(opts.log_path);
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 6);

  TrainOptions bad = tiny_options(LossKind::kPN);
  bad.schedule.epochs = 0;
  EXPECT_THROW(train::train(s, ds, bad), ValidationError);
  EXPECT_THROW(parse_loss_kind("softmax"), ValidationError);
  EXPECT_EQ(parse_loss_kind("dproto"), LossKind::kDProto);
}

TEST(Dataset, ManifestRoundTripAndSelection) {
  const fs::path dir = temp_dir("manifest");
  const std::vector<ManifestEntry> entries{{"a/1.wav", "a"}, {"b/1.wav", "b"}, {"a/2.wav", "a"}};
  write_manifest(dir / "m.tsv", entries);
  const auto back = read_manifest(dir / "m.tsv");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].path, "b/1.wav");
  EXPECT_EQ(back[2].label, "a");
  const Dataset ds = tiny_dataset();
  const std::vector<std::string> keep{"kw03", "kw01"};
  const Dataset sel = ds.select_classes(keep);
  EXPECT_EQ(sel.num_classes(), 2);
  EXPECT_EQ(sel.class_name(0), "kw03");
  EXPECT_EQ(sel.size(), 16u);
  EXPECT_EQ(ds.drop_classes(keep).num_classes(), 4);
  EXPECT_EQ(ds.class_id("nope"), -1);
}
