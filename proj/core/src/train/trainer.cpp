#include "pkws/train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "pkws/error.hpp"
#include "pkws/nn/checkpoint.hpp"
#include "pkws/train/losses.hpp"

namespace pkws::train {
namespace {

constexpr std::uint64_t kTripletStream = 0x7472697000ULL;
constexpr double kMinScale = 1e-6;

}  // namespace

void LossConfig::validate(const EpisodeLayout& layout) const {
  layout.validate(kind);
  if (!(margin >= 0.0)) throw ValidationError("loss margin must be >= 0");
  if (kind == LossKind::kDProto) {
    if (dproto_unknown_classes < 1 || dproto_unknown_classes >= layout.classes) {
      throw ValidationError("dproto unknown class count must be in [1, classes per episode)");
    }
    if (layout.classes - dproto_unknown_classes < 2) throw ValidationError("dproto needs at least 2 known classes");
    if (dproto_dummies < 1) throw ValidationError("dproto needs at least one dummy prototype");
  }
}

void TrainSchedule::validate() const {
  if (epochs < 1 || episodes_per_epoch < 1) throw ValidationError("schedule needs >= 1 epoch and >= 1 episode");
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(decay_factor > 0.0)) throw ValidationError("decay factor must be positive");
}

TrainState::TrainState(nn::Encoder enc, const LossConfig& loss_cfg, std::uint64_t seed)
    : encoder(std::move(enc)), loss(loss_cfg) {
  ap_w.value[0] = loss.ap_w_init;
  ap_b.value[0] = loss.ap_b_init;
  if (loss.kind == LossKind::kDProto) {
    generator.emplace(encoder.config().embedding_dim(), loss.dproto_dummies, seed);
  }
}

std::vector<nn::Tensor*> TrainState::trainable() {
  std::vector<nn::Tensor*> out = encoder.parameters();
  if (loss.kind == LossKind::kAP) {
    out.push_back(&ap_w);
    out.push_back(&ap_b);
  }
  if (generator) {
    for (nn::Tensor* t : generator->parameters()) out.push_back(t);
  }
  return out;
}

void TrainState::zero_grad() {
  for (nn::Tensor* t : trainable()) t->grad.setZero();
}

nn::Container to_container(const TrainState& state) {
  nn::Container c;
  c.meta["kind"] = "encoder";
  nn::store_encoder(c, state.encoder);
  c.meta["train.loss"] = to_string(state.loss.kind);
  c.meta["train.margin"] = nn::format_double(state.loss.margin);
  c.meta["train.ap_w_init"] = nn::format_double(state.loss.ap_w_init);
  c.meta["train.ap_b_init"] = nn::format_double(state.loss.ap_b_init);
  c.meta["train.dproto_unknown_classes"] = std::to_string(state.loss.dproto_unknown_classes);
  c.meta["train.dproto_dummies"] = std::to_string(state.loss.dproto_dummies);
  c.meta["train.epochs_done"] = std::to_string(state.epochs_done);
  c.put("ap.w", {1}, {state.ap_w.value.data(), 1});
  c.put("ap.b", {1}, {state.ap_b.value.data(), 1});
  if (state.generator) state.generator->store(c);
  state.optimizer.store(c);
  return c;
}

TrainState from_container(const nn::Container& c) {
  LossConfig loss;
  if (c.meta.count("train.loss") != 0) {
    loss.kind = parse_loss_kind(c.meta_at("train.loss"));
    loss.margin = c.meta_double("train.margin");
    loss.ap_w_init = c.meta_double("train.ap_w_init");
    loss.ap_b_init = c.meta_double("train.ap_b_init");
    loss.dproto_unknown_classes = static_cast<int>(c.meta_int("train.dproto_unknown_classes"));
    loss.dproto_dummies = static_cast<int>(c.meta_int("train.dproto_dummies"));
  }
  nn::Encoder enc = nn::restore_encoder(c);
  const std::uint64_t seed = enc.seed();
  TrainState state(std::move(enc), loss, seed);
  if (c.contains("ap.w")) state.ap_w.value[0] = c.get("ap.w").data.at(0);
  if (c.contains("ap.b")) state.ap_b.value[0] = c.get("ap.b").data.at(0);
  if (loss.kind == LossKind::kDProto) state.generator = DummyProtoGenerator::restore(c);
  if (c.meta.count("optim.steps") != 0) state.optimizer = Adam::restore(c);
  if (c.meta.count("train.epochs_done") != 0) state.epochs_done = static_cast<int>(c.meta_int("train.epochs_done"));
  return state;
}

void save_train_state(const TrainState& state, const std::filesystem::path& path) {
  nn::write_container(path, to_container(state), nn::Precision::kFloat64);
}

TrainState load_train_state(const std::filesystem::path& path) { return from_container(nn::read_container(path)); }

double train_step(TrainState& state, const Dataset& ds, const TrainOptions& opts, const dsp::MfccExtractor& mfcc,
                  std::uint64_t episode_index, double lr) {
  const std::uint64_t seed = opts.schedule.seed;
  Rng rng = make_rng(seed, {episode_index});
  const EpisodicBatch batch = build_episode(ds, opts.layout, rng);
  const auto features = episode_features(ds, batch, mfcc, opts.augmentation, seed, episode_index);

  state.zero_grad();
  const Eigen::MatrixXd emb = state.encoder.forward(features, nn::Mode::kTrain);
  EmbeddingLoss loss;
  switch (state.loss.kind) {
    case LossKind::kPN:
      loss = pn_episode_loss(emb, batch.layout);
      break;
    case LossKind::kAP:
      loss = ap_episode_loss(emb, batch.layout, state.ap_w.value[0], state.ap_b.value[0], state.loss.margin);
      state.ap_w.grad[0] = loss.grad_w;
      state.ap_b.grad[0] = loss.grad_b;
      break;
    case LossKind::kTL: {
      Rng trng = make_rng(seed, {episode_index, kTripletStream});
      const auto triplets = sample_triplets(batch.layout.groups(), trng);
      loss = tl_loss(emb, triplets, state.loss.margin);
      break;
    }
    case LossKind::kDProto:
      loss = dproto_episode_loss(emb, batch.layout, state.loss.dproto_unknown_classes, *state.generator);
      break;
  }
  if (!std::isfinite(loss.loss) || !loss.grad.allFinite()) {
    throw NumericError("non-finite loss at episode " + std::to_string(episode_index + 1));
  }
  state.encoder.backward(loss.grad);
  state.optimizer.step(state.trainable(), lr);
  if (state.loss.kind == LossKind::kAP) state.ap_w.value[0] = std::max(state.ap_w.value[0], kMinScale);
  return loss.loss;
}

std::vector<EpisodeRecord> train(TrainState& state, const Dataset& ds, const TrainOptions& opts) {
  opts.schedule.validate();
  opts.loss.validate(opts.layout);
  opts.augmentation.validate();
  if (opts.loss.kind != state.loss.kind) throw ValidationError("train options and train state disagree on the loss kind");
  const dsp::MfccExtractor mfcc(opts.frontend);

  std::ofstream log;
  if (!opts.log_path.empty()) {
    log.open(opts.log_path, std::ios::app);
    if (!log) throw IoError("cannot open training log " + opts.log_path.string());
  }
  if (!opts.checkpoint_dir.empty()) std::filesystem::create_directories(opts.checkpoint_dir);

  std::vector<EpisodeRecord> trace;
  const auto& sch = opts.schedule;
  for (int epoch = state.epochs_done + 1; epoch <= sch.epochs; ++epoch) {
    const double lr = sch.lr_at(epoch);
    for (int ep = 1; ep <= sch.episodes_per_epoch; ++ep) {
      const auto index = static_cast<std::uint64_t>(epoch - 1) * static_cast<std::uint64_t>(sch.episodes_per_epoch) +
                         static_cast<std::uint64_t>(ep - 1);
      const double loss = train_step(state, ds, opts, mfcc, index, lr);
      EpisodeRecord rec{epoch, ep, loss, lr};
      trace.push_back(rec);
      if (log.is_open()) {
        char line[128];
        std::snprintf(line, sizeof(line), "%d,%d,%.17g,%.17g\n", epoch, ep, loss, lr);
        log << line << std::flush;
      }
      if (opts.on_episode) opts.on_episode(rec);
    }
    state.epochs_done = epoch;
    if (!opts.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.pkws", epoch);
      save_train_state(state, opts.checkpoint_dir / name);
      save_train_state(state, opts.checkpoint_dir / "last.pkws");
    }
  }
  return trace;
}

}  // namespace pkws::train
