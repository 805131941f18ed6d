#include "pkws/synth/experiment.hpp"

#include <chrono>
#include <memory>

#include "pkws/error.hpp"

namespace pkws::synth {

ClassRoles class_roles(const CorpusConfig& cfg) {
  if (cfg.classes != 30) throw ValidationError("the synthetic protocol expects a 30-class corpus");
  ClassRoles r;
  for (int c = 0; c < 30; ++c) {
    const std::string name = class_name(c);
    if (c < 20) r.train.push_back(name);
    if (c >= 20) r.positive.push_back(name);
    if (c < 15) r.negative.push_back(name);
    if (c >= 15 && c < 20) r.filler.push_back(name);
  }
  return r;
}

train::TrainOptions experiment_options(const Corpus& corpus, train::LossKind kind, std::uint64_t seed) {
  train::TrainOptions o;
  o.loss.kind = kind;
  o.layout = kind == train::LossKind::kTL ? train::EpisodeLayout{20, 5, 0} : train::EpisodeLayout{10, 3, 7};
  if (kind == train::LossKind::kDProto) o.loss.dproto_unknown_classes = 4;
  o.schedule.epochs = 5;
  o.schedule.episodes_per_epoch = 100;
  o.schedule.decay_after_epochs = 3;
  o.schedule.seed = seed;
  o.augmentation.snr_low_db = 10.0;
  o.augmentation.snr_high_db = 20.0;
  o.augmentation.noise_pool = std::make_shared<const std::vector<dsp::Waveform>>(corpus.noise);
  return o;
}

eval::EvalProtocol experiment_protocol(const CorpusConfig& cfg, std::uint64_t seed) {
  const ClassRoles roles = class_roles(cfg);
  eval::EvalProtocol p;
  p.shots = 10;
  p.positive = roles.positive;
  p.negative = roles.negative;
  p.filler = roles.filler;
  p.repetitions = 10;
  p.far_target = 0.05;
  p.seed = seed;
  return p;
}

ExperimentResult run_experiment(const CorpusConfig& cfg, const Corpus& corpus, train::LossKind kind, nn::Head head,
                                std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  const ClassRoles roles = class_roles(cfg);
  const train::Dataset train_set = corpus.train.select_classes(roles.train);
  const train::TrainOptions opts = experiment_options(corpus, kind, seed);
  train::TrainState state(nn::Encoder(nn::EncoderConfig::small(head), seed), opts.loss, seed);

  ExperimentResult result;
  const auto t0 = clock::now();
  result.trace = train::train(state, train_set, opts);
  const auto t1 = clock::now();

  eval::ClassifierSetup setup;
  setup.normalize = kind == train::LossKind::kAP;
  if (kind == train::LossKind::kDProto) {
    setup.kind = openset::ClassifierKind::kDProto;
    setup.generator = &*state.generator;
  }
  result.report = eval::run_eval(state.encoder, setup, experiment_protocol(cfg, seed), corpus.train, corpus.test, opts.frontend);
  const auto t2 = clock::now();
  result.train_seconds = std::chrono::duration<double>(t1 - t0).count();
  result.eval_seconds = std::chrono::duration<double>(t2 - t1).count();
  return result;
}

}  // namespace pkws::synth
