#pragma once

#include <cstdint>
#include <vector>

#include "pkws/eval/harness.hpp"
#include "pkws/nn/encoder.hpp"
#include "pkws/synth/corpus.hpp"
#include "pkws/train/trainer.hpp"

namespace pkws::synth {

/// Class roles on the synthetic corpus: kw00..kw19 train the encoder,
/// kw20..kw29 are the enrolled keywords, kw00..kw14 provide the negative test
/// utterances and kw15..kw19 the openNCM filler.
struct ClassRoles {
  std::vector<std::string> train, positive, negative, filler;
};
ClassRoles class_roles(const CorpusConfig& cfg);

/// Desk-scale schedule: 5 epochs x 100 episodes of 100 rows, lr decay after
/// epoch 3, noise augmentation at 10-20 dB from the corpus noise pool.
/// TL draws 20 classes x 5 utterances; PN/AP/DProto draw 10 x (3 + 7).
train::TrainOptions experiment_options(const Corpus& corpus, train::LossKind kind, std::uint64_t seed);

/// 10-shot 10-way, 10 repetitions, FAR target 5%.
eval::EvalProtocol experiment_protocol(const CorpusConfig& cfg, std::uint64_t seed);

struct ExperimentResult {
  std::vector<train::EpisodeRecord> trace;
  eval::EvalReport report;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

/// Trains a DSCNN-S encoder with the given loss and head on the train roles,
/// then evaluates openNCM (or DProto for the DProto loss) on the keyword roles.
ExperimentResult run_experiment(const CorpusConfig& cfg, const Corpus& corpus, train::LossKind kind, nn::Head head,
                                std::uint64_t seed);

}  // namespace pkws::synth
