#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "pkws/nn/container.hpp"
#include "pkws/nn/tensor.hpp"
#include "pkws/train/losses.hpp"

namespace pkws::train {

/// Permutation-invariant set function mapping N known prototypes to a fixed
/// number of dummy "unknown" prototypes.
///
/// Each prototype is concatenated with the set mean and passed through a
/// shared two-layer perceptron (hidden width = dim, ReLU). The output row
/// splits into a value vector (dim) and one attention logit per head; head k
/// is the softmax(over prototypes)-weighted sum of the value vectors.
class DummyProtoGenerator {
 public:
  DummyProtoGenerator(int dim, int heads, std::uint64_t seed);

  int dim() const noexcept { return dim_; }
  int heads() const noexcept { return heads_; }

  /// heads x dim dummy prototypes; pure.
  Eigen::MatrixXd generate(const Eigen::MatrixXd& prototypes) const;
  /// Recording variant for training.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& prototypes);
  /// Accumulates parameter gradients; returns d loss / d prototypes.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& grad_dummies);

  std::vector<nn::Tensor*> parameters();
  std::vector<const nn::Tensor*> parameters() const;
  void zero_grad();

  void store(nn::Container& c, const std::string& prefix = "generator.") const;
  static DummyProtoGenerator restore(const nn::Container& c, const std::string& prefix = "generator.");

 private:
  struct Trace {
    Eigen::MatrixXd input;   // N x 2dim
    Eigen::MatrixXd hidden;  // N x dim, pre-activation
    Eigen::MatrixXd values;  // N x dim
    Eigen::MatrixXd attn;    // N x heads, softmax over rows
  };
  Eigen::MatrixXd run(const Eigen::MatrixXd& prototypes, Trace* trace) const;

  int dim_;
  int heads_;
  nn::Tensor w1_, b1_, w2_, b2_;
  Trace trace_;
};

/// Joint prototype/dummy objective on a prototype-style episode. The last
/// `unknown_classes` class slots are relabeled "unknown" (label 0): their
/// queries must prefer the closest dummy prototype over every known prototype.
/// Known prototypes come from the support rows of the remaining classes.
/// Returns embedding gradients and accumulates generator gradients.
EmbeddingLoss dproto_episode_loss(const Eigen::MatrixXd& embeddings, const EpisodeLayout& layout,
                                  int unknown_classes, DummyProtoGenerator& generator);

}  // namespace pkws::train
