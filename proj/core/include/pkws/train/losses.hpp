#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "pkws/rng.hpp"
#include "pkws/train/episode.hpp"

namespace pkws::train {

/// Class means of embedding rows; `groups[j]` lists the rows of class j.
Eigen::MatrixXd compute_prototypes(const Eigen::MatrixXd& embeddings, const std::vector<std::vector<int>>& groups);

/// Euclidean distance and the unit direction (a - b)/|a - b|; the direction is
/// zero when the points coincide (subgradient).
double euclidean(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b);

/// -log softmax(logits)[label] and its gradient w.r.t. the logits.
double softmax_cross_entropy(const Eigen::Ref<const Eigen::RowVectorXd>& logits, int label,
                             Eigen::RowVectorXd& grad);

struct PrototypeLoss {
  double loss = 0.0;
  Eigen::MatrixXd grad_queries;
  Eigen::MatrixXd grad_prototypes;
  double grad_w = 0.0;  // angular loss only
  double grad_b = 0.0;
};

/// Mean cross-entropy over queries with logits -|q - c_k| (true Euclidean distance).
PrototypeLoss pn_loss(const Eigen::MatrixXd& queries, std::span<const int> labels, const Eigen::MatrixXd& prototypes);

/// Angular prototypical loss: logits w*cos(q, c_j) + b, with the true-class
/// logit w*(cos - margin) + b. Throws ValidationError on zero-norm vectors.
PrototypeLoss ap_loss(const Eigen::MatrixXd& queries, std::span<const int> labels, const Eigen::MatrixXd& prototypes,
                      double w, double b, double margin);

struct Triplet {
  int anchor = 0;
  int positive = 0;
  int negative = 0;
};

/// One triplet per row: positive drawn from the same group (not the anchor),
/// negative from any other group.
std::vector<Triplet> sample_triplets(const std::vector<std::vector<int>>& groups, Rng& rng);

struct EmbeddingLoss {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // d loss / d embeddings
  double grad_w = 0.0;
  double grad_b = 0.0;
};

/// mean over triplets of max(0, |a - p| - |a - n| + margin).
EmbeddingLoss tl_loss(const Eigen::MatrixXd& embeddings, std::span<const Triplet> triplets, double margin);

/// Episode-level wrappers: prototypes from support rows, loss on query rows,
/// gradients routed back to both through the prototype mean.
EmbeddingLoss pn_episode_loss(const Eigen::MatrixXd& embeddings, const EpisodeLayout& layout);
EmbeddingLoss ap_episode_loss(const Eigen::MatrixXd& embeddings, const EpisodeLayout& layout, double w, double b,
                              double margin);

}  // namespace pkws::train
