#include "pkws/train/losses.hpp"

#include <cmath>

#include "pkws/error.hpp"

namespace pkws::train {
namespace {

constexpr double kCoincident = 1e-12;

void check_labels(std::span<const int> labels, Eigen::Index queries, Eigen::Index classes) {
  if (static_cast<Eigen::Index>(labels.size()) != queries) throw ValidationError("one label per query is required");
  if (classes < 2) throw ValidationError("prototype losses need at least 2 classes");
  for (int y : labels) {
    if (y < 0 || y >= classes) throw ValidationError("query label outside the episode classes");
  }
}

// Scatters prototype gradients back onto the support rows that were averaged.
void scatter_prototype_grad(const Eigen::MatrixXd& grad_protos, const std::vector<std::vector<int>>& groups,
                            Eigen::MatrixXd& grad) {
  for (std::size_t j = 0; j < groups.size(); ++j) {
    const double inv = 1.0 / static_cast<double>(groups[j].size());
    for (int r : groups[j]) grad.row(r) += inv * grad_protos.row(static_cast<Eigen::Index>(j));
  }
}

struct QuerySplit {
  Eigen::MatrixXd queries;
  std::vector<int> labels;
  std::vector<int> rows;
};

QuerySplit gather_queries(const Eigen::MatrixXd& e, const EpisodeLayout& layout) {
  QuerySplit s;
  s.queries.resize(static_cast<Eigen::Index>(layout.classes) * layout.query, e.cols());
  Eigen::Index q = 0;
  for (int c = 0; c < layout.classes; ++c) {
    for (int i = 0; i < layout.query; ++i, ++q) {
      const int row = layout.query_row(c, i);
      s.queries.row(q) = e.row(row);
      s.labels.push_back(c);
      s.rows.push_back(row);
    }
  }
  return s;
}

EmbeddingLoss finish_episode(const PrototypeLoss& pl, const QuerySplit& split, const EpisodeLayout& layout,
                             Eigen::Index rows, Eigen::Index dim) {
  EmbeddingLoss out;
  out.loss = pl.loss;
  out.grad_w = pl.grad_w;
  out.grad_b = pl.grad_b;
  out.grad = Eigen::MatrixXd::Zero(rows, dim);
  for (std::size_t q = 0; q < split.rows.size(); ++q) out.grad.row(split.rows[q]) += pl.grad_queries.row(static_cast<Eigen::Index>(q));
  scatter_prototype_grad(pl.grad_prototypes, layout.support_groups(), out.grad);
  return out;
}

}  // namespace

Eigen::MatrixXd compute_prototypes(const Eigen::MatrixXd& embeddings, const std::vector<std::vector<int>>& groups) {
  Eigen::MatrixXd protos = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(groups.size()), embeddings.cols());
  for (std::size_t j = 0; j < groups.size(); ++j) {
    if (groups[j].empty()) throw ValidationError("cannot compute a prototype for an empty class group");
    for (int r : groups[j]) protos.row(static_cast<Eigen::Index>(j)) += embeddings.row(r);
    protos.row(static_cast<Eigen::Index>(j)) /= static_cast<double>(groups[j].size());
  }
  return protos;
}

double euclidean(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  return (a - b).norm();
}

double softmax_cross_entropy(const Eigen::Ref<const Eigen::RowVectorXd>& logits, int label,
                             Eigen::RowVectorXd& grad) {
  const double mx = logits.maxCoeff();
  grad = (logits.array() - mx).exp().matrix();
  const double z = grad.sum();
  grad /= z;
  const double loss = std::log(z) - (logits[label] - mx);
  grad[label] -= 1.0;
  return loss;
}

PrototypeLoss pn_loss(const Eigen::MatrixXd& queries, std::span<const int> labels, const Eigen::MatrixXd& prototypes) {
  check_labels(labels, queries.rows(), prototypes.rows());
  const Eigen::Index nq = queries.rows(), m = prototypes.rows();
  PrototypeLoss out;
  out.grad_queries = Eigen::MatrixXd::Zero(nq, queries.cols());
  out.grad_prototypes = Eigen::MatrixXd::Zero(m, prototypes.cols());
  Eigen::RowVectorXd logits(m), dlogits;
  std::vector<Eigen::RowVectorXd> dirs(static_cast<std::size_t>(m));
  const double scale = 1.0 / static_cast<double>(nq);
  for (Eigen::Index q = 0; q < nq; ++q) {
    for (Eigen::Index k = 0; k < m; ++k) {
      Eigen::RowVectorXd diff = queries.row(q) - prototypes.row(k);
      const double d = diff.norm();
      logits[k] = -d;
      dirs[static_cast<std::size_t>(k)] = d > kCoincident ? Eigen::RowVectorXd(diff / d) : Eigen::RowVectorXd::Zero(diff.size());
    }
    out.loss += softmax_cross_entropy(logits, labels[static_cast<std::size_t>(q)], dlogits) * scale;
    for (Eigen::Index k = 0; k < m; ++k) {
      // d(logit_k)/dq = -dir_k, d(logit_k)/dc_k = +dir_k
      const double g = dlogits[k] * scale;
      out.grad_queries.row(q) -= g * dirs[static_cast<std::size_t>(k)];
      out.grad_prototypes.row(k) += g * dirs[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

PrototypeLoss ap_loss(const Eigen::MatrixXd& queries, std::span<const int> labels, const Eigen::MatrixXd& prototypes,
                      double w, double b, double margin) {
  check_labels(labels, queries.rows(), prototypes.rows());
  const Eigen::Index nq = queries.rows(), m = prototypes.rows();
  Eigen::VectorXd pnorm(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    pnorm[k] = prototypes.row(k).norm();
    if (!(pnorm[k] > kCoincident)) throw ValidationError("angular loss: zero-norm prototype (cosine undefined)");
  }
  PrototypeLoss out;
  out.grad_queries = Eigen::MatrixXd::Zero(nq, queries.cols());
  out.grad_prototypes = Eigen::MatrixXd::Zero(m, prototypes.cols());
  Eigen::RowVectorXd cosines(m), logits(m), dlogits;
  const double scale = 1.0 / static_cast<double>(nq);
  for (Eigen::Index q = 0; q < nq; ++q) {
    const auto x = queries.row(q);
    const double xn = x.norm();
    if (!(xn > kCoincident)) throw ValidationError("angular loss: zero-norm query embedding (cosine undefined)");
    const int y = labels[static_cast<std::size_t>(q)];
    for (Eigen::Index k = 0; k < m; ++k) {
      cosines[k] = x.dot(prototypes.row(k)) / (xn * pnorm[k]);
      logits[k] = w * (cosines[k] - (k == y ? margin : 0.0)) + b;
    }
    out.loss += softmax_cross_entropy(logits, y, dlogits) * scale;
    for (Eigen::Index k = 0; k < m; ++k) {
      const double g = dlogits[k] * scale;
      out.grad_w += g * (cosines[k] - (k == y ? margin : 0.0));
      out.grad_b += g;
      const double gc = g * w;
      const auto c = prototypes.row(k);
      out.grad_queries.row(q) += gc * (c / (xn * pnorm[k]) - cosines[k] * x / (xn * xn));
      out.grad_prototypes.row(k) += gc * (x / (xn * pnorm[k]) - cosines[k] * c / (pnorm[k] * pnorm[k]));
    }
  }
  return out;
}

std::vector<Triplet> sample_triplets(const std::vector<std::vector<int>>& groups, Rng& rng) {
  if (groups.size() < 2) throw ValidationError("triplet sampling needs at least 2 classes");
  std::size_t total = 0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw ValidationError("triplet sampling needs at least 2 samples per class");
    total += g.size();
  }
  std::vector<Triplet> out;
  out.reserve(total);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    const auto& g = groups[c];
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::uniform_int_distribution<std::size_t> pos(0, g.size() - 2);
      std::size_t p = pos(rng);
      if (p >= i) ++p;
      std::uniform_int_distribution<std::size_t> other(0, groups.size() - 2);
      std::size_t nc = other(rng);
      if (nc >= c) ++nc;
      const auto& ng = groups[nc];
      std::uniform_int_distribution<std::size_t> neg(0, ng.size() - 1);
      out.push_back({g[i], g[p], ng[neg(rng)]});
    }
  }
  return out;
}

EmbeddingLoss tl_loss(const Eigen::MatrixXd& embeddings, std::span<const Triplet> triplets, double margin) {
  if (triplets.empty()) throw ValidationError("triplet loss needs at least one triplet");
  EmbeddingLoss out;
  out.grad = Eigen::MatrixXd::Zero(embeddings.rows(), embeddings.cols());
  const double scale = 1.0 / static_cast<double>(triplets.size());
  for (const Triplet& t : triplets) {
    const Eigen::RowVectorXd ap = embeddings.row(t.anchor) - embeddings.row(t.positive);
    const Eigen::RowVectorXd an = embeddings.row(t.anchor) - embeddings.row(t.negative);
    const double dp = ap.norm(), dn = an.norm();
    const double term = dp - dn + margin;
    if (term <= 0.0) continue;
    out.loss += term * scale;
    const Eigen::RowVectorXd up = dp > kCoincident ? Eigen::RowVectorXd(ap / dp) : Eigen::RowVectorXd::Zero(ap.size());
    const Eigen::RowVectorXd un = dn > kCoincident ? Eigen::RowVectorXd(an / dn) : Eigen::RowVectorXd::Zero(an.size());
    out.grad.row(t.anchor) += scale * (up - un);
    out.grad.row(t.positive) -= scale * up;
    out.grad.row(t.negative) += scale * un;
  }
  return out;
}

EmbeddingLoss pn_episode_loss(const Eigen::MatrixXd& embeddings, const EpisodeLayout& layout) {
  layout.validate(LossKind::kPN);
  if (embeddings.rows() != layout.rows()) throw ValidationError("embedding rows do not match the episode layout");
  const Eigen::MatrixXd protos = compute_prototypes(embeddings, layout.support_groups());
  const QuerySplit split = gather_queries(embeddings, layout);
  const PrototypeLoss pl = pn_loss(split.queries, split.labels, protos);
  return finish_episode(pl, split, layout, embeddings.rows(), embeddings.cols());
}

EmbeddingLoss ap_episode_loss(const Eigen::MatrixXd& embeddings, const EpisodeLayout& layout, double w, double b,
                              double margin) {
  layout.validate(LossKind::kAP);
  if (embeddings.rows() != layout.rows()) throw ValidationError("embedding rows do not match the episode layout");
  const Eigen::MatrixXd protos = compute_prototypes(embeddings, layout.support_groups());
  const QuerySplit split = gather_queries(embeddings, layout);
  const PrototypeLoss pl = ap_loss(split.queries, split.labels, protos, w, b, margin);
  return finish_episode(pl, split, layout, embeddings.rows(), embeddings.cols());
}

}  // namespace pkws::train
