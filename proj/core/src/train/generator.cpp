#include "pkws/train/generator.hpp"

#include <cmath>

#include "pkws/error.hpp"
#include "pkws/rng.hpp"

namespace pkws::train {
namespace {

void uniform_init(nn::Tensor& t, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value[i] = dist(rng);
}

using RowMap = Eigen::Map<const nn::RowMatrix>;
using MutRowMap = Eigen::Map<nn::RowMatrix>;

}  // namespace

DummyProtoGenerator::DummyProtoGenerator(int dim, int heads, std::uint64_t seed)
    : dim_(dim),
      heads_(heads),
      w1_("w1", {dim, 2 * dim}),
      b1_("b1", {dim}),
      w2_("w2", {dim + heads, dim}),
      b2_("b2", {dim + heads}) {
  if (dim < 1 || heads < 1) throw ValidationError("generator dim and heads must be positive");
  Rng rng(derive_seed(seed, {0x67656EULL}));
  uniform_init(w1_, 2 * dim, rng);
  uniform_init(w2_, dim, rng);
}

Eigen::MatrixXd DummyProtoGenerator::run(const Eigen::MatrixXd& protos, Trace* trace) const {
  if (protos.cols() != dim_) throw ValidationError("generator input dimension mismatch");
  if (protos.rows() < 1) throw ValidationError("generator needs at least one prototype");
  const Eigen::Index n = protos.rows();
  Eigen::MatrixXd input(n, 2 * dim_);
  input.leftCols(dim_) = protos;
  input.rightCols(dim_) = protos.colwise().mean().replicate(n, 1);
  const RowMap w1(w1_.value.data(), dim_, 2 * dim_);
  const RowMap w2(w2_.value.data(), dim_ + heads_, dim_);
  Eigen::MatrixXd hidden = (input * w1.transpose()).rowwise() + b1_.value.transpose();
  const Eigen::MatrixXd act = hidden.cwiseMax(0.0);
  const Eigen::MatrixXd out = (act * w2.transpose()).rowwise() + b2_.value.transpose();
  Eigen::MatrixXd values = out.leftCols(dim_);
  Eigen::MatrixXd attn = out.rightCols(heads_);
  for (Eigen::Index k = 0; k < heads_; ++k) {
    const double mx = attn.col(k).maxCoeff();
    attn.col(k) = (attn.col(k).array() - mx).exp().matrix();
    attn.col(k) /= attn.col(k).sum();
  }
  Eigen::MatrixXd dummies = attn.transpose() * values;
  if (trace != nullptr) *trace = Trace{std::move(input), std::move(hidden), std::move(values), std::move(attn)};
  return dummies;
}

Eigen::MatrixXd DummyProtoGenerator::generate(const Eigen::MatrixXd& prototypes) const {
  return run(prototypes, nullptr);
}

Eigen::MatrixXd DummyProtoGenerator::forward(const Eigen::MatrixXd& prototypes) { return run(prototypes, &trace_); }

Eigen::MatrixXd DummyProtoGenerator::backward(const Eigen::MatrixXd& grad_dummies) {
  const Trace& t = trace_;
  const Eigen::Index n = t.input.rows();
  const Eigen::MatrixXd dvalues = t.attn * grad_dummies;                // N x dim
  const Eigen::MatrixXd dattn = t.values * grad_dummies.transpose();    // N x heads
  Eigen::MatrixXd dlogits(n, heads_);
  for (Eigen::Index k = 0; k < heads_; ++k) {
    const double inner = t.attn.col(k).dot(dattn.col(k));
    dlogits.col(k) = t.attn.col(k).array() * (dattn.col(k).array() - inner);
  }
  Eigen::MatrixXd dout(n, dim_ + heads_);
  dout.leftCols(dim_) = dvalues;
  dout.rightCols(heads_) = dlogits;

  const Eigen::MatrixXd act = t.hidden.cwiseMax(0.0);
  MutRowMap(w2_.grad.data(), dim_ + heads_, dim_) += dout.transpose() * act;
  b2_.grad += dout.colwise().sum().transpose();
  const RowMap w2(w2_.value.data(), dim_ + heads_, dim_);
  const Eigen::MatrixXd dhidden = (t.hidden.array() > 0.0).select(dout * w2, 0.0);
  MutRowMap(w1_.grad.data(), dim_, 2 * dim_) += dhidden.transpose() * t.input;
  b1_.grad += dhidden.colwise().sum().transpose();
  const RowMap w1(w1_.value.data(), dim_, 2 * dim_);
  const Eigen::MatrixXd dinput = dhidden * w1;
  Eigen::MatrixXd dprotos = dinput.leftCols(dim_);
  dprotos.rowwise() += dinput.rightCols(dim_).colwise().sum() / static_cast<double>(n);
  return dprotos;
}

std::vector<nn::Tensor*> DummyProtoGenerator::parameters() { return {&w1_, &b1_, &w2_, &b2_}; }

std::vector<const nn::Tensor*> DummyProtoGenerator::parameters() const { return {&w1_, &b1_, &w2_, &b2_}; }

void DummyProtoGenerator::zero_grad() {
  for (nn::Tensor* t : parameters()) t->grad.setZero();
}

void DummyProtoGenerator::store(nn::Container& c, const std::string& prefix) const {
  c.meta[prefix + "dim"] = std::to_string(dim_);
  c.meta[prefix + "heads"] = std::to_string(heads_);
  for (const nn::Tensor* t : parameters()) {
    c.put(prefix + t->name, {t->shape.begin(), t->shape.end()},
          {t->value.data(), static_cast<std::size_t>(t->size())});
  }
}

DummyProtoGenerator DummyProtoGenerator::restore(const nn::Container& c, const std::string& prefix) {
  DummyProtoGenerator g(static_cast<int>(c.meta_int(prefix + "dim")), static_cast<int>(c.meta_int(prefix + "heads")), 0);
  for (nn::Tensor* t : g.parameters()) {
    const nn::Record& r = c.get(prefix + t->name);
    if (r.shape != std::vector<std::uint64_t>(t->shape.begin(), t->shape.end())) {
      throw ValidationError("shape mismatch for generator tensor '" + t->name + "'");
    }
    t->value = Eigen::Map<const Eigen::VectorXd>(r.data.data(), static_cast<Eigen::Index>(r.data.size()));
  }
  return g;
}

EmbeddingLoss dproto_episode_loss(const Eigen::MatrixXd& embeddings, const EpisodeLayout& layout, int unknown_classes,
                                  DummyProtoGenerator& generator) {
  layout.validate(LossKind::kDProto);
  if (embeddings.rows() != layout.rows()) throw ValidationError("embedding rows do not match the episode layout");
  const int known = layout.classes - unknown_classes;
  if (unknown_classes < 1 || known < 2) {
    throw ValidationError("dummy-prototype episodes need >= 1 unknown and >= 2 known classes");
  }
  auto support = layout.support_groups();
  support.resize(static_cast<std::size_t>(known));
  const Eigen::MatrixXd protos = compute_prototypes(embeddings, support);
  const Eigen::MatrixXd dummies = generator.forward(protos);

  EmbeddingLoss out;
  out.grad = Eigen::MatrixXd::Zero(embeddings.rows(), embeddings.cols());
  Eigen::MatrixXd dprotos = Eigen::MatrixXd::Zero(protos.rows(), protos.cols());
  Eigen::MatrixXd ddummies = Eigen::MatrixXd::Zero(dummies.rows(), dummies.cols());

  const double scale = 1.0 / static_cast<double>(layout.classes * layout.query);
  Eigen::RowVectorXd logits(known + 1), dlogits;
  std::vector<Eigen::RowVectorXd> dirs(static_cast<std::size_t>(known + 1));
  for (int c = 0; c < layout.classes; ++c) {
    const int label = c < known ? c + 1 : 0;
    for (int i = 0; i < layout.query; ++i) {
      const int row = layout.query_row(c, i);
      const Eigen::RowVectorXd q = embeddings.row(row);
      // Unknown logit: closest dummy.
      Eigen::Index best = 0;
      double best_d = 0.0;
      Eigen::RowVectorXd best_diff;
      for (Eigen::Index k = 0; k < dummies.rows(); ++k) {
        Eigen::RowVectorXd diff = q - dummies.row(k);
        const double d = diff.norm();
        if (k == 0 || d < best_d) {
          best = k;
          best_d = d;
          best_diff = std::move(diff);
        }
      }
      logits[0] = -best_d;
      dirs[0] = best_d > 1e-12 ? Eigen::RowVectorXd(best_diff / best_d) : Eigen::RowVectorXd::Zero(q.size());
      for (int k = 0; k < known; ++k) {
        const Eigen::RowVectorXd diff = q - protos.row(k);
        const double d = diff.norm();
        logits[k + 1] = -d;
        dirs[static_cast<std::size_t>(k + 1)] = d > 1e-12 ? Eigen::RowVectorXd(diff / d) : Eigen::RowVectorXd::Zero(q.size());
      }
      out.loss += softmax_cross_entropy(logits, label, dlogits) * scale;
      for (int k = 0; k <= known; ++k) {
        const double g = dlogits[k] * scale;
        out.grad.row(row) -= g * dirs[static_cast<std::size_t>(k)];
        if (k == 0) {
          ddummies.row(best) += g * dirs[0];
        } else {
          dprotos.row(k - 1) += g * dirs[static_cast<std::size_t>(k)];
        }
      }
    }
  }
  dprotos += generator.backward(ddummies);
  for (int c = 0; c < known; ++c) {
    for (int r : support[static_cast<std::size_t>(c)]) out.grad.row(r) += dprotos.row(c) / static_cast<double>(layout.support);
  }
  return out;
}

}  // namespace pkws::train
