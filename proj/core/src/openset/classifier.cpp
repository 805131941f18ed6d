#include "pkws/openset/classifier.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <sstream>

#include "pkws/error.hpp"

namespace pkws::openset {
namespace {

Eigen::RowVectorXd unit(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  return v / std::max(v.norm(), 1e-12);
}

Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = unit(m.row(i));
  return out;
}

ScoreVector softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  ScoreVector p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += p[i] = std::exp(logits[i] - mx);
  for (double& v : p) v /= z;
  return p;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) out.push_back(item);
  return out;
}

}  // namespace

std::string to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::kOpenNcm: return "openNCM";
    case ClassifierKind::kOpenMax: return "OpenMAX";
    case ClassifierKind::kDProto: return "DProto";
  }
  return "?";
}

ClassifierKind parse_classifier_kind(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (u == "openncm" || u == "ncm") return ClassifierKind::kOpenNcm;
  if (u == "openmax") return ClassifierKind::kOpenMax;
  if (u == "dproto") return ClassifierKind::kDProto;
  throw ValidationError("unknown classifier '" + s + "' (expected openNCM, OpenMAX or DProto)");
}

Enrollment enroll(std::span<const Eigen::MatrixXd> shots, ClassifierKind kind, const EnrollOptions& opts) {
  if (shots.empty()) throw ValidationError("enrollment needs at least one keyword");
  const Eigen::Index dim = shots.front().cols();
  const Eigen::Index k = shots.front().rows();
  Enrollment enr;
  enr.kind = kind;
  enr.normalize = opts.normalize;
  enr.shots = static_cast<int>(k);
  enr.prototypes.resize(static_cast<Eigen::Index>(shots.size()), dim);
  for (std::size_t i = 0; i < shots.size(); ++i) {
    if (shots[i].rows() < 1) throw ValidationError("keyword " + std::to_string(i + 1) + " has no enrollment shots");
    if (shots[i].cols() != dim) throw ValidationError("enrollment embeddings differ in dimension");
    enr.shots = std::min(enr.shots, static_cast<int>(shots[i].rows()));
    enr.prototypes.row(static_cast<Eigen::Index>(i)) = shots[i].colwise().mean();
  }
  if (opts.class_names.empty()) {
    for (std::size_t i = 0; i < shots.size(); ++i) enr.class_names.push_back("keyword" + std::to_string(i + 1));
  } else {
    if (opts.class_names.size() != shots.size()) throw ValidationError("one class name per keyword is required");
    enr.class_names = opts.class_names;
  }

  switch (kind) {
    case ClassifierKind::kOpenNcm:
      if (opts.filler.rows() < 1) throw ValidationError("openNCM enrollment needs filler embeddings for c_0");
      if (opts.filler.cols() != dim) throw ValidationError("filler embeddings differ in dimension");
      enr.unknown_prototypes = opts.filler.colwise().mean();
      break;
    case ClassifierKind::kDProto:
      if (opts.generator == nullptr) throw ValidationError("DProto enrollment needs a dummy-prototype generator");
      if (opts.generator->dim() != dim) throw ValidationError("generator dimension does not match the embeddings");
      enr.unknown_prototypes = opts.generator->generate(enr.prototypes);
      break;
    case ClassifierKind::kOpenMax: {
      if (opts.tail_size < 2) throw ValidationError("OpenMAX tail size must be >= 2");
      for (std::size_t i = 0; i < shots.size(); ++i) {
        const Eigen::RowVectorXd c =
            opts.normalize ? unit(enr.prototypes.row(static_cast<Eigen::Index>(i))) : Eigen::RowVectorXd(enr.prototypes.row(static_cast<Eigen::Index>(i)));
        std::vector<double> d;
        for (Eigen::Index r = 0; r < shots[i].rows(); ++r) {
          const Eigen::RowVectorXd e = opts.normalize ? unit(shots[i].row(r)) : Eigen::RowVectorXd(shots[i].row(r));
          d.push_back((e - c).norm());
        }
        std::sort(d.begin(), d.end(), std::greater<>());
        if (d.size() < static_cast<std::size_t>(opts.tail_size)) enr.few_shot_warning = true;
        if (d.size() > static_cast<std::size_t>(opts.tail_size)) d.resize(static_cast<std::size_t>(opts.tail_size));
        if (d.size() < 2) {
          WeibullTail step;
          step.degenerate = true;
          step.step_at = d.front();
          step.shift = d.front();
          enr.tails.push_back(step);
        } else {
          enr.tails.push_back(fit_weibull_tail(d));
        }
      }
      break;
    }
  }
  return enr;
}

ScoreVector score(const Enrollment& enr, const Eigen::Ref<const Eigen::RowVectorXd>& embedding) {
  if (embedding.size() != enr.dim()) {
    throw ValidationError("embedding dimension " + std::to_string(embedding.size()) +
                          " does not match enrollment dimension " + std::to_string(enr.dim()));
  }
  const Eigen::RowVectorXd e = enr.normalize ? unit(embedding) : Eigen::RowVectorXd(embedding);
  const Eigen::MatrixXd protos = enr.normalize ? unit_rows(enr.prototypes) : enr.prototypes;
  const int n = enr.ways();
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = (e - protos.row(i)).norm();

  std::vector<double> logits(static_cast<std::size_t>(n + 1));
  if (enr.kind == ClassifierKind::kOpenMax) {
    double unknown = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = dist[static_cast<std::size_t>(i)];
      const double w = enr.tails.at(static_cast<std::size_t>(i)).cdf(d);
      logits[static_cast<std::size_t>(i + 1)] = -w * d;
      unknown -= (1.0 - w) * d;
    }
    logits[0] = unknown;
  } else {
    const Eigen::MatrixXd unknowns = enr.normalize ? unit_rows(enr.unknown_prototypes) : enr.unknown_prototypes;
    if (unknowns.rows() < 1) throw ValidationError("enrollment has no unknown prototype");
    double closest = (e - unknowns.row(0)).norm();
    for (Eigen::Index k = 1; k < unknowns.rows(); ++k) closest = std::min(closest, (e - unknowns.row(k)).norm());
    logits[0] = -closest;
    for (int i = 0; i < n; ++i) logits[static_cast<std::size_t>(i + 1)] = -dist[static_cast<std::size_t>(i)];
  }
  return softmax(logits);
}

int decide(std::span<const double> p, double gamma) {
  if (p.empty()) return 0;
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  if (best == 0) return 0;
  return p[best] >= gamma ? static_cast<int>(best) : 0;
}

double detection_score(std::span<const double> p) {
  if (p.size() < 2) return 0.0;
  return *std::max_element(p.begin() + 1, p.end());
}

void store_enrollment(nn::Container& c, const Enrollment& enr, const std::string& prefix) {
  c.meta[prefix + "classifier"] = to_string(enr.kind);
  c.meta[prefix + "shots"] = std::to_string(enr.shots);
  c.meta[prefix + "normalize"] = enr.normalize ? "1" : "0";
  c.meta[prefix + "few_shot_warning"] = enr.few_shot_warning ? "1" : "0";
  std::string names;
  for (std::size_t i = 0; i < enr.class_names.size(); ++i) {
    if (enr.class_names[i].find(',') != std::string::npos) throw ValidationError("class names may not contain ','");
    names += (i ? "," : "") + enr.class_names[i];
  }
  c.meta[prefix + "classes"] = names;
  auto put_matrix = [&](const std::string& name, const Eigen::MatrixXd& m) {
    const nn::RowMatrix rm = m;
    c.put(prefix + name, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
          {rm.data(), static_cast<std::size_t>(rm.size())});
  };
  put_matrix("prototypes", enr.prototypes);
  if (enr.unknown_prototypes.size() > 0) put_matrix("unknown_prototypes", enr.unknown_prototypes);
  if (!enr.tails.empty()) {
    Eigen::MatrixXd t(static_cast<Eigen::Index>(enr.tails.size()), 5);
    for (std::size_t i = 0; i < enr.tails.size(); ++i) {
      const auto& w = enr.tails[i];
      t.row(static_cast<Eigen::Index>(i)) << w.shape, w.scale, w.shift, w.degenerate ? 1.0 : 0.0, w.step_at;
    }
    put_matrix("weibull", t);
  }
}

Enrollment restore_enrollment(const nn::Container& c, const std::string& prefix) {
  Enrollment enr;
  enr.kind = parse_classifier_kind(c.meta_at(prefix + "classifier"));
  enr.shots = static_cast<int>(c.meta_int(prefix + "shots"));
  enr.normalize = c.meta_at(prefix + "normalize") == "1";
  enr.few_shot_warning = c.meta_at(prefix + "few_shot_warning") == "1";
  enr.class_names = split(c.meta_at(prefix + "classes"), ',');
  auto get_matrix = [&](const std::string& name) {
    const nn::Record& r = c.get(prefix + name);
    if (r.shape.size() != 2) throw ValidationError("enrollment tensor '" + name + "' must be 2-D");
    return Eigen::MatrixXd(Eigen::Map<const nn::RowMatrix>(r.data.data(), static_cast<Eigen::Index>(r.shape[0]),
                                                           static_cast<Eigen::Index>(r.shape[1])));
  };
  enr.prototypes = get_matrix("prototypes");
  if (static_cast<int>(enr.class_names.size()) != enr.ways()) {
    throw ValidationError("enrollment class list does not match the prototype count");
  }
  if (enr.kind != ClassifierKind::kOpenMax) {
    enr.unknown_prototypes = get_matrix("unknown_prototypes");
    if (enr.unknown_prototypes.cols() != enr.dim()) throw ValidationError("unknown prototype dimension mismatch");
  } else {
    const Eigen::MatrixXd t = get_matrix("weibull");
    if (t.rows() != enr.ways() || t.cols() != 5) throw ValidationError("Weibull table shape mismatch");
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      enr.tails.push_back({t(i, 0), t(i, 1), t(i, 2), t(i, 3) != 0.0, t(i, 4)});
    }
  }
  return enr;
}

}  // namespace pkws::openset
