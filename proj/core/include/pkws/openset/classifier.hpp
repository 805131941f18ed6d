#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

#include "pkws/nn/container.hpp"
#include "pkws/openset/weibull.hpp"
#include "pkws/train/generator.hpp"

namespace pkws::openset {

enum class ClassifierKind { kOpenNcm, kOpenMax, kDProto };

std::string to_string(ClassifierKind k);
ClassifierKind parse_classifier_kind(const std::string& s);

/// Probabilities p_0 (unknown) .. p_N (keywords); sums to 1.
using ScoreVector = std::vector<double>;

/// Immutable few-shot classifier state.
struct Enrollment {
  ClassifierKind kind = ClassifierKind::kOpenNcm;
  int shots = 0;
  bool normalize = false;
  /// OpenMAX with fewer shots than the tail size: the fit used all shots.
  bool few_shot_warning = false;
  std::vector<std::string> class_names;
  Eigen::MatrixXd prototypes;          // N x D class means of the raw shots
  Eigen::MatrixXd unknown_prototypes;  // openNCM: 1 x D, DProto: dummies x D, OpenMAX: empty
  std::vector<WeibullTail> tails;      // OpenMAX only, one per class

  int ways() const noexcept { return static_cast<int>(prototypes.rows()); }
  int dim() const noexcept { return static_cast<int>(prototypes.cols()); }
};

struct EnrollOptions {
  /// L2-normalize embeddings and prototypes before any distance (angular-loss encoders).
  bool normalize = false;
  /// openNCM: embeddings of non-target filler utterances; their mean is c_0.
  Eigen::MatrixXd filler;
  /// DProto: generator producing the candidate unknown prototypes.
  const train::DummyProtoGenerator* generator = nullptr;
  /// OpenMAX: number of largest enrollment distances fed to the tail fit.
  int tail_size = 5;
  std::vector<std::string> class_names;
};

/// `shots[i]` holds the K x D enrollment embeddings of keyword i.
Enrollment enroll(std::span<const Eigen::MatrixXd> shots, ClassifierKind kind, const EnrollOptions& opts = {});

/// Softmax over N+1 logits:
///   openNCM  (-d(e,c_0), -d(e,c_1), ..., -d(e,c_N))
///   OpenMAX  s_i = -w_i(d_i) d_i for keywords, s_0 = -sum_i (1 - w_i(d_i)) d_i
///   DProto   as openNCM with c_0 the closest candidate unknown prototype
/// Throws ValidationError on a dimension mismatch.
ScoreVector score(const Enrollment& enr, const Eigen::Ref<const Eigen::RowVectorXd>& embedding);

/// argmax p_i (lowest index on ties) when that maximum is >= gamma, else 0.
/// An argmax at index 0 yields 0 for every gamma.
int decide(std::span<const double> p, double gamma);

/// Largest keyword probability max_{i>=1} p_i.
double detection_score(std::span<const double> p);

void store_enrollment(nn::Container& c, const Enrollment& enr, const std::string& prefix = "enroll.");
Enrollment restore_enrollment(const nn::Container& c, const std::string& prefix = "enroll.");

}  // namespace pkws::openset
