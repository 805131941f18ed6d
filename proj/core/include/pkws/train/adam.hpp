#pragma once

#include <map>
#include <string>
#include <vector>

#include "pkws/nn/container.hpp"
#include "pkws/nn/tensor.hpp"

namespace pkws::train {

/// Adaptive-moment optimizer. Moment estimates are keyed by tensor name, so
/// the parameter list may be rebuilt between steps.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam() = default;
  explicit Adam(Options opts) : opts_(opts) {}

  void step(const std::vector<nn::Tensor*>& params, double lr);
  long long steps() const noexcept { return t_; }

  void store(nn::Container& c, const std::string& prefix = "optim.") const;
  static Adam restore(const nn::Container& c, const std::string& prefix = "optim.");

 private:
  struct Moments {
    Eigen::VectorXd m, v;
  };
  Options opts_;
  long long t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace pkws::train
