#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace pkws::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Batch of feature maps laid out channel-major: one row per channel, columns
/// enumerate (sample, y, x) with x fastest. Pointwise convolutions and
/// per-channel normalizations then operate on whole rows.
struct Activations {
  int channels = 0;
  int batch = 0;
  int height = 0;
  int width = 0;
  RowMatrix data;

  Activations() = default;
  Activations(int c, int n, int h, int w)
      : channels(c), batch(n), height(h), width(w), data(RowMatrix::Zero(c, static_cast<Eigen::Index>(n) * h * w)) {}

  int plane() const noexcept { return height * width; }
  Eigen::Index columns() const noexcept { return static_cast<Eigen::Index>(batch) * plane(); }
  bool same_shape(const Activations& o) const noexcept {
    return channels == o.channels && batch == o.batch && height == o.height && width == o.width;
  }
};

/// Named flat tensor with a logical shape. Trainable parameters carry a
/// gradient of the same size; buffers (running statistics) leave it empty.
struct Tensor {
  std::string name;
  std::vector<int> shape;
  Eigen::VectorXd value;
  Eigen::VectorXd grad;

  Tensor() = default;
  Tensor(std::string n, std::vector<int> s, bool trainable = true) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    value = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(count));
    if (trainable) grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(count));
  }

  Eigen::Index size() const noexcept { return value.size(); }
  bool trainable() const noexcept { return grad.size() == value.size() && value.size() > 0; }
};

}  // namespace pkws::nn
