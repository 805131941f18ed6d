#pragma once

#include <cstdint>
#include <vector>

#include "pkws/nn/tensor.hpp"
#include "pkws/rng.hpp"

namespace pkws::nn {

enum class Mode { kTrain, kEval };

/// Output extent and leading pad for TensorFlow-style "same" padding.
struct SamePadding {
  int out = 0;
  int pad_before = 0;
  static SamePadding compute(int in, int kernel, int stride);
};

/// Single-input-channel convolution with "same" padding and no bias. Used as
/// the stem that lifts the MFCC map to `out_channels`. Input gradients are not
/// produced since the stem reads raw features.
class StemConv {
 public:
  StemConv(std::string name, int out_channels, int kernel_h, int kernel_w, int stride_h, int stride_w);

  void init(Rng& rng);
  Activations infer(const Activations& x) const;
  Activations forward(const Activations& x);
  void backward(const Activations& grad_out);
  void collect(std::vector<Tensor*>& params) { params.push_back(&weight_); }

 private:
  RowMatrix im2col(const Activations& x, int out_h, int out_w, int pad_t, int pad_l) const;
  Activations apply(const Activations& x, RowMatrix* cols_out) const;

  Tensor weight_;  // [C, 1, kh, kw]
  int kernel_h_, kernel_w_, stride_h_, stride_w_;
  RowMatrix cols_;
  int out_h_ = 0, out_w_ = 0, batch_ = 0;
};

/// 3x3 depthwise convolution, stride 1, padding 1, no bias.
class DepthwiseConv {
 public:
  DepthwiseConv(std::string name, int channels);

  void init(Rng& rng);
  Activations infer(const Activations& x) const;
  Activations forward(const Activations& x);
  Activations backward(const Activations& grad_out);
  void collect(std::vector<Tensor*>& params) { params.push_back(&weight_); }

 private:
  Tensor weight_;  // [C, 1, 3, 3]
  int channels_;
  Activations input_;
};

/// 1x1 convolution: a (C_out x C_in) matrix product over all positions.
class PointwiseConv {
 public:
  PointwiseConv(std::string name, int in_channels, int out_channels);

  void init(Rng& rng);
  Activations infer(const Activations& x) const;
  Activations forward(const Activations& x);
  Activations backward(const Activations& grad_out);
  void collect(std::vector<Tensor*>& params) { params.push_back(&weight_); }

 private:
  Tensor weight_;  // [C_out, C_in, 1, 1]
  int in_channels_, out_channels_;
  Activations input_;
};

/// Per-channel batch normalization over (sample, y, x).
class BatchNorm {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm(std::string name, int channels);

  Activations infer(const Activations& x) const;
  /// Train mode normalizes with batch statistics and updates running ones.
  Activations forward(const Activations& x, Mode mode);
  Activations backward(const Activations& grad_out);
  void collect(std::vector<Tensor*>& params) {
    params.push_back(&gamma_);
    params.push_back(&beta_);
  }
  void collect_buffers(std::vector<Tensor*>& buffers) {
    buffers.push_back(&running_mean_);
    buffers.push_back(&running_var_);
  }

 private:
  Tensor gamma_, beta_, running_mean_, running_var_;
  int channels_;
  Mode cached_mode_ = Mode::kEval;
  RowMatrix xhat_;
  Eigen::VectorXd inv_std_;
};

/// Normalization across channels at every (sample, y, x) position with a
/// per-channel affine transform.
class LayerNorm {
 public:
  static constexpr double kEpsilon = 1e-5;

  LayerNorm(std::string name, int channels);

  Activations infer(const Activations& x) const;
  Activations forward(const Activations& x);
  Activations backward(const Activations& grad_out);
  void collect(std::vector<Tensor*>& params) {
    params.push_back(&gamma_);
    params.push_back(&beta_);
  }

 private:
  Activations apply(const Activations& x, RowMatrix* xhat, Eigen::RowVectorXd* inv_std) const;

  Tensor gamma_, beta_;
  int channels_;
  RowMatrix xhat_;
  Eigen::RowVectorXd inv_std_;
};

Activations relu(const Activations& x);
/// grad * 1[output > 0]
Activations relu_backward(const Activations& output, const Activations& grad_out);

/// Spatial mean per (sample, channel); returns batch x channels.
Eigen::MatrixXd global_average_pool(const Activations& x);
Activations global_average_pool_backward(const Eigen::MatrixXd& grad, int height, int width);

/// Row-wise L2 normalization. Norms below 1e-12 are clamped.
Eigen::MatrixXd l2_normalize_rows(const Eigen::MatrixXd& x);
Eigen::MatrixXd l2_normalize_rows_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& grad_out);

}  // namespace pkws::nn
