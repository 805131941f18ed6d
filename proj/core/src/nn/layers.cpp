#include "pkws/nn/layers.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "pkws/error.hpp"

namespace pkws::nn {
namespace {

void kaiming_uniform(Tensor& t, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value[i] = dist(rng);
}

// Same geometry as `x`, contents uninitialized.
Activations shaped_like(const Activations& x) {
  Activations y;
  y.channels = x.channels;
  y.batch = x.batch;
  y.height = x.height;
  y.width = x.width;
  y.data.resize(x.data.rows(), x.data.cols());
  return y;
}

}  // namespace

SamePadding SamePadding::compute(int in, int kernel, int stride) {
  SamePadding p;
  p.out = (in + stride - 1) / stride;
  const int total = std::max((p.out - 1) * stride + kernel - in, 0);
  p.pad_before = total / 2;
  return p;
}

// ---------------------------------------------------------------- StemConv

StemConv::StemConv(std::string name, int out_channels, int kernel_h, int kernel_w, int stride_h, int stride_w)
    : weight_(std::move(name) + ".weight", {out_channels, 1, kernel_h, kernel_w}),
      kernel_h_(kernel_h),
      kernel_w_(kernel_w),
      stride_h_(stride_h),
      stride_w_(stride_w) {}

void StemConv::init(Rng& rng) { kaiming_uniform(weight_, kernel_h_ * kernel_w_, rng); }

RowMatrix StemConv::im2col(const Activations& x, int out_h, int out_w, int pad_t, int pad_l) const {
  const int taps = kernel_h_ * kernel_w_;
  const Eigen::Index plane_out = static_cast<Eigen::Index>(out_h) * out_w;
  RowMatrix cols = RowMatrix::Zero(taps, static_cast<Eigen::Index>(x.batch) * plane_out);
  for (int ky = 0; ky < kernel_h_; ++ky) {
    for (int kx = 0; kx < kernel_w_; ++kx) {
      double* row = cols.row(ky * kernel_w_ + kx).data();
      for (int n = 0; n < x.batch; ++n) {
        const double* in = x.data.data() + static_cast<Eigen::Index>(n) * x.plane();
        double* out = row + n * plane_out;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride_h_ - pad_t + ky;
          if (iy < 0 || iy >= x.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride_w_ - pad_l + kx;
            if (ix < 0 || ix >= x.width) continue;
            out[oy * out_w + ox] = in[iy * x.width + ix];
          }
        }
      }
    }
  }
  return cols;
}

Activations StemConv::apply(const Activations& x, RowMatrix* cols_out) const {
  if (x.channels != 1) throw ValidationError("stem convolution expects a single input channel");
  const SamePadding ph = SamePadding::compute(x.height, kernel_h_, stride_h_);
  const SamePadding pw = SamePadding::compute(x.width, kernel_w_, stride_w_);
  RowMatrix cols = im2col(x, ph.out, pw.out, ph.pad_before, pw.pad_before);
  const int out_channels = weight_.shape[0];
  Eigen::Map<const RowMatrix> w(weight_.value.data(), out_channels, kernel_h_ * kernel_w_);
  Activations y;
  y.channels = out_channels;
  y.batch = x.batch;
  y.height = ph.out;
  y.width = pw.out;
  y.data.noalias() = w * cols;
  if (cols_out != nullptr) *cols_out = std::move(cols);
  return y;
}

Activations StemConv::infer(const Activations& x) const { return apply(x, nullptr); }

Activations StemConv::forward(const Activations& x) {
  Activations y = apply(x, &cols_);
  out_h_ = y.height;
  out_w_ = y.width;
  batch_ = y.batch;
  return y;
}

void StemConv::backward(const Activations& grad_out) {
  Eigen::Map<RowMatrix> dw(weight_.grad.data(), weight_.shape[0], kernel_h_ * kernel_w_);
  dw.noalias() += grad_out.data * cols_.transpose();
}

// ----------------------------------------------------------- DepthwiseConv

DepthwiseConv::DepthwiseConv(std::string name, int channels)
    : weight_(std::move(name) + ".weight", {channels, 1, 3, 3}), channels_(channels) {}

void DepthwiseConv::init(Rng& rng) { kaiming_uniform(weight_, 9, rng); }

namespace {

// Validity masks of the nine 3x3 taps over a whole channel row (all samples):
// mask t is 1 at output column j when input column j + offset(t) lies inside
// the same sample plane. Rows are read from a zero-padded copy so every tap is
// a full-length contiguous slice.
struct TapMasks {
  int width = 0;
  Eigen::Index pad = 0;
  std::array<Eigen::ArrayXd, 9> mask;

  Eigen::Index offset(int t) const { return static_cast<Eigen::Index>(t / 3 - 1) * width + (t % 3 - 1); }
};

TapMasks make_masks(int h, int w, int batch) {
  TapMasks m;
  m.width = w;
  m.pad = w + 1;
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  for (int t = 0; t < 9; ++t) {
    const int dy = t / 3 - 1, dx = t % 3 - 1;
    Eigen::ArrayXd one(plane);
    for (int oy = 0; oy < h; ++oy) {
      for (int ox = 0; ox < w; ++ox) {
        const bool ok = oy + dy >= 0 && oy + dy < h && ox + dx >= 0 && ox + dx < w;
        one[static_cast<Eigen::Index>(oy) * w + ox] = ok ? 1.0 : 0.0;
      }
    }
    m.mask[static_cast<std::size_t>(t)] = one.replicate(batch, 1);
  }
  return m;
}

void load_padded(Eigen::ArrayXd& buf, const double* row, Eigen::Index cols, Eigen::Index pad) {
  buf.setZero(cols + 2 * pad);
  buf.segment(pad, cols) = Eigen::Map<const Eigen::ArrayXd>(row, cols);
}

}  // namespace

Activations DepthwiseConv::infer(const Activations& x) const {
  if (x.channels != channels_) throw ValidationError("depthwise convolution: channel mismatch");
  Activations y(x.channels, x.batch, x.height, x.width);
  const TapMasks m = make_masks(x.height, x.width, x.batch);
  const Eigen::Index cols = x.columns();
  Eigen::ArrayXd buf;
  for (int c = 0; c < channels_; ++c) {
    const double* k = weight_.value.data() + c * 9;
    load_padded(buf, x.data.row(c).data(), cols, m.pad);
    Eigen::Map<Eigen::ArrayXd> out(y.data.row(c).data(), cols);
    for (int r = 0; r < 3; ++r) {
      const int t = 3 * r;
      out += k[t] * m.mask[t] * buf.segment(m.pad + m.offset(t), cols) +
             k[t + 1] * m.mask[t + 1] * buf.segment(m.pad + m.offset(t + 1), cols) +
             k[t + 2] * m.mask[t + 2] * buf.segment(m.pad + m.offset(t + 2), cols);
    }
  }
  return y;
}

Activations DepthwiseConv::forward(const Activations& x) {
  input_ = x;
  return infer(x);
}

Activations DepthwiseConv::backward(const Activations& grad_out) {
  const Activations& x = input_;
  Activations dx(x.channels, x.batch, x.height, x.width);
  const TapMasks m = make_masks(x.height, x.width, x.batch);
  const Eigen::Index cols = x.columns();
  Eigen::ArrayXd xbuf, gbuf;
  for (int c = 0; c < channels_; ++c) {
    const double* k = weight_.value.data() + c * 9;
    double* dk = weight_.grad.data() + c * 9;
    load_padded(xbuf, x.data.row(c).data(), cols, m.pad);
    load_padded(gbuf, grad_out.data.row(c).data(), cols, m.pad);
    const auto g = gbuf.segment(m.pad, cols);
    for (int t = 0; t < 9; ++t) dk[t] += (m.mask[t] * g * xbuf.segment(m.pad + m.offset(t), cols)).sum();
    // Input i receives tap t from output i - offset(t); that pairing is valid
    // exactly where the mirrored tap 8 - t is valid at i.
    Eigen::Map<Eigen::ArrayXd> d(dx.data.row(c).data(), cols);
    for (int r = 0; r < 3; ++r) {
      const int t = 3 * r;
      d += k[t] * m.mask[8 - t] * gbuf.segment(m.pad - m.offset(t), cols) +
           k[t + 1] * m.mask[7 - t] * gbuf.segment(m.pad - m.offset(t + 1), cols) +
           k[t + 2] * m.mask[6 - t] * gbuf.segment(m.pad - m.offset(t + 2), cols);
    }
  }
  return dx;
}

// ----------------------------------------------------------- PointwiseConv

PointwiseConv::PointwiseConv(std::string name, int in_channels, int out_channels)
    : weight_(std::move(name) + ".weight", {out_channels, in_channels, 1, 1}),
      in_channels_(in_channels),
      out_channels_(out_channels) {}

void PointwiseConv::init(Rng& rng) { kaiming_uniform(weight_, in_channels_, rng); }

Activations PointwiseConv::infer(const Activations& x) const {
  if (x.channels != in_channels_) throw ValidationError("pointwise convolution: channel mismatch");
  Eigen::Map<const RowMatrix> w(weight_.value.data(), out_channels_, in_channels_);
  Activations y;
  y.channels = out_channels_;
  y.batch = x.batch;
  y.height = x.height;
  y.width = x.width;
  y.data.noalias() = w * x.data;
  return y;
}

Activations PointwiseConv::forward(const Activations& x) {
  input_ = x;
  return infer(x);
}

Activations PointwiseConv::backward(const Activations& grad_out) {
  Eigen::Map<const RowMatrix> w(weight_.value.data(), out_channels_, in_channels_);
  Eigen::Map<RowMatrix> dw(weight_.grad.data(), out_channels_, in_channels_);
  dw.noalias() += grad_out.data * input_.data.transpose();
  Activations dx;
  dx.channels = in_channels_;
  dx.batch = input_.batch;
  dx.height = input_.height;
  dx.width = input_.width;
  dx.data.noalias() = w.transpose() * grad_out.data;
  return dx;
}

// --------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::string name, int channels)
    : gamma_(name + ".gamma", {channels}),
      beta_(name + ".beta", {channels}),
      running_mean_(name + ".running_mean", {channels}, false),
      running_var_(name + ".running_var", {channels}, false),
      channels_(channels) {
  gamma_.value.setOnes();
  running_var_.value.setOnes();
}

Activations BatchNorm::infer(const Activations& x) const {
  if (x.channels != channels_) throw ValidationError("batch norm: channel mismatch");
  Activations y = shaped_like(x);
  for (int c = 0; c < channels_; ++c) {
    const double inv = 1.0 / std::sqrt(running_var_.value[c] + kEpsilon);
    const double scale = gamma_.value[c] * inv;
    const double shift = beta_.value[c] - running_mean_.value[c] * scale;
    y.data.row(c) = (x.data.row(c).array() * scale + shift).matrix();
  }
  return y;
}

Activations BatchNorm::forward(const Activations& x, Mode mode) {
  if (x.channels != channels_) throw ValidationError("batch norm: channel mismatch");
  cached_mode_ = mode;
  inv_std_.resize(channels_);
  const Eigen::Index m = x.columns();
  xhat_.resize(channels_, m);
  if (mode == Mode::kEval) {
    Activations y = shaped_like(x);
    for (int c = 0; c < channels_; ++c) {
      inv_std_[c] = 1.0 / std::sqrt(running_var_.value[c] + kEpsilon);
      xhat_.row(c) = ((x.data.row(c).array() - running_mean_.value[c]) * inv_std_[c]).matrix();
      y.data.row(c) = (xhat_.row(c).array() * gamma_.value[c] + beta_.value[c]).matrix();
    }
    return y;
  }
  if (m < 2) throw ValidationError("batch norm in train mode needs more than one value per channel");
  Activations y = shaped_like(x);
  for (int c = 0; c < channels_; ++c) {
    const auto row = x.data.row(c).array();
    const double mean = row.mean();
    const double var = (row - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + kEpsilon);
    inv_std_[c] = inv;
    xhat_.row(c) = ((row - mean) * inv).matrix();
    y.data.row(c) = (xhat_.row(c).array() * gamma_.value[c] + beta_.value[c]).matrix();
    running_mean_.value[c] = (1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean;
    const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
    running_var_.value[c] = (1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased;
  }
  return y;
}

Activations BatchNorm::backward(const Activations& grad_out) {
  if (cached_mode_ == Mode::kEval) {
    Activations dx = grad_out;
    // Running statistics are constants.
    for (int c = 0; c < channels_; ++c) {
      const auto g = grad_out.data.row(c).array();
      gamma_.grad[c] += (g * xhat_.row(c).array()).sum();
      beta_.grad[c] += g.sum();
      dx.data.row(c) *= gamma_.value[c] * inv_std_[c];
    }
    return dx;
  }
  const double m = static_cast<double>(grad_out.columns());
  Activations dx = shaped_like(grad_out);
  for (int c = 0; c < channels_; ++c) {
    const auto g = grad_out.data.row(c).array();
    const auto xh = xhat_.row(c).array();
    const double sum_g = g.sum();
    const double sum_gx = (g * xh).sum();
    gamma_.grad[c] += sum_gx;
    beta_.grad[c] += sum_g;
    const double k = gamma_.value[c] * inv_std_[c] / m;
    dx.data.row(c) = (k * (m * g - sum_g - xh * sum_gx)).matrix();
  }
  return dx;
}

// --------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(std::string name, int channels)
    : gamma_(name + ".gamma", {channels}), beta_(name + ".beta", {channels}), channels_(channels) {
  gamma_.value.setOnes();
}

Activations LayerNorm::apply(const Activations& x, RowMatrix* xhat, Eigen::RowVectorXd* inv_std) const {
  if (x.channels != channels_) throw ValidationError("layer norm: channel mismatch");
  const Eigen::RowVectorXd mean = x.data.colwise().mean();
  RowMatrix centered = x.data.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().mean().matrix();
  const Eigen::RowVectorXd inv = (var.array() + kEpsilon).rsqrt().matrix();
  RowMatrix normed = centered.array().rowwise() * inv.array();
  Activations y = x;
  y.data = (normed.array().colwise() * gamma_.value.array()).colwise() + beta_.value.array();
  if (xhat != nullptr) *xhat = std::move(normed);
  if (inv_std != nullptr) *inv_std = inv;
  return y;
}

Activations LayerNorm::infer(const Activations& x) const { return apply(x, nullptr, nullptr); }

Activations LayerNorm::forward(const Activations& x) { return apply(x, &xhat_, &inv_std_); }

Activations LayerNorm::backward(const Activations& grad_out) {
  const RowMatrix& g = grad_out.data;
  gamma_.grad += (g.array() * xhat_.array()).rowwise().sum().matrix();
  beta_.grad += g.rowwise().sum();
  const RowMatrix dxhat = g.array().colwise() * gamma_.value.array();
  const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
  const Eigen::RowVectorXd sum_dx = (dxhat.array() * xhat_.array()).colwise().sum().matrix();
  const double c = static_cast<double>(channels_);
  Activations dx = grad_out;
  dx.data = ((c * dxhat.array()).rowwise() - sum_d.array()) - (xhat_.array().rowwise() * sum_dx.array());
  dx.data = dx.data.array().rowwise() * (inv_std_.array() / c);
  return dx;
}

// ------------------------------------------------------------ stateless ops

Activations relu(const Activations& x) {
  Activations y = shaped_like(x);
  y.data = x.data.cwiseMax(0.0);
  return y;
}

Activations relu_backward(const Activations& output, const Activations& grad_out) {
  Activations dx = shaped_like(grad_out);
  dx.data = (output.data.array() > 0.0).select(grad_out.data, 0.0);
  return dx;
}

Eigen::MatrixXd global_average_pool(const Activations& x) {
  Eigen::MatrixXd e(x.batch, x.channels);
  const int plane = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    const double* row = x.data.row(c).data();
    for (int n = 0; n < x.batch; ++n) {
      double acc = 0.0;
      const double* p = row + static_cast<Eigen::Index>(n) * plane;
      for (int i = 0; i < plane; ++i) acc += p[i];
      e(n, c) = acc / plane;
    }
  }
  return e;
}

Activations global_average_pool_backward(const Eigen::MatrixXd& grad, int height, int width) {
  const int batch = static_cast<int>(grad.rows());
  const int channels = static_cast<int>(grad.cols());
  Activations dx(channels, batch, height, width);
  const int plane = height * width;
  for (int c = 0; c < channels; ++c) {
    double* row = dx.data.row(c).data();
    for (int n = 0; n < batch; ++n) {
      const double v = grad(n, c) / plane;
      std::fill_n(row + static_cast<Eigen::Index>(n) * plane, plane, v);
    }
  }
  return dx;
}

Eigen::MatrixXd l2_normalize_rows(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd y = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    y.row(i) /= std::max(x.row(i).norm(), 1e-12);
  }
  return y;
}

Eigen::MatrixXd l2_normalize_rows_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& grad_out) {
  Eigen::MatrixXd dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = std::max(x.row(i).norm(), 1e-12);
    const Eigen::RowVectorXd y = x.row(i) / norm;
    dx.row(i) = (grad_out.row(i) - y * grad_out.row(i).dot(y)) / norm;
  }
  return dx;
}

}  // namespace pkws::nn
