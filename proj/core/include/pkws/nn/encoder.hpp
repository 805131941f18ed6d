#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pkws/dsp/frontend.hpp"
#include "pkws/nn/layers.hpp"
#include "pkws/nn/tensor.hpp"

namespace pkws::nn {

enum class SizeVariant { kSmall, kLarge, kCustom };

/// Which activation feeds the global average pool.
///   kConv: last pointwise block after its BatchNorm, before the ReLU.
///   kRelu: the same map after the ReLU (non-negative embeddings).
///   kNorm: last BatchNorm swapped for a channel LayerNorm, pooled, then L2-normalized.
enum class Head { kConv, kRelu, kNorm };

std::string to_string(SizeVariant v);
std::string to_string(Head h);
SizeVariant parse_size_variant(const std::string& s);
Head parse_head(const std::string& s);

struct EncoderConfig {
  SizeVariant size = SizeVariant::kSmall;
  Head head = Head::kNorm;
  int channels = 64;
  int num_blocks = 4;
  int kernel_h = 10;
  int kernel_w = 4;
  int stride_h = 2;
  int stride_w = 2;
  int input_frames = 49;
  int input_coeffs = 10;

  /// DSCNN-S: 64 channels, 4 blocks, stem stride 2x2 (~22k parameters).
  static EncoderConfig small(Head head);
  /// DSCNN-L: 256 channels, 5 blocks, stem stride 2x1 (~355k parameters).
  static EncoderConfig large(Head head);
  static EncoderConfig custom(Head head, int channels, int num_blocks, int stride_h = 2, int stride_w = 2);

  int embedding_dim() const noexcept { return channels; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Depthwise-separable convolutional encoder:
///   stem conv -> BN -> ReLU -> num_blocks x (dw3x3 -> BN -> ReLU -> pw1x1 -> BN -> ReLU)
/// followed by the configured head and global average pooling.
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, std::uint64_t seed);

  Encoder(const Encoder&) = default;
  Encoder& operator=(const Encoder&) = default;
  Encoder(Encoder&&) noexcept = default;
  Encoder& operator=(Encoder&&) noexcept = default;

  /// Eval-mode embeddings using running statistics; does not touch any state.
  Eigen::MatrixXd embed(std::span<const dsp::FeatureMap> batch) const;
  Eigen::MatrixXd embed(const Activations& input) const;

  /// Recording forward pass for training. kTrain uses batch statistics and
  /// updates the running ones. Throws NumericError on non-finite embeddings.
  Eigen::MatrixXd forward(std::span<const dsp::FeatureMap> batch, Mode mode = Mode::kTrain);
  Eigen::MatrixXd forward(const Activations& input, Mode mode = Mode::kTrain);

  /// Accumulates parameter gradients for d(loss)/d(embeddings) of the last forward.
  void backward(const Eigen::MatrixXd& grad_embeddings);
  void zero_grad();

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<Tensor*> buffers();
  std::vector<const Tensor*> buffers() const;
  /// Trainable scalar count (running statistics excluded).
  std::size_t parameter_count() const;

  /// Input to the global pool from the last recording forward pass.
  const Activations& prepool() const noexcept { return prepool_; }

  /// Active/inactive state of every ReLU in the last recording forward pass.
  /// Finite-difference checks use it to spot steps that cross a kink.
  std::vector<bool> relu_pattern() const;

  const EncoderConfig& config() const noexcept { return cfg_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Stacks feature maps into a 1-channel activation batch; validates shapes.
  Activations pack(std::span<const dsp::FeatureMap> batch) const;

 private:
  struct Block {
    DepthwiseConv dw;
    BatchNorm bn_dw;
    PointwiseConv pw;
    BatchNorm bn_pw;
    LayerNorm ln;  // used in place of bn_pw for the last block of a NORM head
    bool layer_norm = false;
    Activations dw_relu, pw_out;  // cached post-activation maps
  };

  Eigen::MatrixXd run_head(const Activations& last) const;

  EncoderConfig cfg_;
  std::uint64_t seed_;
  StemConv stem_;
  BatchNorm stem_bn_;
  std::vector<Block> blocks_;

  Activations stem_out_;
  Activations prepool_;
  Eigen::MatrixXd pooled_;
};

}  // namespace pkws::nn
