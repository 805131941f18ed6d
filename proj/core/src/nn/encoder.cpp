#include "pkws/nn/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "pkws/error.hpp"

namespace pkws::nn {
namespace {

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

void check_finite(const Eigen::MatrixXd& e) {
  if (!e.allFinite()) throw NumericError("encoder produced non-finite activations (training diverged?)");
}

}  // namespace

std::string to_string(SizeVariant v) {
  switch (v) {
    case SizeVariant::kSmall: return "S";
    case SizeVariant::kLarge: return "L";
    case SizeVariant::kCustom: return "custom";
  }
  return "?";
}

std::string to_string(Head h) {
  switch (h) {
    case Head::kConv: return "CONV";
    case Head::kRelu: return "RELU";
    case Head::kNorm: return "NORM";
  }
  return "?";
}

SizeVariant parse_size_variant(const std::string& s) {
  const std::string u = upper(s);
  if (u == "S") return SizeVariant::kSmall;
  if (u == "L") return SizeVariant::kLarge;
  if (u == "CUSTOM") return SizeVariant::kCustom;
  throw ValidationError("unknown encoder size '" + s + "' (expected S or L)");
}

Head parse_head(const std::string& s) {
  const std::string u = upper(s);
  if (u == "CONV") return Head::kConv;
  if (u == "RELU") return Head::kRelu;
  if (u == "NORM") return Head::kNorm;
  throw ValidationError("unknown encoder head '" + s + "' (expected CONV, RELU or NORM)");
}

EncoderConfig EncoderConfig::small(Head head) {
  EncoderConfig c;
  c.size = SizeVariant::kSmall;
  c.head = head;
  c.channels = 64;
  c.num_blocks = 4;
  c.stride_h = 2;
  c.stride_w = 2;
  return c;
}

EncoderConfig EncoderConfig::large(Head head) {
  EncoderConfig c;
  c.size = SizeVariant::kLarge;
  c.head = head;
  c.channels = 256;
  c.num_blocks = 5;
  c.stride_h = 2;
  c.stride_w = 1;
  return c;
}

EncoderConfig EncoderConfig::custom(Head head, int channels, int num_blocks, int stride_h, int stride_w) {
  EncoderConfig c;
  c.size = SizeVariant::kCustom;
  c.head = head;
  c.channels = channels;
  c.num_blocks = num_blocks;
  c.stride_h = stride_h;
  c.stride_w = stride_w;
  return c;
}

void EncoderConfig::validate() const {
  if (channels < 1) throw ValidationError("encoder channels must be >= 1");
  if (num_blocks < 1) throw ValidationError("encoder needs at least one depthwise-separable block");
  if (kernel_h < 1 || kernel_w < 1 || stride_h < 1 || stride_w < 1) {
    throw ValidationError("encoder stem kernel and stride must be positive");
  }
  if (input_frames < 1 || input_coeffs < 1) throw ValidationError("encoder input shape must be positive");
}

Encoder::Encoder(const EncoderConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      seed_(seed),
      stem_("stem.conv", cfg.channels, cfg.kernel_h, cfg.kernel_w, cfg.stride_h, cfg.stride_w),
      stem_bn_("stem.bn", cfg.channels) {
  cfg_.validate();
  blocks_.reserve(static_cast<std::size_t>(cfg_.num_blocks));
  for (int i = 0; i < cfg_.num_blocks; ++i) {
    const std::string p = "block" + std::to_string(i + 1);
    blocks_.push_back(Block{DepthwiseConv(p + ".dw", cfg_.channels), BatchNorm(p + ".bn_dw", cfg_.channels),
                            PointwiseConv(p + ".pw", cfg_.channels, cfg_.channels),
                            BatchNorm(p + ".bn_pw", cfg_.channels), LayerNorm(p + ".ln", cfg_.channels),
                            false, {}, {}});
  }
  if (cfg_.head == Head::kNorm) blocks_.back().layer_norm = true;

  Rng rng(seed);
  stem_.init(rng);
  for (auto& b : blocks_) {
    b.dw.init(rng);
    b.pw.init(rng);
  }
}

std::vector<Tensor*> Encoder::parameters() {
  std::vector<Tensor*> out;
  stem_.collect(out);
  stem_bn_.collect(out);
  for (auto& b : blocks_) {
    b.dw.collect(out);
    b.bn_dw.collect(out);
    b.pw.collect(out);
    if (b.layer_norm) {
      b.ln.collect(out);
    } else {
      b.bn_pw.collect(out);
    }
  }
  return out;
}

std::vector<const Tensor*> Encoder::parameters() const {
  auto mut = const_cast<Encoder*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<Tensor*> Encoder::buffers() {
  std::vector<Tensor*> out;
  stem_bn_.collect_buffers(out);
  for (auto& b : blocks_) {
    b.bn_dw.collect_buffers(out);
    if (!b.layer_norm) b.bn_pw.collect_buffers(out);
  }
  return out;
}

std::vector<const Tensor*> Encoder::buffers() const {
  auto mut = const_cast<Encoder*>(this)->buffers();
  return {mut.begin(), mut.end()};
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += static_cast<std::size_t>(t->size());
  return n;
}

void Encoder::zero_grad() {
  for (Tensor* t : parameters()) t->grad.setZero();
}

Activations Encoder::pack(std::span<const dsp::FeatureMap> batch) const {
  if (batch.empty()) throw ValidationError("encoder input batch is empty");
  Activations x(1, static_cast<int>(batch.size()), cfg_.input_frames, cfg_.input_coeffs);
  const int plane = x.plane();
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& fm = batch[n];
    if (fm.frames != cfg_.input_frames || fm.coeffs != cfg_.input_coeffs ||
        fm.values.size() != static_cast<std::size_t>(plane)) {
      throw ValidationError("feature map shape " + std::to_string(fm.frames) + "x" + std::to_string(fm.coeffs) +
                            " does not match encoder input " + std::to_string(cfg_.input_frames) + "x" +
                            std::to_string(cfg_.input_coeffs));
    }
    std::copy(fm.values.begin(), fm.values.end(), x.data.data() + static_cast<Eigen::Index>(n) * plane);
  }
  return x;
}

Eigen::MatrixXd Encoder::run_head(const Activations& last) const {
  Eigen::MatrixXd pooled = global_average_pool(last);
  if (cfg_.head == Head::kNorm) return l2_normalize_rows(pooled);
  return pooled;
}

Eigen::MatrixXd Encoder::embed(std::span<const dsp::FeatureMap> batch) const { return embed(pack(batch)); }

Eigen::MatrixXd Encoder::embed(const Activations& input) const {
  Activations h = relu(stem_bn_.infer(stem_.infer(input)));
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    const bool last = i + 1 == blocks_.size();
    Activations a = relu(b.bn_dw.infer(b.dw.infer(h)));
    Activations p = b.pw.infer(a);
    p = b.layer_norm ? b.ln.infer(p) : b.bn_pw.infer(p);
    h = (last && cfg_.head != Head::kRelu) ? std::move(p) : relu(p);
  }
  Eigen::MatrixXd e = run_head(h);
  check_finite(e);
  return e;
}

Eigen::MatrixXd Encoder::forward(std::span<const dsp::FeatureMap> batch, Mode mode) {
  return forward(pack(batch), mode);
}

Eigen::MatrixXd Encoder::forward(const Activations& input, Mode mode) {
  stem_out_ = relu(stem_bn_.forward(stem_.forward(input), mode));
  const Activations* h = &stem_out_;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& b = blocks_[i];
    const bool last = i + 1 == blocks_.size();
    b.dw_relu = relu(b.bn_dw.forward(b.dw.forward(*h), mode));
    Activations p = b.pw.forward(b.dw_relu);
    p = b.layer_norm ? b.ln.forward(p) : b.bn_pw.forward(p, mode);
    if (last && cfg_.head != Head::kRelu) {
      b.pw_out = Activations{};
      prepool_ = std::move(p);
      h = &prepool_;
    } else {
      b.pw_out = relu(p);
      h = &b.pw_out;
    }
  }
  if (cfg_.head == Head::kRelu) prepool_ = blocks_.back().pw_out;
  pooled_ = global_average_pool(prepool_);
  Eigen::MatrixXd e = cfg_.head == Head::kNorm ? l2_normalize_rows(pooled_) : pooled_;
  check_finite(e);
  return e;
}

std::vector<bool> Encoder::relu_pattern() const {
  std::vector<bool> out;
  auto append = [&out](const Activations& a) {
    for (Eigen::Index i = 0; i < a.data.size(); ++i) out.push_back(a.data(i) > 0.0);
  };
  append(stem_out_);
  for (const Block& b : blocks_) {
    append(b.dw_relu);
    append(b.pw_out);
  }
  return out;
}

void Encoder::backward(const Eigen::MatrixXd& grad_embeddings) {
  if (grad_embeddings.rows() != pooled_.rows() || grad_embeddings.cols() != pooled_.cols()) {
    throw ValidationError("embedding gradient shape does not match the last forward pass");
  }
  const Eigen::MatrixXd dpool =
      cfg_.head == Head::kNorm ? l2_normalize_rows_backward(pooled_, grad_embeddings) : grad_embeddings;
  Activations g = global_average_pool_backward(dpool, prepool_.height, prepool_.width);
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    Block& b = blocks_[i];
    const bool last = i + 1 == blocks_.size();
    if (!last || cfg_.head == Head::kRelu) g = relu_backward(b.pw_out, g);
    g = b.layer_norm ? b.ln.backward(g) : b.bn_pw.backward(g);
    g = b.pw.backward(g);
    g = relu_backward(b.dw_relu, g);
    g = b.bn_dw.backward(g);
    g = b.dw.backward(g);
  }
  g = relu_backward(stem_out_, g);
  g = stem_bn_.backward(g);
  stem_.backward(g);
}

}  // namespace pkws::nn
