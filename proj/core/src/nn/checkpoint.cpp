#include "pkws/nn/checkpoint.hpp"

#include <sstream>

#include "pkws/error.hpp"

namespace pkws::nn {
namespace {

std::string shape_string(const std::vector<std::uint64_t>& s) {
  std::ostringstream os;
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  return os.str();
}

std::vector<std::uint64_t> to_u64(const std::vector<int>& shape) { return {shape.begin(), shape.end()}; }

}  // namespace

void store_encoder(Container& c, const Encoder& enc, const std::string& prefix) {
  const EncoderConfig& cfg = enc.config();
  c.meta[prefix + "size"] = to_string(cfg.size);
  c.meta[prefix + "head"] = to_string(cfg.head);
  c.meta[prefix + "embedding_dim"] = std::to_string(cfg.embedding_dim());
  c.meta[prefix + "num_blocks"] = std::to_string(cfg.num_blocks);
  c.meta[prefix + "kernel_h"] = std::to_string(cfg.kernel_h);
  c.meta[prefix + "kernel_w"] = std::to_string(cfg.kernel_w);
  c.meta[prefix + "stride_h"] = std::to_string(cfg.stride_h);
  c.meta[prefix + "stride_w"] = std::to_string(cfg.stride_w);
  c.meta[prefix + "input_frames"] = std::to_string(cfg.input_frames);
  c.meta[prefix + "input_coeffs"] = std::to_string(cfg.input_coeffs);
  c.meta[prefix + "seed"] = std::to_string(enc.seed());
  for (const Tensor* t : enc.parameters()) {
    c.put(prefix + t->name, to_u64(t->shape), {t->value.data(), static_cast<std::size_t>(t->size())});
  }
  for (const Tensor* t : enc.buffers()) {
    c.put(prefix + t->name, to_u64(t->shape), {t->value.data(), static_cast<std::size_t>(t->size())});
  }
}

Encoder restore_encoder(const Container& c, const std::string& prefix) {
  EncoderConfig cfg;
  cfg.size = parse_size_variant(c.meta_at(prefix + "size"));
  cfg.head = parse_head(c.meta_at(prefix + "head"));
  cfg.channels = static_cast<int>(c.meta_int(prefix + "embedding_dim"));
  cfg.num_blocks = static_cast<int>(c.meta_int(prefix + "num_blocks"));
  cfg.kernel_h = static_cast<int>(c.meta_int(prefix + "kernel_h"));
  cfg.kernel_w = static_cast<int>(c.meta_int(prefix + "kernel_w"));
  cfg.stride_h = static_cast<int>(c.meta_int(prefix + "stride_h"));
  cfg.stride_w = static_cast<int>(c.meta_int(prefix + "stride_w"));
  cfg.input_frames = static_cast<int>(c.meta_int(prefix + "input_frames"));
  cfg.input_coeffs = static_cast<int>(c.meta_int(prefix + "input_coeffs"));
  const auto seed = static_cast<std::uint64_t>(std::stoull(c.meta_at(prefix + "seed")));

  Encoder enc(cfg, seed);
  auto load = [&](Tensor* t) {
    const Record& r = c.get(prefix + t->name);
    if (r.shape != to_u64(t->shape)) {
      throw ValidationError("shape mismatch for '" + t->name + "': checkpoint has " + shape_string(r.shape) +
                            ", config expects " + shape_string(to_u64(t->shape)));
    }
    t->value = Eigen::Map<const Eigen::VectorXd>(r.data.data(), static_cast<Eigen::Index>(r.data.size()));
  };
  for (Tensor* t : enc.parameters()) load(t);
  for (Tensor* t : enc.buffers()) load(t);
  return enc;
}

void save_checkpoint(const Encoder& enc, const std::filesystem::path& path, Precision precision) {
  Container c;
  c.meta["kind"] = "encoder";
  store_encoder(c, enc);
  write_container(path, c, precision);
}

Encoder load_checkpoint(const std::filesystem::path& path) { return restore_encoder(read_container(path)); }

}  // namespace pkws::nn
