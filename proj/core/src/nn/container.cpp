#include "pkws/nn/container.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "pkws/error.hpp"

namespace pkws::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <typename T>
  void pod(T v) { bytes(&v, sizeof(T)); }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  void bytes(void* out, std::size_t n) {
    if (n > data_.size() - pos_) throw ValidationError(origin_ + ": truncated checkpoint file");
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace

std::uint64_t Record::count() const noexcept {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

void Container::put(const std::string& name, std::vector<std::uint64_t> shape, std::span<const double> data) {
  Record r{name, std::move(shape), std::vector<double>(data.begin(), data.end())};
  if (r.count() != r.data.size()) throw ValidationError("tensor '" + name + "': data size does not match shape");
  if (auto it = index_.find(name); it != index_.end()) {
    records_[it->second] = std::move(r);
    return;
  }
  index_[name] = records_.size();
  records_.push_back(std::move(r));
}

bool Container::contains(const std::string& name) const { return index_.count(name) != 0; }

const Record& Container::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("checkpoint is missing tensor '" + name + "'");
  return records_[it->second];
}

const std::string& Container::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw ValidationError("checkpoint is missing header field '" + key + "'");
  return it->second;
}

long long Container::meta_int(const std::string& key) const {
  const std::string& s = meta_at(key);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError("header field '" + key + "' is not an integer: " + s);
  }
  return v;
}

double Container::meta_double(const std::string& key) const {
  const std::string& s = meta_at(key);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError("header field '" + key + "' is not a number: " + s);
  }
  return v;
}

void write_container(const std::filesystem::path& path, const Container& c, Precision precision) {
  Writer w;
  w.bytes("PKWS", 4);
  w.pod(kContainerVersion);
  w.pod(static_cast<std::uint8_t>(precision));
  std::string meta;
  for (const auto& [k, v] : c.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ValidationError("header field '" + k + "' contains a reserved character");
    }
    meta += k + "=" + v + "\n";
  }
  w.str(meta);
  w.pod(static_cast<std::uint32_t>(c.records().size()));
  for (const Record& r : c.records()) {
    w.str(r.name);
    w.pod(static_cast<std::uint8_t>(precision));
    w.pod(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) w.pod(static_cast<std::uint64_t>(d));
    if (precision == Precision::kFloat64) {
      w.bytes(r.data.data(), r.data.size() * sizeof(double));
    } else {
      for (double v : r.data) w.pod(static_cast<float>(v));
    }
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());

  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "PKWS", 4) != 0) throw ValidationError(path.string() + ": not a PKWS container");
  const auto version = r.pod<std::uint32_t>();
  if (version != kContainerVersion) {
    throw ValidationError(path.string() + ": unsupported container version " + std::to_string(version) +
                          " (expected " + std::to_string(kContainerVersion) + ")");
  }
  const auto precision = r.pod<std::uint8_t>();
  if (precision > 1) throw ValidationError(path.string() + ": unknown precision flag");

  Container c;
  std::istringstream meta(r.str());
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(path.string() + ": malformed header line '" + line + "'");
    c.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }

  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto dtype = r.pod<std::uint8_t>();
    if (dtype > 1) throw ValidationError(path.string() + ": tensor '" + name + "' has unknown dtype");
    const auto ndim = r.pod<std::uint32_t>();
    std::vector<std::uint64_t> shape(ndim);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = r.pod<std::uint64_t>();
      n *= d;
    }
    const std::size_t width = dtype == 0 ? sizeof(double) : sizeof(float);
    if (n > r.remaining() / width) throw ValidationError(path.string() + ": truncated checkpoint file");
    std::vector<double> values(static_cast<std::size_t>(n));
    if (dtype == 0) {
      r.bytes(values.data(), values.size() * sizeof(double));
    } else {
      for (auto& v : values) v = static_cast<double>(r.pod<float>());
    }
    c.put(name, std::move(shape), values);
  }
  return c;
}

}  // namespace pkws::nn
