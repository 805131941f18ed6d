#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace pkws::nn {

/// On-disk layout (all integers little-endian):
///   "PKWS" | u32 version | u8 precision (0 = f64, 1 = f32)
///   u32 meta_bytes | meta text ("key=value\n" lines, sorted by key)
///   u32 record_count | records...
/// record: u32 name_len | name | u8 dtype | u32 ndim | u64 dims[ndim] | data
inline constexpr std::uint32_t kContainerVersion = 1;

enum class Precision : std::uint8_t { kFloat64 = 0, kFloat32 = 1 };

struct Record {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  std::uint64_t count() const noexcept;
};

/// Self-describing bundle of named tensors plus a flat key/value config block.
class Container {
 public:
  std::map<std::string, std::string> meta;

  void put(const std::string& name, std::vector<std::uint64_t> shape, std::span<const double> data);
  bool contains(const std::string& name) const;
  /// Throws ValidationError when absent.
  const Record& get(const std::string& name) const;
  const std::vector<Record>& records() const noexcept { return records_; }

  const std::string& meta_at(const std::string& key) const;
  long long meta_int(const std::string& key) const;
  double meta_double(const std::string& key) const;

 private:
  std::vector<Record> records_;
  std::map<std::string, std::size_t> index_;
};

void write_container(const std::filesystem::path& path, const Container& c, Precision precision = Precision::kFloat64);
/// Throws IoError when unreadable, ValidationError on bad magic, version
/// mismatch or truncation.
Container read_container(const std::filesystem::path& path);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace pkws::nn
