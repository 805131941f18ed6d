#include "pkws/dsp/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "pkws/error.hpp"

namespace pkws::dsp {
namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  auto bad = [&](const std::string& why) {
    return ValidationError(path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw bad("not a RIFF/WAVE file");
  }

  WavData wav;
  bool have_fmt = false;
  bool have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || avail < 16) throw bad("truncated fmt chunk");
      const std::uint16_t format = le16(bytes.data() + body);
      wav.channels = le16(bytes.data() + body + 2);
      wav.sample_rate = static_cast<int>(le32(bytes.data() + body + 4));
      wav.bits_per_sample = le16(bytes.data() + body + 14);
      // 0xFFFE is WAVE_FORMAT_EXTENSIBLE; accepted when the sample layout is plain 16-bit.
      if (format != 1 && format != 0xFFFE) throw bad("unsupported WAV encoding (need PCM)");
      if (wav.bits_per_sample != 16) throw bad("unsupported bit depth " + std::to_string(wav.bits_per_sample));
      if (wav.channels < 1) throw bad("invalid channel count");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw bad("data chunk before fmt chunk");
      const std::size_t n = std::min<std::size_t>(size, avail) / 2;
      wav.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        wav.samples[i] = static_cast<std::int16_t>(le16(bytes.data() + body + 2 * i));
      }
      have_data = true;
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw bad("missing fmt chunk");
  if (!have_data) throw bad("missing data chunk");
  return wav;
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               int sample_rate) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, 1);  // PCM
  put16(out, 1);  // mono
  put32(out, static_cast<std::uint32_t>(sample_rate));
  put32(out, static_cast<std::uint32_t>(sample_rate * 2));
  put16(out, 2);
  put16(out, 16);
  out += "data";
  put32(out, data_bytes);
  for (double s : samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    const long q = std::clamp(std::lround(clipped * 32768.0), -32768L, 32767L);
    const auto v = static_cast<std::int16_t>(q);
    put16(out, static_cast<std::uint16_t>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace pkws::dsp
