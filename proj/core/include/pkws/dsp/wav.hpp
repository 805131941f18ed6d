#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace pkws::dsp {

/// Raw contents of a PCM WAV file. Samples are interleaved when channels > 1.
struct WavData {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  std::vector<std::int16_t> samples;
};

/// Reads a 16-bit PCM RIFF/WAVE file. Unknown chunks are skipped.
/// Throws IoError when the file cannot be opened and ValidationError for
/// anything other than uncompressed 16-bit PCM.
WavData read_wav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM. Input samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               int sample_rate);

}  // namespace pkws::dsp
