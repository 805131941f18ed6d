#pragma once

#include <filesystem>
#include <string>

#include "pkws/nn/container.hpp"
#include "pkws/nn/encoder.hpp"

namespace pkws::nn {

/// Writes the encoder config into `c.meta` and every parameter and buffer as
/// a tensor named `prefix + tensor name`.
void store_encoder(Container& c, const Encoder& enc, const std::string& prefix = "encoder.");

/// Rebuilds an encoder from `store_encoder` output. Every tensor must be
/// present with the shape the header config implies; throws ValidationError
/// otherwise.
Encoder restore_encoder(const Container& c, const std::string& prefix = "encoder.");

void save_checkpoint(const Encoder& enc, const std::filesystem::path& path,
                     Precision precision = Precision::kFloat64);
Encoder load_checkpoint(const std::filesystem::path& path);

}  // namespace pkws::nn
