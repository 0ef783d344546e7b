#pragma once

#include <string>

#include "bfpkit/tensor.hpp"

namespace bfpkit::cli {

/// Self-describing binary tensor file: magic "BTSR", version, rank,
/// dims (u32 LE each), then row-major float64 LE payload. A text import
/// path accepts whitespace-separated dims on the first line and values
/// after; the reader sniffs the magic to pick the decoder.
Tensor read_tensor_file(const std::string& path);
void write_tensor_file(const std::string& path, const Tensor& t);

}  // namespace bfpkit::cli
