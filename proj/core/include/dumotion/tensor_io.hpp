#pragma once

#include <filesystem>
#include <string>

#include "dumotion/common.hpp"

namespace dumotion {

// Flat binary tensor files: 32-bit little-endian IEEE floats, row-major,
// no header. Shapes travel in the accompanying manifest.
void write_f32(const std::filesystem::path& path, const MatF& m);

// Reads exactly rows*cols floats; a short or oversized file is rejected.
MatF read_f32(const std::filesystem::path& path, Index rows, Index cols);

// write-temp-then-rename so that readers never observe a partial file
void atomic_write_text(const std::filesystem::path& path, const std::string& content);

std::string read_text(const std::filesystem::path& path);

}  // namespace dumotion
