#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "diffpad/tensor.hpp"

namespace diffpad {

// 8-bit grayscale or RGB PNG -> [0, 1] intensities (value / 255). Palette
// and 16-bit inputs are converted by libpng; alpha is dropped.
Image load_image(const std::filesystem::path& path);

// Rounds to the nearest 1/255 step after clamping to [0, 1]. One channel is
// written as grayscale, three as RGB. Written atomically.
void save_image(const Image& image, const std::filesystem::path& path);

// In-memory PNG encode/decode used by the file functions above.
std::string encode_png(const Image& image);
Image decode_png(std::string_view bytes, const std::string& name = "<memory>");

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

}  // namespace diffpad
