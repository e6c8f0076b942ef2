#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rankpyr/tensor.hpp"

namespace rankpyr::io {

using TextChunks = std::vector<std::pair<std::string, std::string>>;

// 8-bit RGB PNG -> (3, H, W) tensor in [0, 1]. Grayscale and palette images
// are expanded to RGB.
Tensor read_png(const std::filesystem::path& path);

// Clamps to [0, 1] and writes 8-bit RGB. Optional tEXt chunks carry
// key/value metadata (e.g. the overlay's mass annotation).
void write_png(const Tensor& rgb, const std::filesystem::path& path, const TextChunks& text = {});

TextChunks read_png_text(const std::filesystem::path& path);

}  // namespace rankpyr::io
