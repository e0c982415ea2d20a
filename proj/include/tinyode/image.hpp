#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "tinyode/tensor.hpp"

namespace tinyode {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Decodes PNG or binary/ASCII PPM (P6/P3) into [3, H, W] with values in
// [0, 1]. Grey and alpha channels are converted to RGB by libpng.
FloatTensor load_image(const std::filesystem::path& path);

// load_image plus a size check; no resizing is done.
FloatTensor load_image(const std::filesystem::path& path, std::size_t expected_size);

// 8-bit binary PPM writer, values clamped to [0, 1].
void save_ppm(const std::filesystem::path& path, const FloatTensor& rgb);

}  // namespace tinyode
