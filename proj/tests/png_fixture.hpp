#pragma once

// Test images written straight through libpng, independent of the library.
#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace fixture {

inline bool write_rgb_png(const std::string& path, std::uint32_t height, std::uint32_t width,
                          const std::vector<std::uint8_t>& rgb) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = width;
  image.height = height;
  image.format = PNG_FORMAT_RGB;
  return png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr) != 0;
}

inline bool read_rgb_png(const std::string& path, std::uint32_t& height, std::uint32_t& width,
                         std::vector<std::uint8_t>& rgb) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) return false;
  image.format = PNG_FORMAT_RGB;
  rgb.resize(PNG_IMAGE_SIZE(image));
  height = image.height;
  width = image.width;
  return png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr) != 0;
}

// Smooth gradient with a little texture.
inline std::vector<std::uint8_t> pattern(std::uint32_t height, std::uint32_t width, double phase) {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(height) * width * 3);
  for (std::uint32_t i = 0; i < height; ++i)
    for (std::uint32_t j = 0; j < width; ++j)
      for (std::uint32_t c = 0; c < 3; ++c) {
        const double s = 0.5 + 0.45 * std::sin(0.07 * i + 0.11 * j + phase + 2.0 * c);
        v[(static_cast<std::size_t>(i) * width + j) * 3 + c] = static_cast<std::uint8_t>(std::lround(255.0 * s));
      }
  return v;
}

inline const char* kMicroConfig =
    R"({"ga_stages":[[4,1],[4,1]],"ha_stages":[[4,1]],"state_dim":2,"inner_ratio":1,"mlp_ratio":1})";

}  // namespace fixture
