#include "ssmic/nn.hpp"

namespace ssmic::nn {

ops::IndexMap space_to_depth_index(std::size_t height, std::size_t width, std::size_t channels) {
  const std::size_t oh = height / 2, ow = width / 2, oc = 4 * channels;
  ops::IndexMap idx(oh * ow * oc);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t y = 2 * i + q / 2, x = 2 * j + q % 2;
        for (std::size_t c = 0; c < channels; ++c)
          idx[(i * ow + j) * oc + q * channels + c] = (y * width + x) * channels + c;
      }
  return idx;
}

ops::IndexMap depth_to_space_index(std::size_t height, std::size_t width, std::size_t channels) {
  // height/width are the input extents; the output is 2H x 2W x channels.
  const std::size_t oh = 2 * height, ow = 2 * width, ic = 4 * channels;
  ops::IndexMap idx(oh * ow * channels);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      const std::size_t q = (y % 2) * 2 + x % 2;
      for (std::size_t c = 0; c < channels; ++c)
        idx[(y * ow + x) * channels + c] = ((y / 2) * width + x / 2) * ic + q * channels + c;
    }
  return idx;
}

std::size_t scan_cell(ScanPath path, std::size_t step, std::size_t height, std::size_t width) {
  const std::size_t L = height * width;
  switch (path) {
    case ScanPath::kRowForward:
      return step;
    case ScanPath::kColForward:
      return (step % height) * width + step / height;
    case ScanPath::kRowBackward:
      return L - 1 - step;
    case ScanPath::kColBackward:
      return scan_cell(ScanPath::kColForward, L - 1 - step, height, width);
  }
  return step;
}

ops::IndexMap scan_index(ScanPath path, std::size_t height, std::size_t width, std::size_t channels) {
  const std::size_t L = height * width;
  ops::IndexMap idx(L * channels);
  for (std::size_t s = 0; s < L; ++s) {
    const std::size_t cell = scan_cell(path, s, height, width);
    for (std::size_t d = 0; d < channels; ++d) idx[s * channels + d] = cell * channels + d;
  }
  return idx;
}

ops::IndexMap merge_index(ScanPath path, std::size_t height, std::size_t width, std::size_t channels) {
  const std::size_t L = height * width;
  ops::IndexMap idx(L * channels);
  for (std::size_t s = 0; s < L; ++s) {
    const std::size_t cell = scan_cell(path, s, height, width);
    for (std::size_t d = 0; d < channels; ++d) idx[cell * channels + d] = s * channels + d;
  }
  return idx;
}

}  // namespace ssmic::nn
