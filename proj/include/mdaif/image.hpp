#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdaif/tensor.hpp"

namespace mdaif {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major, channel-interleaved pixels in [0, 1].
struct ImageBuffer {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<double> pixels;

  ImageBuffer() = default;
  ImageBuffer(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool same_size(const ImageBuffer& o) const { return width == o.width && height == o.height; }
  bool operator==(const ImageBuffer&) const = default;
};

// PPM (P6) for 3 channels, PGM (P5) for 1 channel, maxval 255.
ImageBuffer read_image(const std::filesystem::path& path);
ImageBuffer decode_image(const std::string& bytes);
void write_image(const ImageBuffer& img, const std::filesystem::path& path);
std::string encode_image(const ImageBuffer& img);

// BT.601 luma for 3-channel images; copy for 1-channel.
ImageBuffer to_gray(const ImageBuffer& img);
ImageBuffer clamp01(ImageBuffer img);

// [B, C, H, W] stacks; all images must share size and channel count.
template <typename T>
Tensor<T> images_to_tensor(const std::vector<const ImageBuffer*>& images);
template <typename T>
ImageBuffer tensor_to_image(const Tensor<T>& t, std::size_t index);

}  // namespace mdaif
