#include "mdaif/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mdaif {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::size_t header_number(const std::string& bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  std::size_t value = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    if (value > (1u << 24)) throw FormatError("malformed header: number too large");
    ++pos;
  }
  if (pos == start) throw FormatError("malformed header: expected a number");
  return value;
}

}  // namespace

ImageBuffer decode_image(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("malformed header: expected P5 or P6 magic");
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  const std::size_t width = header_number(bytes, pos);
  const std::size_t height = header_number(bytes, pos);
  const std::size_t maxval = header_number(bytes, pos);
  if (width == 0 || height == 0) throw FormatError("malformed header: zero image size");
  if (maxval != 255) throw FormatError("unsupported maxval " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("malformed header: missing separator before payload");
  }
  ++pos;
  const std::size_t n = width * height * channels;
  if (bytes.size() - pos < n) {
    throw FormatError("truncated payload: expected " + std::to_string(n) + " bytes, got " +
                      std::to_string(bytes.size() - pos));
  }
  ImageBuffer img(width, height, channels);
  for (std::size_t i = 0; i < n; ++i)
    img.pixels[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return img;
}

ImageBuffer read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_image(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string encode_image(const ImageBuffer& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw FormatError("cannot encode image with " + std::to_string(img.channels) + " channels");
  }
  std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (double p : img.pixels) {
    const double v = std::clamp(p, 0.0, 1.0) * 255.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v))));
  }
  return out;
}

void write_image(const ImageBuffer& img, const std::filesystem::path& path) {
  const std::string bytes = encode_image(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write image " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ImageBuffer to_gray(const ImageBuffer& img) {
  if (img.channels == 1) return img;
  ImageBuffer g(img.width, img.height, 1);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    const double* p = &img.pixels[i * 3];
    g.pixels[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  return g;
}

ImageBuffer clamp01(ImageBuffer img) {
  for (auto& p : img.pixels) p = std::clamp(p, 0.0, 1.0);
  return img;
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<const ImageBuffer*>& images) {
  if (images.empty()) throw DimensionError("images_to_tensor of an empty batch");
  const ImageBuffer& first = *images[0];
  const std::size_t h = first.height, w = first.width, c = first.channels;
  std::vector<T> data(images.size() * c * h * w);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const ImageBuffer& img = *images[b];
    if (!img.same_size(first) || img.channels != c) {
      throw DimensionError("batch images differ in size or channel count");
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          data[((b * c + ch) * h + y) * w + x] = static_cast<T>(img.at(y, x, ch));
  }
  return Tensor<T>(Shape{images.size(), c, h, w}, std::move(data));
}

template <typename T>
ImageBuffer tensor_to_image(const Tensor<T>& t, std::size_t index) {
  if (t.rank() != 4 || index >= t.size(0)) {
    throw DimensionError("tensor_to_image needs [B, C, H, W], got " + shape_str(t.shape()));
  }
  const std::size_t c = t.size(1), h = t.size(2), w = t.size(3);
  ImageBuffer img(w, h, c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        img.at(y, x, ch) = static_cast<double>(t[((index * c + ch) * h + y) * w + x]);
  return img;
}

template Tensor<float> images_to_tensor<float>(const std::vector<const ImageBuffer*>&);
template Tensor<double> images_to_tensor<double>(const std::vector<const ImageBuffer*>&);
template ImageBuffer tensor_to_image<float>(const Tensor<float>&, std::size_t);
template ImageBuffer tensor_to_image<double>(const Tensor<double>&, std::size_t);

}  // namespace mdaif
