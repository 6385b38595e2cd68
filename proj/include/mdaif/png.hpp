#pragma once

#include <string>

#include "mdaif/image.hpp"

namespace mdaif::io {

// 8-bit PNG (gray or RGB), zlib-compressed, no filtering. Used for the prior
// service payload.
std::string encode_png(const ImageBuffer& img);

}  // namespace mdaif::io
