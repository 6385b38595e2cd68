#pragma once

#include "mdaif/tensor.hpp"

namespace mdaif::loss {

// BT.601 full range on [B, 3, H, W]; each plane is [B, 1, H, W].
template <typename T>
struct YCbCr {
  Tensor<T> y, cb, cr;
};
template <typename T>
YCbCr<T> rgb_to_ycbcr(const Tensor<T>& rgb);
template <typename T>
Tensor<T> luminance(const Tensor<T>& img);  // [B, 1 or 3, H, W] -> [B, 1, H, W]

// Sobel |Gx| + |Gy| with reflect padding: [B, 1, H, W] -> [B, 1, H, W].
template <typename T>
Tensor<T> image_gradient(const Tensor<T>& gray);

// Both terms compare luminance: mean |Y_f - max(Y_vi, IR)| plus
// mean |grad Y_f - max(grad Y_vi, grad IR)|. References carry no gradient.
template <typename T>
Tensor<T> l_inte(const Tensor<T>& fused, const Tensor<T>& clean_vi, const Tensor<T>& ir);
// mean |Cb_f - Cb_vi| + mean |Cr_f - Cr_vi|
template <typename T>
Tensor<T> l_color(const Tensor<T>& fused, const Tensor<T>& clean_vi);

template <typename T>
struct LossBreakdown {
  Tensor<T> l_inte, l_color, l_fusion;
};
template <typename T>
LossBreakdown<T> fusion_loss(const Tensor<T>& fused, const Tensor<T>& clean_vi, const Tensor<T>& ir);

}  // namespace mdaif::loss
