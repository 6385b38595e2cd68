#include "mdaif/losses.hpp"

namespace mdaif::loss {

namespace {

template <typename T>
Tensor<T> pointwise(const Tensor<T>& rgb, T r, T g, T b) {
  return conv2d(rgb, Tensor<T>({1, 3, 1, 1}, {r, g, b}), 1, 0);
}

template <typename T>
void check_rgb(const Tensor<T>& x, const char* what) {
  if (x.rank() != 4 || x.size(1) != 3)
    throw DimensionError(std::string(what) + " must be [B, 3, H, W], got " + shape_str(x.shape()));
}

}  // namespace

template <typename T>
YCbCr<T> rgb_to_ycbcr(const Tensor<T>& rgb) {
  check_rgb(rgb, "ycbcr input");
  // Cb = 0.5 + 0.564 (B - Y), Cr = 0.5 + 0.713 (R - Y), expanded in R, G, B.
  const T kb = T(0.564), kr = T(0.713);
  YCbCr<T> out;
  out.y = pointwise(rgb, T(0.299), T(0.587), T(0.114));
  out.cb = add_scalar(pointwise(rgb, -kb * T(0.299), -kb * T(0.587), kb * (T(1) - T(0.114))), T(0.5));
  out.cr = add_scalar(pointwise(rgb, kr * (T(1) - T(0.299)), -kr * T(0.587), -kr * T(0.114)), T(0.5));
  return out;
}

template <typename T>
Tensor<T> luminance(const Tensor<T>& img) {
  if (img.rank() == 4 && img.size(1) == 1) return img;
  return rgb_to_ycbcr(img).y;
}

template <typename T>
Tensor<T> image_gradient(const Tensor<T>& gray) {
  if (gray.rank() != 4 || gray.size(1) != 1)
    throw DimensionError("image_gradient expects [B, 1, H, W], got " + shape_str(gray.shape()));
  const Tensor<T> sx({1, 1, 3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
  const Tensor<T> sy({1, 1, 3, 3}, {-1, -2, -1, 0, 0, 0, 1, 2, 1});
  const Tensor<T> padded = pad_reflect(gray, 1);
  return add(abs(conv2d(padded, sx, 1, 0)), abs(conv2d(padded, sy, 1, 0)));
}

template <typename T>
Tensor<T> l_inte(const Tensor<T>& fused, const Tensor<T>& clean_vi, const Tensor<T>& ir) {
  check_rgb(fused, "fused image");
  if (clean_vi.shape() != fused.shape() || ir.rank() != 4 || ir.size(1) != 1 ||
      ir.size(0) != fused.size(0) || ir.size(2) != fused.size(2) || ir.size(3) != fused.size(3))
    throw DimensionError("loss inputs disagree: " + shape_str(fused.shape()) + ", " +
                         shape_str(clean_vi.shape()) + ", " + shape_str(ir.shape()));
  Tensor<T> target, target_grad;
  {
    NoGradGuard guard;
    const Tensor<T> y_vi = luminance(clean_vi);
    target = maximum(y_vi, ir);
    target_grad = maximum(image_gradient(y_vi), image_gradient(ir));
  }
  const Tensor<T> y_f = luminance(fused);
  const Tensor<T> intensity = mean_all(abs(sub(y_f, target)));
  const Tensor<T> gradient = mean_all(abs(sub(image_gradient(y_f), target_grad)));
  return add(intensity, gradient);
}

template <typename T>
Tensor<T> l_color(const Tensor<T>& fused, const Tensor<T>& clean_vi) {
  check_rgb(fused, "fused image");
  if (clean_vi.shape() != fused.shape()) throw DimensionError("color loss inputs disagree");
  YCbCr<T> ref;
  {
    NoGradGuard guard;
    ref = rgb_to_ycbcr(clean_vi);
  }
  const YCbCr<T> f = rgb_to_ycbcr(fused);
  return add(mean_all(abs(sub(f.cb, ref.cb))), mean_all(abs(sub(f.cr, ref.cr))));
}

template <typename T>
LossBreakdown<T> fusion_loss(const Tensor<T>& fused, const Tensor<T>& clean_vi, const Tensor<T>& ir) {
  LossBreakdown<T> out;
  out.l_inte = l_inte(fused, clean_vi, ir);
  out.l_color = l_color(fused, clean_vi);
  out.l_fusion = add(out.l_inte, out.l_color);
  return out;
}

#define MDAIF_INSTANTIATE_LOSSES(T)                                                     \
  template struct YCbCr<T>;                                                             \
  template YCbCr<T> rgb_to_ycbcr<T>(const Tensor<T>&);                                  \
  template Tensor<T> luminance<T>(const Tensor<T>&);                                    \
  template Tensor<T> image_gradient<T>(const Tensor<T>&);                               \
  template Tensor<T> l_inte<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> l_color<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template LossBreakdown<T> fusion_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

MDAIF_INSTANTIATE_LOSSES(float)
MDAIF_INSTANTIATE_LOSSES(double)

}  // namespace mdaif::loss
