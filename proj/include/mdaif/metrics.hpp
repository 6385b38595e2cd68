#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mdaif/image.hpp"

namespace mdaif::metrics {

inline constexpr double kPsnrCap = 99.0;

// Over all channels; identical images give kPsnrCap.
double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0);

// Single-channel inputs. Gaussian window 11x11 (sigma 1.5), K1 = 0.01,
// K2 = 0.03, dynamic range 1; mean over the valid region.
double ssim(const ImageBuffer& a, const ImageBuffer& b);
double fusion_ssim(const ImageBuffer& f, const ImageBuffer& vi, const ImageBuffer& ir);

// Histogram estimates in bits; values in [0, 1] map to `bins` equal bins.
double entropy(const ImageBuffer& a, std::size_t bins = 64);
double mi(const ImageBuffer& a, const ImageBuffer& b, std::size_t bins = 64);
double fusion_mi(const ImageBuffer& f, const ImageBuffer& vi, const ImageBuffer& ir, std::size_t bins = 64);

// Edge-preservation parameters of the fusion artifact measure.
struct NabfParams {
  double gain_gamma = 0.9999, gain_kappa = 19.0, gain_sigma = 0.5;
  double angle_gamma = 0.9995, angle_kappa = 22.0, angle_sigma = 0.5;
  double weight_threshold = 2.0;  // on the 0-255 Sobel scale
  double weight_exponent = 1.5;
  double weight_min = 0.001;
};

// Fraction of source edge weight where the fused image has edges stronger
// than both sources, scaled by the edge-preservation loss. In [0, 1].
double nabf(const ImageBuffer& f, const ImageBuffer& vi, const ImageBuffer& ir, const NabfParams& p = {});

struct MetricRow {
  std::string id;
  double psnr = 0, ssim = 0, nabf = 0, mi = 0;
};

// PSNR of the fused RGB against the clean reference; SSIM, MI and Nabf
// against the gray clean-visible and infrared sources.
MetricRow evaluate(const std::string& id, const ImageBuffer& fused, const ImageBuffer& clean,
                   const ImageBuffer& ir);

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;
};
MetricReport aggregate(std::vector<MetricRow> rows);
std::string report_csv(const MetricReport& r);
nlohmann::json report_json(const MetricReport& r);

}  // namespace mdaif::metrics
