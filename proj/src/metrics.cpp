#include "mdaif/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace mdaif::metrics {

namespace {

void check_same(const ImageBuffer& a, const ImageBuffer& b, const char* what) {
  if (!a.same_size(b) || a.channels != b.channels)
    throw DimensionError(std::string(what) + ": image sizes or channel counts differ");
}

void check_gray(const ImageBuffer& a, const char* what) {
  if (a.channels != 1) throw DimensionError(std::string(what) + " expects single-channel images");
}

std::size_t bin_of(double v, std::size_t bins) {
  const auto i = static_cast<std::ptrdiff_t>(std::floor(std::clamp(v, 0.0, 1.0) * static_cast<double>(bins)));
  return static_cast<std::size_t>(std::min<std::ptrdiff_t>(i, static_cast<std::ptrdiff_t>(bins) - 1));
}

double entropy_bits(const std::vector<double>& counts, double total) {
  double h = 0;
  for (double c : counts)
    if (c > 0) {
      const double p = c / total;
      h -= p * std::log2(p);
    }
  return h;
}

struct Sobel {
  std::vector<double> strength, angle;
};

// Sobel response on the 0-255 scale with reflected borders.
Sobel sobel(const ImageBuffer& g) {
  const auto H = static_cast<std::ptrdiff_t>(g.height), W = static_cast<std::ptrdiff_t>(g.width);
  auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
    if (n == 1) return std::ptrdiff_t{0};
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    return 255.0 * g.pixels[static_cast<std::size_t>(reflect(y, H) * W + reflect(x, W))];
  };
  Sobel s{std::vector<double>(g.pixels.size()), std::vector<double>(g.pixels.size())};
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      const auto i = static_cast<std::size_t>(y * W + x);
      s.strength[i] = std::hypot(gx, gy);
      s.angle[i] = gx == 0.0 ? std::numbers::pi / 2 : std::atan(gy / gx);
    }
  return s;
}

}  // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak) {
  check_same(a, b, "psnr");
  if (a.pixels.empty()) throw DimensionError("psnr of empty images");
  double se = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) se += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
  const double mse = se / static_cast<double>(a.pixels.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  check_same(a, b, "ssim");
  check_gray(a, "ssim");
  constexpr std::size_t kWin = 11;
  constexpr double kSigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  if (a.width < kWin || a.height < kWin) throw DimensionError("ssim needs images of at least 11x11");
  double win[kWin][kWin], total = 0;
  for (std::size_t i = 0; i < kWin; ++i)
    for (std::size_t j = 0; j < kWin; ++j) {
      const double dy = static_cast<double>(i) - 5.0, dx = static_cast<double>(j) - 5.0;
      win[i][j] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
      total += win[i][j];
    }
  for (auto& row : win)
    for (double& v : row) v /= total;

  const std::size_t oh = a.height - kWin + 1, ow = a.width - kWin + 1;
  double acc = 0;
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < kWin; ++i)
        for (std::size_t j = 0; j < kWin; ++j) {
          const double w = win[i][j], va = a.at(y + i, x + j), vb = b.at(y + i, x + j);
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  return acc / static_cast<double>(oh * ow);
}

double fusion_ssim(const ImageBuffer& f, const ImageBuffer& vi, const ImageBuffer& ir) {
  return ssim(f, vi) + ssim(f, ir);
}

double entropy(const ImageBuffer& a, std::size_t bins) {
  if (bins == 0 || a.pixels.empty()) throw DimensionError("entropy needs pixels and bins");
  std::vector<double> h(bins, 0.0);
  for (double v : a.pixels) h[bin_of(v, bins)] += 1;
  return entropy_bits(h, static_cast<double>(a.pixels.size()));
}

double mi(const ImageBuffer& a, const ImageBuffer& b, std::size_t bins) {
  check_same(a, b, "mi");
  if (bins == 0 || a.pixels.empty()) throw DimensionError("mi needs pixels and bins");
  std::vector<double> joint(bins * bins, 0.0), ha(bins, 0.0), hb(bins, 0.0);
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const std::size_t ia = bin_of(a.pixels[i], bins), ib = bin_of(b.pixels[i], bins);
    joint[ia * bins + ib] += 1;
    ha[ia] += 1;
    hb[ib] += 1;
  }
  const double n = static_cast<double>(a.pixels.size());
  return std::max(0.0, entropy_bits(ha, n) + entropy_bits(hb, n) - entropy_bits(joint, n));
}

double fusion_mi(const ImageBuffer& f, const ImageBuffer& vi, const ImageBuffer& ir, std::size_t bins) {
  return mi(f, vi, bins) + mi(f, ir, bins);
}

double nabf(const ImageBuffer& f, const ImageBuffer& vi, const ImageBuffer& ir, const NabfParams& p) {
  check_same(f, vi, "nabf");
  check_same(f, ir, "nabf");
  check_gray(f, "nabf");
  const Sobel sf = sobel(f), sa = sobel(vi), sb = sobel(ir);

  auto preservation = [&](const Sobel& s, std::size_t i) {
    const double gs = s.strength[i], gf = sf.strength[i];
    const double g = gs > gf ? gf / gs : (gs == gf ? 1.0 : gs / gf);
    const double a = std::abs(std::abs(s.angle[i] - sf.angle[i]) - std::numbers::pi / 2) * 2 / std::numbers::pi;
    const double qg = p.gain_gamma / (1 + std::exp(-p.gain_kappa * (g - p.gain_sigma)));
    const double qa = p.angle_gamma / (1 + std::exp(-p.angle_kappa * (a - p.angle_sigma)));
    return std::sqrt(qg * qa);
  };
  auto weight = [&](double g) { return g >= p.weight_threshold ? std::pow(g, p.weight_exponent) : p.weight_min; };

  double artifact = 0, total = 0;
  for (std::size_t i = 0; i < f.pixels.size(); ++i) {
    const double wa = weight(sa.strength[i]), wb = weight(sb.strength[i]);
    total += wa + wb;
    if (sf.strength[i] > sa.strength[i] && sf.strength[i] > sb.strength[i])
      artifact += (1 - preservation(sa, i)) * wa + (1 - preservation(sb, i)) * wb;
  }
  return total > 0 ? std::clamp(artifact / total, 0.0, 1.0) : 0.0;
}

MetricRow evaluate(const std::string& id, const ImageBuffer& fused, const ImageBuffer& clean,
                   const ImageBuffer& ir) {
  check_same(fused, clean, "evaluate");
  const ImageBuffer gf = to_gray(fused), gv = to_gray(clean), gi = to_gray(ir);
  MetricRow r;
  r.id = id;
  r.psnr = psnr(fused, clean);
  r.ssim = fusion_ssim(gf, gv, gi);
  r.nabf = nabf(gf, gv, gi);
  r.mi = fusion_mi(gf, gv, gi);
  return r;
}

MetricReport aggregate(std::vector<MetricRow> rows) {
  MetricReport r;
  r.mean.id = "mean";
  for (const auto& row : rows) {
    r.mean.psnr += row.psnr;
    r.mean.ssim += row.ssim;
    r.mean.nabf += row.nabf;
    r.mean.mi += row.mi;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    r.mean.psnr /= n;
    r.mean.ssim /= n;
    r.mean.nabf /= n;
    r.mean.mi /= n;
  }
  r.rows = std::move(rows);
  return r;
}

std::string report_csv(const MetricReport& r) {
  std::ostringstream out;
  out.precision(9);
  out << "image,psnr,ssim,nabf,mi\n";
  for (const auto& row : r.rows)
    out << row.id << "," << row.psnr << "," << row.ssim << "," << row.nabf << "," << row.mi << "\n";
  return out.str();
}

nlohmann::json report_json(const MetricReport& r) {
  return {{"psnr", r.mean.psnr}, {"ssim", r.mean.ssim}, {"nabf", r.mean.nabf}, {"mi", r.mean.mi},
          {"count", r.rows.size()}};
}

}  // namespace mdaif::metrics
