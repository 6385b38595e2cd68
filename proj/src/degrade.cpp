#include "mdaif/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mdaif/seed.hpp"

namespace mdaif::degrade {

using nlohmann::json;

std::string to_string(Degradation d) {
  switch (d) {
    case Degradation::haze: return "haze";
    case Degradation::rain: return "rain";
    case Degradation::snow: return "snow";
  }
  return "?";
}

Degradation parse_degradation(const std::string& s) {
  for (auto d : kDegradations)
    if (to_string(d) == s) return d;
  throw std::invalid_argument("unknown degradation '" + s + "' (haze|rain|snow)");
}

Severity parse_severity(const std::string& s) {
  if (s == "light") return Severity::light;
  if (s == "medium") return Severity::medium;
  if (s == "heavy") return Severity::heavy;
  throw std::invalid_argument("unknown severity '" + s + "' (light|medium|heavy)");
}

void HazeParams::validate() const {
  if (!(beta >= 0.0)) throw std::invalid_argument("haze beta must be >= 0");
  for (double a : airlight)
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("haze airlight must lie in [0, 1]");
  if (depth_mode == DepthMode::file && depth_path.empty())
    throw std::invalid_argument("file depth mode needs a depth path");
}

void RainParams::validate() const {
  if (!(density >= 0.0 && density <= 1.0)) throw std::invalid_argument("rain density must lie in [0, 1]");
  if (!(intensity >= 0.0 && intensity <= 1.0)) throw std::invalid_argument("rain intensity must lie in [0, 1]");
  if (streak_length == 0) throw std::invalid_argument("rain streak length must be positive");
}

void SnowParams::validate() const {
  if (!(flakes_per_megapixel >= 0.0)) throw std::invalid_argument("snow flake count must be >= 0");
  if (!(radius_min > 0.0 && radius_max >= radius_min))
    throw std::invalid_argument("snow radii must be positive with min <= max");
  if (!(veil_strength >= 0.0 && veil_strength < 1.0)) throw std::invalid_argument("snow veil must lie in [0, 1)");
  if (!(brightness >= 0.0 && brightness <= 1.0)) throw std::invalid_argument("snow brightness must lie in [0, 1]");
}

HazeParams haze_preset(Severity s) {
  HazeParams p;
  p.beta = s == Severity::light ? 0.8 : (s == Severity::medium ? 1.6 : 2.6);
  return p;
}

RainParams rain_preset(Severity s, std::uint64_t seed) {
  RainParams p;
  p.density = s == Severity::light ? 0.12 : (s == Severity::medium ? 0.25 : 0.4);
  p.intensity = s == Severity::light ? 0.7 : (s == Severity::medium ? 0.85 : 1.0);
  p.streak_length = s == Severity::heavy ? 11 : 9;
  p.seed = seed;
  return p;
}

SnowParams snow_preset(Severity s, std::uint64_t seed) {
  SnowParams p;
  p.flakes_per_megapixel = s == Severity::light ? 15000.0 : (s == Severity::medium ? 30000.0 : 50000.0);
  p.veil_strength = s == Severity::light ? 0.05 : (s == Severity::medium ? 0.1 : 0.18);
  p.seed = seed;
  return p;
}

ImageBuffer procedural_depth(std::size_t height, std::size_t width, DepthMode mode) {
  if (height == 0 || width == 0) throw DimensionError("depth map must be non-empty");
  ImageBuffer d(width, height, 1);
  if (mode == DepthMode::ramp) {
    for (std::size_t y = 0; y < height; ++y) {
      const double v = height == 1 ? 1.0 : 1.0 - static_cast<double>(y) / static_cast<double>(height - 1);
      for (std::size_t x = 0; x < width; ++x) d.at(y, x) = v;
    }
  } else if (mode == DepthMode::radial) {
    const double cy = 0.5 * static_cast<double>(height - 1), cx = 0.5 * static_cast<double>(width - 1);
    const double rmax = std::hypot(cy, cx);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        d.at(y, x) = rmax == 0.0 ? 0.0 : std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx) / rmax;
  } else {
    throw std::invalid_argument("file depth mode has no procedural form");
  }
  return d;
}

ImageBuffer load_depth(const std::filesystem::path& path, std::size_t height, std::size_t width) {
  ImageBuffer d = read_image(path);
  if (d.channels != 1) throw FormatError("depth map must be a PGM: " + path.string());
  if (d.height != height || d.width != width) {
    throw DimensionError("depth map " + path.string() + " is " + std::to_string(d.width) + "x" +
                         std::to_string(d.height) + ", image is " + std::to_string(width) + "x" +
                         std::to_string(height));
  }
  return d;
}

ImageBuffer depth_for(const HazeParams& p, std::size_t height, std::size_t width) {
  return p.depth_mode == DepthMode::file ? load_depth(p.depth_path, height, width)
                                         : procedural_depth(height, width, p.depth_mode);
}

namespace {

double clamp_count(double v, std::size_t& clamped) {
  if (v < 0.0) {
    ++clamped;
    return 0.0;
  }
  if (v > 1.0) {
    ++clamped;
    return 1.0;
  }
  return v;
}

void report(std::size_t* out, std::size_t n) {
  if (out) *out = n;
}

}  // namespace

ImageBuffer synth_haze(const ImageBuffer& clean, const ImageBuffer& depth, const HazeParams& p,
                       std::size_t* clamped) {
  p.validate();
  if (!clean.same_size(depth) || depth.channels != 1)
    throw DimensionError("depth map size does not match the image");
  ImageBuffer out = clean;
  std::size_t n = 0;
  for (std::size_t y = 0; y < clean.height; ++y) {
    for (std::size_t x = 0; x < clean.width; ++x) {
      const double t = std::exp(-p.beta * depth.at(y, x));
      for (std::size_t c = 0; c < clean.channels; ++c) {
        const double a = p.airlight[std::min<std::size_t>(c, 2)];
        out.at(y, x, c) = clamp_count(clean.at(y, x, c) * t + a * (1.0 - t), n);
      }
    }
  }
  report(clamped, n);
  return out;
}

std::vector<double> line_kernel(std::size_t length, double angle_deg) {
  if (length == 0) throw std::invalid_argument("line kernel length must be positive");
  const std::size_t L = length;
  const double c = 0.5 * static_cast<double>(L - 1);
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(th), dy = -std::sin(th);  // image y grows downward
  std::vector<double> k(L * L, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    const double t = static_cast<double>(i) - c;
    const auto x = static_cast<std::ptrdiff_t>(std::lround(c + t * dx));
    const auto y = static_cast<std::ptrdiff_t>(std::lround(c + t * dy));
    if (x >= 0 && y >= 0 && x < static_cast<std::ptrdiff_t>(L) && y < static_cast<std::ptrdiff_t>(L))
      k[static_cast<std::size_t>(y) * L + static_cast<std::size_t>(x)] = 1.0;
  }
  double s = 0.0;
  for (double v : k) s += v;
  for (double& v : k) v /= s;
  return k;
}

std::vector<std::uint8_t> bernoulli_mask(std::size_t height, std::size_t width, double density,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "rain.mask"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::uint8_t> m(height * width);
  for (auto& v : m) v = u(rng) < density ? 1 : 0;
  return m;
}

ImageBuffer streak_layer(const std::vector<std::uint8_t>& mask, std::size_t height,
                         std::size_t width, std::size_t length, double angle_deg) {
  if (mask.size() != height * width) throw DimensionError("rain mask size does not match the image");
  const auto k = line_kernel(length, angle_deg);
  const auto L = static_cast<std::ptrdiff_t>(length);
  const std::ptrdiff_t c = (L - 1) / 2;
  const auto H = static_cast<std::ptrdiff_t>(height), W = static_cast<std::ptrdiff_t>(width);
  ImageBuffer s(width, height, 1);
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      if (!mask[static_cast<std::size_t>(y * W + x)]) continue;
      for (std::ptrdiff_t ky = 0; ky < L; ++ky) {
        const std::ptrdiff_t oy = y + ky - c;
        if (oy < 0 || oy >= H) continue;
        for (std::ptrdiff_t kx = 0; kx < L; ++kx) {
          const std::ptrdiff_t ox = x + kx - c;
          if (ox < 0 || ox >= W) continue;
          s.pixels[static_cast<std::size_t>(oy * W + ox)] += k[static_cast<std::size_t>(ky * L + kx)];
        }
      }
    }
  }
  return s;
}

ImageBuffer synth_rain(const ImageBuffer& clean, const RainParams& p, std::size_t* clamped) {
  p.validate();
  const auto mask = bernoulli_mask(clean.height, clean.width, p.density, p.seed);
  const ImageBuffer streak = streak_layer(mask, clean.height, clean.width, p.streak_length, p.angle_deg);
  ImageBuffer out = clean;
  std::size_t n = 0;
  for (std::size_t i = 0; i < clean.width * clean.height; ++i) {
    const double s = p.intensity * streak.pixels[i];
    for (std::size_t c = 0; c < clean.channels; ++c) {
      double& v = out.pixels[i * clean.channels + c];
      v = clamp_count(v + s * (1.0 - v), n);  // screen blend, never below v
    }
  }
  report(clamped, n);
  return out;
}

std::vector<Flake> place_flakes(std::size_t height, std::size_t width, const SnowParams& p) {
  p.validate();
  const double area_mp = static_cast<double>(height * width) / 1e6;
  const auto count = static_cast<std::size_t>(std::llround(p.flakes_per_megapixel * area_mp));
  std::mt19937_64 rng(derive_seed(p.seed, "snow.flakes"));
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(width));
  std::uniform_real_distribution<double> uy(0.0, static_cast<double>(height));
  std::uniform_real_distribution<double> ur(p.radius_min, p.radius_max);
  std::vector<Flake> flakes(count);
  for (auto& f : flakes) {
    f.cx = ux(rng);
    f.cy = uy(rng);
    f.radius = ur(rng);
  }
  return flakes;
}

ImageBuffer render_snow(const ImageBuffer& clean, const std::vector<Flake>& flakes,
                        const SnowParams& p, std::size_t* clamped) {
  p.validate();
  ImageBuffer out = clean;
  const auto H = static_cast<std::ptrdiff_t>(clean.height), W = static_cast<std::ptrdiff_t>(clean.width);
  for (const Flake& f : flakes) {
    // Coverage falls linearly over one pixel across the rim.
    const auto y0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(f.cy - f.radius - 1)));
    const auto y1 = std::min<std::ptrdiff_t>(H - 1, static_cast<std::ptrdiff_t>(std::ceil(f.cy + f.radius + 1)));
    const auto x0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(f.cx - f.radius - 1)));
    const auto x1 = std::min<std::ptrdiff_t>(W - 1, static_cast<std::ptrdiff_t>(std::ceil(f.cx + f.radius + 1)));
    for (std::ptrdiff_t y = y0; y <= y1; ++y) {
      for (std::ptrdiff_t x = x0; x <= x1; ++x) {
        const double d = std::hypot(static_cast<double>(x) - f.cx, static_cast<double>(y) - f.cy);
        const double cover = std::clamp(f.radius + 0.5 - d, 0.0, 1.0);
        if (cover <= 0.0) continue;
        const double v = p.brightness * cover;
        for (std::size_t c = 0; c < clean.channels; ++c) {
          double& o = out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
          o = std::max(o, v);
        }
      }
    }
  }
  std::size_t n = 0;
  for (double& v : out.pixels) v = clamp_count(v + p.veil_strength * (1.0 - v), n);
  report(clamped, n);
  return out;
}

ImageBuffer synth_snow(const ImageBuffer& clean, const SnowParams& p, std::size_t* clamped) {
  return render_snow(clean, place_flakes(clean.height, clean.width, p), p, clamped);
}

namespace {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(hh, 2.0) - 1.0));
  const double m = v - c;
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hh)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (double& ch : rgb) ch += m;
  return rgb;
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

CleanPair procedural_pair(std::size_t height, std::size_t width, std::uint64_t seed) {
  if (height == 0 || width == 0) throw DimensionError("scene must be non-empty");
  std::mt19937_64 rng(derive_seed(seed, "scene"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  const double H = static_cast<double>(height), W = static_cast<double>(width);
  // Saturated colours keep the dark channel low, so haze is what raises it.
  const auto top = hsv_to_rgb(uni(0.0, 1.0), uni(0.6, 0.9), uni(0.45, 0.8));
  const auto bottom = hsv_to_rgb(uni(0.0, 1.0), uni(0.6, 0.9), uni(0.35, 0.7));
  const double fx = uni(0.1, 0.35), fy = uni(0.1, 0.35), ph = uni(0.0, 6.28);
  const double ir_base = uni(0.08, 0.2), ir_slope = uni(0.05, 0.2);

  CleanPair pair{ImageBuffer(width, height, 3), ImageBuffer(width, height, 1)};
  for (std::size_t y = 0; y < height; ++y) {
    const double a = static_cast<double>(y) / std::max(1.0, H - 1);
    for (std::size_t x = 0; x < width; ++x) {
      const double tex = 0.04 * std::sin(fx * static_cast<double>(x) + ph) * std::sin(fy * static_cast<double>(y));
      for (std::size_t c = 0; c < 3; ++c) pair.vi.at(y, x, c) = (1 - a) * top[c] + a * bottom[c] + tex;
      pair.ir.at(y, x) = ir_base + ir_slope * a + 0.5 * tex;
    }
  }

  const int shapes = 3 + static_cast<int>(uni(0.0, 4.0));
  for (int s = 0; s < shapes; ++s) {
    const bool hot = s == 0 || u(rng) < 0.25;
    const double cx = uni(0.1, 0.9) * W, cy = uni(0.1, 0.9) * H;
    const double ax = hot ? uni(2.5, 6.0) : uni(4.0, 13.0);
    const double ay = hot ? uni(3.0, 8.0) : uni(4.0, 13.0);
    const bool ellipse = u(rng) < 0.5;
    const auto col = hsv_to_rgb(uni(0.0, 1.0), uni(0.5, 0.95), uni(0.35, 0.95));
    const double lum = 0.299 * col[0] + 0.587 * col[1] + 0.114 * col[2];
    const double ir_val = hot ? uni(0.75, 0.95) : 0.15 + 0.35 * lum;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = (static_cast<double>(x) - cx) / ax, dy = (static_cast<double>(y) - cy) / ay;
        const double r = ellipse ? std::hypot(dx, dy) : std::max(std::abs(dx), std::abs(dy));
        // Signed distance in pixels, approximately.
        const double dist = (r - 1.0) * std::min(ax, ay);
        const double alpha = 1.0 - smoothstep(-0.75, 0.75, dist);
        if (alpha <= 0.0) continue;
        for (std::size_t c = 0; c < 3; ++c) pair.vi.at(y, x, c) = (1 - alpha) * pair.vi.at(y, x, c) + alpha * col[c];
        pair.ir.at(y, x) = (1 - alpha) * pair.ir.at(y, x) + alpha * ir_val;
      }
    }
  }
  pair.vi = clamp01(std::move(pair.vi));
  pair.ir = clamp01(std::move(pair.ir));
  return pair;
}

namespace {

json synth_one(const ImageBuffer& clean, Degradation d, Severity sev, std::mt19937_64& rng, ImageBuffer& out) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto jitter = [&](double v, double rel) { return v * (1.0 + rel * (2.0 * u(rng) - 1.0)); };
  std::size_t clamped = 0;
  json j;
  switch (d) {
    case Degradation::haze: {
      HazeParams p = haze_preset(sev);
      p.beta = jitter(p.beta, 0.3);
      const double a = 0.78 + 0.15 * u(rng);
      for (double& ch : p.airlight) ch = std::clamp(a + 0.03 * (2.0 * u(rng) - 1.0), 0.0, 1.0);
      out = synth_haze(clean, procedural_depth(clean.height, clean.width, p.depth_mode), p, &clamped);
      j = {{"beta", p.beta}, {"airlight", p.airlight}, {"depth_mode", "ramp"}};
      break;
    }
    case Degradation::rain: {
      RainParams p = rain_preset(sev, rng());
      p.density = std::min(1.0, jitter(p.density, 0.25));
      p.intensity = std::min(1.0, jitter(p.intensity, 0.1));
      p.angle_deg = 90.0 + 20.0 * (2.0 * u(rng) - 1.0);
      out = synth_rain(clean, p, &clamped);
      j = {{"density", p.density}, {"intensity", p.intensity}, {"angle_deg", p.angle_deg},
           {"streak_length", p.streak_length}, {"seed", p.seed}};
      break;
    }
    case Degradation::snow: {
      SnowParams p = snow_preset(sev, rng());
      p.flakes_per_megapixel = jitter(p.flakes_per_megapixel, 0.25);
      p.veil_strength = std::min(0.9, jitter(p.veil_strength, 0.3));
      out = synth_snow(clean, p, &clamped);
      j = {{"flakes_per_megapixel", p.flakes_per_megapixel}, {"veil_strength", p.veil_strength},
           {"radius_min", p.radius_min}, {"radius_max", p.radius_max}, {"seed", p.seed}};
      break;
    }
  }
  j["clamped"] = clamped;
  return j;
}

}  // namespace

std::vector<Sample> synth_dataset(const std::vector<CleanPair>& pairs, double train_ratio,
                                  std::uint64_t seed, Severity severity) {
  if (pairs.empty()) throw std::invalid_argument("synth_dataset needs at least one clean pair");
  if (!(train_ratio >= 0.0 && train_ratio <= 1.0)) throw std::invalid_argument("train ratio must lie in [0, 1]");
  const std::size_t n = pairs.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 split_rng(derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(n)));
  std::vector<std::string> split(n);
  for (std::size_t r = 0; r < n; ++r) split[order[r]] = r < n_train ? "train" : "test";

  std::vector<Sample> out(n * kDegradations.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < out.size(); ++k) {
    const std::size_t i = k / kDegradations.size();
    const Degradation d = kDegradations[k % kDegradations.size()];
    std::mt19937_64 rng(derive_seed(seed, "params." + to_string(d), i));
    char id[16];
    std::snprintf(id, sizeof id, "%04zu", i);
    Sample& s = out[k];
    s.id = id;
    s.split = split[i];
    s.label = d;
    s.clean = pairs[i].vi;
    s.ir = pairs[i].ir;
    s.params = synth_one(pairs[i].vi, d, severity, rng, s.vi);
  }
  return out;
}

void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
  json index = json::array();
  for (const Sample& s : samples) {
    const auto sub = std::filesystem::path(s.split) / to_string(s.label);
    std::filesystem::create_directories(dir / sub);
    write_image(s.vi, dir / sub / (s.id + "_vi.ppm"));
    write_image(s.ir, dir / sub / (s.id + "_ir.pgm"));
    write_image(s.clean, dir / sub / (s.id + "_clean.ppm"));
    index.push_back({{"id", s.id},
                     {"split", s.split},
                     {"degradation", to_string(s.label)},
                     {"dir", sub.generic_string()},
                     {"params", s.params}});
  }
  std::ofstream out(dir / "index.json");
  if (!out) throw FormatError("cannot write " + (dir / "index.json").string());
  out << index.dump(2) << "\n";
}

}  // namespace mdaif::degrade
