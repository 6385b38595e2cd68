#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdaif/image.hpp"

namespace mdaif::degrade {

enum class Degradation { haze, rain, snow };
inline constexpr std::array<Degradation, 3> kDegradations = {Degradation::haze, Degradation::rain,
                                                             Degradation::snow};
std::string to_string(Degradation d);
Degradation parse_degradation(const std::string& s);

enum class Severity { light, medium, heavy };
Severity parse_severity(const std::string& s);

enum class DepthMode { ramp, radial, file };

struct HazeParams {
  double beta = 1.0;  // scattering per unit depth
  std::array<double, 3> airlight = {0.85, 0.85, 0.85};
  DepthMode depth_mode = DepthMode::ramp;
  std::filesystem::path depth_path;  // DepthMode::file only
  void validate() const;
};

struct RainParams {
  double density = 0.1;  // Bernoulli rate of streak seeds
  std::size_t streak_length = 9;
  double angle_deg = 90.0;  // 90 = vertical
  double intensity = 0.8;
  std::uint64_t seed = 0;
  void validate() const;
};

struct SnowParams {
  double flakes_per_megapixel = 60000.0;
  double radius_min = 0.6, radius_max = 1.6;
  double veil_strength = 0.1;
  double brightness = 0.97;
  std::uint64_t seed = 0;
  void validate() const;
};

HazeParams haze_preset(Severity s);
RainParams rain_preset(Severity s, std::uint64_t seed);
SnowParams snow_preset(Severity s, std::uint64_t seed);

// Depth in [0, 1] (1 = far). Ramp: top row far, bottom row near. Radial:
// normalized distance from the image centre.
ImageBuffer procedural_depth(std::size_t height, std::size_t width, DepthMode mode);
ImageBuffer load_depth(const std::filesystem::path& path, std::size_t height, std::size_t width);
ImageBuffer depth_for(const HazeParams& p, std::size_t height, std::size_t width);

// Atmospheric scattering: out = J*t + A*(1-t), t = exp(-beta*depth).
ImageBuffer synth_haze(const ImageBuffer& clean, const ImageBuffer& depth, const HazeParams& p,
                       std::size_t* clamped = nullptr);

// L x L kernel holding a line of length L through the centre at `angle_deg`,
// normalized to sum 1.
std::vector<double> line_kernel(std::size_t length, double angle_deg);
std::vector<std::uint8_t> bernoulli_mask(std::size_t height, std::size_t width, double density,
                                         std::uint64_t seed);
// Mask convolved with the line kernel (zero padding), before intensity scaling.
ImageBuffer streak_layer(const std::vector<std::uint8_t>& mask, std::size_t height,
                         std::size_t width, std::size_t length, double angle_deg);
// Screen blend of the intensity-scaled streak layer: out = 1 - (1-J)(1-s).
ImageBuffer synth_rain(const ImageBuffer& clean, const RainParams& p, std::size_t* clamped = nullptr);

struct Flake {
  double cx, cy, radius;
};
std::vector<Flake> place_flakes(std::size_t height, std::size_t width, const SnowParams& p);
// Anti-aliased disks composited by max, then veil: out = out + v*(1-out).
ImageBuffer render_snow(const ImageBuffer& clean, const std::vector<Flake>& flakes,
                        const SnowParams& p, std::size_t* clamped = nullptr);
ImageBuffer synth_snow(const ImageBuffer& clean, const SnowParams& p, std::size_t* clamped = nullptr);

struct CleanPair {
  ImageBuffer vi;  // 3 channels
  ImageBuffer ir;  // 1 channel
};

// Deterministic toy scene: coloured background, soft-edged shapes, and an
// infrared view where a subset of shapes is hot.
CleanPair procedural_pair(std::size_t height, std::size_t width, std::uint64_t seed);

struct Sample {
  std::string id;
  std::string split;  // "train" or "test"
  Degradation label = Degradation::haze;
  ImageBuffer vi, ir, clean;
  nlohmann::json params;
};

// Every clean pair is emitted once per degradation with freshly drawn,
// seed-derived parameters. All degraded versions of one pair share a split.
std::vector<Sample> synth_dataset(const std::vector<CleanPair>& pairs, double train_ratio,
                                  std::uint64_t seed, Severity severity = Severity::medium);

// {split}/{degradation}/{id}_vi.ppm, {id}_ir.pgm, {id}_clean.ppm, index.json
void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);

}  // namespace mdaif::degrade
