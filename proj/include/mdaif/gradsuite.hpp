#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mdaif {

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0;
  double analytic = 0, numeric = 0;  // at the worst coordinate
  double seconds = 0;
};

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kGradStep = 1e-5;

// Finite-difference checks (64-bit, central differences) of every layer,
// the DCAM and DMoE blocks, the losses and a tiny end-to-end network.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed = 7);

}  // namespace mdaif
