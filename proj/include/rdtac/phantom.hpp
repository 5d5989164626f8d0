#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "rdtac/compartment.hpp"
#include "rdtac/core_data.hpp"

namespace rdtac {

enum class PhantomKind { rd, kinetic };

/// Two-species system u' = ku lap u + alpha u (1 - u) - gamma u v,
///                   v' = kv lap v + delta u v - mu v.
struct RdPhantomParams {
  double kappa_u = 0.5;
  double kappa_v = 0.25;
  double alpha = 0.2;
  double gamma = 0.4;
  double delta = 0.3;
  double mu = 0.1;
  double max_step = 0.01;  // minutes
  double u0_min = 0.05, u0_max = 0.6;
  double v0_min = 0.05, v0_max = 0.3;
  double smoothness = 8.0;  // correlation length of the initial fields, pixels
};

struct KineticPhantomParams {
  double k1_min = 0.1, k1_max = 0.9;   // mL/min/mL
  double k2_min = 0.01, k2_max = 0.25;  // 1/min
  double smoothness = 12.0;            // correlation length of the rate maps, pixels
  double blur_sigma = 1.5;             // pixels
  double noise = 0.02;
  double vessel_radius = 5.0;  // blood-pool disk, 0 disables
  bool constant_rates = false;  // use the range midpoints everywhere
  FengParams input{85.11225, 2.187980, 2.081130, 4.133859, 0.01043449, 0.1190996};
};

struct PhantomConfig {
  PhantomKind kind = PhantomKind::kinetic;
  std::size_t nx = 64;
  std::size_t ny = 64;
  std::vector<double> frame_times = default_frame_times(15);
  std::uint64_t seed = 0;
  RdPhantomParams rd;
  KineticPhantomParams kinetic;

  void validate() const;

  /// Frame midpoints (minutes) of a schedule ending at 85.5 min. The later
  /// half are 5-minute frames (up to 16 of them); the earlier frames grow by
  /// 1.5x each and fill the time before. For 15 frames the last four sit at
  /// 68, 73, 78 and 83 min.
  static std::vector<double> default_frame_times(int n_frames);
};

struct RdPhantom {
  FrameStack stack;
  std::vector<double> u0;
  std::vector<double> v0;
};

struct KineticPhantom {
  FrameStack stack;
  std::vector<double> k1_map;
  std::vector<double> k2_map;
  std::vector<std::uint8_t> vessel;
  std::vector<RoiMask> rois;
};

RdPhantom generate_rd_phantom(const PhantomConfig& config);
KineticPhantom generate_kinetic_phantom(const PhantomConfig& config);

/// value <- max(0, value + eta * sqrt(max(value, 0)) * z), z ~ N(0, 1).
FrameStack add_noise(const FrameStack& stack, double eta, std::uint64_t seed);

/// Truncated (radius ceil(3 sigma)) normalized Gaussian with half-sample
/// reflective boundaries; preserves the frame sum.
std::vector<double> gaussian_blur(std::span<const double> frame, std::size_t nx, std::size_t ny, double sigma);

/// Band-limited random field in [0, 1], deterministic in the rng state.
std::vector<double> smooth_random_field(std::size_t nx, std::size_t ny, double correlation_length,
                                        std::uint64_t seed);

std::vector<RoiMask> default_rois(std::size_t nx, std::size_t ny);

nlohmann::json phantom_truth_json(const PhantomConfig& config);
nlohmann::json kinetic_truth_json(const PhantomConfig& config, const KineticPhantom& phantom);

}  // namespace rdtac
