#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "rdtac/spectral.hpp"

namespace rdtac {

struct NetworkConfig {
  int channels = 8;
  int internal_steps = 2;  // IMEX steps per frame transition
  int time_dim = 8;
  double scan_duration = 1.0;  // minutes; times are normalized by this

  void validate() const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

inline constexpr std::size_t kParamArrayCount = 9;
inline constexpr std::array<std::string_view, kParamArrayCount> kParamNames = {
    "W_open", "b_open", "rho", "K1", "K2", "b_t", "W_t", "W_close", "b_close"};

/// The full set of network arrays. Matrices are row-major:
/// k1/k2 are c x c (row = output channel), w_t is c x dt.
/// The tag separates parameters from gradients at the type level.
template <class Tag>
struct ParamSet {
  std::vector<double> w_open;   // c
  std::vector<double> b_open;   // c
  std::vector<double> rho;      // c, kappa = softplus(rho)
  std::vector<double> k1;       // c*c
  std::vector<double> k2;       // c*c
  std::vector<double> b_t;      // dt
  std::vector<double> w_t;      // c*dt
  std::vector<double> w_close;  // c
  std::vector<double> b_close;  // 1

  static ParamSet zeros(const NetworkConfig& config) {
    const auto c = static_cast<std::size_t>(config.channels);
    const auto d = static_cast<std::size_t>(config.time_dim);
    ParamSet p;
    p.w_open.assign(c, 0.0);
    p.b_open.assign(c, 0.0);
    p.rho.assign(c, 0.0);
    p.k1.assign(c * c, 0.0);
    p.k2.assign(c * c, 0.0);
    p.b_t.assign(d, 0.0);
    p.w_t.assign(c * d, 0.0);
    p.w_close.assign(c, 0.0);
    p.b_close.assign(1, 0.0);
    return p;
  }

  std::array<std::span<double>, kParamArrayCount> arrays() {
    return {w_open, b_open, rho, k1, k2, b_t, w_t, w_close, b_close};
  }
  std::array<std::span<const double>, kParamArrayCount> arrays() const {
    return {w_open, b_open, rho, k1, k2, b_t, w_t, w_close, b_close};
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (auto a : arrays()) n += a.size();
    return n;
  }

  bool same_shape(const NetworkConfig& config) const {
    const auto ref = zeros(config);
    const auto a = arrays();
    const auto b = ref.arrays();
    for (std::size_t i = 0; i < kParamArrayCount; ++i) {
      if (a[i].size() != b[i].size()) return false;
    }
    return true;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

using NetworkParams = ParamSet<struct NetworkParamsTag>;
using ParamGradients = ParamSet<struct ParamGradientsTag>;

/// Embedded image state: c channels over n pixels, channel-major.
struct ChannelState {
  std::size_t channels = 0;
  std::size_t pixels = 0;
  std::vector<double> values;

  ChannelState() = default;
  ChannelState(std::size_t c, std::size_t n) : channels(c), pixels(n), values(c * n, 0.0) {}

  std::span<double> channel(std::size_t i) { return std::span<double>(values).subspan(i * pixels, pixels); }
  std::span<const double> channel(std::size_t i) const {
    return std::span<const double>(values).subspan(i * pixels, pixels);
  }
};

double silu(double x);
double silu_derivative(double x);
double softplus(double x);
double sigmoid(double x);

void validate_params(const NetworkParams& params, const NetworkConfig& config);

// kappa_i = softplus(rho_i)
std::vector<double> diffusion_coefficients(const NetworkParams& params);

ChannelState open_embed(std::span<const double> frame, const NetworkParams& params);

std::vector<double> time_embedding(double t, const NetworkParams& params, const NetworkConfig& config);

/// Pointwise R(u) = K2 silu(K1 u + t_e). When pre_activation is given it
/// receives K1 u + t_e (channel-major, same layout as u).
ChannelState reaction_apply(const ChannelState& u, double t, const NetworkParams& params,
                            const NetworkConfig& config, std::vector<double>* pre_activation = nullptr);

// Implicit diffusion of every channel followed by an explicit reaction update.
ChannelState diffuse_channels(const ChannelState& u, double h, const NetworkParams& params, const SpectralPlan& plan);
ChannelState imex_step(const ChannelState& u, double t, double h, const NetworkParams& params,
                       const NetworkConfig& config, const SpectralPlan& plan);

std::vector<double> close_project(const ChannelState& u, const NetworkParams& params);

/// Predicts the frame at t_next from the frame at t_current.
std::vector<double> forward_transition(std::span<const double> frame, double t_current, double t_next,
                                       const NetworkParams& params, const NetworkConfig& config,
                                       const SpectralPlan& plan);

NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed);

struct Model {
  NetworkConfig config;
  NetworkParams params;
};

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace rdtac
