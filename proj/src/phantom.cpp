#include "rdtac/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rdtac/errors.hpp"
#include "rdtac/spectral.hpp"

namespace rdtac {

namespace {


std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::size_t reflect(long idx, std::size_t n) {
  const long period = 2 * static_cast<long>(n);
  long m = idx % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - 1 - m);
}

std::vector<std::uint8_t> disk(std::size_t nx, std::size_t ny, double cx, double cy, double radius) {
  std::vector<std::uint8_t> mask(nx * ny, 0);
  for (std::size_t y = 0; y < ny; ++y) {
    for (std::size_t x = 0; x < nx; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      if (dx * dx + dy * dy <= radius * radius) mask[y * nx + x] = 1;
    }
  }
  return mask;
}

struct RoiSite {
  const char* name;
  double fx, fy;
};

constexpr RoiSite kRoiSites[] = {
    {"blood", 0.5, 0.5}, {"liver", 0.25, 0.3}, {"spleen", 0.75, 0.3}, {"kidney", 0.25, 0.75}, {"parotid", 0.75, 0.75}};

double site_coord(double frac, std::size_t n) { return std::round(frac * static_cast<double>(n - 1)); }

}  // namespace

std::vector<double> PhantomConfig::default_frame_times(int n_frames) {
  if (n_frames < 2) throw ArgumentError("default_frame_times: need at least 2 frames");
  constexpr double kEnd = 85.5, kLateFrame = 5.0;
  const int late = std::min((n_frames + 1) / 2, 16);
  const int early = n_frames - late;
  const double late_start = kEnd - late * kLateFrame;
  std::vector<double> times;
  // Early frames lengthen by 1.5x each and tile [0, late_start].
  double unit = 0.0, grow = 1.0;
  for (int i = 0; i < early; ++i, grow *= 1.5) unit += grow;
  double start = 0.0;
  grow = 1.0;
  for (int i = 0; i < early; ++i, grow *= 1.5) {
    const double dur = late_start * grow / unit;
    times.push_back(start + 0.5 * dur);
    start += dur;
  }
  for (int i = 0; i < late; ++i) times.push_back(late_start + (i + 0.5) * kLateFrame);
  return times;
}

void PhantomConfig::validate() const {
  if (nx < 8 || ny < 8) throw ArgumentError("PhantomConfig: grid dimensions must be >= 8");
  if (frame_times.size() < 6) throw ArgumentError("PhantomConfig: at least 6 frames required");
  if (!strictly_increasing(frame_times) || frame_times.front() < 0.0) {
    throw ArgumentError("PhantomConfig: frame times must be >= 0 and strictly increasing");
  }
  if (!(kinetic.blur_sigma >= 0.0)) throw ArgumentError("PhantomConfig: blur sigma must be >= 0");
  if (!(kinetic.noise >= 0.0)) throw ArgumentError("PhantomConfig: noise scale must be >= 0");
  if (kinetic.k1_min < 0.0 || kinetic.k1_max < kinetic.k1_min || kinetic.k2_min < 0.0 ||
      kinetic.k2_max < kinetic.k2_min) {
    throw ArgumentError("PhantomConfig: invalid rate ranges");
  }
  if (rd.kappa_u < 0.0 || rd.kappa_v < 0.0) throw ArgumentError("PhantomConfig: diffusivities must be >= 0");
  if (!(rd.max_step > 0.0 && rd.max_step <= 0.01)) throw ArgumentError("PhantomConfig: rd step must be in (0, 0.01]");
}

std::vector<double> smooth_random_field(std::size_t nx, std::size_t ny, double correlation_length,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> field(nx * ny);
  for (auto& v : field) v = normal(rng);

  // Heat-kernel low-pass in the cosine basis: Gaussian of width correlation_length.
  const SpectralPlan plan(nx, ny);
  plan.forward_inplace(field);
  const auto eigs = plan.eigenvalues();
  const double t = 0.5 * correlation_length * correlation_length;
  for (std::size_t m = 0; m < field.size(); ++m) field[m] *= std::exp(-t * eigs[m]);
  field[0] = 0.0;
  plan.inverse_inplace(field);

  const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
  const double min = *lo, span = *hi - *lo;
  for (auto& v : field) v = span > 0.0 ? (v - min) / span : 0.5;
  return field;
}

std::vector<double> gaussian_blur(std::span<const double> frame, std::size_t nx, std::size_t ny, double sigma) {
  if (frame.size() != nx * ny) throw ShapeError("gaussian_blur: frame does not match grid");
  if (!(sigma >= 0.0)) throw ArgumentError("gaussian_blur: sigma must be >= 0");
  std::vector<double> out(frame.begin(), frame.end());
  if (sigma == 0.0) return out;

  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    w[static_cast<std::size_t>(k + radius)] = v;
    total += v;
  }
  for (auto& v : w) v /= total;

  std::vector<double> tmp(nx * ny, 0.0);
  for (std::size_t y = 0; y < ny; ++y) {
    for (std::size_t x = 0; x < nx; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        acc += w[static_cast<std::size_t>(k + radius)] * out[y * nx + reflect(static_cast<long>(x) + k, nx)];
      }
      tmp[y * nx + x] = acc;
    }
  }
  for (std::size_t y = 0; y < ny; ++y) {
    for (std::size_t x = 0; x < nx; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        acc += w[static_cast<std::size_t>(k + radius)] * tmp[reflect(static_cast<long>(y) + k, ny) * nx + x];
      }
      out[y * nx + x] = acc;
    }
  }
  return out;
}

FrameStack add_noise(const FrameStack& stack, double eta, std::uint64_t seed) {
  if (!(eta >= 0.0)) throw ArgumentError("add_noise: eta must be >= 0");
  if (eta == 0.0) return stack;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> data = stack.data();
  for (auto& v : data) {
    const double z = normal(rng);
    v = std::max(0.0, v + eta * std::sqrt(std::max(v, 0.0)) * z);
  }
  return FrameStack(stack.nx(), stack.ny(), stack.times(), std::move(data));
}

std::vector<RoiMask> default_rois(std::size_t nx, std::size_t ny) {
  std::vector<RoiMask> rois;
  for (const auto& site : kRoiSites) {
    rois.emplace_back(site.name, nx, ny, disk(nx, ny, site_coord(site.fx, nx), site_coord(site.fy, ny), 2.6));
  }
  return rois;
}

RdPhantom generate_rd_phantom(const PhantomConfig& config) {
  config.validate();
  const auto& p = config.rd;
  const std::size_t nx = config.nx, ny = config.ny, n = nx * ny;

  auto scaled = [&](std::uint64_t stream, double lo, double hi) {
    auto f = smooth_random_field(nx, ny, p.smoothness, derive_seed(config.seed, stream));
    for (auto& v : f) v = lo + (hi - lo) * v;
    return f;
  };
  RdPhantom out{FrameStack(1, 1, {0.0}, {0.0}), scaled(0, p.u0_min, p.u0_max), scaled(1, p.v0_min, p.v0_max)};

  const SpectralPlan plan(nx, ny);
  std::vector<double> u = out.u0, v = out.v0;
  std::vector<double> data;
  data.reserve(config.frame_times.size() * n);
  double t = 0.0;
  for (double target : config.frame_times) {
    const double span = target - t;
    if (span > 0.0) {
      const auto steps = static_cast<long>(std::ceil(span / p.max_step - 1e-9));
      const double h = span / static_cast<double>(steps);
      for (long k = 0; k < steps; ++k) {
        u = implicit_diffusion_step(u, p.kappa_u, h, plan);
        v = implicit_diffusion_step(v, p.kappa_v, h, plan);
        for (std::size_t i = 0; i < n; ++i) {
          const double ru = p.alpha * u[i] * (1.0 - u[i]) - p.gamma * u[i] * v[i];
          const double rv = p.delta * u[i] * v[i] - p.mu * v[i];
          u[i] += h * ru;
          v[i] += h * rv;
        }
      }
      t = target;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(u[i]) || !std::isfinite(v[i])) {
        throw std::runtime_error("rd phantom became non-finite before t = " + std::to_string(target) +
                                 " min; reduce the reaction coefficients or the step");
      }
    }
    data.insert(data.end(), u.begin(), u.end());
  }
  out.stack = FrameStack(nx, ny, config.frame_times, std::move(data));
  return out;
}

KineticPhantom generate_kinetic_phantom(const PhantomConfig& config) {
  config.validate();
  const auto& p = config.kinetic;
  const std::size_t nx = config.nx, ny = config.ny, n = nx * ny;
  const std::size_t nt = config.frame_times.size();

  KineticPhantom out{FrameStack(1, 1, {0.0}, {0.0}), {}, {}, {}, default_rois(nx, ny)};
  if (p.constant_rates) {
    out.k1_map.assign(n, 0.5 * (p.k1_min + p.k1_max));
    out.k2_map.assign(n, 0.5 * (p.k2_min + p.k2_max));
  } else {
    out.k1_map = smooth_random_field(nx, ny, p.smoothness, derive_seed(config.seed, 0));
    out.k2_map = smooth_random_field(nx, ny, p.smoothness, derive_seed(config.seed, 1));
    for (auto& v : out.k1_map) v = p.k1_min + (p.k1_max - p.k1_min) * v;
    for (auto& v : out.k2_map) v = p.k2_min + (p.k2_max - p.k2_min) * v;
  }
  out.vessel = p.vessel_radius > 0.0
                   ? disk(nx, ny, site_coord(kRoiSites[0].fx, nx), site_coord(kRoiSites[0].fy, ny), p.vessel_radius)
                   : std::vector<std::uint8_t>(n, 0);

  const InputFunction input = InputFunction::feng(p.input);
  std::vector<double> blood(nt);
  for (std::size_t j = 0; j < nt; ++j) blood[j] = input(config.frame_times[j]);

  std::vector<double> data(nt * n, 0.0);
  for (std::size_t px = 0; px < n; ++px) {
    if (out.vessel[px]) {
      for (std::size_t j = 0; j < nt; ++j) data[j * n + px] = blood[j];
      continue;
    }
    const CompartmentModelSpec spec{1, {out.k1_map[px], out.k2_map[px]}, 0.0};
    const Tac tac = compartment_forward(spec, input, config.frame_times);
    for (std::size_t j = 0; j < nt; ++j) data[j * n + px] = tac.values[j];
  }
  for (std::size_t j = 0; j < nt; ++j) {
    const std::span<const double> frame(data.data() + j * n, n);
    const auto blurred = gaussian_blur(frame, nx, ny, p.blur_sigma);
    std::copy(blurred.begin(), blurred.end(), data.begin() + static_cast<std::ptrdiff_t>(j * n));
  }
  out.stack = add_noise(FrameStack(nx, ny, config.frame_times, std::move(data)), p.noise, derive_seed(config.seed, 2));
  return out;
}

nlohmann::json phantom_truth_json(const PhantomConfig& config) {
  nlohmann::json j;
  j["kind"] = config.kind == PhantomKind::rd ? "rd" : "kinetic";
  j["nx"] = config.nx;
  j["ny"] = config.ny;
  j["frame_times"] = config.frame_times;
  j["seed"] = config.seed;
  if (config.kind == PhantomKind::rd) {
    const auto& p = config.rd;
    j["rd"] = {{"kappa_u", p.kappa_u}, {"kappa_v", p.kappa_v}, {"alpha", p.alpha}, {"gamma", p.gamma},
               {"delta", p.delta},     {"mu", p.mu},           {"max_step", p.max_step}};
  } else {
    const auto& p = config.kinetic;
    j["kinetic"] = {{"k1_range", {p.k1_min, p.k1_max}},
                    {"k2_range", {p.k2_min, p.k2_max}},
                    {"smoothness", p.smoothness},
                    {"blur_sigma", p.blur_sigma},
                    {"noise", p.noise},
                    {"vessel_radius", p.vessel_radius},
                    {"feng_input",
                     {p.input.a1, p.input.a2, p.input.a3, p.input.lambda1, p.input.lambda2, p.input.lambda3}}};
  }
  return j;
}

nlohmann::json kinetic_truth_json(const PhantomConfig& config, const KineticPhantom& phantom) {
  auto j = phantom_truth_json(config);
  j["k1_map"] = phantom.k1_map;
  j["k2_map"] = phantom.k2_map;
  return j;
}

}  // namespace rdtac
