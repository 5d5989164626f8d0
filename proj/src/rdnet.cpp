#include "rdtac/rdnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <json.hpp>

#include "rdtac/errors.hpp"

namespace rdtac {

namespace {

constexpr char kModelMagic[4] = {'D', 'P', 'R', 'D'};
constexpr std::uint32_t kModelVersion = 1;

}  // namespace

void NetworkConfig::validate() const {
  if (channels < 1) throw ArgumentError("NetworkConfig: channels must be >= 1");
  if (internal_steps < 1) throw ArgumentError("NetworkConfig: internal_steps must be >= 1");
  if (time_dim < 1) throw ArgumentError("NetworkConfig: time_dim must be >= 1");
  if (!(scan_duration > 0.0) || !std::isfinite(scan_duration)) {
    throw ArgumentError("NetworkConfig: scan_duration must be positive");
  }
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double silu_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

void validate_params(const NetworkParams& params, const NetworkConfig& config) {
  config.validate();
  if (!params.same_shape(config)) throw ShapeError("NetworkParams shapes do not match NetworkConfig");
  const auto arrays = params.arrays();
  for (std::size_t a = 0; a < kParamArrayCount; ++a) {
    for (double v : arrays[a]) {
      if (!std::isfinite(v)) throw ArgumentError("NetworkParams: non-finite entry in " + std::string(kParamNames[a]));
    }
  }
}

std::vector<double> diffusion_coefficients(const NetworkParams& params) {
  std::vector<double> kappa(params.rho.size());
  for (std::size_t i = 0; i < kappa.size(); ++i) kappa[i] = softplus(params.rho[i]);
  return kappa;
}

ChannelState open_embed(std::span<const double> frame, const NetworkParams& params) {
  const std::size_t c = params.w_open.size();
  ChannelState u(c, frame.size());
  for (std::size_t i = 0; i < c; ++i) {
    auto ch = u.channel(i);
    const double w = params.w_open[i];
    const double b = params.b_open[i];
    for (std::size_t p = 0; p < frame.size(); ++p) ch[p] = w * frame[p] + b;
  }
  return u;
}

std::vector<double> time_embedding(double t, const NetworkParams& params, const NetworkConfig& config) {
  const auto c = static_cast<std::size_t>(config.channels);
  const auto d = static_cast<std::size_t>(config.time_dim);
  const double tn = t / config.scan_duration;
  std::vector<double> hidden(d);
  for (std::size_t k = 0; k < d; ++k) hidden[k] = silu(tn * params.b_t[k]);
  std::vector<double> te(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += params.w_t[i * d + k] * hidden[k];
    te[i] = acc;
  }
  return te;
}

ChannelState reaction_apply(const ChannelState& u, double t, const NetworkParams& params,
                            const NetworkConfig& config, std::vector<double>* pre_activation) {
  const std::size_t c = u.channels;
  const std::size_t n = u.pixels;
  if (c != static_cast<std::size_t>(config.channels)) throw ShapeError("reaction_apply: channel count mismatch");
  const auto te = time_embedding(t, params, config);

  ChannelState r(c, n);
  if (pre_activation) pre_activation->assign(c * n, 0.0);
  std::vector<double> z(c), a(c);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < c; ++i) {
      double acc = te[i];
      const double* row = params.k1.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) acc += row[j] * u.values[j * n + p];
      z[i] = acc;
      a[i] = silu(acc);
    }
    if (pre_activation) {
      for (std::size_t i = 0; i < c; ++i) (*pre_activation)[i * n + p] = z[i];
    }
    for (std::size_t i = 0; i < c; ++i) {
      double acc = 0.0;
      const double* row = params.k2.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) acc += row[j] * a[j];
      r.values[i * n + p] = acc;
    }
  }
  return r;
}

ChannelState diffuse_channels(const ChannelState& u, double h, const NetworkParams& params, const SpectralPlan& plan) {
  ChannelState out(u.channels, u.pixels);
  for (std::size_t i = 0; i < u.channels; ++i) {
    const auto d = implicit_diffusion_step(u.channel(i), softplus(params.rho[i]), h, plan);
    std::copy(d.begin(), d.end(), out.channel(i).begin());
  }
  return out;
}

ChannelState imex_step(const ChannelState& u, double t, double h, const NetworkParams& params,
                       const NetworkConfig& config, const SpectralPlan& plan) {
  if (!(h > 0.0)) throw ArgumentError("imex_step: h must be > 0");
  ChannelState next = diffuse_channels(u, h, params, plan);
  const ChannelState r = reaction_apply(next, t, params, config);
  for (std::size_t m = 0; m < next.values.size(); ++m) next.values[m] += h * r.values[m];
  return next;
}

std::vector<double> close_project(const ChannelState& u, const NetworkParams& params) {
  std::vector<double> out(u.pixels, params.b_close[0]);
  for (std::size_t i = 0; i < u.channels; ++i) {
    const auto ch = u.channel(i);
    const double w = params.w_close[i];
    for (std::size_t p = 0; p < u.pixels; ++p) out[p] += w * ch[p];
  }
  return out;
}

std::vector<double> forward_transition(std::span<const double> frame, double t_current, double t_next,
                                       const NetworkParams& params, const NetworkConfig& config,
                                       const SpectralPlan& plan) {
  validate_params(params, config);
  if (!(t_next > t_current)) throw ArgumentError("forward_transition: frame times must be increasing");
  plan.check_shape(frame.size(), "forward_transition");

  const double h = (t_next - t_current) / config.internal_steps;
  ChannelState u = open_embed(frame, params);
  for (int k = 0; k < config.internal_steps; ++k) {
    u = imex_step(u, t_current + k * h, h, params, config, plan);
  }
  return close_project(u, params);
}

NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  auto p = NetworkParams::zeros(config);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](std::vector<double>& v, double fan_in) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(fan_in));
    for (auto& x : v) x = dist(rng);
  };
  const double c = config.channels;
  fill(p.w_open, 1.0);
  fill(p.k1, c);
  fill(p.k2, c);
  fill(p.w_t, config.time_dim);
  fill(p.w_close, c);
  // softplus(rho) = 0.01
  p.rho.assign(p.rho.size(), std::log(std::expm1(0.01)));
  return p;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  validate_params(model.params, model.config);
  const nlohmann::json cfg = {{"channels", model.config.channels},
                              {"internal_steps", model.config.internal_steps},
                              {"time_dim", model.config.time_dim},
                              {"scan_duration", model.config.scan_duration}};
  const std::string text = cfg.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  auto put_u32 = [&out](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  out.write(kModelMagic, 4);
  put_u32(kModelVersion);
  put_u32(static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (auto arr : model.params.arrays()) {
    out.write(reinterpret_cast<const char*>(arr.data()), static_cast<std::streamsize>(arr.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* field) {
    if (pos + n > bytes.size()) throw FormatError(std::string("truncated model file while reading ") + field);
  };
  auto get_u32 = [&](const char* field) {
    need(4, field);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  };

  need(4, "magic");
  if (std::memcmp(bytes.data(), kModelMagic, 4) != 0) throw FormatError("bad magic: expected \"DPRD\"");
  pos = 4;
  if (const auto v = get_u32("version"); v != kModelVersion) {
    throw FormatError("unsupported model version " + std::to_string(v));
  }
  const auto len = get_u32("config length");
  need(len, "config");
  Model model;
  try {
    const auto cfg = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                           bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
    model.config.channels = cfg.at("channels").get<int>();
    model.config.internal_steps = cfg.at("internal_steps").get<int>();
    model.config.time_dim = cfg.at("time_dim").get<int>();
    model.config.scan_duration = cfg.at("scan_duration").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model config block: ") + e.what());
  }
  pos += len;
  model.config.validate();

  model.params = NetworkParams::zeros(model.config);
  for (auto arr : model.params.arrays()) {
    need(arr.size() * sizeof(double), "parameters");
    std::memcpy(arr.data(), bytes.data() + pos, arr.size() * sizeof(double));
    pos += arr.size() * sizeof(double);
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after model parameters");
  return model;
}

}  // namespace rdtac
