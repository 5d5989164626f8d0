#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "rdtac/core_data.hpp"

namespace rdtac {

/// Catenary tissue compartment model. rates = K1, k2[, k3, k4[, k5, k6]]
/// (K1 in mL/min/mL, the rest in 1/min); vb is the blood volume fraction.
struct CompartmentModelSpec {
  int n_tissue = 1;
  std::vector<double> rates;
  double vb = 0.0;

  void validate() const;
  std::string model_name() const;  // "1tcm" / "2tcm" / "3tcm"
};

int tissue_count_from_name(const std::string& name);

/// Feng plasma input: (A1 t - A2 - A3) e^{-l1 t} + A2 e^{-l2 t} + A3 e^{-l3 t}.
struct FengParams {
  double a1 = 0.0, a2 = 0.0, a3 = 0.0;
  double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0;
};

// Step of the uniform grid an analytic input is sampled on (exactly representable).
inline constexpr double kAnalyticInputStep = 1.0 / 64.0;

/// One linear piece of the plasma input: value(t) = start_value + slope * (t - start).
struct InputSegment {
  double start = 0.0;
  double end = 0.0;
  double start_value = 0.0;
  double slope = 0.0;
};

/// Plasma input C_p(t). Sampled inputs are linear between samples, zero
/// before the first sample and held at the last value after it. Analytic
/// inputs are sampled on a uniform grid of kAnalyticInputStep minutes.
class InputFunction {
 public:
  static InputFunction sampled(Tac samples);
  static InputFunction feng(FengParams params);

  double operator()(double t) const;
  bool is_sampled() const { return std::holds_alternative<Tac>(source_); }
  const Tac& samples() const { return std::get<Tac>(source_); }
  const FengParams& feng_params() const { return std::get<FengParams>(source_); }

  // Piecewise-linear pieces covering [0, t_end].
  std::vector<InputSegment> segments(double t_end) const;

 private:
  explicit InputFunction(std::variant<Tac, FengParams> source) : source_(std::move(source)) {}
  std::variant<Tac, FengParams> source_;
};

double feng_value(const FengParams& p, double t);
Tac feng_input(const FengParams& params, std::span<const double> times);

/// Tissue TAC C_T(t) = (1 - vb) sum_i C_i(t) + vb C_p(t) for the linear
/// system dC/dt = M C + e1 K1 C_p(t), C(0) = 0, advanced exactly across each
/// linear input piece by the exponential of the augmented generator.
Tac compartment_forward(const CompartmentModelSpec& spec, const InputFunction& input, std::span<const double> times);

struct FitResult {
  CompartmentModelSpec spec;
  double rss = 0.0;
  int n_iters = 0;
  bool converged = false;
  int multistart_index = 0;
};

struct FitOptions {
  int n_starts = 16;
  std::uint64_t seed = 0;
  bool fit_vb = false;
  int max_iters = 200;
};

double compartment_rss(const CompartmentModelSpec& spec, const InputFunction& input, const Tac& tac, int fit_frames);

/// Multistart Levenberg-Marquardt fit over log-rates on the first fit_frames
/// samples; returns the start with the lowest rss (lowest index on ties).
FitResult lm_fit(const Tac& tac, const InputFunction& input, int n_tissue, int fit_frames, const FitOptions& options);

// Initial log-rate vectors drawn by lm_fit for the given settings.
std::vector<std::vector<double>> multistart_points(int n_tissue, int n_starts, std::uint64_t seed);

struct Extrapolation {
  Tac tac;
  bool constant_tail = false;  // input had < 3 samples or a non-positive tail
};

/// Evaluates a fitted model at test_times. A sampled input is continued past
/// its last sample by a mono-exponential tail fitted to its last 3 samples.
Extrapolation ctm_extrapolate(const FitResult& fit, const InputFunction& input, std::span<const double> test_times);

nlohmann::json fit_result_to_json(const FitResult& fit);
FitResult fit_result_from_json(const nlohmann::json& j);

}  // namespace rdtac
