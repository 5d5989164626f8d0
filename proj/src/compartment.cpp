#include "rdtac/compartment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "rdtac/errors.hpp"

namespace rdtac {

namespace {

using AugMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 5, 5>;
using AugVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 5, 1>;

constexpr double kLogRateMin = -23.0;  // ~1e-10
constexpr double kLogRateMax = 4.6;    // ~1e2
constexpr double kTailStep = 0.25;

// Generator of [C; p; q] where the input is p + q (t - t0) on one piece.
AugMatrix augmented_generator(const CompartmentModelSpec& spec) {
  const int n = spec.n_tissue;
  const auto& k = spec.rates;
  AugMatrix a = AugMatrix::Zero(n + 2, n + 2);
  if (n == 1) {
    a(0, 0) = -k[1];
  } else {
    a(0, 0) = -(k[1] + k[2]);
    a(0, 1) = k[3];
    a(1, 0) = k[2];
    if (n == 2) {
      a(1, 1) = -k[3];
    } else {
      a(1, 1) = -(k[3] + k[4]);
      a(1, 2) = k[5];
      a(2, 1) = k[4];
      a(2, 2) = -k[5];
    }
  }
  a(0, n) = k[0];
  a(n, n + 1) = 1.0;
  return a;
}

class Propagator {
 public:
  explicit Propagator(const CompartmentModelSpec& spec) : gen_(augmented_generator(spec)) {}

  const AugMatrix& operator()(double h) {
    auto it = cache_.find(h);
    if (it == cache_.end()) {
      AugMatrix m = gen_ * h;
      it = cache_.emplace(h, m.exp()).first;
    }
    return it->second;
  }

 private:
  AugMatrix gen_;
  std::map<double, AugMatrix> cache_;
};

double log_clamp(double x) { return std::clamp(x, kLogRateMin, kLogRateMax); }

CompartmentModelSpec spec_from_vector(int n_tissue, const Eigen::VectorXd& x, bool fit_vb) {
  CompartmentModelSpec spec;
  spec.n_tissue = n_tissue;
  spec.rates.resize(static_cast<std::size_t>(2 * n_tissue));
  for (int i = 0; i < 2 * n_tissue; ++i) spec.rates[static_cast<std::size_t>(i)] = std::exp(log_clamp(x(i)));
  if (fit_vb) {
    // Logistic map keeps vb inside [0, 1).
    spec.vb = 0.999 / (1.0 + std::exp(-x(2 * n_tissue)));
  }
  return spec;
}

Eigen::VectorXd residuals(const CompartmentModelSpec& spec, const InputFunction& input, const Tac& tac,
                          int fit_frames) {
  const std::span<const double> times(tac.times.data(), static_cast<std::size_t>(fit_frames));
  const Tac model = compartment_forward(spec, input, times);
  Eigen::VectorXd r(fit_frames);
  for (int j = 0; j < fit_frames; ++j) {
    r(j) = model.values[static_cast<std::size_t>(j)] - tac.values[static_cast<std::size_t>(j)];
  }
  return r;
}

struct SingleFit {
  Eigen::VectorXd x;
  double rss = 0.0;
  int iters = 0;
  bool converged = false;
};

SingleFit levenberg_marquardt(Eigen::VectorXd x, const InputFunction& input, const Tac& tac, int n_tissue,
                              int fit_frames, bool fit_vb, int max_iters) {
  const double fd_step = 1e-6;
  const auto nparam = static_cast<int>(x.size());
  auto rate_params = [&](Eigen::VectorXd v) {
    for (int i = 0; i < 2 * n_tissue; ++i) v(i) = log_clamp(v(i));
    return v;
  };

  SingleFit out;
  x = rate_params(x);
  Eigen::VectorXd r = residuals(spec_from_vector(n_tissue, x, fit_vb), input, tac, fit_frames);
  double rss = r.squaredNorm();
  double lambda = 1e-3;

  int it = 0;
  for (; it < max_iters; ++it) {
    if (rss == 0.0) {
      out.converged = true;
      break;
    }
    Eigen::MatrixXd jac(fit_frames, nparam);
    for (int p = 0; p < nparam; ++p) {
      Eigen::VectorXd xp = x;
      xp(p) += fd_step;
      jac.col(p) = (residuals(spec_from_vector(n_tissue, xp, fit_vb), input, tac, fit_frames) - r) / fd_step;
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * r;
    const double diag_floor = 1e-12 * std::max(1.0, jtj.diagonal().maxCoeff());

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd lhs = jtj;
      for (int p = 0; p < nparam; ++p) lhs(p, p) += lambda * std::max(jtj(p, p), diag_floor);
      const Eigen::VectorXd step = lhs.ldlt().solve(-grad);
      const Eigen::VectorXd trial = rate_params(x + step);
      const Eigen::VectorXd rt = residuals(spec_from_vector(n_tissue, trial, fit_vb), input, tac, fit_frames);
      const double rss_trial = rt.squaredNorm();
      if (step.allFinite() && std::isfinite(rss_trial) && rss_trial < rss) {
        const double rel = (rss - rss_trial) / rss;
        x = trial;
        r = rt;
        rss = rss_trial;
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        if (rel < 1e-10) out.converged = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e16) break;
      }
    }
    if (!accepted) {
      // No descent direction left at machine precision: a stationary point.
      out.converged = true;
      ++it;
      break;
    }
    if (out.converged) {
      ++it;
      break;
    }
  }
  out.x = x;
  out.rss = rss;
  out.iters = it;
  return out;
}

}  // namespace

void CompartmentModelSpec::validate() const {
  if (n_tissue < 1 || n_tissue > 3) throw ArgumentError("CompartmentModelSpec: n_tissue must be 1, 2 or 3");
  if (rates.size() != static_cast<std::size_t>(2 * n_tissue)) {
    throw ArgumentError("CompartmentModelSpec: expected " + std::to_string(2 * n_tissue) + " rates");
  }
  for (double k : rates) {
    if (!(k >= 0.0) || !std::isfinite(k)) throw ArgumentError("CompartmentModelSpec: rates must be finite and >= 0");
  }
  if (!(vb >= 0.0 && vb < 1.0)) throw ArgumentError("CompartmentModelSpec: vb must lie in [0, 1)");
}

std::string CompartmentModelSpec::model_name() const { return std::to_string(n_tissue) + "tcm"; }

int tissue_count_from_name(const std::string& name) {
  if (name == "1tcm") return 1;
  if (name == "2tcm") return 2;
  if (name == "3tcm") return 3;
  throw ArgumentError("unknown compartment model '" + name + "' (expected 1tcm, 2tcm or 3tcm)");
}

double feng_value(const FengParams& p, double t) {
  const double v = (p.a1 * t - p.a2 - p.a3) * std::exp(-p.lambda1 * t) + p.a2 * std::exp(-p.lambda2 * t) +
                   p.a3 * std::exp(-p.lambda3 * t);
  return std::max(v, 0.0);
}

Tac feng_input(const FengParams& params, std::span<const double> times) {
  std::vector<double> values(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0.0) throw ArgumentError("feng_input: times must be >= 0");
    values[i] = feng_value(params, times[i]);
  }
  return Tac(std::vector<double>(times.begin(), times.end()), std::move(values));
}

InputFunction InputFunction::sampled(Tac samples) {
  if (samples.size() == 0) throw ArgumentError("InputFunction: no samples");
  if (samples.times.front() < 0.0) throw ArgumentError("InputFunction: sample times must be >= 0");
  for (double v : samples.values) {
    if (!std::isfinite(v)) throw ArgumentError("InputFunction: non-finite sample");
  }
  return InputFunction(std::move(samples));
}

InputFunction InputFunction::feng(FengParams params) { return InputFunction(params); }

double InputFunction::operator()(double t) const {
  if (const auto* f = std::get_if<FengParams>(&source_)) {
    // Same piecewise-linear function the integrator sees.
    const double k = std::floor(t / kAnalyticInputStep);
    const double t0 = k * kAnalyticInputStep;
    const double t1 = t0 + kAnalyticInputStep;
    const double v0 = feng_value(*f, t0);
    const double v1 = feng_value(*f, t1);
    return v0 + (v1 - v0) * (t - t0) / kAnalyticInputStep;
  }
  const Tac& s = std::get<Tac>(source_);
  if (t < s.times.front()) return 0.0;
  if (t >= s.times.back()) return s.values.back();
  const auto it = std::upper_bound(s.times.begin(), s.times.end(), t);
  const auto i = static_cast<std::size_t>(it - s.times.begin()) - 1;
  const double w = (t - s.times[i]) / (s.times[i + 1] - s.times[i]);
  return s.values[i] + w * (s.values[i + 1] - s.values[i]);
}

std::vector<InputSegment> InputFunction::segments(double t_end) const {
  std::vector<InputSegment> out;
  if (const auto* f = std::get_if<FengParams>(&source_)) {
    const auto count = static_cast<std::size_t>(std::ceil(t_end / kAnalyticInputStep));
    out.reserve(count);
    double v0 = feng_value(*f, 0.0);
    for (std::size_t k = 0; k < count; ++k) {
      const double a = static_cast<double>(k) * kAnalyticInputStep;
      const double b = static_cast<double>(k + 1) * kAnalyticInputStep;
      const double v1 = feng_value(*f, b);
      out.push_back({a, b, v0, (v1 - v0) / kAnalyticInputStep});
      v0 = v1;
    }
    return out;
  }
  const Tac& s = std::get<Tac>(source_);
  if (s.times.front() > 0.0) out.push_back({0.0, s.times.front(), 0.0, 0.0});
  for (std::size_t i = 0; i + 1 < s.size() && s.times[i] < t_end; ++i) {
    const double dt = s.times[i + 1] - s.times[i];
    out.push_back({s.times[i], s.times[i + 1], s.values[i], (s.values[i + 1] - s.values[i]) / dt});
  }
  if (t_end > s.times.back()) out.push_back({s.times.back(), t_end, s.values.back(), 0.0});
  return out;
}

Tac compartment_forward(const CompartmentModelSpec& spec, const InputFunction& input, std::span<const double> times) {
  spec.validate();
  if (!strictly_increasing(times)) throw ArgumentError("compartment_forward: times must be strictly increasing");
  std::vector<double> values(times.size(), 0.0);
  if (times.empty()) return Tac({}, {});
  if (times.front() < 0.0) throw ArgumentError("compartment_forward: times must be >= 0");

  const int n = spec.n_tissue;
  Propagator propagate(spec);
  AugVector state = AugVector::Zero(n + 2);
  double t = 0.0;
  std::size_t next = 0;

  auto advance = [&](double to, const InputSegment& seg) {
    const double h = to - t;
    if (h <= 0.0) return;
    state(n) = seg.start_value + seg.slope * (t - seg.start);
    state(n + 1) = seg.slope;
    state = propagate(h) * state;
    t = to;
  };
  auto record = [&](double at) {
    double tissue = 0.0;
    for (int i = 0; i < n; ++i) tissue += state(i);
    values[next] = (1.0 - spec.vb) * tissue + spec.vb * input(at);
    ++next;
  };

  while (next < times.size() && times[next] <= 0.0) record(times[next]);
  for (const auto& seg : input.segments(times.back())) {
    if (next >= times.size()) break;
    while (next < times.size() && times[next] <= seg.end) {
      advance(times[next], seg);
      record(times[next]);
    }
    advance(seg.end, seg);
  }
  return Tac(std::vector<double>(times.begin(), times.end()), std::move(values));
}

double compartment_rss(const CompartmentModelSpec& spec, const InputFunction& input, const Tac& tac, int fit_frames) {
  if (fit_frames < 1 || static_cast<std::size_t>(fit_frames) > tac.size()) {
    throw ArgumentError("compartment_rss: fit_frames out of range");
  }
  const std::span<const double> times(tac.times.data(), static_cast<std::size_t>(fit_frames));
  const Tac model = compartment_forward(spec, input, times);
  double rss = 0.0;
  for (std::size_t j = 0; j < times.size(); ++j) {
    const double r = model.values[j] - tac.values[j];
    rss += r * r;
  }
  return rss;
}

std::vector<std::vector<double>> multistart_points(int n_tissue, int n_starts, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> log_rate(std::log(1e-3), std::log(10.0));
  std::vector<std::vector<double>> points(static_cast<std::size_t>(n_starts));
  for (auto& p : points) {
    p.resize(static_cast<std::size_t>(2 * n_tissue));
    for (auto& v : p) v = log_rate(rng);
  }
  return points;
}

FitResult lm_fit(const Tac& tac, const InputFunction& input, int n_tissue, int fit_frames, const FitOptions& options) {
  if (n_tissue < 1 || n_tissue > 3) throw ArgumentError("lm_fit: n_tissue must be 1, 2 or 3");
  if (fit_frames < 1 || static_cast<std::size_t>(fit_frames) > tac.size()) {
    throw ArgumentError("lm_fit: fit_frames must be in [1, tac length]");
  }
  if (options.n_starts < 1) throw ArgumentError("lm_fit: n_starts must be >= 1");

  const bool all_zero = std::all_of(tac.values.begin(), tac.values.begin() + fit_frames,
                                    [](double v) { return v == 0.0; });
  if (all_zero) {
    FitResult zero;
    zero.spec.n_tissue = n_tissue;
    zero.spec.rates.assign(static_cast<std::size_t>(2 * n_tissue), 0.0);
    zero.converged = true;
    return zero;
  }

  const auto starts = multistart_points(n_tissue, options.n_starts, options.seed);
  FitResult best;
  best.rss = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < starts.size(); ++s) {
    Eigen::VectorXd x(2 * n_tissue + (options.fit_vb ? 1 : 0));
    for (int i = 0; i < 2 * n_tissue; ++i) x(i) = starts[s][static_cast<std::size_t>(i)];
    if (options.fit_vb) x(2 * n_tissue) = std::log(0.05 / 0.95);
    const SingleFit fit = levenberg_marquardt(x, input, tac, n_tissue, fit_frames, options.fit_vb, options.max_iters);
    if (fit.rss < best.rss) {
      best.spec = spec_from_vector(n_tissue, fit.x, options.fit_vb);
      best.rss = fit.rss;
      best.n_iters = fit.iters;
      best.converged = fit.converged;
      best.multistart_index = static_cast<int>(s);
    }
  }
  if (!std::isfinite(best.rss)) throw std::runtime_error("lm_fit: every start produced a non-finite objective");
  return best;
}

Extrapolation ctm_extrapolate(const FitResult& fit, const InputFunction& input, std::span<const double> test_times) {
  fit.spec.validate();
  Extrapolation out;
  if (test_times.empty()) {
    out.tac = Tac({}, {});
    return out;
  }
  if (!input.is_sampled() || test_times.back() <= input.samples().times.back()) {
    out.tac = compartment_forward(fit.spec, input, test_times);
    return out;
  }

  const Tac& s = input.samples();
  std::vector<double> times = s.times;
  std::vector<double> values = s.values;
  const double t_last = s.times.back();
  const double v_last = s.values.back();
  double rate = 0.0;
  const std::size_t m = s.size();
  if (m >= 3 && s.values[m - 1] > 0.0 && s.values[m - 2] > 0.0 && s.values[m - 3] > 0.0) {
    // Log-linear least squares through the last three samples.
    double mt = 0.0, my = 0.0;
    for (std::size_t i = m - 3; i < m; ++i) {
      mt += s.times[i] / 3.0;
      my += std::log(s.values[i]) / 3.0;
    }
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = m - 3; i < m; ++i) {
      sxy += (s.times[i] - mt) * (std::log(s.values[i]) - my);
      sxx += (s.times[i] - mt) * (s.times[i] - mt);
    }
    rate = std::max(0.0, -sxy / sxx);
  } else {
    out.constant_tail = true;
  }
  const double t_end = test_times.back();
  for (int k = 1;; ++k) {
    const double t = t_last + k * kTailStep;
    if (t >= t_end) {
      times.push_back(t_end);
      values.push_back(v_last * std::exp(-rate * (t_end - t_last)));
      break;
    }
    times.push_back(t);
    values.push_back(v_last * std::exp(-rate * (t - t_last)));
  }
  const InputFunction extended = InputFunction::sampled(Tac(std::move(times), std::move(values)));
  out.tac = compartment_forward(fit.spec, extended, test_times);
  return out;
}

nlohmann::json fit_result_to_json(const FitResult& fit) {
  return nlohmann::json{{"model", fit.spec.model_name()},   {"rates", fit.spec.rates},
                        {"vb", fit.spec.vb},                {"rss", fit.rss},
                        {"converged", fit.converged},       {"n_iters", fit.n_iters},
                        {"multistart_index", fit.multistart_index}};
}

FitResult fit_result_from_json(const nlohmann::json& j) {
  FitResult fit;
  try {
    fit.spec.n_tissue = tissue_count_from_name(j.at("model").get<std::string>());
    fit.spec.rates = j.at("rates").get<std::vector<double>>();
    fit.spec.vb = j.at("vb").get<double>();
    fit.rss = j.at("rss").get<double>();
    fit.converged = j.at("converged").get<bool>();
    fit.n_iters = j.at("n_iters").get<int>();
    fit.multistart_index = j.at("multistart_index").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad fit result JSON: ") + e.what());
  }
  fit.spec.validate();
  return fit;
}

}  // namespace rdtac
