#include "rdtac/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "rdtac/autodiff.hpp"
#include "rdtac/errors.hpp"

namespace rdtac {

void TrainConfig::validate(std::size_t nt) const {
  if (split < 2 || static_cast<std::size_t>(split) > nt) {
    throw ArgumentError("TrainConfig: split must satisfy 2 <= s <= nt (s=" + std::to_string(split) +
                        ", nt=" + std::to_string(nt) + ")");
  }
  if (!(lr > 0.0)) throw ArgumentError("TrainConfig: lr must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ArgumentError("TrainConfig: beta1 and beta2 must lie in (0, 1)");
  }
  if (!(eps > 0.0)) throw ArgumentError("TrainConfig: eps must be > 0");
  if (!(clip_norm > 0.0)) throw ArgumentError("TrainConfig: clip_norm must be > 0");
  if (max_iters < 0) throw ArgumentError("TrainConfig: max_iters must be >= 0");
  if (threads < 1) throw ArgumentError("TrainConfig: threads must be >= 1");
}

AdamState AdamState::zeros(const NetworkConfig& config) {
  return AdamState{ParamGradients::zeros(config), ParamGradients::zeros(config), 0};
}

double global_norm(const ParamGradients& grads) {
  double sq = 0.0;
  for (auto arr : grads.arrays()) {
    for (double g : arr) sq += g * g;
  }
  return std::sqrt(sq);
}

ClipResult clip_gradients(ParamGradients grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ArgumentError("clip_gradients: clip_norm must be > 0");
  ClipResult out;
  out.preclip_norm = global_norm(grads);
  if (out.preclip_norm > clip_norm) {
    const double scale = clip_norm / out.preclip_norm;
    for (auto arr : grads.arrays()) {
      for (double& g : arr) g *= scale;
    }
    out.clipped = true;
  }
  out.grads = std::move(grads);
  return out;
}

AdamUpdate adam_step(const NetworkParams& params, const ParamGradients& grads, const AdamState& state,
                     const TrainConfig& config) {
  AdamUpdate out{params, state};
  auto theta = out.params.arrays();
  auto m = out.state.m.arrays();
  auto v = out.state.v.arrays();
  const auto g = grads.arrays();
  out.state.step_count = state.step_count + 1;
  const double t = static_cast<double>(out.state.step_count);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t a = 0; a < kParamArrayCount; ++a) {
    if (theta[a].size() != g[a].size() || m[a].size() != g[a].size() || v[a].size() != g[a].size()) {
      throw ShapeError("adam_step: shape mismatch in " + std::string(kParamNames[a]));
    }
    for (std::size_t i = 0; i < g[a].size(); ++i) {
      m[a][i] = config.beta1 * m[a][i] + (1.0 - config.beta1) * g[a][i];
      v[a][i] = config.beta2 * v[a][i] + (1.0 - config.beta2) * g[a][i] * g[a][i];
      const double mhat = m[a][i] / bc1;
      const double vhat = v[a][i] / bc2;
      theta[a][i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
  return out;
}

TrainResult train(const FrameStack& stack, const NetworkConfig& net_config, const TrainConfig& train_config,
                  const IterationCallback& on_iteration) {
  net_config.validate();
  train_config.validate(stack.nt());
  const FrameStack observed = stack.head(static_cast<std::size_t>(train_config.split));
  const SpectralPlan plan(observed.nx(), observed.ny());

  TrainResult result;
  result.params = init_params(net_config, train_config.seed);
  AdamState state = AdamState::zeros(net_config);
  result.report.iterations.reserve(static_cast<std::size_t>(train_config.max_iters));

  for (int it = 0; it < train_config.max_iters; ++it) {
    auto lg = loss_and_gradients(observed, train_config.split, result.params, net_config, plan, train_config.threads);
    if (!std::isfinite(lg.loss)) {
      throw std::runtime_error("training diverged: non-finite loss at iteration " + std::to_string(it));
    }
    auto clipped = clip_gradients(std::move(lg.grads), train_config.clip_norm);
    if (!std::isfinite(clipped.preclip_norm)) {
      throw std::runtime_error("training diverged: non-finite gradient at iteration " + std::to_string(it));
    }
    auto update = adam_step(result.params, clipped.grads, state, train_config);
    result.params = std::move(update.params);
    state = std::move(update.state);

    const IterationRecord rec{it, lg.loss, clipped.preclip_norm, clipped.clipped};
    result.report.iterations.push_back(rec);
    if (on_iteration) on_iteration(rec);
  }
  return result;
}

FrameStack rollout_predict(const FrameStack& stack, int split, const NetworkParams& params,
                           const NetworkConfig& net_config, const SpectralPlan& plan) {
  if (split < 2 || static_cast<std::size_t>(split) >= stack.nt()) {
    throw ArgumentError("rollout_predict: split must satisfy 2 <= s < nt");
  }
  const auto s = static_cast<std::size_t>(split);
  const auto& times = stack.times();
  std::vector<double> current(stack.frame(s - 1).begin(), stack.frame(s - 1).end());
  std::vector<double> out_times(times.begin() + static_cast<std::ptrdiff_t>(s), times.end());
  std::vector<double> data;
  data.reserve(out_times.size() * stack.pixels());
  for (std::size_t j = s - 1; j + 1 < stack.nt(); ++j) {
    current = forward_transition(current, times[j], times[j + 1], params, net_config, plan);
    data.insert(data.end(), current.begin(), current.end());
  }
  return FrameStack(stack.nx(), stack.ny(), std::move(out_times), std::move(data));
}

void write_train_log_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "iter,loss,grad_norm,clipped\n";
  char line[128];
  for (const auto& r : report.iterations) {
    std::snprintf(line, sizeof line, "%d,%.9e,%.9e,%d\n", r.iteration, r.train_loss, r.grad_norm_preclip,
                  r.clipped ? 1 : 0);
    out << line;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace rdtac
