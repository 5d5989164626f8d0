#include "rdtac/autodiff.hpp"

#include <algorithm>
#include <exception>
#include <thread>

#include "rdtac/errors.hpp"

namespace rdtac {

TapedPrediction forward_with_tape(std::span<const double> frame, double t_current, double t_next,
                                  const NetworkParams& params, const NetworkConfig& config, const SpectralPlan& plan) {
  validate_params(params, config);
  if (!(t_next > t_current)) throw ArgumentError("forward_with_tape: frame times must be increasing");
  plan.check_shape(frame.size(), "forward_with_tape");

  TapedPrediction out;
  TransitionTape& tape = out.tape;
  tape.t_current = t_current;
  tape.h = (t_next - t_current) / config.internal_steps;
  tape.input_frame.assign(frame.begin(), frame.end());
  tape.steps.reserve(static_cast<std::size_t>(config.internal_steps));

  const double h = tape.h;
  ChannelState u = open_embed(frame, params);
  for (int k = 0; k < config.internal_steps; ++k) {
    StepRecord rec;
    rec.time = t_current + k * h;
    rec.pre_diffusion = u;
    rec.post_diffusion = diffuse_channels(u, h, params, plan);
    const ChannelState r = reaction_apply(rec.post_diffusion, rec.time, params, config, &rec.pre_activation);
    rec.time_embedding = time_embedding(rec.time, params, config);
    u = rec.post_diffusion;
    for (std::size_t m = 0; m < u.values.size(); ++m) u.values[m] += h * r.values[m];
    tape.steps.push_back(std::move(rec));
  }
  out.prediction = close_project(u, params);
  tape.final_state = std::move(u);
  return out;
}

TransitionGradients backward(const TransitionTape& tape, std::span<const double> out_grad,
                             const NetworkParams& params, const NetworkConfig& config, const SpectralPlan& plan) {
  validate_params(params, config);
  const auto c = static_cast<std::size_t>(config.channels);
  const auto d = static_cast<std::size_t>(config.time_dim);
  const std::size_t n = plan.size();
  if (out_grad.size() != n) throw ShapeError("backward: out_grad does not match the grid");
  if (tape.steps.size() != static_cast<std::size_t>(config.internal_steps) || tape.final_state.pixels != n ||
      tape.final_state.channels != c || tape.input_frame.size() != n) {
    throw ShapeError("backward: tape does not match config/plan");
  }

  TransitionGradients out;
  ParamGradients& g = out.params;
  g = ParamGradients::zeros(config);
  const double h = tape.h;

  // Closing layer.
  double gb = 0.0;
  for (double v : out_grad) gb += v;
  g.b_close[0] = gb;
  ChannelState gu(c, n);
  for (std::size_t i = 0; i < c; ++i) {
    const auto ch = tape.final_state.channel(i);
    double acc = 0.0;
    for (std::size_t p = 0; p < n; ++p) acc += out_grad[p] * ch[p];
    g.w_close[i] = acc;
    auto gch = gu.channel(i);
    for (std::size_t p = 0; p < n; ++p) gch[p] = params.w_close[i] * out_grad[p];
  }

  std::vector<double> ga(c), gz(c), a(c);
  for (auto it = tape.steps.rbegin(); it != tape.steps.rend(); ++it) {
    const StepRecord& rec = *it;
    // u+ = u~ + h K2 silu(z),  z = K1 u~ + t_e
    ChannelState gpost = gu;  // identity path
    std::vector<double> gte(c, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t i = 0; i < c; ++i) a[i] = silu(rec.pre_activation[i * n + p]);
      for (std::size_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < c; ++i) acc += params.k2[i * c + j] * gu.values[i * n + p];
        ga[j] = h * acc;
      }
      for (std::size_t i = 0; i < c; ++i) {
        const double gi = h * gu.values[i * n + p];
        double* row = g.k2.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) row[j] += gi * a[j];
      }
      for (std::size_t i = 0; i < c; ++i) {
        gz[i] = ga[i] * silu_derivative(rec.pre_activation[i * n + p]);
        gte[i] += gz[i];
      }
      for (std::size_t i = 0; i < c; ++i) {
        double* row = g.k1.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) row[j] += gz[i] * rec.post_diffusion.values[j * n + p];
      }
      for (std::size_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < c; ++i) acc += params.k1[i * c + j] * gz[i];
        gpost.values[j * n + p] += acc;
      }
    }

    // t_e = W_t silu(tn * b_t)
    const double tn = rec.time / config.scan_duration;
    for (std::size_t k = 0; k < d; ++k) {
      const double pre = tn * params.b_t[k];
      const double hidden = silu(pre);
      double gh = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        g.w_t[i * d + k] += gte[i] * hidden;
        gh += params.w_t[i * d + k] * gte[i];
      }
      g.b_t[k] += gh * silu_derivative(pre) * tn;
    }

    // Implicit diffusion, per channel.
    for (std::size_t i = 0; i < c; ++i) {
      const double kappa = softplus(params.rho[i]);
      const auto vjp = diffusion_step_vjp(rec.pre_diffusion.channel(i), gpost.channel(i), kappa, h, plan);
      std::copy(vjp.grad_u.begin(), vjp.grad_u.end(), gu.channel(i).begin());
      g.rho[i] += vjp.grad_kappa * sigmoid(params.rho[i]);
    }
  }

  // Opening layer.
  out.input_grad.assign(n, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    const auto gch = gu.channel(i);
    double gw = 0.0, gbias = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      gw += gch[p] * tape.input_frame[p];
      gbias += gch[p];
      out.input_grad[p] += params.w_open[i] * gch[p];
    }
    g.w_open[i] = gw;
    g.b_open[i] = gbias;
  }
  return out;
}

void accumulate(ParamGradients& into, const ParamGradients& from) {
  auto dst = into.arrays();
  const auto src = from.arrays();
  for (std::size_t a = 0; a < kParamArrayCount; ++a) {
    if (dst[a].size() != src[a].size()) throw ShapeError("accumulate: gradient shapes differ");
    for (std::size_t i = 0; i < dst[a].size(); ++i) dst[a][i] += src[a][i];
  }
}

LossAndGradients loss_and_gradients(const FrameStack& stack, int split, const NetworkParams& params,
                                    const NetworkConfig& config, const SpectralPlan& plan, int threads) {
  validate_params(params, config);
  if (split < 2 || static_cast<std::size_t>(split) > stack.nt()) {
    throw ArgumentError("loss_and_gradients: split must satisfy 2 <= s <= nt");
  }
  if (stack.nx() != plan.nx() || stack.ny() != plan.ny()) throw ShapeError("loss_and_gradients: grid mismatch");

  const std::size_t transitions = static_cast<std::size_t>(split) - 1;
  const std::size_t n = stack.pixels();
  const double norm = static_cast<double>(transitions) * static_cast<double>(n);

  struct Partial {
    double sq = 0.0;
    ParamGradients grads;
  };
  std::vector<Partial> partial(transitions);

  auto work = [&](std::size_t j) {
    const auto& times = stack.times();
    auto fwd = forward_with_tape(stack.frame(j), times[j], times[j + 1], params, config, plan);
    const auto target = stack.frame(j + 1);
    std::vector<double> og(n);
    double sq = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double r = fwd.prediction[p] - target[p];
      sq += r * r;
      og[p] = r / norm;
    }
    partial[j].sq = sq;
    partial[j].grads = backward(fwd.tape, og, params, config, plan).params;
  };

  const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, static_cast<int>(transitions)));
  if (workers == 1) {
    for (std::size_t j = 0; j < transitions; ++j) work(j);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t j = w; j < transitions; j += workers) work(j);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  LossAndGradients out;
  out.grads = ParamGradients::zeros(config);
  double sq = 0.0;
  for (const auto& part : partial) {
    sq += part.sq;
    accumulate(out.grads, part.grads);
  }
  out.loss = sq / (2.0 * norm);
  return out;
}

}  // namespace rdtac
