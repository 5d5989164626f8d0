#pragma once

#include <span>
#include <vector>

#include "rdtac/core_data.hpp"
#include "rdtac/rdnet.hpp"
#include "rdtac/spectral.hpp"

namespace rdtac {

// Intermediates of one IMEX step.
struct StepRecord {
  double time = 0.0;
  ChannelState pre_diffusion;
  ChannelState post_diffusion;
  std::vector<double> pre_activation;  // K1 * post_diffusion + t_e
  std::vector<double> time_embedding;  // t_e, c entries
};

struct TransitionTape {
  double t_current = 0.0;
  double h = 0.0;
  std::vector<double> input_frame;
  std::vector<StepRecord> steps;
  ChannelState final_state;
};

struct TapedPrediction {
  std::vector<double> prediction;
  TransitionTape tape;
};

TapedPrediction forward_with_tape(std::span<const double> frame, double t_current, double t_next,
                                  const NetworkParams& params, const NetworkConfig& config, const SpectralPlan& plan);

struct TransitionGradients {
  std::vector<double> input_grad;
  ParamGradients params;
};

/// Reverse pass through one recorded transition, contracting with out_grad.
TransitionGradients backward(const TransitionTape& tape, std::span<const double> out_grad,
                             const NetworkParams& params, const NetworkConfig& config, const SpectralPlan& plan);

struct LossAndGradients {
  double loss = 0.0;
  ParamGradients grads;
};

/// Teacher-forced loss over transitions j -> j+1 for j < split-1:
/// (1 / (2 (split-1) nx ny)) * sum ||f(I_j) - I_{j+1}||^2, with its gradient.
/// Per-transition work may be spread over `threads` workers; accumulation is
/// always done in transition order.
LossAndGradients loss_and_gradients(const FrameStack& stack, int split, const NetworkParams& params,
                                    const NetworkConfig& config, const SpectralPlan& plan, int threads = 1);

void accumulate(ParamGradients& into, const ParamGradients& from);

}  // namespace rdtac
