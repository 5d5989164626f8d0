#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "rdtac/core_data.hpp"
#include "rdtac/rdnet.hpp"
#include "rdtac/spectral.hpp"

namespace rdtac {

struct TrainConfig {
  int split = 11;  // train on frames 1..split
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  int max_iters = 2000;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate(std::size_t nt) const;
};

struct AdamState {
  ParamGradients m;
  ParamGradients v;
  long step_count = 0;

  static AdamState zeros(const NetworkConfig& config);
};

struct IterationRecord {
  int iteration = 0;
  double train_loss = 0.0;
  double grad_norm_preclip = 0.0;
  bool clipped = false;

  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct TrainReport {
  std::vector<IterationRecord> iterations;
};

struct ClipResult {
  ParamGradients grads;
  double preclip_norm = 0.0;
  bool clipped = false;
};

double global_norm(const ParamGradients& grads);

/// Global-norm clipping: every entry is scaled by clip_norm / norm when the
/// norm over all concatenated entries exceeds clip_norm.
ClipResult clip_gradients(ParamGradients grads, double clip_norm);

struct AdamUpdate {
  NetworkParams params;
  AdamState state;
};

AdamUpdate adam_step(const NetworkParams& params, const ParamGradients& grads, const AdamState& state,
                     const TrainConfig& config);

struct TrainResult {
  NetworkParams params;
  TrainReport report;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

/// Full-batch Adam on the teacher-forced transitions of frames 1..split.
/// Frames past the split are dropped before anything else happens.
TrainResult train(const FrameStack& stack, const NetworkConfig& net_config, const TrainConfig& train_config,
                  const IterationCallback& on_iteration = {});

/// Autoregressive prediction of frames split+1..nt: the first step starts
/// from the observed frame at index split, later ones from the previous
/// prediction. Output carries the true frame times.
FrameStack rollout_predict(const FrameStack& stack, int split, const NetworkParams& params,
                           const NetworkConfig& net_config, const SpectralPlan& plan);

void write_train_log_csv(const TrainReport& report, const std::filesystem::path& path);

}  // namespace rdtac
