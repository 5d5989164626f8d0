#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rdtac/core_data.hpp"

namespace rdtac {

enum class Method { rdnet, ctm, persistence };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct EvalRow {
  std::string roi_name;
  Method method = Method::rdnet;
  double mse = 0.0;
  int n_test_frames = 0;

  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

/// Per-ROI mean over test frames of (ROI-mean truth - ROI-mean prediction)^2.
/// pred must hold exactly the frames split+1..nt of truth (same times).
std::vector<EvalRow> evaluate_mse(const FrameStack& truth, const FrameStack& pred, const std::vector<RoiMask>& rois,
                                  int split, Method method = Method::rdnet);

/// Same metric for a prediction given directly as an ROI TAC over the test frames.
EvalRow evaluate_tac_mse(const Tac& truth, const Tac& pred, const std::string& roi_name, int split, Method method);

FrameStack persistence_baseline(const FrameStack& stack, int split);

void write_report_csv(std::vector<EvalRow> rows, const std::filesystem::path& path);
std::string format_report_csv(std::vector<EvalRow> rows);
std::vector<EvalRow> parse_report_csv(const std::string& text);

struct LabeledTac {
  std::string label;
  Tac tac;
};

std::string tac_svg(const Tac& truth, const std::vector<LabeledTac>& preds, int split);
void render_tac_svg(const Tac& truth, const std::vector<LabeledTac>& preds, int split,
                    const std::filesystem::path& path);

}  // namespace rdtac
