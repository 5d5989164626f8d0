#include "rdtac/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "rdtac/compartment.hpp"
#include "rdtac/core_data.hpp"
#include "rdtac/evalreport.hpp"
#include "rdtac/phantom.hpp"
#include "rdtac/rdnet.hpp"
#include "rdtac/trainer.hpp"

namespace rdtac::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

template <class T>
void take_key(const json& obj, const char* key, T& into, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    into = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError("config file: wrong type for " + where + "." + key);
  }
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw UsageError("config file: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw UsageError("config file: unknown key '" + where + "." + key + "'");
  }
}

// Overlays a JSON config file on the built-in defaults.
void apply_config_file(const fs::path& path, NetworkConfig& net, TrainConfig& train) {
  const json root = read_json(path);
  check_keys(root, {"net", "train"}, "root");
  if (root.contains("net")) {
    const auto& n = root.at("net");
    check_keys(n, {"channels", "internal_steps", "time_dim"}, "net");
    take_key(n, "channels", net.channels, "net");
    take_key(n, "internal_steps", net.internal_steps, "net");
    take_key(n, "time_dim", net.time_dim, "net");
  }
  if (root.contains("train")) {
    const auto& t = root.at("train");
    check_keys(t, {"split", "lr", "beta1", "beta2", "eps", "clip_norm", "max_iters", "seed", "threads"}, "train");
    take_key(t, "split", train.split, "train");
    take_key(t, "lr", train.lr, "train");
    take_key(t, "beta1", train.beta1, "train");
    take_key(t, "beta2", train.beta2, "train");
    take_key(t, "eps", train.eps, "train");
    take_key(t, "clip_norm", train.clip_norm, "train");
    take_key(t, "max_iters", train.max_iters, "train");
    take_key(t, "seed", train.seed, "train");
    take_key(t, "threads", train.threads, "train");
  }
}

json net_json(const NetworkConfig& c) {
  return {{"channels", c.channels},
          {"internal_steps", c.internal_steps},
          {"time_dim", c.time_dim},
          {"scan_duration", c.scan_duration}};
}

json train_json(const TrainConfig& c) {
  return {{"split", c.split}, {"lr", c.lr},   {"beta1", c.beta1},         {"beta2", c.beta2},     {"eps", c.eps},
          {"clip_norm", c.clip_norm}, {"max_iters", c.max_iters}, {"seed", c.seed}, {"threads", c.threads}};
}

struct PredictionSource {
  Method method;
  fs::path path;
};

PredictionSource parse_prediction(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq != std::string::npos) {
    const std::string label = arg.substr(0, eq);
    if (label == "rdnet" || label == "ctm" || label == "persistence") {
      return {method_from_string(label), arg.substr(eq + 1)};
    }
  }
  const fs::path p(arg);
  return {p.extension() == ".json" ? Method::ctm : Method::rdnet, p};
}

struct CtmPrediction {
  std::string roi;
  Tac tac;
};

CtmPrediction load_ctm_prediction(const fs::path& path) {
  const json j = read_json(path);
  try {
    return {j.at("roi").get<std::string>(),
            Tac(j.at("test_times").get<std::vector<double>>(), j.at("prediction").get<std::vector<double>>())};
  } catch (const json::exception& e) {
    throw FormatError("fit-ctm output " + path.string() + " lacks prediction fields: " + e.what());
  }
}

const RoiMask& find_roi(const std::vector<RoiMask>& rois, const std::string& name) {
  for (const auto& r : rois) {
    if (r.name == name) return r;
  }
  throw ArgumentError("no ROI named '" + name + "' among --rois");
}

// Prefix (0, 0) so a frame-sampled input rises from zero at injection.
InputFunction input_from_tac(const Tac& tac, std::size_t frames) {
  std::vector<double> t(tac.times.begin(), tac.times.begin() + static_cast<std::ptrdiff_t>(frames));
  std::vector<double> v(tac.values.begin(), tac.values.begin() + static_cast<std::ptrdiff_t>(frames));
  if (t.front() > 0.0) {
    t.insert(t.begin(), 0.0);
    v.insert(v.begin(), 0.0);
  }
  for (auto& x : v) x = std::max(x, 0.0);
  return InputFunction::sampled(Tac(std::move(t), std::move(v)));
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p.replace_extension();
  return fs::path(p.string() + suffix);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reaction-diffusion network and compartment-model tools for dynamic image sequences", "rdtac"};
  app.require_subcommand(1, 1);

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic frame stack");
  std::string ph_kind = "kinetic", ph_out;
  std::size_t ph_nx = 64, ph_ny = 64;
  int ph_frames = 15;
  std::uint64_t ph_seed = 0;
  double ph_blur = KineticPhantomParams{}.blur_sigma, ph_noise = KineticPhantomParams{}.noise;
  phantom->add_option("--kind", ph_kind, "rd or kinetic")->check(CLI::IsMember({"rd", "kinetic"}));
  phantom->add_option("--nx", ph_nx, "grid width")->check(CLI::Range(8, 4096));
  phantom->add_option("--ny", ph_ny, "grid height")->check(CLI::Range(8, 4096));
  phantom->add_option("--frames", ph_frames, "number of frames")->check(CLI::Range(6, 1000));
  phantom->add_option("--seed", ph_seed, "random seed");
  phantom->add_option("--blur", ph_blur, "kinetic: Gaussian blur sigma (pixels)")->check(CLI::NonNegativeNumber);
  phantom->add_option("--noise", ph_noise, "kinetic: noise scale eta")->check(CLI::NonNegativeNumber);
  phantom->add_option("--out", ph_out, "output .dpet path")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Fit the reaction-diffusion network to the first frames");
  std::string tr_data, tr_model, tr_log, tr_config;
  NetworkConfig cli_net;
  TrainConfig cli_train;
  train_cmd->add_option("--data", tr_data, "input .dpet")->required();
  train_cmd->add_option("--config", tr_config, "JSON config file {net:{...}, train:{...}}");
  auto* o_split = train_cmd->add_option("--split", cli_train.split, "train on frames 1..split");
  auto* o_channels = train_cmd->add_option("--channels", cli_net.channels, "state channels");
  auto* o_steps = train_cmd->add_option("--steps", cli_net.internal_steps, "IMEX steps per frame transition");
  auto* o_tdim = train_cmd->add_option("--time-dim", cli_net.time_dim, "time embedding width");
  auto* o_lr = train_cmd->add_option("--lr", cli_train.lr, "Adam learning rate");
  auto* o_clip = train_cmd->add_option("--clip", cli_train.clip_norm, "global gradient-norm clip");
  auto* o_iters = train_cmd->add_option("--iters", cli_train.max_iters, "iterations");
  auto* o_seed = train_cmd->add_option("--seed", cli_train.seed, "initialization seed");
  auto* o_threads = train_cmd->add_option("--threads", cli_train.threads, "worker threads");
  train_cmd->add_option("--out-model", tr_model, "output .dprd model")->required();
  train_cmd->add_option("--log", tr_log, "training log CSV");

  // predict
  auto* predict = app.add_subcommand("predict", "Roll the trained network forward past the split");
  std::string pr_data, pr_model, pr_out;
  int pr_split = 11;
  predict->add_option("--data", pr_data, "input .dpet")->required();
  predict->add_option("--model", pr_model, "trained .dprd")->required();
  predict->add_option("--split", pr_split, "last observed frame (1-based count)");
  predict->add_option("--out", pr_out, "output .dpet with the predicted frames")->required();

  // fit-ctm
  auto* fit = app.add_subcommand("fit-ctm", "Fit a compartment model to an ROI TAC and extrapolate");
  std::string fc_data, fc_roi, fc_input, fc_model = "3tcm", fc_out;
  int fc_fit_frames = 11, fc_starts = 16, fc_split = -1;
  std::uint64_t fc_seed = 0;
  bool fc_vb = false;
  fit->add_option("--data", fc_data, "input .dpet")->required();
  fit->add_option("--roi", fc_roi, "tissue ROI file")->required();
  fit->add_option("--input-roi", fc_input, "blood ROI file used as the plasma input")->required();
  fit->add_option("--model", fc_model, "1tcm, 2tcm or 3tcm")->check(CLI::IsMember({"1tcm", "2tcm", "3tcm"}));
  fit->add_option("--fit-frames", fc_fit_frames, "frames used by the fit")->check(CLI::PositiveNumber);
  fit->add_option("--split", fc_split, "observed frames (default: fit-frames)");
  fit->add_option("--starts", fc_starts, "multistart count")->check(CLI::PositiveNumber);
  fit->add_option("--seed", fc_seed, "multistart seed");
  fit->add_flag("--fit-vb", fc_vb, "also fit the blood volume fraction");
  fit->add_option("--out", fc_out, "output JSON")->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "ROI-mean MSE over the test frames");
  std::string ev_truth, ev_out;
  std::vector<std::string> ev_preds, ev_rois;
  int ev_split = 11;
  evaluate->add_option("--truth", ev_truth, "ground-truth .dpet")->required();
  evaluate->add_option("--pred", ev_preds, "[rdnet=|ctm=]path (.dpet stack or fit-ctm JSON)")->required();
  evaluate->add_option("--rois", ev_rois, "ROI files")->required();
  evaluate->add_option("--split", ev_split, "observed frames");
  evaluate->add_option("--out", ev_out, "output CSV")->required();

  // plot-tac
  auto* plot = app.add_subcommand("plot-tac", "SVG plot of an ROI TAC with predictions");
  std::string pl_truth, pl_roi, pl_out;
  std::vector<std::string> pl_preds;
  int pl_split = 11;
  plot->add_option("--truth", pl_truth, "ground-truth .dpet")->required();
  plot->add_option("--pred", pl_preds, "[label=]path (.dpet stack or fit-ctm JSON)");
  plot->add_option("--roi", pl_roi, "ROI file")->required();
  plot->add_option("--split", pl_split, "observed frames");
  plot->add_option("--out", pl_out, "output SVG")->required();

  std::vector<std::string> argv_store;
  argv_store.reserve(args.size() + 1);
  argv_store.push_back("rdtac");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (phantom->parsed()) {
      PhantomConfig cfg;
      cfg.kind = ph_kind == "rd" ? PhantomKind::rd : PhantomKind::kinetic;
      cfg.nx = ph_nx;
      cfg.ny = ph_ny;
      cfg.frame_times = PhantomConfig::default_frame_times(ph_frames);
      cfg.seed = ph_seed;
      cfg.kinetic.blur_sigma = ph_blur;
      cfg.kinetic.noise = ph_noise;
      json resolved = phantom_truth_json(cfg);
      resolved["command"] = "phantom";
      out << resolved.dump() << "\n";

      const fs::path target(ph_out);
      std::vector<RoiMask> rois;
      if (cfg.kind == PhantomKind::rd) {
        const auto ph = generate_rd_phantom(cfg);
        save_framestack(ph.stack, target);
        auto truth = phantom_truth_json(cfg);
        truth["u0"] = ph.u0;
        truth["v0"] = ph.v0;
        write_json(truth, sibling(target, ".truth.json"));
        rois = default_rois(cfg.nx, cfg.ny);
      } else {
        const auto ph = generate_kinetic_phantom(cfg);
        save_framestack(ph.stack, target);
        write_json(kinetic_truth_json(cfg, ph), sibling(target, ".truth.json"));
        rois = ph.rois;
      }
      for (const auto& roi : rois) save_roi(roi, sibling(target, ".roi." + roi.name + ".dpet"));
      return kExitOk;
    }

    if (train_cmd->parsed()) {
      NetworkConfig net;
      TrainConfig tc;
      if (!tr_config.empty()) apply_config_file(tr_config, net, tc);
      if (o_split->count()) tc.split = cli_train.split;
      if (o_channels->count()) net.channels = cli_net.channels;
      if (o_steps->count()) net.internal_steps = cli_net.internal_steps;
      if (o_tdim->count()) net.time_dim = cli_net.time_dim;
      if (o_lr->count()) tc.lr = cli_train.lr;
      if (o_clip->count()) tc.clip_norm = cli_train.clip_norm;
      if (o_iters->count()) tc.max_iters = cli_train.max_iters;
      if (o_seed->count()) tc.seed = cli_train.seed;
      if (o_threads->count()) tc.threads = cli_train.threads;

      const FrameStack stack = load_framestack(tr_data);
      net.scan_duration = stack.times().back();
      try {
        net.validate();
        tc.validate(stack.nt());
      } catch (const ArgumentError& e) {
        throw UsageError(e.what());
      }
      out << json{{"command", "train"}, {"net", net_json(net)}, {"train", train_json(tc)}}.dump() << "\n";

      const auto result = train(stack, net, tc);
      save_model(Model{net, result.params}, tr_model);
      if (!tr_log.empty()) write_train_log_csv(result.report, tr_log);
      if (!result.report.iterations.empty()) {
        out << "final_loss " << result.report.iterations.back().train_loss << "\n";
      }
      return kExitOk;
    }

    if (predict->parsed()) {
      const FrameStack stack = load_framestack(pr_data);
      const Model model = load_model(pr_model);
      out << json{{"command", "predict"}, {"split", pr_split}, {"net", net_json(model.config)}}.dump() << "\n";
      if (pr_split < 2 || static_cast<std::size_t>(pr_split) >= stack.nt()) {
        throw UsageError("--split must satisfy 2 <= split < nt");
      }
      const SpectralPlan plan(stack.nx(), stack.ny());
      save_framestack(rollout_predict(stack, pr_split, model.params, model.config, plan), pr_out);
      return kExitOk;
    }

    if (fit->parsed()) {
      const int split = fc_split > 0 ? fc_split : fc_fit_frames;
      out << json{{"command", "fit-ctm"}, {"model", fc_model},   {"fit_frames", fc_fit_frames},
                  {"split", split},       {"starts", fc_starts}, {"seed", fc_seed},
                  {"fit_vb", fc_vb}}
                 .dump()
          << "\n";
      const FrameStack stack = load_framestack(fc_data);
      if (fc_fit_frames > split || static_cast<std::size_t>(split) > stack.nt()) {
        throw UsageError("need fit-frames <= split <= nt");
      }
      const RoiMask roi = load_roi(fc_roi);
      const RoiMask input_roi = load_roi(fc_input);
      const Tac tac = extract_roi_tac(stack, roi);
      const InputFunction input = input_from_tac(extract_roi_tac(stack, input_roi), static_cast<std::size_t>(split));

      FitOptions opts;
      opts.n_starts = fc_starts;
      opts.seed = fc_seed;
      opts.fit_vb = fc_vb;
      const FitResult result = lm_fit(tac, input, tissue_count_from_name(fc_model), fc_fit_frames, opts);

      const std::vector<double> test_times(stack.times().begin() + split, stack.times().end());
      const Extrapolation ex = ctm_extrapolate(result, input, test_times);
      json j = fit_result_to_json(result);
      j["roi"] = roi.name;
      j["split"] = split;
      j["test_times"] = ex.tac.times;
      j["prediction"] = ex.tac.values;
      j["constant_tail"] = ex.constant_tail;
      write_json(j, fc_out);
      return kExitOk;
    }

    if (evaluate->parsed()) {
      out << json{{"command", "evaluate"}, {"split", ev_split}, {"preds", ev_preds}, {"rois", ev_rois}}.dump() << "\n";
      const FrameStack truth = load_framestack(ev_truth);
      std::vector<RoiMask> rois;
      for (const auto& r : ev_rois) rois.push_back(load_roi(r));
      std::vector<EvalRow> rows;
      for (const auto& arg : ev_preds) {
        const auto src = parse_prediction(arg);
        if (src.path.extension() == ".json") {
          const auto ctm = load_ctm_prediction(src.path);
          const auto& roi = find_roi(rois, ctm.roi);
          rows.push_back(evaluate_tac_mse(extract_roi_tac(truth, roi), ctm.tac, roi.name, ev_split, src.method));
        } else {
          const auto part = evaluate_mse(truth, load_framestack(src.path), rois, ev_split, src.method);
          rows.insert(rows.end(), part.begin(), part.end());
        }
      }
      const auto base = evaluate_mse(truth, persistence_baseline(truth, ev_split), rois, ev_split, Method::persistence);
      rows.insert(rows.end(), base.begin(), base.end());
      write_report_csv(rows, ev_out);
      return kExitOk;
    }

    if (plot->parsed()) {
      out << json{{"command", "plot-tac"}, {"split", pl_split}, {"preds", pl_preds}, {"roi", pl_roi}}.dump() << "\n";
      const FrameStack truth = load_framestack(pl_truth);
      const RoiMask roi = load_roi(pl_roi);
      std::vector<LabeledTac> preds;
      for (const auto& arg : pl_preds) {
        const auto src = parse_prediction(arg);
        if (src.path.extension() == ".json") {
          auto ctm = load_ctm_prediction(src.path);
          if (ctm.roi != roi.name) throw ArgumentError("fit-ctm output is for ROI '" + ctm.roi + "', not '" + roi.name + "'");
          preds.push_back({to_string(src.method), std::move(ctm.tac)});
        } else {
          preds.push_back({to_string(src.method), extract_roi_tac(load_framestack(src.path), roi)});
        }
      }
      render_tac_svg(extract_roi_tac(truth, roi), preds, pl_split, pl_out);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace rdtac::cli
