#include "rdtac/evalreport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rdtac/errors.hpp"

namespace rdtac {

namespace {

void check_test_times(std::span<const double> truth_times, std::span<const double> pred_times, int split) {
  const auto s = static_cast<std::size_t>(split);
  if (split < 1 || s >= truth_times.size()) throw ArgumentError("evaluate: split must satisfy 1 <= s < nt");
  if (pred_times.size() != truth_times.size() - s) {
    throw ArgumentError("evaluate: prediction has " + std::to_string(pred_times.size()) + " frames, expected " +
                        std::to_string(truth_times.size() - s));
  }
  for (std::size_t j = 0; j < pred_times.size(); ++j) {
    if (pred_times[j] != truth_times[s + j]) {
      throw ArgumentError("evaluate: prediction frame time " + std::to_string(pred_times[j]) +
                          " does not match truth time " + std::to_string(truth_times[s + j]));
    }
  }
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::rdnet: return "rdnet";
    case Method::ctm: return "ctm";
    case Method::persistence: return "persistence";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  if (name == "rdnet") return Method::rdnet;
  if (name == "ctm") return Method::ctm;
  if (name == "persistence") return Method::persistence;
  throw ArgumentError("unknown method '" + name + "'");
}

std::vector<EvalRow> evaluate_mse(const FrameStack& truth, const FrameStack& pred, const std::vector<RoiMask>& rois,
                                  int split, Method method) {
  if (truth.nx() != pred.nx() || truth.ny() != pred.ny()) throw ShapeError("evaluate_mse: grid mismatch");
  check_test_times(truth.times(), pred.times(), split);
  std::vector<EvalRow> rows;
  rows.reserve(rois.size());
  for (const auto& roi : rois) {
    rows.push_back(evaluate_tac_mse(extract_roi_tac(truth, roi), extract_roi_tac(pred, roi), roi.name, split, method));
  }
  return rows;
}

EvalRow evaluate_tac_mse(const Tac& truth, const Tac& pred, const std::string& roi_name, int split, Method method) {
  check_test_times(truth.times, pred.times, split);
  const auto s = static_cast<std::size_t>(split);
  double sum = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const double e = truth.values[s + j] - pred.values[j];
    sum += e * e;
  }
  const auto count = static_cast<int>(pred.size());
  return EvalRow{roi_name, method, sum / count, count};
}

FrameStack persistence_baseline(const FrameStack& stack, int split) {
  if (split < 1 || static_cast<std::size_t>(split) >= stack.nt()) {
    throw ArgumentError("persistence_baseline: split must satisfy 1 <= s < nt");
  }
  const auto s = static_cast<std::size_t>(split);
  const auto last = stack.frame(s - 1);
  std::vector<double> times(stack.times().begin() + static_cast<std::ptrdiff_t>(s), stack.times().end());
  std::vector<double> data;
  data.reserve(times.size() * stack.pixels());
  for (std::size_t j = 0; j < times.size(); ++j) data.insert(data.end(), last.begin(), last.end());
  return FrameStack(stack.nx(), stack.ny(), std::move(times), std::move(data));
}

std::string format_report_csv(std::vector<EvalRow> rows) {
  if (rows.empty()) throw ArgumentError("write_report_csv: no rows");
  std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
    if (a.roi_name != b.roi_name) return a.roi_name < b.roi_name;
    return to_string(a.method) < to_string(b.method);
  });
  std::string out = "roi,method,mse,n_test_frames\n";
  for (const auto& r : rows) {
    out += r.roi_name + "," + to_string(r.method) + "," + fmt("%#.6g", r.mse) + "," + std::to_string(r.n_test_frames) +
           "\n";
  }
  return out;
}

void write_report_csv(std::vector<EvalRow> rows, const std::filesystem::path& path) {
  const std::string text = format_report_csv(std::move(rows));
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<EvalRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "roi,method,mse,n_test_frames") throw FormatError("report CSV: bad header");
  std::vector<EvalRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string roi, method, mse, count;
    if (!std::getline(fields, roi, ',') || !std::getline(fields, method, ',') || !std::getline(fields, mse, ',') ||
        !std::getline(fields, count)) {
      throw FormatError("report CSV: malformed row '" + line + "'");
    }
    rows.push_back(EvalRow{roi, method_from_string(method), std::stod(mse), std::stoi(count)});
  }
  return rows;
}

std::string tac_svg(const Tac& truth, const std::vector<LabeledTac>& preds, int split) {
  if (truth.size() == 0) throw ArgumentError("render_tac_svg: empty truth TAC");
  if (split < 0 || static_cast<std::size_t>(split) > truth.size()) throw ArgumentError("render_tac_svg: bad split");
  for (const auto& p : preds) {
    if (p.tac.size() > truth.size()) throw ArgumentError("render_tac_svg: prediction '" + p.label + "' is too long");
    for (double t : p.tac.times) {
      if (!std::binary_search(truth.times.begin(), truth.times.end(), t)) {
        throw ArgumentError("render_tac_svg: prediction '" + p.label + "' has a time not present in the truth TAC");
      }
    }
  }

  const double width = 640, height = 400, left = 70, right = 160, top = 30, bottom = 60;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  double tmax = truth.times.back();
  double vmin = 0.0, vmax = 0.0;
  auto extend = [&](const Tac& tac) {
    for (double v : tac.values) {
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
  };
  extend(truth);
  for (const auto& p : preds) extend(p.tac);
  if (vmax <= vmin) vmax = vmin + 1.0;
  vmax += 0.05 * (vmax - vmin);
  if (tmax <= 0.0) tmax = 1.0;

  auto sx = [&](double t) { return left + plot_w * t / tmax; };
  auto sy = [&](double v) { return top + plot_h * (1.0 - (v - vmin) / (vmax - vmin)); };
  auto num = [](double v) { return fmt("%.3f", v); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  // Axes
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double t = tmax * k / 4.0;
    const double v = vmin + (vmax - vmin) * k / 4.0;
    svg << "<text x=\"" << num(sx(t)) << "\" y=\"" << num(top + plot_h + 18)
        << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt("%.1f", t) << "</text>\n";
    svg << "<text x=\"" << num(left - 6) << "\" y=\"" << num(sy(v) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\">" << fmt("%.3g", v) << "</text>\n";
  }
  svg << "<text x=\"" << num(left + plot_w / 2) << "\" y=\"" << num(height - 15)
      << "\" font-size=\"13\" text-anchor=\"middle\">time (min)</text>\n";
  svg << "<text x=\"15\" y=\"" << num(top + plot_h / 2) << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
      << num(top + plot_h / 2) << ")\">activity</text>\n";

  auto polyline = [&](const Tac& tac, const char* color, const char* cls) {
    svg << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t j = 0; j < tac.size(); ++j) {
      svg << (j ? " " : "") << num(sx(tac.times[j])) << "," << num(sy(tac.values[j]));
    }
    svg << "\"/>\n";
  };

  polyline(truth, "#1f77b4", "truth");
  for (std::size_t j = 0; j < truth.size(); ++j) {
    const bool training = j < static_cast<std::size_t>(split);
    svg << "<circle class=\"marker\" cx=\"" << num(sx(truth.times[j])) << "\" cy=\"" << num(sy(truth.values[j]))
        << "\" r=\"4\" stroke=\"#1f77b4\" fill=\"" << (training ? "#1f77b4" : "none") << "\"/>\n";
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    polyline(preds[i].tac, color, "prediction");
    for (std::size_t j = 0; j < preds[i].tac.size(); ++j) {
      const double x = sx(preds[i].tac.times[j]), y = sy(preds[i].tac.values[j]);
      svg << "<rect class=\"marker\" x=\"" << num(x - 3.5) << "\" y=\"" << num(y - 3.5)
          << "\" width=\"7\" height=\"7\" stroke=\"" << color << "\" fill=\"none\"/>\n";
    }
  }

  // Legend
  const double lx = left + plot_w + 15;
  double ly = top + 10;
  auto legend = [&](const std::string& label, const char* color) {
    svg << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 20) << "\" y2=\"" << num(ly)
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << num(lx + 26) << "\" y=\"" << num(ly + 4) << "\" font-size=\"12\">" << xml_escape(label)
        << "</text>\n";
    ly += 18;
  };
  legend("truth", "#1f77b4");
  for (std::size_t i = 0; i < preds.size(); ++i) legend(preds[i].label, kPalette[i % std::size(kPalette)]);
  svg << "</svg>\n";
  return svg.str();
}

void render_tac_svg(const Tac& truth, const std::vector<LabeledTac>& preds, int split,
                    const std::filesystem::path& path) {
  const std::string text = tac_svg(truth, preds, split);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace rdtac
