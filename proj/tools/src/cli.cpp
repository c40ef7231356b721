// SPDX-License-Identifier: Apache-2.0
#include "cutie_tools/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cutie/errors.hpp"
#include "cutie/image_io.hpp"
#include "cutie/manifest.hpp"
#include "cutie/metrics.hpp"
#include "cutie/session.hpp"
#include "cutie/weights_io.hpp"

namespace cutie::tools {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  fs::path frames, first_mask, out, weights, gt, report, dump_attention;
  std::optional<std::uint64_t> seed;
  InferenceConfig inference;
};

json attention_json(const StepTrace &trace, const std::string &stem) {
  json j;
  j["frame"] = trace.frame_index;
  j["stem"] = stem;
  j["grid"] = {trace.h, trace.w};
  j["objects"] = json::array();
  for (const LaneTrace &lane : trace.lanes) {
    json obj;
    obj["id"] = lane.id;
    obj["blocks"] = json::array();
    for (std::size_t l = 0; l < lane.attention.size(); ++l) {
      const Tensor &a = lane.attention[l];
      json rows = json::array();
      for (std::size_t q = 0; q < a.dim(0); ++q) {
        const auto row = a.row(q);
        rows.push_back(std::vector<float>(row.begin(), row.end()));
      }
      const auto aux = lane.aux_masks[l].values();
      obj["blocks"].push_back({{"block", l},
                               {"attention", std::move(rows)},
                               {"aux_mask", std::vector<float>(aux.begin(), aux.end())}});
    }
    j["objects"].push_back(std::move(obj));
  }
  return j;
}

std::optional<LabelMap> find_ground_truth(const fs::path &dir, const std::string &stem) {
  for (const char *ext : {".png", ".pgm"}) {
    const fs::path p = dir / (stem + ext);
    if (fs::is_regular_file(p)) {
      return read_mask(p);
    }
  }
  return std::nullopt;
}

int propagate(const Options &opt, std::ostream &out, std::ostream &err) {
  if (!fs::is_directory(opt.frames)) {
    err << "error: frames directory not found: " << opt.frames.string() << "\n";
    return kExitMissingInput;
  }
  const std::vector<fs::path> frames = list_files(opt.frames, ".png");
  if (frames.empty()) {
    err << "error: no PNG frames in " << opt.frames.string() << "\n";
    return kExitMissingInput;
  }
  if (!fs::is_regular_file(opt.first_mask)) {
    err << "error: first mask not found: " << opt.first_mask.string() << "\n";
    return kExitMissingInput;
  }
  if (!opt.weights.empty() && !fs::is_regular_file(opt.weights)) {
    err << "error: weight file not found: " << opt.weights.string() << "\n";
    return kExitMissingInput;
  }
  if (!opt.gt.empty() && !fs::is_directory(opt.gt)) {
    err << "error: ground-truth directory not found: " << opt.gt.string() << "\n";
    return kExitMissingInput;
  }

  const ModelConfig model;
  std::shared_ptr<const SegmentationNetwork> network;
  try {
    if (opt.seed) {
      network = std::make_shared<SegmentationNetwork>(SegmentationNetwork::random(model, *opt.seed));
    } else {
      network = std::make_shared<SegmentationNetwork>(load_weights(opt.weights), model);
    }
  } catch (const CompatibilityError &e) {
    err << "error: " << e.what() << "\n";
    return kExitIncompatibleWeights;
  } catch (const FormatError &e) {
    err << "error: " << e.what() << "\n";
    return kExitIncompatibleWeights;
  }

  fs::create_directories(opt.out);
  if (!opt.dump_attention.empty()) {
    fs::create_directories(opt.dump_attention);
  }

  RunManifest manifest(model, opt.inference);
  manifest.seed = opt.seed;
  manifest.weights = opt.weights.string();
  {
    std::ofstream mf(opt.out / "manifest.json", std::ios::binary | std::ios::trunc);
    mf << manifest.to_json();
  }

  const LabelMap first = read_mask(opt.first_mask);
  InferenceSession session(network, opt.inference);
  std::vector<LabelMap> predictions;
  predictions.reserve(frames.size());

  double compute_seconds = 0.0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const Image image = read_image(frames[t]);
    const std::string stem = frames[t].stem().string();
    const auto start = std::chrono::steady_clock::now();
    LabelMap labels;
    StepTrace trace;
    const bool dump = !opt.dump_attention.empty() && t > 0;
    if (t == 0) {
      session.add_reference(image, first);
      labels = first;
    } else {
      labels = session.step(image, dump ? &trace : nullptr);
    }
    compute_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_mask(labels, opt.out / (stem + ".png"));
    if (dump) {
      std::ofstream af(opt.dump_attention / (stem + ".json"), std::ios::binary | std::ios::trunc);
      af << attention_json(trace, stem).dump() << "\n";
    }
    predictions.push_back(std::move(labels));
  }
  const double fps = compute_seconds > 0.0 ? static_cast<double>(frames.size()) / compute_seconds : 0.0;

  json report;
  report["sequence"] = opt.frames.filename().string();
  report["frames"] = frames.size();
  report["fps"] = fps;
  if (!opt.gt.empty()) {
    const std::vector<std::uint8_t> ids = first.object_ids();
    std::map<std::uint8_t, std::pair<double, double>> sums;
    std::size_t evaluated = 0;
    const std::size_t tol = default_boundary_tolerance(first.height, first.width);
    // the first frame is the given annotation and is not scored
    for (std::size_t t = 1; t < frames.size(); ++t) {
      const auto gt = find_ground_truth(opt.gt, frames[t].stem().string());
      if (!gt) {
        continue;
      }
      ++evaluated;
      for (std::uint8_t id : ids) {
        sums[id].first += jaccard(predictions[t], *gt, id);
        sums[id].second += boundary_f(predictions[t], *gt, id, tol);
      }
    }
    double j_mean = 0.0, f_mean = 0.0;
    for (std::uint8_t id : ids) {
      const double j = evaluated ? sums[id].first / static_cast<double>(evaluated) : 0.0;
      const double f = evaluated ? sums[id].second / static_cast<double>(evaluated) : 0.0;
      const std::string key = "object." + std::to_string(id);
      report[key + ".J"] = j;
      report[key + ".F"] = f;
      report[key + ".J&F"] = (j + f) / 2.0;
      j_mean += j;
      f_mean += f;
    }
    const double n = ids.empty() ? 1.0 : static_cast<double>(ids.size());
    report["frames_evaluated"] = evaluated;
    report["boundary_tolerance_px"] = tol;
    report["J"] = j_mean / n;
    report["F"] = f_mean / n;
    report["J&F"] = (j_mean / n + f_mean / n) / 2.0;
  }
  if (!opt.report.empty()) {
    std::ofstream rf(opt.report, std::ios::binary | std::ios::trunc);
    rf << report.dump(2) << "\n";
  } else if (!opt.gt.empty()) {
    out << report.dump(2) << "\n";
  }
  out << "processed " << frames.size() << " frames (" << fps << " fps), masks in " << opt.out.string() << "\n";
  return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Streaming video object segmentation"};
  Options opt;
  std::uint64_t seed = 0;
  std::string frames, first_mask, out_dir, weights, gt, report, dump;
  app.add_option("--frames", frames, "Directory of PNG frames")->required();
  app.add_option("--first-mask", first_mask, "Label mask for the first frame")->required();
  app.add_option("--out", out_dir, "Output directory")->required();
  auto *w = app.add_option("--weights", weights, "Weight file");
  auto *r = app.add_option("--random-init", seed, "Use random weights with this seed");
  w->excludes(r);
  app.add_option("--mem-interval", opt.inference.mem_interval, "Memory frame interval r")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--t-max", opt.inference.t_max, "Working-memory capacity")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--top-k", opt.inference.top_k, "Top-k affinity filter")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--max-short-edge", opt.inference.max_short_edge, "Shorter-edge limit for resizing")
      ->capture_default_str()
      ->check(CLI::Range(16, 1 << 16));
  app.add_option("--gt", gt, "Ground-truth mask directory");
  app.add_option("--report", report, "Write the evaluation report here");
  app.add_option("--dump-attention", dump, "Write per-frame attention maps here");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (w->count() == 0 && r->count() == 0) {
    err << "error: one of --weights or --random-init is required\n";
    return kExitUsage;
  }
  opt.frames = frames;
  opt.first_mask = first_mask;
  opt.out = out_dir;
  opt.weights = weights;
  opt.gt = gt;
  opt.report = report;
  opt.dump_attention = dump;
  if (r->count() > 0) {
    opt.seed = seed;
  }

  try {
    return propagate(opt, out, err);
  } catch (const InputError &e) {
    err << "error: " << e.what() << "\n";
    return kExitMissingInput;
  } catch (const FormatError &e) {
    err << "error: " << e.what() << "\n";
    return kExitMissingInput;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

} // namespace cutie::tools
