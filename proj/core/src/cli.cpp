// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vertenet/checks.hpp"
#include "vertenet/cropdetect.hpp"
#include "vertenet/landmark_json.hpp"
#include "vertenet/model.hpp"
#include "vertenet/render.hpp"
#include "vertenet/stats.hpp"

namespace vertenet {

namespace {

using Json = nlohmann::ordered_json;

constexpr double kGradTolerance = 1e-4;

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string format_factor(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::vector<double> parse_factors(const std::string& text) {
  std::vector<double> out;
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    double lo = 0, hi = 0, step = 0;
    if (std::sscanf(text.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 ||
        step <= 0.0 || hi < lo) {
      throw std::invalid_argument("bad factor range '" + text +
                                  "' (expected lo:hi:step)");
    }
    for (int i = 0;; ++i) {
      const double v = lo + i * step;
      if (v > hi + step * 1e-9) break;
      out.push_back(std::round(v * 1e9) / 1e9);
    }
  } else {
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      if (!tok.empty()) out.push_back(std::stod(tok));
    }
  }
  if (out.empty()) {
    throw std::invalid_argument("no factors parsed from '" + text + "'");
  }
  return out;
}

Json report_to_json(const CropReport& report) {
  Json j;
  j["cropped"] = report.cropped;
  j["percent"] = report.percent;
  j["probe_distance"] = report.probe_distance;
  Json violations = Json::array();
  for (const Violation& v : report.violations) {
    Json vj;
    vj["sample"] = Json::array({v.sample.x, v.sample.y});
    vj["reason"] = violation_reason_name(v.reason);
    vj["level"] = v.level;
    violations.push_back(std::move(vj));
  }
  j["violations"] = std::move(violations);
  Json samples = Json::array();
  for (const Point& p : report.spline_samples) {
    samples.push_back(Json::array({p.x, p.y}));
  }
  j["spline_samples"] = std::move(samples);
  return j;
}

CropReport report_from_json(const Json& j) {
  CropReport report;
  report.cropped = j.at("cropped").get<bool>();
  report.percent = j.at("percent").get<double>();
  report.probe_distance = j.value("probe_distance", 0.0);
  for (const Json& vj : j.at("violations")) {
    Violation v;
    v.sample = {vj.at("sample")[0].get<double>(),
                vj.at("sample")[1].get<double>()};
    const std::string reason = vj.at("reason").get<std::string>();
    v.reason = reason == "beyond-width" ? ViolationReason::BeyondWidth
                                        : ViolationReason::InBlackRegion;
    v.level = vj.at("level").get<std::string>();
    report.violations.push_back(std::move(v));
  }
  for (const Json& pj : j.at("spline_samples")) {
    report.spline_samples.push_back({pj[0].get<double>(), pj[1].get<double>()});
  }
  return report;
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot open '" + path.string() +
                             "' for writing");
  }
  os << text;
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Tensor image_to_tensor(const GrayImage& img) {
  std::vector<double> data(img.pixels.begin(), img.pixels.end());
  return Tensor::from_vector({1, 1, img.height, img.width}, std::move(data));
}

std::array<int, 4> parse_widths(const std::string& text) {
  std::array<int, 4> widths{};
  std::istringstream is(text);
  std::string tok;
  int i = 0;
  while (std::getline(is, tok, ',')) {
    if (i >= 4) throw std::invalid_argument("expected 4 widths, got more");
    widths[i++] = std::stoi(tok);
  }
  if (i != 4) throw std::invalid_argument("expected 4 comma-separated widths");
  return widths;
}

// ---- subcommand bodies ----

struct InferArgs {
  std::string model, image, out, image_id, orientation = "anterior-right";
  double threshold = 0.1;
};

int run_infer(const InferArgs& a) {
  auto [params, cfg] = load_model(a.model);
  GrayImage img = read_gray_image(a.image);
  Tensor input = image_to_tensor(img);
  HeadOutputs out = vertenet_forward(input, params, cfg, false);
  LandmarkSet landmarks =
      decode_landmarks(out, cfg, img.height, img.width, 0, a.threshold);

  LandmarkDocument doc;
  doc.image_id = a.image_id.empty()
                     ? std::filesystem::path(a.image).stem().string()
                     : a.image_id;
  doc.width = img.width;
  doc.height = img.height;
  doc.orientation = orientation_from_name(a.orientation);
  doc.landmarks = std::move(landmarks);
  write_landmark_document(a.out, doc);
  if (!doc.landmarks.complete) {
    std::cerr << "warning: only " << doc.landmarks.vertebrae.size()
              << " peaks found, result flagged incomplete\n";
  }
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::uint64_t seed = 0;
  int count = 8, height = 256, width = 128, steps = 500;
  double lr = 2e-3, momentum = 0.9;
  std::string fusion = "full", widths = "8,16,24,32";
  std::string out, curve;
};

int run_train_toy(const TrainArgs& a) {
  ModelConfig cfg;
  cfg.widths = parse_widths(a.widths);
  cfg.fusion = fusion_mode_from_name(a.fusion);
  cfg.validate();

  auto data = synth_generate(a.seed, a.count, a.height, a.width);
  Rng rng(a.seed + 1);
  VerteNetParams params = VerteNetParams::init(cfg, rng);
  TrainOptions opts;
  opts.steps = a.steps;
  opts.lr = a.lr;
  opts.momentum = a.momentum;
  TrainResult result = toy_train(params, cfg, data, opts);

  std::cout << "loss " << result.loss_curve.front() << " -> "
            << result.loss_curve.back() << " over " << a.steps << " steps\n";
  if (!a.out.empty()) {
    save_model(a.out, params, cfg);
    std::cout << "wrote " << a.out << "\n";
  }
  if (!a.curve.empty()) {
    std::ostringstream os;
    os << "step,loss\n";
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
      os << i << "," << result.loss_curve[i] << "\n";
    }
    write_text_file(a.curve, os.str());
  }
  return 0;
}

int run_gradcheck(std::uint64_t seed, double eps) {
  const auto checks = run_block_gradchecks(seed, eps);
  bool all_ok = true;
  std::printf("%-20s %-14s %s\n", "block", "max_rel_err", "status");
  for (const BlockCheck& c : checks) {
    const bool ok = c.max_rel_err < kGradTolerance;
    all_ok = all_ok && ok;
    std::printf("%-20s %-14.3e %s\n", c.name.c_str(), c.max_rel_err,
                ok ? "ok" : "FAIL");
  }
  return all_ok ? 0 : 1;
}

struct SynthArgs {
  std::uint64_t seed = 0;
  int count = 8, height = 256, width = 128;
  int band_left = 0, band_right = 0;
  std::string out_dir, format = "pgm";
};

int run_synth(const SynthArgs& a) {
  if (a.format != "pgm" && a.format != "png") {
    throw std::invalid_argument("synth: format must be pgm or png");
  }
  SynthOptions opts;
  opts.band_left = a.band_left;
  opts.band_right = a.band_right;
  auto samples = synth_generate(a.seed, a.count, a.height, a.width, opts);

  const std::filesystem::path dir(a.out_dir);
  std::filesystem::create_directories(dir);
  Json manifest = Json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "synth_%04zu", i);
    const std::string image_name = std::string(stem) + "." + a.format;
    const std::string lm_name = std::string(stem) + ".landmarks.json";
    write_gray_image(dir / image_name, samples[i].image);

    LandmarkDocument doc;
    doc.image_id = stem;
    doc.width = samples[i].image.width;
    doc.height = samples[i].image.height;
    doc.landmarks = samples[i].landmarks;
    write_landmark_document(dir / lm_name, doc);

    Json entry;
    entry["id"] = stem;
    entry["image"] = image_name;
    entry["landmarks"] = lm_name;
    manifest.push_back(std::move(entry));
  }
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << samples.size() << " samples to " << a.out_dir
            << "\n";
  return 0;
}

int run_guides(const std::string& landmarks_path, const std::string& out,
               const std::string& orientation) {
  LandmarkDocument doc = read_landmark_document(landmarks_path);
  const Orientation o = orientation.empty()
                            ? doc.orientation
                            : orientation_from_name(orientation);
  doc.orientation = o;
  doc.guides = generate_ivgs(doc.landmarks, o);
  write_landmark_document(out, doc);
  std::cout << "wrote " << out << "\n";
  return 0;
}

struct CropArgs {
  std::string image, landmarks, out, orientation;
  double factor = 1.2;
  int samples = 500;
  double black_threshold = 0.0;
  double min_area = -1.0;
  int kernel = 5;
};

CropConfig crop_config_from(const CropArgs& a) {
  CropConfig cfg;
  cfg.factor = a.factor;
  cfg.sample_count = a.samples;
  cfg.black_threshold = a.black_threshold;
  cfg.min_component_area = a.min_area;
  cfg.morphology_kernel = a.kernel;
  cfg.validate();
  return cfg;
}

int run_cropdetect(const CropArgs& a) {
  LandmarkDocument doc = read_landmark_document(a.landmarks);
  const Orientation o = a.orientation.empty()
                            ? doc.orientation
                            : orientation_from_name(a.orientation);
  GrayImage img = read_gray_image(a.image);
  const CropConfig cfg = crop_config_from(a);
  BlackRegionMask mask = detect_black_regions(img, cfg);
  if (!mask.empty()) mask = smooth_mask(mask, cfg);
  const CropReport report =
      detect_crop(img.width, img.height, mask, doc.landmarks, cfg, o);
  write_text_file(a.out, report_to_json(report).dump(2) + "\n");
  std::cout << (report.cropped ? "cropped" : "not cropped") << " ("
            << format_fixed(report.percent, 2) << "% of spline samples)\n";
  return 0;
}

struct SweepArgs {
  std::string manifest, factors = "0.8:1.5:0.1", out, orientation =
                                                           "anterior-right";
  int samples = 500;
  double black_threshold = 0.0;
  double min_area = -1.0;
  int kernel = 5;
};

int run_sweep(const SweepArgs& a) {
  std::ifstream is(a.manifest);
  if (!is) throw std::runtime_error("cannot open manifest '" + a.manifest + "'");
  Json manifest = Json::parse(is);
  if (!manifest.is_array()) {
    throw std::runtime_error("manifest must be a JSON array of entries");
  }
  const auto base = std::filesystem::path(a.manifest).parent_path();

  CropConfig cfg;
  cfg.sample_count = a.samples;
  cfg.black_threshold = a.black_threshold;
  cfg.min_component_area = a.min_area;
  cfg.morphology_kernel = a.kernel;
  cfg.validate();

  std::vector<SweepEntry> entries;
  for (const Json& e : manifest) {
    SweepEntry entry;
    entry.id = e.value("id", std::string("entry") +
                                 std::to_string(entries.size()));
    const GrayImage img =
        read_gray_image(base / e.at("image").get<std::string>());
    entry.image_w = img.width;
    entry.image_h = img.height;
    BlackRegionMask mask = detect_black_regions(img, cfg);
    if (!mask.empty()) mask = smooth_mask(mask, cfg);
    entry.mask = std::move(mask);
    entry.landmarks =
        read_landmark_document(base / e.at("landmarks").get<std::string>())
            .landmarks;
    if (e.contains("cropped") && !e.at("cropped").is_null()) {
      entry.cropped_label = e.at("cropped").get<bool>();
    }
    entries.push_back(std::move(entry));
  }

  const SweepResult result =
      factor_sweep(entries, parse_factors(a.factors), cfg,
                   orientation_from_name(a.orientation));
  for (const std::string& id : result.skipped) {
    std::cerr << "warning: entry '" << id << "' has no crop label, skipped\n";
  }

  std::ostringstream os;
  os << "factor,FP,FN,TP,TN,accuracy\n";
  for (const SweepRow& row : result.rows) {
    os << format_factor(row.factor) << "," << row.counts.fp << ","
       << row.counts.fn << "," << row.counts.tp << "," << row.counts.tn << ","
       << format_fixed(row.accuracy_percent, 2) << "\n";
  }
  write_text_file(a.out, os.str());
  std::cout << "wrote " << a.out << " (" << result.rows.size() << " rows)\n";
  return 0;
}

std::vector<LandmarkDocument> load_documents(const std::string& arg) {
  std::vector<LandmarkDocument> docs;
  const std::filesystem::path p(arg);
  if (std::filesystem::is_directory(p)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(p)) {
      if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) docs.push_back(read_landmark_document(f));
  } else {
    std::istringstream is(arg);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      if (!tok.empty()) docs.push_back(read_landmark_document(tok));
    }
  }
  if (docs.empty()) throw std::runtime_error("no documents found in '" + arg + "'");
  return docs;
}

int run_eval(const std::string& pred_arg, const std::string& gt_arg,
             const std::string& out) {
  auto preds = load_documents(pred_arg);
  auto gts = load_documents(gt_arg);
  std::map<std::string, const LandmarkDocument*> gt_by_id;
  for (const auto& d : gts) gt_by_id[d.image_id] = &d;

  std::vector<LandmarkSet> pred_sets, gt_sets;
  for (const auto& d : preds) {
    auto it = gt_by_id.find(d.image_id);
    if (it == gt_by_id.end()) {
      throw std::runtime_error("no ground truth for image '" + d.image_id + "'");
    }
    pred_sets.push_back(d.landmarks);
    gt_sets.push_back(it->second->landmarks);
  }
  ModelConfig cfg;
  const ErrorStats stats = normalized_errors(pred_sets, gt_sets, cfg);
  std::cout << "normalized mean error:   " << format_fixed(stats.mean_px, 4)
            << " px\n"
            << "normalized median error: " << format_fixed(stats.median_px, 4)
            << " px\n";
  if (!out.empty()) {
    Json j;
    j["images"] = preds.size();
    j["normalized_mean_error_px"] = stats.mean_px;
    j["normalized_median_error_px"] = stats.median_px;
    write_text_file(out, j.dump(2) + "\n");
  }
  return 0;
}

struct AgreeArgs {
  std::string a, b, reader_a, reader_b, out;
  std::uint64_t seed = 42;
  int resamples = 2000;
};

ScoreSheet pick_sheet(const std::map<std::string, ScoreSheet>& sheets,
                      const std::string& reader, const std::string& which) {
  if (!reader.empty()) {
    auto it = sheets.find(reader);
    if (it == sheets.end()) {
      throw std::runtime_error("reader '" + reader + "' not present in the " +
                               which + " sheet");
    }
    return it->second;
  }
  if (sheets.size() != 1) {
    throw std::invalid_argument(
        "the " + which +
        " sheet holds several readers; pick one with --reader-" + which);
  }
  return sheets.begin()->second;
}

int run_agree(const AgreeArgs& args) {
  const auto sheets_a = load_score_sheets_csv(args.a);
  const auto sheets_b = load_score_sheets_csv(args.b);
  const ScoreSheet a = pick_sheet(sheets_a, args.reader_a, "a");
  const ScoreSheet b = pick_sheet(sheets_b, args.reader_b, "b");
  const AgreementReport report =
      agreement_stats(a, b, args.seed, args.resamples);

  Json j;
  for (int r = 0; r < 4; ++r) {
    const RegionAgreement& ra = report.regions[r];
    Json rj;
    if (ra.correlation) {
      rj["correlation"] = {{"value", ra.correlation->value},
                           {"ci95", Json::array({ra.correlation->ci_lo,
                                                 ra.correlation->ci_hi})}};
    } else {
      rj["correlation"] = nullptr;
      rj["correlation_note"] = ra.correlation_note;
    }
    rj["weighted_kappa"] = {
        {"value", ra.kappa.value},
        {"ci95", Json::array({ra.kappa.ci_lo, ra.kappa.ci_hi})}};
    j[kScoreRegions[r]] = std::move(rj);

    std::cout << kScoreRegions[r] << ": r=";
    if (ra.correlation) {
      std::cout << format_fixed(ra.correlation->value, 4);
    } else {
      std::cout << "n/a";
    }
    std::cout << " kappa=" << format_fixed(ra.kappa.value, 4) << " ("
              << format_fixed(ra.kappa.ci_lo, 4) << " - "
              << format_fixed(ra.kappa.ci_hi, 4) << ")\n";
  }
  if (!args.out.empty()) write_text_file(args.out, j.dump(2) + "\n");
  return 0;
}

struct RenderArgs {
  std::string image, landmarks, report, out, orientation;
  bool no_guides = false;
};

int run_render(const RenderArgs& a) {
  if (std::filesystem::path(a.out).extension() != ".png") {
    throw std::invalid_argument("render: output must be a .png path");
  }
  GrayImage img = read_gray_image(a.image);
  OverlayInputs inputs;
  LandmarkDocument doc;
  GuideSet guides;
  CropReport report;
  if (!a.landmarks.empty()) {
    doc = read_landmark_document(a.landmarks);
    inputs.landmarks = &doc.landmarks;
    if (!a.no_guides) {
      const Orientation o = a.orientation.empty()
                                ? doc.orientation
                                : orientation_from_name(a.orientation);
      guides = doc.guides ? *doc.guides : generate_ivgs(doc.landmarks, o);
      inputs.guides = &guides;
    }
  }
  if (!a.report.empty()) {
    std::ifstream is(a.report);
    if (!is) throw std::runtime_error("cannot open report '" + a.report + "'");
    report = report_from_json(Json::parse(is));
    inputs.report = &report;
  }
  write_rgb_png(a.out, render_overlay(img, inputs));
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
  CLI::App app{"vertebral landmark localization and aorta crop detection"};
  app.require_subcommand(1);

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "localize landmarks in an image");
  infer_cmd->add_option("--model", infer.model, "model file")->required();
  infer_cmd->add_option("--image", infer.image, "input image (pgm/png)")
      ->required();
  infer_cmd->add_option("--out", infer.out, "output landmark json")->required();
  infer_cmd->add_option("--image-id", infer.image_id,
                        "id recorded in the document (default: image stem)");
  infer_cmd->add_option("--orientation", infer.orientation,
                        "anterior-right or anterior-left");
  infer_cmd->add_option("--threshold", infer.threshold, "peak threshold");

  TrainArgs train;
  auto* train_cmd =
      app.add_subcommand("train-toy", "overfit a small model on synthetic data");
  train_cmd->add_option("--seed", train.seed, "rng seed");
  train_cmd->add_option("--count", train.count, "synthetic image count");
  train_cmd->add_option("--height", train.height, "image height");
  train_cmd->add_option("--width", train.width, "image width");
  train_cmd->add_option("--steps", train.steps, "sgd steps");
  train_cmd->add_option("--lr", train.lr, "learning rate");
  train_cmd->add_option("--momentum", train.momentum, "sgd momentum");
  train_cmd->add_option("--fusion", train.fusion,
                        "simple, drsa-only, drca-only or full");
  train_cmd->add_option("--widths", train.widths, "encoder widths w1,w2,w3,w4");
  train_cmd->add_option("--out", train.out, "write the trained model here");
  train_cmd->add_option("--curve", train.curve, "write the loss curve csv");

  std::uint64_t grad_seed = 9;
  double grad_eps = 1e-5;
  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "finite-difference checks over all learnable blocks");
  grad_cmd->add_option("--seed", grad_seed, "rng seed");
  grad_cmd->add_option("--eps", grad_eps, "finite-difference step");

  SynthArgs synth;
  auto* synth_cmd =
      app.add_subcommand("synth", "generate a synthetic spine dataset");
  synth_cmd->add_option("--seed", synth.seed, "rng seed");
  synth_cmd->add_option("--count", synth.count, "image count");
  synth_cmd->add_option("--height", synth.height, "image height");
  synth_cmd->add_option("--width", synth.width, "image width");
  synth_cmd->add_option("--band-left", synth.band_left,
                        "black side-band width on the left");
  synth_cmd->add_option("--band-right", synth.band_right,
                        "black side-band width on the right");
  synth_cmd->add_option("--out-dir", synth.out_dir, "output directory")
      ->required();
  synth_cmd->add_option("--format", synth.format, "pgm or png");

  std::string guides_landmarks, guides_out, guides_orientation;
  auto* guides_cmd =
      app.add_subcommand("guides", "attach inter/intra vertebral guides");
  guides_cmd->add_option("--landmarks", guides_landmarks, "landmark json")
      ->required();
  guides_cmd->add_option("--out", guides_out, "output json")->required();
  guides_cmd->add_option("--orientation", guides_orientation,
                         "override the document orientation");

  CropArgs crop;
  auto* crop_cmd =
      app.add_subcommand("cropdetect", "detect abdominal aorta cropping");
  crop_cmd->add_option("--image", crop.image, "input image")->required();
  crop_cmd->add_option("--landmarks", crop.landmarks, "landmark json")
      ->required();
  crop_cmd->add_option("--out", crop.out, "report json")->required();
  crop_cmd->add_option("--factor", crop.factor, "probe distance factor");
  crop_cmd->add_option("--samples", crop.samples, "spline sample count");
  crop_cmd->add_option("--black-threshold", crop.black_threshold,
                       "intensity at or below which a pixel is black");
  crop_cmd->add_option("--min-area", crop.min_area,
                       "minimum black component area px^2 (negative: 0.5% of "
                       "the image)");
  crop_cmd->add_option("--kernel", crop.kernel, "morphology kernel size");
  crop_cmd->add_option("--orientation", crop.orientation,
                       "override the document orientation");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "factor sweep with a confusion table per factor");
  sweep_cmd->add_option("--manifest", sweep.manifest, "dataset manifest json")
      ->required();
  sweep_cmd->add_option("--factors", sweep.factors,
                        "lo:hi:step range or comma list");
  sweep_cmd->add_option("--out", sweep.out, "output csv")->required();
  sweep_cmd->add_option("--orientation", sweep.orientation,
                        "anterior-right or anterior-left");
  sweep_cmd->add_option("--samples", sweep.samples, "spline sample count");
  sweep_cmd->add_option("--black-threshold", sweep.black_threshold,
                        "black pixel threshold");
  sweep_cmd->add_option("--min-area", sweep.min_area,
                        "minimum black component area px^2");
  sweep_cmd->add_option("--kernel", sweep.kernel, "morphology kernel size");

  std::string eval_pred, eval_gt, eval_out;
  auto* eval_cmd = app.add_subcommand(
      "eval", "normalized mean/median corner error between landmark sets");
  eval_cmd->add_option("--pred", eval_pred, "predictions (dir or csv of files)")
      ->required();
  eval_cmd->add_option("--gt", eval_gt, "ground truth (dir or csv of files)")
      ->required();
  eval_cmd->add_option("--out", eval_out, "optional output json");

  AgreeArgs agree;
  auto* agree_cmd = app.add_subcommand(
      "agree", "inter-reader correlation and weighted kappa per region");
  agree_cmd->add_option("--a", agree.a, "first score sheet csv")->required();
  agree_cmd->add_option("--b", agree.b, "second score sheet csv")->required();
  agree_cmd->add_option("--reader-a", agree.reader_a,
                        "reader name in the first sheet");
  agree_cmd->add_option("--reader-b", agree.reader_b,
                        "reader name in the second sheet");
  agree_cmd->add_option("--seed", agree.seed, "bootstrap seed");
  agree_cmd->add_option("--resamples", agree.resamples, "bootstrap resamples");
  agree_cmd->add_option("--out", agree.out, "optional output json");

  RenderArgs render;
  auto* render_cmd =
      app.add_subcommand("render", "burn overlays into a png copy");
  render_cmd->add_option("--image", render.image, "input image")->required();
  render_cmd->add_option("--landmarks", render.landmarks, "landmark json");
  render_cmd->add_option("--report", render.report, "crop report json");
  render_cmd->add_option("--out", render.out, "output png")->required();
  render_cmd->add_option("--orientation", render.orientation,
                         "override the document orientation");
  render_cmd->add_flag("--no-guides", render.no_guides,
                       "draw landmarks without guides");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*infer_cmd) return run_infer(infer);
    if (*train_cmd) return run_train_toy(train);
    if (*grad_cmd) return run_gradcheck(grad_seed, grad_eps);
    if (*synth_cmd) return run_synth(synth);
    if (*guides_cmd)
      return run_guides(guides_landmarks, guides_out, guides_orientation);
    if (*crop_cmd) return run_cropdetect(crop);
    if (*sweep_cmd) return run_sweep(sweep);
    if (*eval_cmd) return run_eval(eval_pred, eval_gt, eval_out);
    if (*agree_cmd) return run_agree(agree);
    if (*render_cmd) return run_render(render);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace vertenet
