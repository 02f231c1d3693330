#pragma once

// Command suite: prepare, gen-masks, make-synthetic, train, eval, inpaint.
// Every failure ends with one line on stderr:
//   error code=<n> kind=<usage|data|runtime> reason="<json-escaped text>"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "collagan/collagan.hpp"

namespace collagan::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed: " + path.string());
}

inline std::string rel(const fs::path& p, const fs::path& root) { return p.lexically_relative(root).generic_string(); }

inline void report_error(std::ostream& err, int code, const std::string& msg) {
  static const char* kinds[] = {"ok", "usage", "data", "runtime"};
  // Multi-line messages (per-record listings) go out first, indented.
  std::istringstream lines(msg);
  std::string first, line;
  std::getline(lines, first);
  while (std::getline(lines, line)) err << "  " << line << '\n';
  err << "error code=" << code << " kind=" << kinds[code] << " reason=" << nlohmann::json(first).dump() << '\n';
}

/// Loads the generator-bearing trainer stored in a checkpoint.
inline Trainer load_trainer(const fs::path& path) { return Trainer::from_checkpoint(load_checkpoint(path)); }

inline std::vector<int> parse_sites(const std::string& s) {
  if (s == "all") return {0, 1, 2, 3, 4, 5};
  std::vector<int> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    out.push_back(site_index(item));
  }
  if (out.empty()) throw ConfigError("--sites must name at least one site");
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  fs::path root, out;
  int resolution = 128;
  int seg_classes = kDefaultSegClasses;
};

/// Validates every split and writes `manifest.json` (stable key and record
/// order, paths relative to the root).
inline void cmd_prepare(const PrepareArgs& a, std::ostream& out) {
  std::vector<std::string> problems;
  nlohmann::ordered_json j;
  j["resolution"] = a.resolution;
  j["seg_classes"] = a.seg_classes;
  std::vector<std::pair<std::string, std::size_t>> counts;
  for (const char* split : {"train", "val", "test"}) {
    DatasetManifest m;
    try {
      m = load_manifest(a.root, split, a.resolution);
    } catch (const DataError& e) {
      problems.push_back(e.what());
      continue;
    }
    auto& recs = j["splits"][split] = nlohmann::ordered_json::array();
    for (const auto& r : m.records) {
      try {
        const RawFace raw = load_record(r);
        double lo = 0, hi = 0;
        cv::minMaxLoc(raw.label_map, &lo, &hi);
        if (hi >= a.seg_classes) {
          problems.push_back(r.label_path.string() + ": label " + std::to_string(static_cast<int>(hi)) +
                             " outside [0, " + std::to_string(a.seg_classes) + ")");
        }
      } catch (const std::exception& e) {
        problems.push_back(r.label_path.string() + ": " + e.what());
        continue;
      }
      nlohmann::ordered_json lm = nlohmann::ordered_json::array();
      for (const auto& p : r.landmarks) lm.push_back({p.x, p.y});
      recs.push_back({{"image", detail::rel(r.image_path, a.root)},
                      {"label", detail::rel(r.label_path, a.root)},
                      {"landmarks", lm}});
    }
    counts.emplace_back(split, m.records.size());
  }
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " dataset problem(s) under " + a.root.string();
    for (const auto& p : problems) msg += "\n" + p;
    throw DataError(msg);
  }
  fs::create_directories(a.out);
  detail::write_text(a.out / "manifest.json", j.dump(2) + "\n");
  for (const auto& [split, n] : counts) out << split << ' ' << n << '\n';
}

// ---------------------------------------------------------------------------
// gen-masks

struct GenMasksArgs {
  std::string kind = "block";
  int n = 10;
  int size = 128;
  int block = 0;  // 0: size / 2
  double fraction = -1;  // < 0: kind default
  std::uint64_t seed = 0;
  fs::path out;
};

inline void cmd_gen_masks(const GenMasksArgs& a, std::ostream& out) {
  const MaskKind kind = parse_mask_kind(a.kind);
  if (a.n < 1) throw ConfigError("--n must be >= 1");
  fs::create_directories(a.out);
  nlohmann::ordered_json j;
  j["seed"] = a.seed;
  j["kind"] = to_string(kind);
  j["size"] = a.size;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  const int block = a.block > 0 ? a.block : a.size / 2;
  const double fraction = a.fraction >= 0 ? a.fraction : kind == MaskKind::pattern ? 0.25 : 0.80;
  if (kind == MaskKind::block) params["block"] = block;
  if (kind == MaskKind::pattern || kind == MaskKind::noise) params["fraction"] = fraction;
  j["parameters"] = params;
  const auto sites = eval_masks(a.size);
  if (kind == MaskKind::eval_site && a.n > 6) throw ConfigError("eval_site masks: --n must be <= 6");
  auto& list = j["masks"] = nlohmann::ordered_json::array();
  double total = 0;
  for (int i = 0; i < a.n; ++i) {
    Rng rng = Rng::derive(a.seed, {static_cast<std::uint64_t>(i)});
    BinaryMask m;
    switch (kind) {
      case MaskKind::block: m = gen_block_mask(rng, a.size, block); break;
      case MaskKind::pattern: m = gen_pattern_mask(rng, a.size, fraction); break;
      case MaskKind::noise: m = gen_noise_mask(rng, a.size, fraction); break;
      case MaskKind::eval_site: m = sites[i]; break;
    }
    char name[32];
    std::snprintf(name, sizeof name, "mask_%05d.png", i);
    save_mask_png(a.out / name, m);
    list.push_back({{"file", name}, {"occluded_fraction", m.occluded_fraction()}});
    total += m.occluded_fraction();
  }
  j["mean_occluded_fraction"] = total / a.n;
  detail::write_text(a.out / "manifest.json", j.dump(2) + "\n");
  out << "wrote " << a.n << ' ' << to_string(kind) << " masks to " << a.out.string() << '\n';
}

// ---------------------------------------------------------------------------
// make-synthetic

struct SyntheticArgs {
  fs::path out;
  std::uint64_t seed = 0;
  int n_train = 16, n_val = 4, n_test = 4;
  int size = 80;
};

inline void cmd_make_synthetic(const SyntheticArgs& a, std::ostream& out) {
  SyntheticConfig cfg;
  cfg.width = cfg.height = a.size;
  write_synthetic_dataset(a.out, a.seed, a.n_train, a.n_val, a.n_test, cfg);
  out << "train " << a.n_train << "\nval " << a.n_val << "\ntest " << a.n_test << '\n';
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  fs::path config, data, out, resume;
  std::optional<std::uint64_t> seed;
};

inline void cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = load_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const SampleSource train = SampleSource::from_manifest(load_manifest(a.data, "train", cfg.side()));
  std::optional<SampleSource> val;
  if (cfg.use_val) {
    try {
      val = SampleSource::from_manifest(load_manifest(a.data, "val", cfg.side()));
    } catch (const DataError& e) {
      std::cerr << "warning: no validation split (" << e.what() << ")\n";
    }
  }
  Trainer tr = a.resume.empty() ? Trainer(cfg) : detail::load_trainer(a.resume);
  if (!a.resume.empty() && to_config_text(tr.config()) != to_config_text(cfg)) {
    throw ConfigError("config differs from the one stored in " + a.resume.string());
  }
  fs::create_directories(a.out);
  detail::write_text(a.out / "config.txt", to_config_text(cfg));
  const TrainResult r = run_training(tr, train, val ? &*val : nullptr, a.out);
  out << "steps " << r.steps << "\ncheckpoint " << r.last_checkpoint.string() << '\n';
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  fs::path checkpoint, data, out;
  std::string split = "test";
  std::string sites = "all";
  std::string masks;  // empty: fixed sites; otherwise a generated mask kind
  int per_sample = 1;
  std::uint64_t seed = 0;
};

inline void cmd_eval(const EvalArgs& a, std::ostream& out) {
  Trainer tr = detail::load_trainer(a.checkpoint);
  const TrainConfig& cfg = tr.config();
  const SampleSource src = SampleSource::from_manifest(load_manifest(a.data, a.split, cfg.side()));
  const auto samples = eval_samples(src, cfg.side(), a.seed);
  if (samples.empty()) throw DataError("no sample of split '" + a.split + "' admits a crop window");
  EvalOptions opt = validation_options(cfg);
  opt.noise_seed = a.seed;
  opt.block_size = cfg.effective_block();
  if (a.masks.empty()) {
    opt.masks.sites = detail::parse_sites(a.sites);
  } else {
    opt.masks.generated = parse_mask_kind(a.masks);
    opt.masks.per_sample = a.per_sample;
    opt.masks.seed = a.seed;
  }
  MetricsReport r = evaluate(generator_predictor(tr.generator()), samples, cfg.tasks, opt);
  nlohmann::json j = report_to_json(r);
  j["checkpoint"] = a.checkpoint.string();
  j["split"] = a.split;
  j["samples"] = samples.size();
  j["tasks"] = cfg.tasks.to_string();
  fs::create_directories(a.out);
  detail::write_text(a.out / "report.json", j.dump(2) + "\n");
  detail::write_text(a.out / "sites.csv", sites_csv(r));
  if (r.has_dice) detail::write_text(a.out / "dice.csv", dice_csv(r));
  if (r.has_landmarks) detail::write_text(a.out / "landmarks.csv", landmarks_csv(r));
  out << sites_csv(r);
}

// ---------------------------------------------------------------------------
// inpaint

struct InpaintArgs {
  fs::path checkpoint, image, mask, out;
  std::string fill;  // empty: the mask kind's default
  std::optional<std::vector<std::string>> overlays;
  std::uint64_t seed = 0;
};

/// Writes `inpainted.png` (generator output with visible pixels copied from
/// the input) and, on request, `segmentation.png` / `landmarks.png`.
inline void cmd_inpaint(const InpaintArgs& a, std::ostream& out) {
  Trainer tr = detail::load_trainer(a.checkpoint);
  const TrainConfig& cfg = tr.config();
  const int side = cfg.side();

  bool want_seg = false, want_lm = false;
  if (a.overlays) {
    const auto& req = *a.overlays;
    for (const auto& o : req) {
      if (o.empty()) continue;
      if (o == "seg") want_seg = true;
      else if (o == "landmarks") want_lm = true;
      else throw ConfigError("unknown overlay '" + o + "' (expected seg or landmarks)");
    }
    if (!want_seg && !want_lm) want_seg = want_lm = true;
    std::string missing;
    if (want_seg && !cfg.tasks.contains(Task::segment)) missing += " seg (needs task s)";
    if (want_lm && !cfg.tasks.contains(Task::detect)) missing += " landmarks (needs task d)";
    if (!missing.empty()) {
      throw ConfigError("checkpoint trained on tasks '" + cfg.tasks.to_string() + "' cannot produce overlays:" + missing);
    }
  }

  cv::Mat image = io::load_rgb(a.image);
  if (image.rows != side || image.cols != side) {
    cv::Mat resized;
    cv::resize(image, resized, cv::Size(side, side), 0, 0, cv::INTER_AREA);
    image = resized;
  }
  if (!fs::exists(a.mask)) throw DataError("mask file not found: " + a.mask.string());
  BinaryMask mask = load_mask_png(a.mask);
  if (mask.side() != side) {
    cv::Mat resized;
    cv::resize(mask.grid, resized, cv::Size(side, side), 0, 0, cv::INTER_NEAREST);
    mask.grid = resized;
  }
  const MaskFill fill = a.fill.empty() ? default_fill(mask.kind) : parse_mask_fill(a.fill);
  Rng rng = Rng::derive(a.seed, {0x696e7061696e74ULL});
  Tensor<float> x = image_to_tensor(apply_mask(image, mask, fill, rng));
  x.reshape({1, 3, side, side});
  Tensor<float> m = mask_to_tensor(mask);
  m.reshape({1, 1, side, side});

  Generator<float>& g = tr.generator();
  g.set_training(false);
  const GeneratorOutput<float> pred = g.forward_split(x);
  Tensor<float> truth = image_to_tensor(image);
  truth.reshape({1, 3, side, side});
  const Tensor<float> composed = compose_inpaint(pred.image, truth, m);
  const cv::Mat result = tensor_to_image(composed.data(), side, side);

  fs::create_directories(a.out);
  io::save_rgb(a.out / "inpainted.png", result);
  out << "wrote " << (a.out / "inpainted.png").string() << '\n';
  if (want_seg) {
    Tensor<float> seg = pred.segments;
    seg.reshape({cfg.seg_classes(), side, side});
    io::save_label_png(a.out / "segmentation.png", channels_to_labelmap(seg));
    out << "wrote " << (a.out / "segmentation.png").string() << '\n';
  }
  if (want_lm) {
    cv::Mat canvas = io::to_rgb8(result);
    static const cv::Scalar colors[kNumLandmarks] = {
        {255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {255, 255, 0}, {255, 0, 255}};
    const std::size_t plane = static_cast<std::size_t>(side) * side;
    for (int k = 0; k < kNumLandmarks; ++k) {
      const cv::Point p = heatmap_argmax(pred.heatmaps.data() + k * plane, side, side);
      cv::drawMarker(canvas, p, colors[k], cv::MARKER_CROSS, std::max(5, side / 16), 1);
    }
    io::save_rgb(a.out / "landmarks.png", canvas);
    out << "wrote " << (a.out / "landmarks.png").string() << '\n';
  }
}

// ---------------------------------------------------------------------------
// entry point

/// Parses argv and runs one command; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"collagan: joint face inpainting, parsing and landmark detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "collagan 1.0");

  PrepareArgs prep;
  auto* c_prep = app.add_subcommand("prepare", "validate a dataset root and write manifest.json");
  c_prep->add_option("--root", prep.root, "dataset root (images/, labels/, landmarks.csv, splits.csv)")->required();
  c_prep->add_option("--out", prep.out, "output directory")->required();
  c_prep->add_option("--resolution", prep.resolution, "training resolution")->capture_default_str();
  c_prep->add_option("--seg-classes", prep.seg_classes, "number of label classes")->capture_default_str();

  GenMasksArgs gm;
  auto* c_gm = app.add_subcommand("gen-masks", "write occlusion masks as 1-bit PNGs plus manifest.json");
  c_gm->add_option("--kind", gm.kind, "block | pattern | noise | eval_site")->capture_default_str();
  c_gm->add_option("--n", gm.n, "number of masks")->capture_default_str();
  c_gm->add_option("--size", gm.size, "mask side in pixels")->capture_default_str();
  c_gm->add_option("--block", gm.block, "block side (default size / 2)");
  c_gm->add_option("--fraction", gm.fraction, "target occluded fraction (pattern 0.25, noise 0.80)");
  c_gm->add_option("--seed", gm.seed, "random seed")->capture_default_str();
  c_gm->add_option("--out", gm.out, "output directory")->required();

  SyntheticArgs syn;
  auto* c_syn = app.add_subcommand("make-synthetic", "write a procedural annotated face dataset");
  c_syn->add_option("--out", syn.out, "dataset root to create")->required();
  c_syn->add_option("--seed", syn.seed, "random seed")->capture_default_str();
  c_syn->add_option("--train", syn.n_train, "training images")->capture_default_str();
  c_syn->add_option("--val", syn.n_val, "validation images")->capture_default_str();
  c_syn->add_option("--test", syn.n_test, "test images")->capture_default_str();
  c_syn->add_option("--size", syn.size, "raw image side")->capture_default_str();

  TrainArgs ta;
  std::uint64_t train_seed = 0;
  auto* c_train = app.add_subcommand("train", "train a model from a key = value config file");
  c_train->add_option("--config", ta.config, "config file")->required()->check(CLI::ExistingFile);
  c_train->add_option("--data", ta.data, "dataset root")->required();
  c_train->add_option("--out", ta.out, "run directory (logs, checkpoints)")->required();
  c_train->add_option("--resume", ta.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  auto* o_train_seed = c_train->add_option("--seed", train_seed, "override the config seed");

  EvalArgs ea;
  auto* c_eval = app.add_subcommand("eval", "score a checkpoint on a split; writes report.json and CSV tables");
  c_eval->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", ea.data, "dataset root")->required();
  c_eval->add_option("--split", ea.split, "train | val | test")->capture_default_str();
  c_eval->add_option("--sites", ea.sites, "comma-separated O1..O6, or all")->capture_default_str();
  c_eval->add_option("--masks", ea.masks, "use generated masks of this kind instead of fixed sites");
  c_eval->add_option("--per-sample", ea.per_sample, "generated masks per sample")->capture_default_str();
  c_eval->add_option("--seed", ea.seed, "random seed (crops, generated masks, noise fill)")->capture_default_str();
  c_eval->add_option("--out", ea.out, "output directory")->required();

  InpaintArgs ia;
  std::vector<std::string> overlays;
  auto* c_inp = app.add_subcommand("inpaint", "fill the occluded region of one image");
  c_inp->add_option("--checkpoint", ia.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  c_inp->add_option("--image", ia.image, "input image")->required();
  c_inp->add_option("--mask", ia.mask, "binary mask PNG (0 = occluded)")->required();
  c_inp->add_option("--fill", ia.fill, "noise | zeros (default depends on mask kind)");
  auto* o_overlays = c_inp->add_option("--overlays", overlays, "also write overlays: seg, landmarks (default both)")
                         ->expected(0, 2)
                         ->delimiter(',');
  c_inp->add_option("--seed", ia.seed, "random seed for the noise fill")->capture_default_str();
  c_inp->add_option("--out", ia.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    detail::report_error(err, kUsage, e.what());
    return kUsage;
  }

  try {
    if (*c_prep) {
      cmd_prepare(prep, out);
    } else if (*c_gm) {
      cmd_gen_masks(gm, out);
    } else if (*c_syn) {
      cmd_make_synthetic(syn, out);
    } else if (*c_train) {
      if (*o_train_seed) ta.seed = train_seed;
      cmd_train(ta, out);
    } else if (*c_eval) {
      cmd_eval(ea, out);
    } else if (*c_inp) {
      if (*o_overlays) ia.overlays = overlays;
      cmd_inpaint(ia, out);
    }
  } catch (const DataError& e) {
    detail::report_error(err, kData, e.what());
    return kData;
  } catch (const std::invalid_argument& e) {  // ConfigError and argument checks
    detail::report_error(err, kUsage, e.what());
    return kUsage;
  } catch (const std::exception& e) {
    detail::report_error(err, kRuntime, e.what());
    return kRuntime;
  }
  return kOk;
}

}  // namespace collagan::cli
