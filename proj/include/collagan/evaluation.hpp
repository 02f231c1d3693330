#pragma once

// Image-quality, segmentation and localization metrics, and the evaluation
// loop that fills the three results tables.

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "collagan/data_pipeline.hpp"
#include "collagan/errors.hpp"
#include "collagan/losses.hpp"
#include "collagan/masks.hpp"
#include "collagan/model.hpp"
#include "collagan/tasks.hpp"

namespace collagan {

inline constexpr double kPeak = 255.0;

/// [-1, 1] -> [0, 255] without quantization.
inline double to_8bit_scale(double v) { return (v + 1.0) * 127.5; }

/// PSNR in dB on values already on the 8-bit scale; +inf for identical inputs.
inline double psnr(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("psnr: size mismatch");
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(kPeak * kPeak / mse);
}

/// Planar multi-channel image on the 8-bit scale.
struct Planes {
  int channels = 0, height = 0, width = 0;
  std::vector<double> values;  // CHW

  const double* plane(int c) const { return values.data() + static_cast<std::size_t>(c) * height * width; }
};

/// Converts a [-1, 1] float image (HWC, RGB) to 8-bit-scale planes.
inline Planes to_planes(const cv::Mat& image) {
  CV_Assert(image.type() == CV_32FC3);
  Planes p{3, image.rows, image.cols, std::vector<double>(static_cast<std::size_t>(3) * image.total())};
  for (int y = 0; y < image.rows; ++y) {
    const auto* row = image.ptr<cv::Vec3f>(y);
    for (int x = 0; x < image.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        p.values[(static_cast<std::size_t>(c) * image.rows + y) * image.cols + x] = to_8bit_scale(row[x][c]);
      }
    }
  }
  return p;
}

/// Converts a 3 x H x W slice of a [-1, 1] tensor to 8-bit-scale planes.
inline Planes to_planes(const float* chw, int channels, int h, int w) {
  Planes p{channels, h, w, std::vector<double>(static_cast<std::size_t>(channels) * h * w)};
  for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] = to_8bit_scale(chw[i]);
  return p;
}

inline double psnr(const Planes& a, const Planes& b) { return psnr(a.values, b.values); }

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double dynamic_range = 255.0;
};

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size);
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) sum += k[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

// Separable valid-mode filtering: out is (h - n + 1) x (w - n + 1).
inline std::vector<double> filter_valid(const double* img, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size()), oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * img[y * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

}  // namespace detail

/// Mean SSIM over valid window positions of one channel.
inline double ssim_channel(const double* a, const double* b, int h, int w, const SsimParams& p = {}) {
  if (h < p.window || w < p.window) throw std::invalid_argument("ssim: image smaller than the window");
  const auto k = detail::gaussian_kernel(p.window, p.sigma);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = detail::filter_valid(a, h, w, k), mu_b = detail::filter_valid(b, h, w, k);
  const auto s_aa = detail::filter_valid(aa.data(), h, w, k), s_bb = detail::filter_valid(bb.data(), h, w, k),
             s_ab = detail::filter_valid(ab.data(), h, w, k);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double sum = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = s_aa[i] - ma * ma, vb = s_bb[i] - mb * mb, cov = s_ab[i] - ma * mb;
    sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return sum / static_cast<double>(mu_a.size());
}

/// SSIM averaged over channels; exactly 1 for identical inputs.
inline double ssim(const Planes& a, const Planes& b, const SsimParams& p = {}) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("ssim: shape mismatch");
  }
  if (a.values == b.values) return 1.0;
  double s = 0;
  for (int c = 0; c < a.channels; ++c) s += ssim_channel(a.plane(c), b.plane(c), a.height, a.width, p);
  return s / a.channels;
}

/// 2|P & G| / (|P| + |G|) for one label; 1 when the label is absent from both.
inline double dice(const cv::Mat& pred, const cv::Mat& gt, int label, int classes = kDefaultSegClasses) {
  if (pred.size() != gt.size() || pred.type() != CV_8UC1 || gt.type() != CV_8UC1) {
    throw std::invalid_argument("dice: label maps differ in size or type");
  }
  if (label < 0 || label >= classes) throw std::invalid_argument("dice: unknown label " + std::to_string(label));
  std::size_t p = 0, g = 0, both = 0;
  for (int y = 0; y < pred.rows; ++y) {
    const auto* pr = pred.ptr<std::uint8_t>(y);
    const auto* gr = gt.ptr<std::uint8_t>(y);
    for (int x = 0; x < pred.cols; ++x) {
      const bool in_p = pr[x] == label, in_g = gr[x] == label;
      p += in_p;
      g += in_g;
      both += in_p && in_g;
    }
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

/// Row-major first maximum of one heatmap plane.
inline cv::Point heatmap_argmax(const float* plane, int h, int w) {
  int best = 0;
  for (int i = 1; i < h * w; ++i) {
    if (plane[i] > plane[best]) best = i;
  }
  return {best % w, best / w};
}

/// Euclidean distance between each heatmap's argmax and its landmark.
inline std::array<double, kNumLandmarks> landmark_error(const float* heatmaps, int h, int w, const Landmarks& gt) {
  std::array<double, kNumLandmarks> out{};
  for (int k = 0; k < kNumLandmarks; ++k) {
    const cv::Point p = heatmap_argmax(heatmaps + static_cast<std::size_t>(k) * h * w, h, w);
    out[k] = std::hypot(p.x - gt[k].x, p.y - gt[k].y);
  }
  return out;
}

inline std::array<double, kNumLandmarks> landmark_error(const Tensor<float>& heatmaps_chw, const Landmarks& gt) {
  return landmark_error(heatmaps_chw.data(), heatmaps_chw.dim(1), heatmaps_chw.dim(2), gt);
}

// ---------------------------------------------------------------------------
// Evaluation loop

enum class RegionScope { full, occluded };

struct MaskSource {
  std::vector<int> sites;  // indices into O1..O6; used when generated is empty
  std::optional<MaskKind> generated;
  int per_sample = 1;  // generated masks per sample
  std::uint64_t seed = 0;

  static MaskSource all_sites() { return {{0, 1, 2, 3, 4, 5}, std::nullopt, 1, 0}; }
};

struct EvalOptions {
  MaskSource masks = MaskSource::all_sites();
  RegionScope psnr_scope = RegionScope::full;
  RegionScope dice_scope = RegionScope::full;
  RegionScope landmark_scope = RegionScope::full;
  bool want_dice = false;
  bool want_landmarks = false;
  int seg_classes = kDefaultSegClasses;
  int block_size = 0;  // 0: S / 2
  std::uint64_t noise_seed = 0;
  SsimParams ssim;
};

struct SiteScores {
  double ssim_percent = 0;
  double psnr_db = 0;
  double ssim_raw_percent = 0;  // on the uncomposed generator output
  double psnr_raw_db = 0;
  std::vector<double> ssim_samples, psnr_samples;
};

struct MetricsReport {
  std::map<std::string, SiteScores> per_site;
  std::map<int, double> dice_percent;
  double dice_average = 0;
  std::array<double, kNumLandmarks> landmark_error{};
  double landmark_average = 0;
  std::vector<double> landmark_samples;  // per (sample, mask) mean error
  bool has_dice = false, has_landmarks = false;
  nlohmann::json meta = nlohmann::json::object();
};

/// Produces generator outputs (batch) for a batch of masked inputs of one sample.
using Predictor = std::function<GeneratorOutput<float>(const Tensor<float>& x, std::size_t sample)>;

inline Predictor generator_predictor(Generator<float>& g) {
  return [&g](const Tensor<float>& x, std::size_t) {
    g.set_training(false);
    return g.forward_split(x);
  };
}

namespace detail {

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline bool occluded_at(const BinaryMask& m, const cv::Point2d& p) {
  const int x = std::clamp(static_cast<int>(std::lround(p.x)), 0, m.side() - 1);
  const int y = std::clamp(static_cast<int>(std::lround(p.y)), 0, m.side() - 1);
  return m.grid.at<std::uint8_t>(y, x) == 0;
}

}  // namespace detail

/// Masks each sample at every requested site (noise fill), runs the predictor,
/// composes with the visible pixels, and averages the metrics over samples.
inline MetricsReport evaluate(const Predictor& predict, const std::vector<FaceSample>& samples, const TaskSet& tasks,
                              const EvalOptions& opt) {
  if (opt.want_dice && !tasks.contains(Task::segment)) {
    throw ConfigError("unsupported metric: Dice requires a model trained with the segmentation task");
  }
  if (opt.want_landmarks && !tasks.contains(Task::detect)) {
    throw ConfigError("unsupported metric: landmark error requires a model trained with the detection task");
  }
  if (samples.empty()) throw DataError("evaluate: no samples");
  const int side = samples.front().side();

  struct Slot {
    std::string name;
    BinaryMask mask;
  };
  MetricsReport report;
  std::map<int, std::vector<double>> dice_samples;
  std::array<std::vector<double>, kNumLandmarks> lm_samples;
  std::map<std::string, std::vector<double>> ssim_raw, psnr_raw;
  const auto fixed = eval_masks(side);

  for (std::size_t s = 0; s < samples.size(); ++s) {
    const FaceSample& sample = samples[s];
    std::vector<Slot> slots;
    if (opt.masks.generated) {
      for (int j = 0; j < opt.masks.per_sample; ++j) {
        Rng rng = Rng::derive(opt.masks.seed, {s, static_cast<std::uint64_t>(j)});
        BinaryMask m;
        switch (*opt.masks.generated) {
          case MaskKind::block: m = gen_block_mask(rng, side, opt.block_size > 0 ? opt.block_size : side / 2); break;
          case MaskKind::pattern: m = gen_pattern_mask(rng, side); break;
          case MaskKind::noise: m = gen_noise_mask(rng, side); break;
          case MaskKind::eval_site: throw ConfigError("eval_site is not a generated mask kind");
        }
        slots.push_back({to_string(*opt.masks.generated), m});
      }
    } else {
      for (int site : opt.masks.sites) slots.push_back({kSiteNames.at(site), fixed.at(site)});
    }

    std::vector<Tensor<float>> xs, ms;
    for (std::size_t j = 0; j < slots.size(); ++j) {
      Rng rng = Rng::derive(opt.noise_seed, {s, j, 0x6e6f697365ULL});
      const MaskFill fill = slots[j].mask.kind == MaskKind::pattern ? MaskFill::zeros : MaskFill::noise;
      xs.push_back(image_to_tensor(apply_mask(sample.image, slots[j].mask, fill, rng)));
      ms.push_back(mask_to_tensor(slots[j].mask));
    }
    const Tensor<float> x = stack(xs), m = stack(ms);
    const GeneratorOutput<float> out = predict(x, s);
    const Tensor<float> composed = compose_inpaint(out.image, x, m);
    const Planes truth = to_planes(sample.image);
    const cv::Mat gt_labels = sample.label_map;

    for (std::size_t j = 0; j < slots.size(); ++j) {
      const std::size_t plane = static_cast<std::size_t>(3) * side * side;
      Planes comp = to_planes(composed.data() + j * plane, 3, side, side);
      Planes raw = to_planes(out.image.data() + j * plane, 3, side, side);
      double p, p_raw;
      if (opt.psnr_scope == RegionScope::occluded) {
        std::vector<double> ta, ca, ra;
        for (int c = 0; c < 3; ++c) {
          for (int i = 0; i < side * side; ++i) {
            if (slots[j].mask.grid.data[i] != 0) continue;
            const std::size_t k = static_cast<std::size_t>(c) * side * side + i;
            ta.push_back(truth.values[k]);
            ca.push_back(comp.values[k]);
            ra.push_back(raw.values[k]);
          }
        }
        p = psnr(ca, ta);
        p_raw = psnr(ra, ta);
      } else {
        p = psnr(comp, truth);
        p_raw = psnr(raw, truth);
      }
      auto& site = report.per_site[slots[j].name];
      site.psnr_samples.push_back(p);
      site.ssim_samples.push_back(ssim(comp, truth, opt.ssim));
      psnr_raw[slots[j].name].push_back(p_raw);
      ssim_raw[slots[j].name].push_back(ssim(raw, truth, opt.ssim));

      if (opt.want_dice) {
        const std::size_t seg_plane = static_cast<std::size_t>(opt.seg_classes) * side * side;
        cv::Mat pred = channels_to_labelmap(out.segments.data() + j * seg_plane, opt.seg_classes, side, side);
        cv::Mat p_eval = pred, g_eval = gt_labels;
        if (opt.dice_scope == RegionScope::occluded) {
          // Pixels outside the occluded region are ignored by relabelling them to an unused id.
          p_eval = pred.clone();
          g_eval = gt_labels.clone();
          p_eval.setTo(255, slots[j].mask.grid);
          g_eval.setTo(255, slots[j].mask.grid);
        }
        for (int label = 1; label < opt.seg_classes; ++label) {
          dice_samples[label].push_back(dice(p_eval, g_eval, label, opt.seg_classes));
        }
      }
      if (opt.want_landmarks) {
        const std::size_t hm_plane = static_cast<std::size_t>(kNumLandmarks) * side * side;
        const auto err = landmark_error(out.heatmaps.data() + j * hm_plane, side, side, sample.landmarks);
        double sum = 0;
        int used = 0;
        for (int k = 0; k < kNumLandmarks; ++k) {
          if (opt.landmark_scope == RegionScope::occluded && !detail::occluded_at(slots[j].mask, sample.landmarks[k])) {
            continue;
          }
          lm_samples[k].push_back(err[k]);
          sum += err[k];
          ++used;
        }
        if (used > 0) report.landmark_samples.push_back(sum / used);
      }
    }
  }

  for (auto& [name, site] : report.per_site) {
    site.psnr_db = detail::mean(site.psnr_samples);
    site.ssim_percent = 100.0 * detail::mean(site.ssim_samples);
    site.psnr_raw_db = detail::mean(psnr_raw[name]);
    site.ssim_raw_percent = 100.0 * detail::mean(ssim_raw[name]);
  }
  if (opt.want_dice) {
    report.has_dice = true;
    double total = 0;
    for (auto& [label, values] : dice_samples) {
      report.dice_percent[label] = 100.0 * detail::mean(values);
      total += report.dice_percent[label];
    }
    report.dice_average = dice_samples.empty() ? 0.0 : total / static_cast<double>(dice_samples.size());
  }
  if (opt.want_landmarks) {
    report.has_landmarks = true;
    double total = 0;
    int used = 0;
    for (int k = 0; k < kNumLandmarks; ++k) {
      report.landmark_error[k] = detail::mean(lm_samples[k]);
      if (!lm_samples[k].empty()) {
        total += report.landmark_error[k];
        ++used;
      }
    }
    report.landmark_average = used ? total / used : 0.0;
  }
  report.meta["samples"] = samples.size();
  report.meta["psnr_scope"] = opt.psnr_scope == RegionScope::full ? "full" : "occluded";
  report.meta["dice_scope"] = opt.dice_scope == RegionScope::full ? "full" : "occluded";
  report.meta["landmark_scope"] = opt.landmark_scope == RegionScope::full ? "full" : "occluded";
  report.meta["ssim"] = {{"window", opt.ssim.window}, {"sigma", opt.ssim.sigma}, {"k1", opt.ssim.k1},
                         {"k2", opt.ssim.k2}, {"dynamic_range", opt.ssim.dynamic_range}};
  report.meta["composed"] = true;
  return report;
}

inline nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline constexpr const char* kReportSchema = "collagan.metrics/1";

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["schema"] = kReportSchema;
  j["meta"] = r.meta;
  j["sites"] = nlohmann::json::object();
  for (const auto& [name, s] : r.per_site) {
    j["sites"][name] = {{"ssim_percent", s.ssim_percent},
                        {"psnr_db", number_or_inf(s.psnr_db)},
                        {"raw_ssim_percent", s.ssim_raw_percent},
                        {"raw_psnr_db", number_or_inf(s.psnr_raw_db)}};
  }
  if (r.has_dice) {
    nlohmann::json d = nlohmann::json::object();
    for (const auto& [label, v] : r.dice_percent) d[class_name(label)] = v;
    j["dice_percent"] = {{"per_label", d}, {"average", r.dice_average}};
  }
  if (r.has_landmarks) {
    nlohmann::json e = nlohmann::json::object();
    for (int k = 0; k < kNumLandmarks; ++k) e[kLandmarkNames[k]] = r.landmark_error[k];
    j["landmark_error_px"] = {{"per_landmark", e}, {"average", r.landmark_average}};
  }
  return j;
}

/// CSV tables: site,ssim_percent,psnr_db / label,dice_percent / landmark,error_px.
inline std::string sites_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "site,ssim_percent,psnr_db\n";
  for (const auto& [name, s] : r.per_site) {
    os << name << ',' << s.ssim_percent << ',';
    if (std::isinf(s.psnr_db)) {
      os << "inf";
    } else {
      os << s.psnr_db;
    }
    os << '\n';
  }
  return os.str();
}

inline std::string dice_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "label,dice_percent\n";
  for (const auto& [label, v] : r.dice_percent) os << class_name(label) << ',' << v << '\n';
  os << "average," << r.dice_average << '\n';
  return os.str();
}

inline std::string landmarks_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "landmark,error_px\n";
  for (int k = 0; k < kNumLandmarks; ++k) os << kLandmarkNames[k] << ',' << r.landmark_error[k] << '\n';
  os << "average," << r.landmark_average << '\n';
  return os.str();
}

}  // namespace collagan
