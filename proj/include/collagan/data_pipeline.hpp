#pragma once

// Face samples, dataset manifests, crop/augment geometry and the rendering of
// per-task supervision targets.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "collagan/errors.hpp"
#include "collagan/image_io.hpp"
#include "collagan/model.hpp"
#include "collagan/rng.hpp"
#include "collagan/tensor.hpp"

namespace collagan {

namespace fs = std::filesystem;

/// Landmark slots: left eye, right eye, nose, left mouth corner, right mouth corner.
enum LandmarkSlot { kLeftEye = 0, kRightEye = 1, kNose = 2, kLeftMouth = 3, kRightMouth = 4 };
using Landmarks = std::array<cv::Point2d, kNumLandmarks>;

inline constexpr std::array<const char*, kNumLandmarks> kLandmarkNames{"left_eye", "right_eye", "nose",
                                                                        "left_mouth", "right_mouth"};

/// Face-part classes of the default 10-class label set.
enum FaceClass {
  kBackground = 0,
  kSkin = 1,
  kLeftBrow = 2,
  kRightBrow = 3,
  kLeftEyeClass = 4,
  kRightEyeClass = 5,
  kNoseClass = 6,
  kUpperLip = 7,
  kTeeth = 8,
  kLowerLip = 9,
};
inline constexpr int kDefaultSegClasses = 10;
inline constexpr std::array<const char*, kDefaultSegClasses> kClassNames{
    "background", "skin", "left_brow", "right_brow", "left_eye", "right_eye", "nose", "upper_lip", "teeth", "lower_lip"};

inline std::string class_name(int label) {
  return label >= 0 && label < kDefaultSegClasses ? kClassNames[label] : "class" + std::to_string(label);
}

struct FaceSample {
  cv::Mat image;      // CV_32FC3, RGB, values in [-1, 1]
  Landmarks landmarks;
  cv::Mat label_map;  // CV_8UC1 class ids

  int side() const { return image.rows; }

  /// Throws DataError on any broken invariant.
  void validate(int seg_classes) const {
    if (image.type() != CV_32FC3 || label_map.type() != CV_8UC1 || image.size() != label_map.size()) {
      throw DataError("face sample: image/label map type or size mismatch");
    }
    for (int k = 0; k < kNumLandmarks; ++k) {
      const auto& p = landmarks[k];
      if (!(p.x >= 0 && p.x < image.cols && p.y >= 0 && p.y < image.rows)) {
        throw DataError(std::string("face sample: landmark ") + kLandmarkNames[k] + " outside image");
      }
    }
    double lo, hi;
    cv::minMaxLoc(label_map, &lo, &hi);
    if (hi >= seg_classes) throw DataError("face sample: label " + std::to_string(static_cast<int>(hi)) + " >= C_s");
    cv::minMaxLoc(image.reshape(1), &lo, &hi);
    if (lo < -1.0 || hi > 1.0) throw DataError("face sample: image values outside [-1, 1]");
  }
};

/// Per-task supervision for one sample, channel-major.
struct TaskTargets {
  Tensor<float> image;     // 3 x S x S
  Tensor<float> segments;  // C_s x S x S, values in {-1, +1}
  Tensor<float> heatmaps;  // 5 x S x S, values in [-1, 1]
};

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRecord {
  fs::path image_path;
  Landmarks landmarks;  // raw-image pixels
  fs::path label_path;
};

struct DatasetManifest {
  fs::path root;
  std::string split;
  int resolution = 128;
  std::vector<ManifestRecord> records;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  std::istringstream is(s);
  is >> v;
  return !is.fail() && is.eof();
}

}  // namespace detail

/// Label-map path for an image: labels/<stem>.png.
inline fs::path label_path_for(const fs::path& root, const std::string& filename) {
  return root / "labels" / (fs::path(filename).stem().string() + ".png");
}

inline std::map<std::string, Landmarks> read_landmarks_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing landmark file " + path.string());
  std::map<std::string, Landmarks> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    double probe;
    if (lineno == 1 && f.size() > 1 && !detail::parse_double(f[1], probe)) continue;  // header
    if (f.size() != 1 + 2 * kNumLandmarks) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 11 fields, got " +
                      std::to_string(f.size()));
    }
    Landmarks lm;
    for (int k = 0; k < kNumLandmarks; ++k) {
      if (!detail::parse_double(f[1 + 2 * k], lm[k].x) || !detail::parse_double(f[2 + 2 * k], lm[k].y)) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed coordinate");
      }
    }
    out[f[0]] = lm;
  }
  return out;
}

inline std::vector<std::pair<std::string, std::string>> read_splits_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing split file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 2) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'filename,split'");
    }
    if (lineno == 1 && f[0] == "filename") continue;
    out.emplace_back(f[0], f[1]);
  }
  return out;
}

/// Loads every record of one split and checks that its image, landmark row
/// and label map all exist. All offending records are listed in one error.
inline DatasetManifest load_manifest(const fs::path& root, const std::string& split, int resolution = 128) {
  if (split != "train" && split != "val" && split != "test") {
    throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
  }
  const auto landmarks = read_landmarks_csv(root / "landmarks.csv");
  const auto splits = read_splits_csv(root / "splits.csv");
  DatasetManifest manifest{root, split, resolution, {}};
  std::vector<std::string> problems;
  for (const auto& [filename, which] : splits) {
    if (which != split) continue;
    const fs::path image = root / "images" / filename;
    const fs::path label = label_path_for(root, filename);
    auto lm = landmarks.find(filename);
    if (!fs::exists(image)) problems.push_back(image.string() + ": image file missing");
    if (lm == landmarks.end()) problems.push_back(image.string() + ": no landmark record");
    if (!fs::exists(label)) problems.push_back(image.string() + ": label map missing (" + label.string() + ")");
    if (fs::exists(image) && lm != landmarks.end() && fs::exists(label)) {
      manifest.records.push_back({image, lm->second, label});
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid records in split '" + split + "':";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  if (manifest.records.empty()) throw DataError("split '" + split + "' of " + root.string() + " is empty");
  return manifest;
}

/// Raw (uncropped) annotated image held in memory.
struct RawFace {
  cv::Mat image;  // CV_32FC3 in [-1, 1]
  Landmarks landmarks;
  cv::Mat label_map;
};

inline RawFace load_record(const ManifestRecord& rec) {
  RawFace raw{io::load_rgb(rec.image_path), rec.landmarks, io::load_index_png(rec.label_path)};
  if (raw.label_map.size() != raw.image.size()) {
    throw DataError("label map " + rec.label_path.string() + " does not match image size");
  }
  return raw;
}

// ---------------------------------------------------------------------------
// Geometry

/// Applies a 2x3 affine map to a point.
inline cv::Point2d apply_affine(const cv::Matx23d& a, const cv::Point2d& p) {
  return {a(0, 0) * p.x + a(0, 1) * p.y + a(0, 2), a(1, 0) * p.x + a(1, 1) * p.y + a(1, 2)};
}

/// Resamples image (bilinear) and label map (nearest) under a forward affine map.
inline FaceSample warp_sample(const FaceSample& in, const cv::Matx23d& forward, int side) {
  FaceSample out;
  cv::warpAffine(in.image, out.image, cv::Mat(forward), cv::Size(side, side), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                 cv::Scalar::all(-1.0));
  cv::warpAffine(in.label_map, out.label_map, cv::Mat(forward), cv::Size(side, side), cv::INTER_NEAREST,
                 cv::BORDER_CONSTANT, cv::Scalar::all(kBackground));
  for (int k = 0; k < kNumLandmarks; ++k) out.landmarks[k] = apply_affine(forward, in.landmarks[k]);
  return out;
}

struct CropWindow {
  int x = 0, y = 0, side = 0;
};

inline constexpr double kCropMargin = 0.08;

/// Crops a square window containing every landmark with a margin of at least
/// 8% of the window side, and resizes it to side x side. Faces are not
/// aligned. Returns nullopt when no valid window exists.
inline std::optional<FaceSample> crop_face(const cv::Mat& raw_image, const Landmarks& landmarks,
                                           const cv::Mat& label_map, int side, Rng& rng,
                                           CropWindow* chosen = nullptr) {
  const int w = raw_image.cols, h = raw_image.rows;
  if (w == side && h == side) {
    FaceSample s{raw_image.clone(), landmarks, label_map.clone()};
    for (const auto& p : landmarks) {
      if (!(p.x >= 0 && p.x < side && p.y >= 0 && p.y < side)) return std::nullopt;
    }
    if (chosen) *chosen = {0, 0, side};
    return s;
  }
  if (std::min(w, h) < side) return std::nullopt;
  double minx = landmarks[0].x, maxx = minx, miny = landmarks[0].y, maxy = miny;
  for (const auto& p : landmarks) {
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  if (minx < 0 || miny < 0 || maxx >= w || maxy >= h) return std::nullopt;

  struct Feasible {
    int side, x0, x1, y0, y1;
  };
  std::vector<Feasible> options;
  for (int len = side; len <= std::min(w, h); ++len) {
    const double m = kCropMargin * len;
    const int x0 = std::max(0, static_cast<int>(std::ceil(maxx + m - len)));
    const int x1 = std::min(w - len, static_cast<int>(std::floor(minx - m)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(maxy + m - len)));
    const int y1 = std::min(h - len, static_cast<int>(std::floor(miny - m)));
    if (x0 <= x1 && y0 <= y1) options.push_back({len, x0, x1, y0, y1});
  }
  if (options.empty()) return std::nullopt;
  const auto& f = options[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(options.size()) - 1))];
  const CropWindow win{rng.uniform_int(f.x0, f.x1), rng.uniform_int(f.y0, f.y1), f.side};
  if (chosen) *chosen = win;
  const double s = static_cast<double>(side) / win.side;
  const cv::Matx23d forward(s, 0, -win.x * s, 0, s, -win.y * s);
  return warp_sample(FaceSample{raw_image, landmarks, label_map}, forward, side);
}

struct AugmentConfig {
  double shift = 0.05;       // fraction of S per axis
  double scale_lo = 0.95, scale_hi = 1.05;
  double rotation_deg = 10;  // symmetric range
  double flip_prob = 0.5;
  int max_attempts = 10;
};

struct AugmentParams {
  double dx = 0, dy = 0;  // pixels
  double scale = 1;
  double angle_deg = 0;
  bool flip = false;

  static AugmentParams identity() { return {}; }
  static AugmentParams flip_only() { return {0, 0, 1, 0, true}; }
};

inline AugmentParams sample_augment(Rng& rng, const AugmentConfig& cfg, int side) {
  AugmentParams p;
  p.dx = rng.uniform(-cfg.shift, cfg.shift) * side;
  p.dy = rng.uniform(-cfg.shift, cfg.shift) * side;
  p.scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  p.angle_deg = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
  p.flip = rng.bernoulli(cfg.flip_prob);
  return p;
}

/// Forward map: optional mirror x -> S-1-x, then rotation and scaling about
/// the image centre, then translation.
inline cv::Matx23d augment_matrix(const AugmentParams& p, int side) {
  const double c = (side - 1) / 2.0;
  const double th = p.angle_deg * CV_PI / 180.0;
  const double a = p.scale * std::cos(th), b = p.scale * std::sin(th);
  const double f = p.flip ? -1.0 : 1.0;
  // x' = a*(f*(x - c)) - b*(y - c) + c + dx ;  y' = b*(f*(x - c)) + a*(y - c) + c + dy
  return {a * f, -b, c - a * f * c + b * c + p.dx, b * f, a, c - b * f * c - a * c + p.dy};
}

inline void swap_left_right(FaceSample& s) {
  std::swap(s.landmarks[kLeftEye], s.landmarks[kRightEye]);
  std::swap(s.landmarks[kLeftMouth], s.landmarks[kRightMouth]);
  s.label_map.forEach<std::uint8_t>([](std::uint8_t& v, const int*) {
    switch (v) {
      case kLeftBrow: v = kRightBrow; break;
      case kRightBrow: v = kLeftBrow; break;
      case kLeftEyeClass: v = kRightEyeClass; break;
      case kRightEyeClass: v = kLeftEyeClass; break;
      default: break;
    }
  });
}

/// Applies fixed augmentation parameters; nullopt when a landmark leaves the frame.
inline std::optional<FaceSample> apply_augment(const FaceSample& sample, const AugmentParams& p) {
  const int side = sample.side();
  FaceSample out = warp_sample(sample, augment_matrix(p, side), side);
  for (const auto& q : out.landmarks) {
    if (!(q.x >= 0 && q.x < side && q.y >= 0 && q.y < side)) return std::nullopt;
  }
  if (p.flip) swap_left_right(out);
  return out;
}

/// Random shift, scale, rotation and horizontal flip with consistent landmark
/// and label handling. Falls back to the unchanged sample after
/// cfg.max_attempts rejected draws.
inline FaceSample augment(const FaceSample& sample, Rng& rng, const AugmentConfig& cfg = {},
                          AugmentParams* applied = nullptr) {
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const AugmentParams p = sample_augment(rng, cfg, sample.side());
    if (auto out = apply_augment(sample, p)) {
      if (applied) *applied = p;
      return *out;
    }
  }
  if (applied) *applied = AugmentParams::identity();
  return FaceSample{sample.image.clone(), sample.landmarks, sample.label_map.clone()};
}

// ---------------------------------------------------------------------------
// Targets

inline constexpr double kDefaultHeatmapSigma = 2.0;  // pixels at S = 128

/// Channel k holds 2 * exp(-|p - l_k|^2 / (2 sigma^2)) - 1.
inline Tensor<float> render_heatmaps(const Landmarks& landmarks, double sigma, int side) {
  if (!(sigma > 0)) throw ConfigError("heatmap sigma must be > 0");
  Tensor<float> out({kNumLandmarks, side, side});
  const double denom = 2.0 * sigma * sigma;
  for (int k = 0; k < kNumLandmarks; ++k) {
    float* plane = out.data() + static_cast<std::size_t>(k) * side * side;
    for (int y = 0; y < side; ++y) {
      const double dy = y - landmarks[k].y;
      for (int x = 0; x < side; ++x) {
        const double dx = x - landmarks[k].x;
        plane[y * side + x] = static_cast<float>(2.0 * std::exp(-(dx * dx + dy * dy) / denom) - 1.0);
      }
    }
  }
  return out;
}

/// One {-1, +1} channel per class.
inline Tensor<float> labelmap_to_channels(const cv::Mat& label_map, int classes) {
  CV_Assert(label_map.type() == CV_8UC1);
  const int h = label_map.rows, w = label_map.cols;
  Tensor<float> out({classes, h, w}, -1.0f);
  for (int y = 0; y < h; ++y) {
    const auto* row = label_map.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      if (row[x] >= classes) {
        throw DataError("label " + std::to_string(row[x]) + " at pixel (" + std::to_string(x) + ", " +
                        std::to_string(y) + ") is outside [0, " + std::to_string(classes) + ")");
      }
      out[(static_cast<std::size_t>(row[x]) * h + y) * w + x] = 1.0f;
    }
  }
  return out;
}

/// Per-pixel argmax over channels (first maximum wins).
template <typename T>
cv::Mat channels_to_labelmap(const T* channels, int classes, int h, int w) {
  cv::Mat out(h, w, CV_8UC1);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      int best = 0;
      for (int c = 1; c < classes; ++c) {
        if (channels[c * plane + p] > channels[best * plane + p]) best = c;
      }
      out.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

inline cv::Mat channels_to_labelmap(const Tensor<float>& chw) {
  return channels_to_labelmap(chw.data(), chw.dim(0), chw.dim(1), chw.dim(2));
}

/// HWC float image -> CHW tensor.
inline Tensor<float> image_to_tensor(const cv::Mat& image) {
  CV_Assert(image.type() == CV_32FC3);
  Tensor<float> out({3, image.rows, image.cols});
  for (int y = 0; y < image.rows; ++y) {
    const auto* row = image.ptr<cv::Vec3f>(y);
    for (int x = 0; x < image.cols; ++x) {
      for (int c = 0; c < 3; ++c) out[(static_cast<std::size_t>(c) * image.rows + y) * image.cols + x] = row[x][c];
    }
  }
  return out;
}

/// CHW (or 1xCHW) tensor -> HWC float image.
inline cv::Mat tensor_to_image(const float* chw, int h, int w) {
  cv::Mat out(h, w, CV_32FC3);
  for (int y = 0; y < h; ++y) {
    auto* row = out.ptr<cv::Vec3f>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) row[x][c] = chw[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
  }
  return out;
}

inline TaskTargets make_targets(const FaceSample& sample, int classes, double sigma = kDefaultHeatmapSigma) {
  return {image_to_tensor(sample.image), labelmap_to_channels(sample.label_map, classes),
          render_heatmaps(sample.landmarks, sigma, sample.side())};
}

/// Heatmap sigma scaled linearly from 2 px at 128.
inline double heatmap_sigma_for(int side) { return kDefaultHeatmapSigma * side / 128.0; }

}  // namespace collagan
