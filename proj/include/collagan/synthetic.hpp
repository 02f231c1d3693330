#pragma once

// Procedural cartoon faces with exact landmarks and part labels. Used for
// tests, demos and small training runs where no annotated photos exist.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "collagan/data_pipeline.hpp"
#include "collagan/image_io.hpp"
#include "collagan/rng.hpp"

namespace collagan {

struct SyntheticConfig {
  int width = 80;
  int height = 80;
  double face_scale = 1.0;  // face height relative to 0.8 * min(width, height)
  double jitter = 0.04;     // centre offset, fraction of the side
  double texture = 0.04;    // per-pixel noise amplitude in [-1, 1] units
};

namespace detail {

inline cv::Scalar random_color(Rng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

inline cv::Point to_fixed(cv::Point2d p) {  // 4 fractional bits for cv drawing
  return {static_cast<int>(std::lround(p.x * 16)), static_cast<int>(std::lround(p.y * 16))};
}

inline void draw_ellipse(cv::Mat& rgb, cv::Mat& labels, cv::Point2d c, cv::Size2d axes, double angle,
                         const cv::Scalar& color, int label) {
  const cv::Size ax(static_cast<int>(std::lround(axes.width * 16)), static_cast<int>(std::lround(axes.height * 16)));
  cv::ellipse(rgb, to_fixed(c), ax, angle, 0, 360, color, cv::FILLED, cv::LINE_8, 4);
  cv::ellipse(labels, to_fixed(c), ax, angle, 0, 360, cv::Scalar(label), cv::FILLED, cv::LINE_8, 4);
}

inline void draw_poly(cv::Mat& rgb, cv::Mat& labels, const std::vector<cv::Point2d>& pts, const cv::Scalar& color,
                      int label) {
  std::vector<cv::Point> fixed;
  for (const auto& p : pts) fixed.push_back(to_fixed(p));
  const std::vector<std::vector<cv::Point>> polys{fixed};
  cv::fillPoly(rgb, polys, color, cv::LINE_8, 4);
  cv::fillPoly(labels, polys, cv::Scalar(label), cv::LINE_8, 4);
}

}  // namespace detail

/// One random face. Image values lie in [-1, 1]; "left" parts sit at smaller x.
inline RawFace synthetic_face(Rng& rng, const SyntheticConfig& cfg = {}) {
  const double side = std::min(cfg.width, cfg.height);
  cv::Mat rgb(cfg.height, cfg.width, CV_32FC3);
  cv::Mat labels(cfg.height, cfg.width, CV_8UC1, cv::Scalar(kBackground));

  // background: vertical gradient between two colours
  const cv::Scalar top = detail::random_color(rng, -0.9, 0.6), bottom = detail::random_color(rng, -0.9, 0.6);
  for (int y = 0; y < cfg.height; ++y) {
    const double t = cfg.height > 1 ? static_cast<double>(y) / (cfg.height - 1) : 0.0;
    rgb.row(y).setTo(top * (1 - t) + bottom * t);
  }

  const double fh = 0.40 * side * cfg.face_scale * rng.uniform(0.92, 1.08);  // semi-axes
  const double fw = fh * rng.uniform(0.72, 0.84);
  const cv::Point2d c(cfg.width / 2.0 + rng.uniform(-cfg.jitter, cfg.jitter) * side,
                      cfg.height / 2.0 + rng.uniform(-cfg.jitter, cfg.jitter) * side);
  const double tilt = rng.uniform(-6.0, 6.0);
  const double th = tilt * CV_PI / 180.0;
  auto place = [&](double u, double v) {  // face-frame offsets (fractions of fw, fh) -> image
    const double x = u * fw, y = v * fh;
    return cv::Point2d(c.x + x * std::cos(th) - y * std::sin(th), c.y + x * std::sin(th) + y * std::cos(th));
  };

  const double tone = rng.uniform(-0.1, 0.6);
  const cv::Scalar skin(std::min(1.0, tone + 0.35), tone + 0.05, tone - 0.15);
  detail::draw_ellipse(rgb, labels, c, {fw, fh}, tilt, skin, kSkin);

  const double eye_u = rng.uniform(0.34, 0.44), eye_v = rng.uniform(-0.22, -0.12);
  const double eye_a = fw * rng.uniform(0.15, 0.2), eye_b = eye_a * rng.uniform(0.45, 0.6);
  const cv::Scalar brow = detail::random_color(rng, -0.95, -0.55);
  const cv::Scalar iris = detail::random_color(rng, -0.9, -0.2);
  for (int s : {-1, 1}) {
    const bool left = s < 0;
    const cv::Point2d e = place(s * eye_u, eye_v);
    const cv::Point2d b = place(s * eye_u, eye_v - 0.17);
    detail::draw_ellipse(rgb, labels, b, {eye_a * 1.25, eye_b * 0.5}, tilt + s * 8, brow, left ? kLeftBrow : kRightBrow);
    detail::draw_ellipse(rgb, labels, e, {eye_a, eye_b}, tilt, cv::Scalar(0.9, 0.9, 0.9),
                         left ? kLeftEyeClass : kRightEyeClass);
    detail::draw_ellipse(rgb, labels, e, {eye_b * 0.8, eye_b * 0.8}, 0, iris, left ? kLeftEyeClass : kRightEyeClass);
  }

  const double nose_v = rng.uniform(0.12, 0.2);
  const cv::Scalar nose_col = skin * 0.8;
  detail::draw_poly(rgb, labels,
                    {place(0, eye_v + 0.05), place(0.13, nose_v), place(-0.13, nose_v)}, nose_col, kNoseClass);

  const double mouth_v = rng.uniform(0.4, 0.5), mouth_u = rng.uniform(0.26, 0.36);
  const double open = rng.uniform(0.0, 0.07);
  const cv::Scalar lip = detail::random_color(rng, -0.2, 0.4) + cv::Scalar(0.4, -0.3, -0.3);
  const cv::Point2d ml = place(-mouth_u, mouth_v), mr = place(mouth_u, mouth_v);
  detail::draw_poly(rgb, labels, {ml, place(-mouth_u * 0.4, mouth_v - 0.07 - open), place(0, mouth_v - 0.05 - open),
                                  place(mouth_u * 0.4, mouth_v - 0.07 - open), mr, place(0, mouth_v - open)},
                    lip, kUpperLip);
  if (open > 0.025) {
    detail::draw_poly(rgb, labels, {ml, place(0, mouth_v - open), mr, place(0, mouth_v + open)},
                      cv::Scalar(0.95, 0.95, 0.9), kTeeth);
  }
  detail::draw_poly(rgb, labels, {ml, place(0, mouth_v + open), mr, place(0, mouth_v + 0.09 + open)}, lip, kLowerLip);

  // soft shading and texture, image only
  cv::GaussianBlur(rgb, rgb, cv::Size(0, 0), 0.6);
  for (int y = 0; y < rgb.rows; ++y) {
    auto* row = rgb.ptr<cv::Vec3f>(y);
    for (int x = 0; x < rgb.cols; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        row[x][ch] = static_cast<float>(std::clamp(row[x][ch] + cfg.texture * rng.normal(), -1.0, 1.0));
      }
    }
  }

  RawFace face;
  face.image = rgb;
  face.label_map = labels;
  face.landmarks = {place(-eye_u, eye_v), place(eye_u, eye_v), place(0, nose_v), ml, mr};
  return face;
}

/// Generates n faces and converts each to an S x S sample (identity crop when
/// cfg matches S).
inline std::vector<FaceSample> synthetic_samples(std::uint64_t seed, std::size_t n, int side,
                                                 SyntheticConfig cfg = {}) {
  cfg.width = cfg.height = side;
  std::vector<FaceSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::derive(seed, {0x73796e74ULL, i});
    RawFace f = synthetic_face(rng, cfg);
    out.push_back({f.image, f.landmarks, f.label_map});
  }
  return out;
}

/// Writes a dataset directory: images/, labels/, landmarks.csv, splits.csv.
/// The first n_train faces go to train, then n_val to val, the rest to test.
inline void write_synthetic_dataset(const std::filesystem::path& root, std::uint64_t seed, int n_train, int n_val,
                                    int n_test, const SyntheticConfig& cfg = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  std::ofstream lm(root / "landmarks.csv"), sp(root / "splits.csv");
  if (!lm || !sp) throw DataError("cannot write dataset files under " + root.string());
  lm << "filename,lefteye_x,lefteye_y,righteye_x,righteye_y,nose_x,nose_y,leftmouth_x,leftmouth_y,rightmouth_x,"
        "rightmouth_y\n";
  sp << "filename,split\n";
  lm.precision(6);
  const int total = n_train + n_val + n_test;
  for (int i = 0; i < total; ++i) {
    Rng rng = Rng::derive(seed, {0x73796e74ULL, static_cast<std::uint64_t>(i)});
    const RawFace f = synthetic_face(rng, cfg);
    char name[32];
    std::snprintf(name, sizeof name, "face_%05d.png", i);
    io::save_rgb(root / "images" / name, f.image);
    io::save_label_png(root / "labels" / name, f.label_map);
    lm << name;
    for (const auto& p : f.landmarks) lm << ',' << std::fixed << p.x << ',' << p.y;
    lm << '\n';
    const char* split = i < n_train ? "train" : i < n_train + n_val ? "val" : "test";
    sp << name << ',' << split << '\n';
  }
}

}  // namespace collagan
