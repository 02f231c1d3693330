#pragma once

// Occlusion masks. Convention: 0 = occluded, 1 = visible.

#include <array>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "collagan/data_pipeline.hpp"
#include "collagan/errors.hpp"
#include "collagan/image_io.hpp"
#include "collagan/rng.hpp"
#include "collagan/tensor.hpp"

namespace collagan {

enum class MaskKind { block, pattern, noise, eval_site };
enum class MaskFill { noise, zeros };

inline std::string to_string(MaskKind k) {
  switch (k) {
    case MaskKind::block: return "block";
    case MaskKind::pattern: return "pattern";
    case MaskKind::noise: return "noise";
    case MaskKind::eval_site: return "eval_site";
  }
  return "?";
}

inline MaskKind parse_mask_kind(const std::string& s) {
  if (s == "block") return MaskKind::block;
  if (s == "pattern") return MaskKind::pattern;
  if (s == "noise") return MaskKind::noise;
  if (s == "eval_site") return MaskKind::eval_site;
  throw ConfigError("unknown mask kind '" + s + "' (expected block, pattern or noise)");
}

inline MaskFill parse_mask_fill(const std::string& s) {
  if (s == "noise") return MaskFill::noise;
  if (s == "zeros") return MaskFill::zeros;
  throw ConfigError("unknown fill '" + s + "' (expected noise or zeros)");
}

/// Pattern masks are already noisy, so they are filled with zeros; block and
/// noise masks are filled with random noise.
inline MaskFill default_fill(MaskKind k) { return k == MaskKind::pattern ? MaskFill::zeros : MaskFill::noise; }

struct BinaryMask {
  cv::Mat grid;  // CV_8UC1 with values in {0, 1}
  MaskKind kind = MaskKind::block;

  int side() const { return grid.rows; }
  std::size_t occluded_count() const { return grid.total() - static_cast<std::size_t>(cv::countNonZero(grid)); }
  double occluded_fraction() const { return static_cast<double>(occluded_count()) / grid.total(); }
  bool is_binary() const {
    cv::Mat above;
    cv::compare(grid, 1, above, cv::CMP_GT);
    return grid.type() == CV_8UC1 && cv::countNonZero(above) == 0;
  }
};

inline BinaryMask full_mask(int side, std::uint8_t value, MaskKind kind = MaskKind::block) {
  return {cv::Mat(side, side, CV_8UC1, cv::Scalar(value)), kind};
}

/// One block x block occluded square placed uniformly inside the image.
inline BinaryMask gen_block_mask(Rng& rng, int side, int block = 64, cv::Point* origin = nullptr) {
  if (block <= 0 || block >= side) {
    throw ConfigError("block size " + std::to_string(block) + " must satisfy 0 < block < S = " + std::to_string(side));
  }
  BinaryMask m = full_mask(side, 1, MaskKind::block);
  const int x = rng.uniform_int(0, side - block);
  const int y = rng.uniform_int(0, side - block);
  m.grid(cv::Rect(x, y, block, block)).setTo(0);
  if (origin) *origin = {x, y};
  return m;
}

/// Free-form blobs from thresholded low-pass noise. The threshold is the
/// exact quantile that occludes round(target * S^2) pixels.
inline BinaryMask gen_pattern_mask(Rng& rng, int side, double target_fraction = 0.25, double tol = 0.03) {
  if (!(target_fraction > 0 && target_fraction < 1)) throw ConfigError("pattern fraction must be in (0, 1)");
  cv::Mat noise(side, side, CV_64FC1);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) noise.at<double>(y, x) = rng.normal();
  }
  cv::Mat smooth;
  const double sigma = std::max(1.0, side / 20.0);
  cv::GaussianBlur(noise, smooth, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
  const std::size_t total = static_cast<std::size_t>(side) * side;
  std::size_t occlude = static_cast<std::size_t>(std::llround(target_fraction * total));
  occlude = std::clamp<std::size_t>(occlude, 1, total - 1);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  const double* v = smooth.ptr<double>(0);
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(occlude), order.end(),
                   [v](std::size_t a, std::size_t b) { return v[a] < v[b] || (v[a] == v[b] && a < b); });
  BinaryMask m = full_mask(side, 1, MaskKind::pattern);
  auto* g = m.grid.ptr<std::uint8_t>(0);
  for (std::size_t i = 0; i < occlude; ++i) g[order[i]] = 0;
  if (std::abs(m.occluded_fraction() - target_fraction) > tol) {
    throw ConfigError("pattern mask: target fraction unreachable at S = " + std::to_string(side));
  }
  return m;
}

/// Number of 4-connected occluded blobs.
inline int count_blobs(const BinaryMask& m) {
  cv::Mat occluded, labels;
  cv::compare(m.grid, 0, occluded, cv::CMP_EQ);
  return cv::connectedComponents(occluded, labels, 4) - 1;
}

/// I.i.d. per-pixel occlusion with probability `fraction`.
inline BinaryMask gen_noise_mask(Rng& rng, int side, double fraction = 0.80) {
  if (!(fraction > 0 && fraction < 1)) throw ConfigError("noise fraction must be in (0, 1)");
  for (;;) {
    BinaryMask m = full_mask(side, 1, MaskKind::noise);
    auto* g = m.grid.ptr<std::uint8_t>(0);
    for (std::size_t i = 0; i < m.grid.total(); ++i) g[i] = rng.bernoulli(fraction) ? 0 : 1;
    const auto occ = m.occluded_count();
    if (occ > 0 && occ < m.grid.total()) return m;
  }
}

inline BinaryMask invert(const BinaryMask& m) {
  BinaryMask out{cv::Mat(), m.kind};
  cv::subtract(cv::Scalar(1), m.grid, out.grid);
  return out;
}

inline BinaryMask flip_horizontal(const BinaryMask& m) {
  BinaryMask out{cv::Mat(), m.kind};
  cv::flip(m.grid, out.grid, 1);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation sites

inline constexpr std::array<const char*, 6> kSiteNames{"O1", "O2", "O3", "O4", "O5", "O6"};
inline constexpr int kSiteWidth = 40, kSiteHeight = 48;  // at S = 128

struct SiteCenter {
  double x, y;  // fractions of S
};
// left eye, right eye, upper face, left face, right face, lower face
inline constexpr std::array<SiteCenter, 6> kSiteCenters{
    {{0.35, 0.40}, {0.65, 0.40}, {0.50, 0.30}, {0.35, 0.55}, {0.65, 0.55}, {0.50, 0.72}}};

inline int site_index(const std::string& name) {
  for (int i = 0; i < 6; ++i) {
    if (name == kSiteNames[i]) return i;
  }
  throw ConfigError("unknown evaluation site '" + name + "' (expected O1..O6)");
}

inline cv::Rect site_rect(int side, double cx, double cy) {
  const int w = static_cast<int>(std::lround(kSiteWidth * side / 128.0));
  const int h = static_cast<int>(std::lround(kSiteHeight * side / 128.0));
  const int x = std::clamp(static_cast<int>(std::lround(cx - w / 2.0)), 0, side - w);
  const int y = std::clamp(static_cast<int>(std::lround(cy - h / 2.0)), 0, side - h);
  return {x, y, w, h};
}

/// The six fixed rectangles. Right-side sites are exact mirrors of the
/// left-side ones.
inline std::array<cv::Rect, 6> eval_site_rects(int side = 128) {
  std::array<cv::Rect, 6> r;
  for (int i : {0, 2, 3, 5}) r[i] = site_rect(side, kSiteCenters[i].x * side, kSiteCenters[i].y * side);
  for (auto [left, right] : {std::pair{0, 1}, std::pair{3, 4}}) {
    r[right] = r[left];
    r[right].x = side - r[left].x - r[left].width;
  }
  return r;
}

inline BinaryMask rect_mask(int side, const cv::Rect& rect) {
  BinaryMask m = full_mask(side, 1, MaskKind::eval_site);
  m.grid(rect & cv::Rect(0, 0, side, side)).setTo(0);
  return m;
}

inline std::array<BinaryMask, 6> eval_masks(int side = 128) {
  std::array<BinaryMask, 6> out;
  const auto rects = eval_site_rects(side);
  for (int i = 0; i < 6; ++i) out[i] = rect_mask(side, rects[i]);
  return out;
}

/// Variant with O1/O2 centred on the ground-truth eye landmarks.
inline std::array<BinaryMask, 6> eval_masks_at_landmarks(int side, const Landmarks& landmarks) {
  auto out = eval_masks(side);
  out[0] = rect_mask(side, site_rect(side, landmarks[kLeftEye].x, landmarks[kLeftEye].y));
  out[1] = rect_mask(side, site_rect(side, landmarks[kRightEye].x, landmarks[kRightEye].y));
  return out;
}

// ---------------------------------------------------------------------------
// Application

/// Keeps visible pixels bit-exactly; occluded pixels get uniform noise in
/// [-1, 1] or -1 (zero intensity).
inline cv::Mat apply_mask(const cv::Mat& image, const BinaryMask& mask, MaskFill fill, Rng& rng) {
  if (image.rows != mask.grid.rows || image.cols != mask.grid.cols) {
    throw DataError("apply_mask: image " + std::to_string(image.cols) + "x" + std::to_string(image.rows) +
                    " does not match mask " + std::to_string(mask.grid.cols) + "x" + std::to_string(mask.grid.rows));
  }
  CV_Assert(image.type() == CV_32FC3);
  cv::Mat out = image.clone();
  for (int y = 0; y < out.rows; ++y) {
    auto* row = out.ptr<cv::Vec3f>(y);
    const auto* m = mask.grid.ptr<std::uint8_t>(y);
    for (int x = 0; x < out.cols; ++x) {
      if (m[x] != 0) continue;
      for (int c = 0; c < 3; ++c) row[x][c] = fill == MaskFill::noise ? static_cast<float>(rng.uniform(-1.0, 1.0)) : -1.0f;
    }
  }
  return out;
}

/// 1 x S x S tensor with mask values.
inline Tensor<float> mask_to_tensor(const BinaryMask& m) {
  Tensor<float> out({1, m.side(), m.side()});
  const auto* g = m.grid.ptr<std::uint8_t>(0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(g[i]);
  return out;
}

inline void save_mask_png(const std::filesystem::path& path, const BinaryMask& m) { io::save_bilevel_png(path, m.grid); }

inline BinaryMask load_mask_png(const std::filesystem::path& path, MaskKind kind = MaskKind::block) {
  BinaryMask m{io::load_index_png(path), kind};
  // 8-bit masks written as 0/255 are accepted too.
  cv::Mat bits;
  cv::compare(m.grid, 0, bits, cv::CMP_NE);
  m.grid = bits / 255;
  if (m.grid.rows != m.grid.cols) throw DataError("mask " + path.string() + " is not square");
  return m;
}

}  // namespace collagan
