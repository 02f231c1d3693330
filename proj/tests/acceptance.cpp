// Acceptance run: one PASS/FAIL line per criterion 1-10.
//
//   acceptance            run everything
//   acceptance 1 4 8      run a subset
//
// Exit status is nonzero if any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "collagan/collagan.hpp"
#include "oracles.hpp"

using namespace collagan;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

cv::Mat random_image(Rng& rng, int side) {
  cv::Mat img(side, side, CV_32FC3);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < 3; ++c) img.at<cv::Vec3f>(y, x)[c] = static_cast<float>(rng.uniform(-1, 1));
    }
  }
  return img;
}

Tensor<float> random_tensor(Rng& rng, std::vector<int> shape) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

// ---------------------------------------------------------------------------
// 1. concentrated loss ignores the generator output at visible pixels

Outcome concentration_gradient() {
  TrainConfig cfg;
  cfg.tasks = TaskSet::parse("i,s,d");
  cfg.weights = default_weights(cfg.tasks);
  cfg.concentrated = true;
  cfg.seed = 11;
  cfg.generator.side = 32;
  cfg.generator.enc_channels = {8, 16, 16, 16, 16};
  cfg.disc_widths = {8, 16, 16};
  cfg.augment = false;
  Trainer tr(cfg);
  const Batch b = batch_for_step(cfg, SampleSource::from_samples(synthetic_samples(2, 4, 32)), 0);
  tr.generator().set_training(true);
  GeneratorOutput<float> out = tr.generator().forward_split(b.x);
  const double base = tr.generator_objective(b, out).total;

  Rng rng(12);
  std::vector<std::size_t> visible, occluded;
  const int n = b.x.dim(0), side = cfg.side();
  while (visible.size() < 5 || occluded.size() < 5) {
    const int i = rng.uniform_int(0, n - 1), c = rng.uniform_int(0, 2);
    const int y = rng.uniform_int(0, side - 1), x = rng.uniform_int(0, side - 1);
    const std::size_t k = ((static_cast<std::size_t>(i) * 3 + c) * side + y) * side + x;
    auto& bucket = b.mask.at(i, 0, y, x) != 0 ? visible : occluded;
    if (bucket.size() < 5) bucket.push_back(k);
  }
  auto change = [&](std::size_t k) {
    const float keep = out.image[k];
    out.image[k] = keep > 0 ? keep - 0.25f : keep + 0.25f;
    const double d = std::abs(tr.generator_objective(b, out).total - base);
    out.image[k] = keep;
    return d;
  };
  double max_visible = 0, min_occluded = INFINITY;
  for (auto k : visible) max_visible = std::max(max_visible, change(k));
  for (auto k : occluded) min_occluded = std::min(min_occluded, change(k));
  return {max_visible < 1e-10 && min_occluded > 0,
          fmt("max |dL| at visible pixels %.3g (< 1e-10), min |dL| at occluded pixels %.3g (> 0)", max_visible,
              min_occluded)};
}

// ---------------------------------------------------------------------------
// 2. composition identities

Outcome composition_identities() {
  Rng rng(21);
  int bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int side = 8 << rng.uniform_int(0, 2);
    const auto g = random_tensor(rng, {2, 3, side, side}), x = random_tensor(rng, {2, 3, side, side});
    Tensor<float> m({2, 1, side, side});
    for (auto& v : m.values()) v = static_cast<float>(rng.bernoulli(rng.uniform(0.05, 0.95)));
    const auto c = compose_inpaint(g, x, m);
    for (std::size_t k = 0; k < c.size(); ++k) {
      const int i = static_cast<int>(k / (3 * side * side));
      const std::size_t p = k % (side * side);
      const float mv = m[static_cast<std::size_t>(i) * side * side + p];
      if (c[k] != (mv == 1 ? x[k] : g[k])) ++bad;
    }
    if (compose_inpaint(g, x, Tensor<float>(m.shape(), 1.0f)) != x) ++bad;
    if (compose_inpaint(g, x, Tensor<float>(m.shape(), 0.0f)) != g) ++bad;
  }
  return {bad == 0, fmt("100 random masks, %d mismatching values (bit-exact required)", bad)};
}

// ---------------------------------------------------------------------------
// 3. mask statistics at S = 128

Outcome mask_statistics() {
  const std::uint64_t seed = 7;
  int noise_in = 0, block_bad = 0, pattern_bad = 0;
  double lo = 1, hi = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    Rng rng = Rng::derive(seed, {0x6e, i});
    const double f = gen_noise_mask(rng, 128).occluded_fraction();
    noise_in += std::abs(f - 0.80) <= 0.01;
    Rng rb = Rng::derive(seed, {0x62, i});
    block_bad += gen_block_mask(rb, 128).occluded_fraction() != 0.25;
  }
  for (std::uint64_t i = 0; i < 200; ++i) {
    Rng rng = Rng::derive(seed, {0x70, i});
    const double f = gen_pattern_mask(rng, 128).occluded_fraction();
    lo = std::min(lo, f), hi = std::max(hi, f);
    pattern_bad += f < 0.22 || f > 0.28;
  }
  return {noise_in >= 999 && block_bad == 0 && pattern_bad == 0,
          fmt("noise within 0.80+-0.01: %d/1000 (>= 999); block != 0.25: %d/1000; pattern range [%.4f, %.4f] over "
              "200 (in [0.22, 0.28])",
              noise_in, block_bad, lo, hi)};
}

// ---------------------------------------------------------------------------
// 4. metrics against from-definition oracles

Outcome metric_oracles() {
  Rng rng(41);
  double psnr_err = 0, ssim_err = 0;
  int dice_bad = 0, argmax_bad = 0;
  for (int i = 0; i < 50; ++i) {
    const cv::Mat a = random_image(rng, 16), noise = random_image(rng, 16);
    const cv::Mat b = i % 2 ? noise : cv::Mat(0.7 * a + 0.3 * noise);
    psnr_err = std::max(psnr_err, std::abs(psnr(to_planes(a), to_planes(b)) - oracle::psnr(a, b)));
    ssim_err = std::max(ssim_err, std::abs(ssim(to_planes(a), to_planes(b)) - oracle::ssim(a, b)));

    cv::Mat p(16, 16, CV_8UC1), g(16, 16, CV_8UC1);
    for (int k = 0; k < 256; ++k) {
      p.data[k] = static_cast<std::uint8_t>(rng.uniform_int(0, kDefaultSegClasses - 1));
      g.data[k] = static_cast<std::uint8_t>(rng.uniform_int(0, kDefaultSegClasses - 1));
    }
    for (int label = 0; label < kDefaultSegClasses; ++label) dice_bad += dice(p, g, label) != oracle::dice(p, g, label);

    std::vector<float> plane(16 * 16);
    for (auto& v : plane) v = static_cast<float>(rng.uniform_int(0, 20));  // ties are common
    argmax_bad += heatmap_argmax(plane.data(), 16, 16) != oracle::argmax(plane, 16, 16);
  }
  return {psnr_err <= 1e-9 && ssim_err <= 1e-6 && dice_bad == 0 && argmax_bad == 0,
          fmt("50 pairs: max PSNR error %.3g dB (<= 1e-9), max SSIM error %.3g (<= 1e-6), Dice mismatches %d, argmax "
              "mismatches %d",
              psnr_err, ssim_err, dice_bad, argmax_bad)};
}

// ---------------------------------------------------------------------------
// 5. default loss weights

Outcome weight_defaults() {
  struct Row {
    const char* tasks;
    std::map<Task, double> adv, rec;
  };
  const Task i = Task::inpaint, s = Task::segment, d = Task::detect;
  const std::vector<Row> table{
      {"i", {{i, 1.0}}, {{i, 100}}},
      {"s", {{s, 1.0}}, {{s, 1000}}},
      {"d", {{d, 1.0}}, {{d, 1000}}},
      {"i,s", {{i, 0.8}, {s, 0.2}}, {{i, 100}, {s, 200}}},
      {"i,d", {{i, 0.8}, {d, 0.2}}, {{i, 100}, {d, 200}}},
      {"s,d", {{s, 0.5}, {d, 0.5}}, {{s, 200}, {d, 200}}},
      {"i,s,d", {{i, 0.8}, {s, 0.1}, {d, 0.1}}, {{i, 100}, {s, 200}, {d, 200}}},
  };
  int bad = 0;
  std::string which;
  for (const auto& row : table) {
    const LossWeights w = default_weights(TaskSet::parse(row.tasks));
    if (w.adv != row.adv || w.rec != row.rec) ++bad, which += std::string(" ") + row.tasks;
  }
  return {bad == 0, fmt("7 task subsets, %d differ from the table%s", bad, which.c_str())};
}

// ---------------------------------------------------------------------------
// 6. shapes and parameter counts

Outcome architecture() {
  Generator<float> g(GeneratorConfig{});
  Rng rng(61);
  g.reset(rng);
  g.set_training(false);
  const auto out = g.forward(random_tensor(rng, {1, 3, 128, 128}));
  const bool bottleneck = g.encoder_side(g.config().depth()) == 1;
  const bool channels = out.shape() == std::vector<int>{1, 3 + kDefaultSegClasses + 5, 128, 128};
  bool maps = true, counts = g.parameter_count() == oracle::kDefaultGeneratorParams;
  const std::pair<int, std::size_t> discs[] = {
      {6, oracle::kDefaultDiscParams6}, {13, oracle::kDefaultDiscParams13}, {8, oracle::kDefaultDiscParams8}};
  for (auto [in, params] : discs) {
    Discriminator<float> d("disc", DiscriminatorConfig{in, {64, 128, 256, 512, 512}}, 128);
    d.reset(rng);
    d.set_training(false);
    counts = counts && d.parameter_count() == params;
    const auto map = d.forward(random_tensor(rng, {1, 3, 128, 128}), random_tensor(rng, {1, in - 3, 128, 128}));
    maps = maps && map.shape() == std::vector<int>{1, 1, 4, 4};
  }
  return {bottleneck && channels && maps && counts,
          fmt("bottleneck %dx%d, output channels %d (3+%d+5), realness maps 4x4: %s, parameter counts G %zu / D "
              "frozen values: %s",
              g.encoder_side(g.config().depth()), g.encoder_side(g.config().depth()), out.dim(1), kDefaultSegClasses,
              maps ? "yes" : "no", g.parameter_count(), counts ? "match" : "differ")};
}

// ---------------------------------------------------------------------------
// 7. heatmaps, one-hot segmentation, flip

Outcome targets_suite() {
  const int side = 64;
  int peak_bad = 0, onehot_bad = 0, flip_bad = 0;
  const auto samples = synthetic_samples(71, 100, side);
  for (const auto& s : samples) {
    const auto t = make_targets(s, kDefaultSegClasses, heatmap_sigma_for(side));
    for (int k = 0; k < kNumLandmarks; ++k) {
      const cv::Point p = heatmap_argmax(t.heatmaps.data() + static_cast<std::size_t>(k) * side * side, side, side);
      peak_bad += p != cv::Point(static_cast<int>(std::lround(s.landmarks[k].x)),
                                 static_cast<int>(std::lround(s.landmarks[k].y)));
    }
    for (int px = 0; px < side * side; ++px) {
      int ones = 0, hot = -1;
      for (int c = 0; c < kDefaultSegClasses; ++c) {
        const float v = t.segments[static_cast<std::size_t>(c) * side * side + px];
        if (v == 1.0f) ++ones, hot = c;
        else if (v != -1.0f) ones = 99;
      }
      onehot_bad += ones != 1 || hot != s.label_map.data[px];
    }
    onehot_bad += cv::countNonZero(channels_to_labelmap(t.segments) != s.label_map);

    const auto f = apply_augment(s, AugmentParams::flip_only());
    if (!f) {
      ++flip_bad;
      continue;
    }
    auto mirrored = [&](int from, int to) {
      return std::abs(f->landmarks[to].x - (side - 1 - s.landmarks[from].x)) < 1e-9 &&
             std::abs(f->landmarks[to].y - s.landmarks[from].y) < 1e-9;
    };
    flip_bad += !(mirrored(kLeftEye, kRightEye) && mirrored(kRightEye, kLeftEye) && mirrored(kNose, kNose) &&
                  mirrored(kLeftMouth, kRightMouth) && mirrored(kRightMouth, kLeftMouth));
  }
  return {peak_bad == 0 && onehot_bad == 0 && flip_bad == 0,
          fmt("100 samples: heatmap peaks off the landmark %d, non-one-hot pixels %d, flips without slot swap %d",
              peak_bad, onehot_bad, flip_bad)};
}

// ---------------------------------------------------------------------------
// 8-10. desk-scale runs

constexpr int kSide = 64, kImages = 16, kSteps = 500, kEvalEvery = 50;
constexpr std::uint64_t kRunSeed = 1, kDataSeed = 3, kEvalSeed = 99;

TrainConfig desk_config(const std::string& tasks) {
  TrainConfig cfg;
  cfg.tasks = TaskSet::parse(tasks);
  cfg.weights = default_weights(cfg.tasks);
  cfg.seed = kRunSeed;
  cfg.batch_size = 16;
  cfg.adam.lr = 2e-4;
  cfg.mask_kind = MaskKind::block;
  cfg.augment = false;
  cfg.generator.side = kSide;
  cfg.generator.enc_channels = {32, 64, 128, 128, 128, 128};
  cfg.disc_widths = {32, 64, 128, 128};
  return cfg;
}

const std::vector<FaceSample>& desk_images() {
  static const auto samples = synthetic_samples(kDataSeed, kImages, kSide);
  return samples;
}

EvalOptions desk_eval(const TrainConfig& cfg) {
  EvalOptions opt;
  opt.masks.generated = MaskKind::block;
  opt.masks.seed = kEvalSeed;
  opt.noise_seed = kEvalSeed;
  opt.want_landmarks = cfg.tasks.contains(Task::detect);
  return opt;
}

// Mean |g_i - x| over occluded pixels of the evaluation masks (same masks and
// fill as desk_eval), inference-mode generator.
double masked_l1(Generator<float>& g) {
  const auto& samples = desk_images();
  std::vector<Tensor<float>> xs, ms, ts;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    Rng rng = Rng::derive(kEvalSeed, {s, 0});
    const BinaryMask m = gen_block_mask(rng, kSide, kSide / 2);
    Rng fill = Rng::derive(kEvalSeed, {s, 0, 0x6e6f697365ULL});
    xs.push_back(image_to_tensor(apply_mask(samples[s].image, m, MaskFill::noise, fill)));
    ms.push_back(mask_to_tensor(m));
    ts.push_back(image_to_tensor(samples[s].image));
  }
  const Tensor<float> x = stack(xs), m = stack(ms), t = stack(ts);
  g.set_training(false);
  const auto out = g.forward_split(x);
  double sum = 0;
  long n = 0;
  for (int i = 0; i < x.dim(0); ++i) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < kSide; ++y) {
        for (int xx = 0; xx < kSide; ++xx) {
          if (m.at(i, 0, y, xx) != 0) continue;
          sum += std::abs(out.image.at(i, c, y, xx) - t.at(i, c, y, xx));
          ++n;
        }
      }
    }
  }
  return sum / n;
}

struct CheckpointScore {
  long step;
  double l1, psnr, landmark;
};

struct DeskRun {
  std::vector<StepRecord> records;
  std::vector<CheckpointScore> scores;
  double seconds = 0;
};

DeskRun desk_run(const std::string& tasks, bool score) {
  const TrainConfig cfg = desk_config(tasks);
  const auto src = SampleSource::from_samples(desk_images());
  Trainer tr(cfg);
  DeskRun run;
  const auto t0 = std::chrono::steady_clock::now();
  for (long step = 0; step <= kSteps; ++step) {
    if (score && step % kEvalEvery == 0) {
      const auto rep = evaluate(generator_predictor(tr.generator()), desk_images(), cfg.tasks, desk_eval(cfg));
      const double l1 = cfg.tasks.contains(Task::inpaint) ? masked_l1(tr.generator()) : NAN;
      run.scores.push_back({step, l1, rep.per_site.begin()->second.psnr_db, rep.landmark_average});
      std::fprintf(stderr, "  [%s] step %3ld  masked L1 %.4f  PSNR %.3f dB  landmark %.3f px  (%.0fs)\n", tasks.c_str(),
                   step, l1, run.scores.back().psnr, rep.landmark_average, seconds_since(t0));
    }
    if (step < kSteps) run.records.push_back(tr.train_step(batch_for_step(cfg, src, step)));
  }
  run.seconds = seconds_since(t0);
  return run;
}

const DeskRun& inpaint_run() {
  static const DeskRun run = desk_run("i", true);
  return run;
}

Outcome overfit() {
  const DeskRun& run = inpaint_run();
  const auto& sc = run.scores;
  const double ratio = sc.back().l1 / sc.front().l1;
  int drops = 0;
  std::string curve;
  for (std::size_t k = 0; k < sc.size(); ++k) {
    if (k > 0 && sc[k].psnr <= sc[k - 1].psnr) ++drops;
    curve += fmt("%s%.2f", k ? " " : "", sc[k].psnr);
  }
  const bool fast = run.seconds <= 3600;
  return {ratio <= 0.5 && drops <= 1 && fast,
          fmt("masked L1 %.4f -> %.4f (ratio %.3f, <= 0.5); PSNR every %d steps [%s] with %d non-increasing "
              "checkpoint(s) (<= 1); %.0f s (<= 3600)",
              sc.front().l1, sc.back().l1, ratio, kEvalEvery, curve.c_str(), drops, run.seconds)};
}

Outcome collaboration() {
  const DeskRun with = desk_run("i,d", true);
  const DeskRun alone = desk_run("d", true);
  const double a = with.scores.back().landmark, b = alone.scores.back().landmark;
  return {a < b, fmt("mean landmark error on the training images after %d steps: M_{i,d} %.3f px vs M_d %.3f px "
                     "(%+.1f%%)",
                     kSteps, a, b, 100.0 * (a - b) / b)};
}

Outcome determinism() {
  const DeskRun& first = inpaint_run();
  const DeskRun second = desk_run("i", false);
  double worst = 0;
  std::size_t compared = 0;
  bool shape_ok = first.records.size() == second.records.size();
  for (std::size_t k = 0; shape_ok && k < first.records.size(); ++k) {
    const auto &a = first.records[k], &b = second.records[k];
    shape_ok = a.step == b.step && a.generator.terms.size() == b.generator.terms.size() &&
               a.discriminator.size() == b.discriminator.size();
    if (!shape_ok) break;
    worst = std::max(worst, std::abs(a.generator.total - b.generator.total));
    for (std::size_t j = 0; j < a.generator.terms.size(); ++j) {
      worst = std::max(worst, std::abs(a.generator.terms[j].value - b.generator.terms[j].value));
      ++compared;
    }
    for (const auto& [t, v] : a.discriminator) {
      worst = std::max(worst, std::abs(v - b.discriminator.at(t)));
      ++compared;
    }
  }
  return {shape_ok && worst <= 1e-6,
          fmt("%zu logged values over %zu steps, max difference %.3g (<= 1e-6)", compared, first.records.size(), worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"concentrated loss blind to visible pixels", concentration_gradient},
      {"composition identities", composition_identities},
      {"mask statistics", mask_statistics},
      {"metric oracles", metric_oracles},
      {"default loss weights", weight_defaults},
      {"shapes and parameter counts", architecture},
      {"heatmap / one-hot / flip", targets_suite},
      {"desk-scale overfit", overfit},
      {"collaboration smoke test", collaboration},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int a = 1; a < argc; ++a) selected.insert(std::atoi(argv[a]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first,
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
