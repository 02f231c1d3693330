#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "collagan/cli.hpp"

using namespace collagan;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "collagan");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Every failure ends in exactly one machine-readable line.
void expect_error_line(const Result& r, int code) {
  EXPECT_EQ(r.code, code) << r.err;
  ASSERT_FALSE(r.err.empty());
  std::string last = r.err.substr(0, r.err.size() - 1);
  last = last.substr(last.rfind('\n') + 1);
  EXPECT_EQ(last.rfind("error code=" + std::to_string(code) + " kind=", 0), 0u) << last;
  EXPECT_NE(last.find(" reason=\""), std::string::npos) << last;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[e.path().string()] = slurp(e.path());
  }
  return files;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("collagan_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ASSERT_EQ(run({"make-synthetic", "--out", data().string(), "--seed", "5", "--train", "4", "--val", "1", "--test",
                   "1", "--size", "40"})
                  .code,
              0);
    write(dir_ / "tiny.cfg",
          "tasks = i,d\nmask_kind = block\nseed = 3\nresolution = 32\nenc_channels = 4,8,8,8,8\n"
          "disc_widths = 4,8,8\nepochs = 1\nbatch_size = 4\nlr = 0.0002\n");
    const auto r = run({"train", "--config", (dir_ / "tiny.cfg").string(), "--data", data().string(), "--out",
                        (dir_ / "run").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }
  static fs::path data() { return dir_ / "data"; }
  static fs::path ckpt() { return dir_ / "run" / "last.ckpt"; }
  static fs::path fresh(const std::string& name) { return dir_ / name; }

  static fs::path dir_;
};
fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, UnknownFlagsAndCommandsAreUsageErrors) {
  expect_error_line(run({"gen-masks", "--out", fresh("x").string(), "--bogus", "1"}), 1);
  expect_error_line(run({"frobnicate"}), 1);
  expect_error_line(run({}), 1);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_NE(run({"train", "--help"}).out.find("--config"), std::string::npos);
}

TEST_F(Cli, PrepareCountsSplitsAndIsIdempotent) {
  const fs::path root = fresh("three");
  write_synthetic_dataset(root, 9, 1, 1, 1, SyntheticConfig{});
  const auto before = snapshot(root);
  const auto a = run({"prepare", "--root", root.string(), "--out", fresh("prep_a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, "train 1\nval 1\ntest 1\n");
  ASSERT_EQ(run({"prepare", "--root", root.string(), "--out", fresh("prep_b").string()}).code, 0);
  EXPECT_EQ(slurp(fresh("prep_a") / "manifest.json"), slurp(fresh("prep_b") / "manifest.json"));
  EXPECT_EQ(snapshot(root), before);  // inputs untouched
}

TEST_F(Cli, PrepareListsCorruptLabelMapByPath) {
  const fs::path root = fresh("corrupt");
  write_synthetic_dataset(root, 10, 2, 1, 1, SyntheticConfig{});
  const fs::path bad = label_path_for(root, "face_00001.png");
  write(bad, "not a png");
  const auto r = run({"prepare", "--root", root.string(), "--out", fresh("prep_c").string()});
  expect_error_line(r, 2);
  EXPECT_NE(r.err.find(bad.string()), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(fresh("prep_c") / "manifest.json"));
}

TEST_F(Cli, PrepareFailsOnEmptySplit) {
  const fs::path root = fresh("nosplit");
  write_synthetic_dataset(root, 11, 2, 1, 0, SyntheticConfig{});
  const auto r = run({"prepare", "--root", root.string(), "--out", fresh("prep_e").string()});
  expect_error_line(r, 2);
  EXPECT_NE(r.err.find("'test'"), std::string::npos) << r.err;
}

TEST_F(Cli, GenMasksNoiseFractionsRecountFromFiles) {
  const fs::path out = fresh("noise");
  const auto r = run({"gen-masks", "--kind", "noise", "--n", "100", "--size", "128", "--seed", "4", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(j.at("seed"), 4);
  EXPECT_EQ(j.at("kind"), "noise");
  EXPECT_DOUBLE_EQ(j.at("parameters").at("fraction").get<double>(), 0.80);
  ASSERT_EQ(j.at("masks").size(), 100u);
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(out)) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 100);
  // i.i.d. pixels: a single 128x128 draw leaves the band with p ~ 0.0014
  int inside = 0;
  double sum = 0;
  for (const auto& m : j.at("masks")) {
    const BinaryMask mask = load_mask_png(out / m.at("file").get<std::string>());
    const double frac = mask.occluded_fraction();
    EXPECT_DOUBLE_EQ(frac, m.at("occluded_fraction").get<double>());
    inside += std::abs(frac - 0.80) <= 0.01;
    sum += frac;
  }
  EXPECT_GE(inside, 99);
  EXPECT_NEAR(sum / 100, 0.80, 0.01);
  EXPECT_DOUBLE_EQ(j.at("mean_occluded_fraction").get<double>(), sum / 100);
  // same seed, same bytes
  ASSERT_EQ(run({"gen-masks", "--kind", "noise", "--n", "100", "--size", "128", "--seed", "4", "--out",
                 fresh("noise2").string()})
                .code,
            0);
  EXPECT_EQ(slurp(out / "mask_00042.png"), slurp(fresh("noise2") / "mask_00042.png"));
}

TEST_F(Cli, TrainReportsMissingConfigKey) {
  write(fresh("nokey.cfg"), "tasks = i\nseed = 1\n");
  const auto r = run({"train", "--config", fresh("nokey.cfg").string(), "--data", data().string(), "--out",
                      fresh("r").string()});
  expect_error_line(r, 1);
  EXPECT_NE(r.err.find("mask_kind"), std::string::npos) << r.err;
}

TEST_F(Cli, TrainWritesLogsAndCheckpoints) {
  EXPECT_TRUE(fs::exists(dir_ / "run" / "epoch_1.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "train_log.jsonl"));
  std::istringstream log(slurp(dir_ / "run" / "train_log.jsonl"));
  std::string line;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "task", "term", "value"}) EXPECT_TRUE(j.contains(key)) << line;
  }
}

TEST_F(Cli, EvalOnOneSampleWritesSchemaValidReport) {
  const fs::path out = fresh("eval");
  const auto r = run({"eval", "--checkpoint", ckpt().string(), "--data", data().string(), "--split", "test", "--sites",
                      "O1,O4", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(out / "report.json"));
  EXPECT_EQ(j.at("schema"), kReportSchema);
  EXPECT_EQ(j.at("samples"), 1);
  EXPECT_EQ(j.at("tasks"), "i,d");
  const auto& sites = j.at("sites");
  EXPECT_EQ(sites.size(), 2u);
  for (const char* s : {"O1", "O4"}) {
    EXPECT_TRUE(sites.at(s).at("psnr_db").is_number() || sites.at(s).at("psnr_db") == "inf");
    EXPECT_TRUE(sites.at(s).at("ssim_percent").is_number());
  }
  EXPECT_EQ(j.at("landmark_error_px").at("per_landmark").size(), 5u);
  EXPECT_FALSE(j.contains("dice_percent"));
  EXPECT_EQ(slurp(out / "sites.csv").rfind("site,ssim_percent,psnr_db\nO1,", 0), 0u);
  EXPECT_TRUE(fs::exists(out / "landmarks.csv"));
  EXPECT_FALSE(fs::exists(out / "dice.csv"));
  expect_error_line(run({"eval", "--checkpoint", ckpt().string(), "--data", data().string(), "--sites", "O9", "--out",
                         out.string()}),
                    1);
}

TEST_F(Cli, InpaintWithAllVisibleMaskReturnsTheInput) {
  // a 32x32 input needs no resizing, so the written pixels are the input's
  const fs::path img = fresh("face32.png");
  const auto samples = synthetic_samples(21, 1, 32);
  io::save_rgb(img, samples[0].image);
  const fs::path mask = fresh("ones.png");
  save_mask_png(mask, full_mask(32, 1));
  const auto r = run({"inpaint", "--checkpoint", ckpt().string(), "--image", img.string(), "--mask", mask.string(),
                      "--out", fresh("inp_ones").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const cv::Mat a = io::load_rgb(img), b = io::load_rgb(fresh("inp_ones") / "inpainted.png");
  EXPECT_EQ(cv::norm(a, b, cv::NORM_INF), 0.0);
}

TEST_F(Cli, InpaintIsDeterministicAndRejectsMissingMask) {
  const fs::path img = data() / "images" / "face_00000.png";
  const fs::path mask = fresh("block.png");
  Rng rng(2);
  save_mask_png(mask, gen_block_mask(rng, 32, 16));
  for (const char* out : {"inp_a", "inp_b"}) {
    ASSERT_EQ(run({"inpaint", "--checkpoint", ckpt().string(), "--image", img.string(), "--mask", mask.string(),
                   "--seed", "8", "--out", fresh(out).string(), "--overlays=landmarks"})
                  .code,
              0);
  }
  EXPECT_EQ(slurp(fresh("inp_a") / "inpainted.png"), slurp(fresh("inp_b") / "inpainted.png"));
  EXPECT_EQ(slurp(fresh("inp_a") / "landmarks.png"), slurp(fresh("inp_b") / "landmarks.png"));
  expect_error_line(run({"inpaint", "--checkpoint", ckpt().string(), "--image", img.string(), "--mask",
                         fresh("missing.png").string(), "--out", fresh("inp_c").string()}),
                    2);
}

TEST_F(Cli, SegmentationOverlayNeedsSegmentationTask) {
  const fs::path mask = fresh("ones_seg.png");
  save_mask_png(mask, full_mask(32, 1));
  const auto r = run({"inpaint", "--checkpoint", ckpt().string(), "--image",
                      (data() / "images" / "face_00000.png").string(), "--mask", mask.string(), "--out",
                      fresh("inp_seg").string(), "--overlays"});
  expect_error_line(r, 1);
  EXPECT_NE(r.err.find("needs task s"), std::string::npos) << r.err;
}
