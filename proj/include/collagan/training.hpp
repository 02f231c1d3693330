#pragma once

// Alternating discriminator / generator optimization over a task set.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "collagan/adam.hpp"
#include "collagan/checkpoint.hpp"
#include "collagan/data_pipeline.hpp"
#include "collagan/errors.hpp"
#include "collagan/evaluation.hpp"
#include "collagan/losses.hpp"
#include "collagan/masks.hpp"
#include "collagan/model.hpp"
#include "collagan/rng.hpp"
#include "collagan/tasks.hpp"

namespace collagan {

/// Loss weights for a task set:
///   one task:    adv = 1.0;             rec = 100 (i), 1000 (s, d)
///   two tasks:   adv = 0.8 (i), 0.2;    rec = 100 (i), 200 (s, d)
///   three tasks: adv = 0.8, 0.1, 0.1;   rec = 100, 200, 200
/// A two-task set without inpainting has no published setting; its
/// adversarial weights are split evenly.
inline LossWeights default_weights(const TaskSet& tasks) {
  if (tasks.empty()) throw ConfigError("default_weights: empty task set");
  LossWeights w;
  const int n = tasks.size();
  for (Task t : tasks.tasks()) {
    if (n == 1) {
      w.adv[t] = 1.0;
      w.rec[t] = t == Task::inpaint ? 100.0 : 1000.0;
    } else {
      w.rec[t] = t == Task::inpaint ? 100.0 : 200.0;
      if (n == 2) {
        w.adv[t] = tasks.contains(Task::inpaint) ? (t == Task::inpaint ? 0.8 : 0.2) : 0.5;
      } else {
        w.adv[t] = t == Task::inpaint ? 0.8 : 0.1;
      }
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  TaskSet tasks{Task::inpaint};
  bool concentrated = false;
  int epochs = 20;
  AdamConfig adam{};
  int batch_size = 16;
  MaskKind mask_kind = MaskKind::block;
  std::uint64_t seed = 0;
  LossWeights weights = default_weights(TaskSet{Task::inpaint});

  GeneratorConfig generator{};
  std::vector<int> disc_widths{64, 128, 256, 512, 512};
  int block_size = 0;  // 0: S / 2 (64 at S = 128)
  double pattern_fraction = 0.25;
  double noise_fraction = 0.80;
  bool augment = true;
  double heatmap_sigma = 0;  // 0: 2 px scaled with S
  bool use_val = true;

  int side() const { return generator.side; }
  int seg_classes() const { return generator.seg_classes; }
  int effective_block() const { return block_size > 0 ? block_size : side() / 2; }
  double effective_sigma() const { return heatmap_sigma > 0 ? heatmap_sigma : heatmap_sigma_for(side()); }

  void validate() const {
    if (tasks.empty()) throw ConfigError("tasks must not be empty");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(adam.lr > 0)) throw ConfigError("lr must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    generator.validate();
    weights.validate(tasks);
  }
};

namespace detail {

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + v + "' is not a list of integers");
    }
  }
  return out;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (is.fail() || !is.eof()) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace detail

inline const std::set<std::string>& required_config_keys() {
  static const std::set<std::string> keys{"tasks", "mask_kind", "seed"};
  return keys;
}

/// Parses flat `key = value` text ('#' starts a comment). `tasks`,
/// `mask_kind` and `seed` are required; every other key has a default.
/// Loss weights default from the task set and may be overridden per key
/// (lambda_adv_i, lambda_rec_s, ...).
inline TrainConfig parse_train_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  for (const auto& key : required_config_keys()) {
    if (!kv.contains(key)) throw ConfigError("missing required config key '" + key + "'");
  }
  TrainConfig cfg;
  cfg.tasks = TaskSet::parse(kv.at("tasks"));
  cfg.weights = default_weights(cfg.tasks);
  for (const auto& [key, v] : kv) {
    if (key == "tasks") continue;
    if (key == "concentrated") cfg.concentrated = detail::parse_bool(key, v);
    else if (key == "epochs") cfg.epochs = detail::parse_number<int>(key, v);
    else if (key == "lr") cfg.adam.lr = detail::parse_number<double>(key, v);
    else if (key == "beta1") cfg.adam.beta1 = detail::parse_number<double>(key, v);
    else if (key == "beta2") cfg.adam.beta2 = detail::parse_number<double>(key, v);
    else if (key == "batch_size") cfg.batch_size = detail::parse_number<int>(key, v);
    else if (key == "mask_kind") cfg.mask_kind = parse_mask_kind(v);
    else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(key, v);
    else if (key == "resolution") cfg.generator.side = detail::parse_number<int>(key, v);
    else if (key == "seg_classes") cfg.generator.seg_classes = detail::parse_number<int>(key, v);
    else if (key == "enc_channels") cfg.generator.enc_channels = detail::parse_int_list(key, v);
    else if (key == "skip") cfg.generator.skip = detail::parse_bool(key, v);
    else if (key == "disc_widths") cfg.disc_widths = detail::parse_int_list(key, v);
    else if (key == "block_size") cfg.block_size = detail::parse_number<int>(key, v);
    else if (key == "pattern_fraction") cfg.pattern_fraction = detail::parse_number<double>(key, v);
    else if (key == "noise_fraction") cfg.noise_fraction = detail::parse_number<double>(key, v);
    else if (key == "augment") cfg.augment = detail::parse_bool(key, v);
    else if (key == "heatmap_sigma") cfg.heatmap_sigma = detail::parse_number<double>(key, v);
    else if (key == "validate") cfg.use_val = detail::parse_bool(key, v);
    else if (key.rfind("lambda_adv_", 0) == 0 || key.rfind("lambda_rec_", 0) == 0) {
      if (key.size() != 12) throw ConfigError("unknown config key '" + key + "'");
      const Task t = task_from_code(key.back());
      if (!cfg.tasks.contains(t)) throw ConfigError("config key '" + key + "' names an inactive task");
      auto& table = key[7] == 'a' ? cfg.weights.adv : cfg.weights.rec;
      table[t] = detail::parse_number<double>(key, v);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

/// Flat key-value echo; parse_train_config(to_config_text(c)) reproduces c.
inline std::string to_config_text(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "tasks = " << c.tasks.to_string() << "\n"
     << "concentrated = " << (c.concentrated ? "true" : "false") << "\n"
     << "epochs = " << c.epochs << "\n"
     << "lr = " << c.adam.lr << "\n"
     << "beta1 = " << c.adam.beta1 << "\n"
     << "beta2 = " << c.adam.beta2 << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "mask_kind = " << to_string(c.mask_kind) << "\n"
     << "seed = " << c.seed << "\n"
     << "resolution = " << c.generator.side << "\n"
     << "seg_classes = " << c.generator.seg_classes << "\n"
     << "enc_channels = " << detail::join_ints(c.generator.enc_channels) << "\n"
     << "skip = " << (c.generator.skip ? "true" : "false") << "\n"
     << "disc_widths = " << detail::join_ints(c.disc_widths) << "\n"
     << "block_size = " << c.block_size << "\n"
     << "pattern_fraction = " << c.pattern_fraction << "\n"
     << "noise_fraction = " << c.noise_fraction << "\n"
     << "augment = " << (c.augment ? "true" : "false") << "\n"
     << "heatmap_sigma = " << c.heatmap_sigma << "\n"
     << "validate = " << (c.use_val ? "true" : "false") << "\n";
  for (Task t : c.tasks.tasks()) {
    os << "lambda_adv_" << task_code(t) << " = " << c.weights.adv.at(t) << "\n";
    os << "lambda_rec_" << task_code(t) << " = " << c.weights.rec.at(t) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Batches

struct Batch {
  Tensor<float> x;     // N x 3 x S x S masked input
  Tensor<float> mask;  // N x 1 x S x S
  TaskTensors<float> targets;
};

inline BinaryMask draw_mask(const TrainConfig& cfg, Rng& rng) {
  switch (cfg.mask_kind) {
    case MaskKind::block: return gen_block_mask(rng, cfg.side(), cfg.effective_block());
    case MaskKind::pattern: return gen_pattern_mask(rng, cfg.side(), cfg.pattern_fraction);
    case MaskKind::noise: return gen_noise_mask(rng, cfg.side(), cfg.noise_fraction);
    case MaskKind::eval_site: break;
  }
  throw ConfigError("mask_kind must be block, pattern or noise");
}

/// Masks each sample with its own mask, filling per the mask kind.
inline Batch make_batch(const std::vector<FaceSample>& samples, const std::vector<BinaryMask>& masks, int seg_classes,
                        double sigma, Rng& rng) {
  if (samples.size() != masks.size() || samples.empty()) throw std::invalid_argument("make_batch: size mismatch");
  std::vector<Tensor<float>> xs, ms, yi, ys, yd;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto targets = make_targets(samples[k], seg_classes, sigma);
    xs.push_back(image_to_tensor(apply_mask(samples[k].image, masks[k], default_fill(masks[k].kind), rng)));
    ms.push_back(mask_to_tensor(masks[k]));
    yi.push_back(targets.image);
    ys.push_back(targets.segments);
    yd.push_back(targets.heatmaps);
  }
  return {stack(xs), stack(ms), {stack(yi), stack(ys), stack(yd)}};
}

// ---------------------------------------------------------------------------
// Trainer

struct StepRecord {
  long step = 0;
  GeneratorLoss generator;
  std::map<Task, double> discriminator;
};

inline int task_channels(Task t, int seg_classes) {
  return t == Task::inpaint ? kImageChannels : t == Task::segment ? seg_classes : kNumLandmarks;
}

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg)
      : cfg_(std::move(cfg)), gen_(std::make_unique<Generator<float>>(cfg_.generator)) {
    cfg_.validate();
    Rng init = Rng::derive(cfg_.seed, {0x696e6974ULL});
    gen_->reset(init);
    for (Task t : cfg_.tasks.tasks()) {
      DiscriminatorConfig dc{kImageChannels + task_channels(t, cfg_.seg_classes()), cfg_.disc_widths};
      auto d = std::make_unique<Discriminator<float>>(std::string("disc_") + task_code(t), dc, cfg_.side());
      d->reset(init);
      discs_.emplace(t, std::move(d));
    }
    gen_opt_ = std::make_unique<Adam<float>>(gen_->parameters(), cfg_.adam);
    for (auto& [t, d] : discs_) disc_opt_.emplace(t, std::make_unique<Adam<float>>(d->parameters(), cfg_.adam));
  }

  const TrainConfig& config() const { return cfg_; }
  Generator<float>& generator() { return *gen_; }
  Discriminator<float>& discriminator(Task t) { return *discs_.at(t); }
  long step() const { return step_; }

  /// Candidate fed to D_t: the composed image for inpainting in concentrated
  /// mode, otherwise the raw task output.
  Tensor<float> fake_for(Task t, const GeneratorOutput<float>& out, const Batch& b) const {
    if (t == Task::inpaint && cfg_.concentrated) return compose_inpaint(out.image, b.x, b.mask);
    return out.of(t);
  }

  /// One discriminator update per active task on (real pair, fake pair). The
  /// fake candidates are plain tensors, so nothing flows back into G.
  std::map<Task, double> update_discriminators(const Batch& b, const GeneratorOutput<float>& out) {
    std::map<Task, double> losses;
    for (auto& [t, d] : discs_) {
      d->set_training(true);
      d->set_trainable(true);
      zero_grad(d->parameters());
      const Tensor<float> real = d->forward(b.x, b.targets.of(t));
      Tensor<float> d_real(real.shape());
      const double lr = bce_real_term(real, &d_real);
      d->backward(d_real, false);
      const Tensor<float> fake = d->forward(b.x, fake_for(t, out, b));
      Tensor<float> d_fake(fake.shape());
      const double lf = bce_fake_term(fake, &d_fake);
      d->backward(d_fake, false);
      check_finite(lr + lf, t, "disc");
      disc_opt_.at(t)->step();
      losses[t] = lr + lf;
    }
    return losses;
  }

  /// Total generator objective for given outputs; updates nothing.
  GeneratorLoss generator_objective(const Batch& b, const GeneratorOutput<float>& out,
                                    GeneratorLossGrads<float>* grads = nullptr) {
    std::map<Task, Tensor<float>> fake_maps;
    for (auto& [t, d] : discs_) {
      d->set_training(true);
      d->set_trainable(false);
      fake_maps[t] = d->forward(b.x, fake_for(t, out, b));
    }
    for (auto& [t, d] : discs_) d->set_trainable(true);
    return total_generator_loss(out, b.targets, b.x, b.mask, cfg_.weights, cfg_.tasks, cfg_.concentrated, fake_maps,
                                grads);
  }

  /// Generator update on the total objective; discriminators are frozen and
  /// only relay input gradients.
  GeneratorLoss update_generator(const Batch& b, const GeneratorOutput<float>& out) {
    GeneratorLossGrads<float> grads;
    const GeneratorLoss loss = generator_objective(b, out, &grads);
    for (auto& [t, d] : discs_) d->set_trainable(false);
    for (const auto& term : loss.terms) check_finite(term.value, term.task, term.term);
    GeneratorOutput<float> dout{Tensor<float>(out.image.shape()), Tensor<float>(out.segments.shape()),
                                Tensor<float>(out.heatmaps.shape())};
    for (Task t : cfg_.tasks.tasks()) {
      Tensor<float>& acc = dout.of(t);
      const Tensor<float>& rec = grads.outputs.of(t);
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += rec[k];
      Tensor<float> adv = discs_.at(t)->backward(grads.fake_maps.at(t), true);
      if (t == Task::inpaint && cfg_.concentrated) mask_occluded_only(adv, b.mask);
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += adv[k];
    }
    for (auto& [t, d] : discs_) d->set_trainable(true);
    zero_grad(gen_->parameters());
    gen_->backward(join_output(dout));
    gen_opt_->step();
    return loss;
  }

  StepRecord train_step(const Batch& b) {
    gen_->set_training(true);
    const GeneratorOutput<float> out = gen_->forward_split(b.x);
    StepRecord rec;
    rec.discriminator = update_discriminators(b, out);
    rec.generator = update_generator(b, out);
    rec.step = ++step_;
    return rec;
  }

  // -- checkpointing -------------------------------------------------------

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    ck.meta["format"] = "collagan-checkpoint";
    ck.meta["step"] = step_;
    ck.meta["config"] = to_config_text(cfg_);
    ck.meta["tasks"] = cfg_.tasks.to_string();
    auto add_module = [&](auto& module, Adam<float>& opt, const std::string& prefix) {
      for (auto* p : module.parameters()) ck.tensors[p->name] = p->value;
      for (auto& b : module.buffers()) ck.tensors[b.name] = *b.value;
      const auto& params = opt.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        ck.tensors["adam." + params[i]->name + ".m"] = opt.first_moments()[i];
        ck.tensors["adam." + params[i]->name + ".v"] = opt.second_moments()[i];
      }
      ck.meta["adam_steps"][prefix] = opt.steps();
    };
    add_module(*gen_, *gen_opt_, "gen");
    for (auto& [t, d] : discs_) add_module(*d, *disc_opt_.at(t), d->name());
    return ck;
  }

  static Trainer from_checkpoint(const Checkpoint& ck) {
    Trainer tr(parse_train_config(ck.meta.at("config").get<std::string>()));
    tr.step_ = ck.meta.at("step").get<long>();
    auto restore = [&](auto& module, Adam<float>& opt, const std::string& prefix) {
      for (auto* p : module.parameters()) p->value = ck.tensor(p->name);
      for (auto& b : module.buffers()) *b.value = ck.tensor(b.name);
      const auto& params = opt.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        opt.first_moments()[i] = ck.tensor("adam." + params[i]->name + ".m");
        opt.second_moments()[i] = ck.tensor("adam." + params[i]->name + ".v");
      }
      opt.set_steps(ck.meta.at("adam_steps").at(prefix).get<long>());
    };
    restore(*tr.gen_, *tr.gen_opt_, "gen");
    for (auto& [t, d] : tr.discs_) restore(*d, *tr.disc_opt_.at(t), d->name());
    return tr;
  }

 private:
  static void check_finite(double v, Task t, const std::string& term) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("non-finite loss: task " + std::string(1, task_code(t)) + " term " + term + " = " +
                               std::to_string(v));
    }
  }

  TrainConfig cfg_;
  std::unique_ptr<Generator<float>> gen_;  // heap-held: optimizers keep parameter pointers
  std::map<Task, std::unique_ptr<Discriminator<float>>> discs_;
  std::unique_ptr<Adam<float>> gen_opt_;
  std::map<Task, std::unique_ptr<Adam<float>>> disc_opt_;
  long step_ = 0;
};

// ---------------------------------------------------------------------------
// Data feeding

/// Training images held in memory, cropped and augmented per step.
class SampleSource {
 public:
  SampleSource() = default;
  explicit SampleSource(std::vector<RawFace> raws) : raws_(std::move(raws)) {}
  static SampleSource from_samples(const std::vector<FaceSample>& samples) {
    std::vector<RawFace> raws;
    for (const auto& s : samples) raws.push_back({s.image, s.landmarks, s.label_map});
    return SampleSource(std::move(raws));
  }
  static SampleSource from_manifest(const DatasetManifest& m) {
    std::vector<RawFace> raws;
    raws.reserve(m.records.size());
    for (const auto& rec : m.records) raws.push_back(load_record(rec));
    return SampleSource(std::move(raws));
  }

  std::size_t size() const { return raws_.size(); }
  const RawFace& raw(std::size_t i) const { return raws_.at(i); }

  /// Deterministic sample for (index, stream); nullopt if no crop window fits.
  std::optional<FaceSample> sample(std::size_t i, int side, bool augment_on, Rng& rng) const {
    const auto& r = raws_.at(i);
    auto s = crop_face(r.image, r.landmarks, r.label_map, side, rng);
    if (!s) return std::nullopt;
    if (augment_on) return augment(*s, rng);
    return s;
  }

 private:
  std::vector<RawFace> raws_;
};

/// Sample indices of one epoch in a seed-determined order.
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, long epoch, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng = Rng::derive(seed, {0x65706f6368ULL, static_cast<std::uint64_t>(epoch)});
  rng.shuffle(idx.begin(), idx.end());
  return idx;
}

inline long steps_per_epoch(std::size_t n, int batch) { return static_cast<long>((n + batch - 1) / batch); }

/// Batch for a global step; everything random derives from (seed, step, slot).
inline Batch batch_for_step(const TrainConfig& cfg, const SampleSource& src, long step) {
  const long per_epoch = steps_per_epoch(src.size(), cfg.batch_size);
  const long epoch = step / per_epoch, within = step % per_epoch;
  const auto order = epoch_order(cfg.seed, epoch, src.size());
  std::vector<FaceSample> samples;
  std::vector<BinaryMask> masks;
  const std::size_t begin = static_cast<std::size_t>(within) * cfg.batch_size;
  const std::size_t end = std::min(src.size(), begin + static_cast<std::size_t>(cfg.batch_size));
  for (std::size_t j = begin; j < end; ++j) {
    Rng rng = Rng::derive(cfg.seed, {static_cast<std::uint64_t>(step), j});
    auto s = src.sample(order[j], cfg.side(), cfg.augment, rng);
    if (!s) {
      std::cerr << "warning: sample " << order[j] << " has no valid crop window; skipped\n";
      continue;
    }
    samples.push_back(std::move(*s));
    masks.push_back(draw_mask(cfg, rng));
  }
  if (samples.empty()) throw DataError("no usable samples in batch for step " + std::to_string(step));
  Rng fill = Rng::derive(cfg.seed, {static_cast<std::uint64_t>(step), 0x66696c6cULL});
  return make_batch(samples, masks, cfg.seg_classes(), cfg.effective_sigma(), fill);
}

/// Deterministic evaluation crops (no augmentation).
inline std::vector<FaceSample> eval_samples(const SampleSource& src, int side, std::uint64_t seed) {
  std::vector<FaceSample> out;
  for (std::size_t i = 0; i < src.size(); ++i) {
    Rng rng = Rng::derive(seed, {0x6576616cULL, i});
    if (auto s = src.sample(i, side, false, rng)) out.push_back(std::move(*s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full runs

/// Appends JSON lines and flushes after every record.
class JsonlLog {
 public:
  JsonlLog() = default;
  explicit JsonlLog(const std::filesystem::path& path, bool append = false)
      : out_(std::make_unique<std::ofstream>(path, append ? std::ios::app : std::ios::trunc)) {
    if (!*out_) throw DataError("cannot open log " + path.string());
  }
  void write(const nlohmann::json& j) {
    if (!out_) return;
    *out_ << j.dump() << '\n';
    out_->flush();
  }

 private:
  std::unique_ptr<std::ofstream> out_;
};

inline void log_step(JsonlLog& log, const StepRecord& r) {
  for (const auto& term : r.generator.terms) {
    log.write({{"step", r.step}, {"task", std::string(1, task_code(term.task))}, {"term", term.term}, {"value", term.value}});
  }
  log.write({{"step", r.step}, {"task", "all"}, {"term", "generator_total"}, {"value", r.generator.total}});
  for (const auto& [t, v] : r.discriminator) {
    log.write({{"step", r.step}, {"task", std::string(1, task_code(t))}, {"term", "disc"}, {"value", v}});
  }
}

inline EvalOptions validation_options(const TrainConfig& cfg) {
  EvalOptions opt;
  opt.want_dice = cfg.tasks.contains(Task::segment);
  opt.want_landmarks = cfg.tasks.contains(Task::detect);
  opt.seg_classes = cfg.seg_classes();
  opt.noise_seed = cfg.seed;
  return opt;
}

struct TrainResult {
  std::filesystem::path last_checkpoint;
  long steps = 0;
  std::vector<StepRecord> records;
};

/// Runs cfg.epochs epochs from the trainer's current step, writing
/// `train_log.jsonl`, `val_log.jsonl`, `epoch_<e>.ckpt` and `last.ckpt` under out_dir.
inline TrainResult run_training(Trainer& trainer, const SampleSource& train_src, const SampleSource* val_src,
                                const std::filesystem::path& out_dir, bool keep_records = false) {
  const TrainConfig& cfg = trainer.config();
  std::filesystem::create_directories(out_dir);
  const bool resuming = trainer.step() > 0;
  JsonlLog train_log(out_dir / "train_log.jsonl", resuming);
  JsonlLog val_log(out_dir / "val_log.jsonl", resuming);
  const long per_epoch = steps_per_epoch(train_src.size(), cfg.batch_size);
  const long total = per_epoch * cfg.epochs;
  std::vector<FaceSample> val;
  if (val_src && cfg.use_val) val = eval_samples(*val_src, cfg.side(), cfg.seed);
  TrainResult result;
  while (trainer.step() < total) {
    const StepRecord rec = trainer.train_step(batch_for_step(cfg, train_src, trainer.step()));
    log_step(train_log, rec);
    if (keep_records) result.records.push_back(rec);
    if (trainer.step() % per_epoch == 0) {
      const long epoch = trainer.step() / per_epoch;
      Checkpoint ck = trainer.to_checkpoint();
      ck.meta["epoch"] = epoch;
      const auto path = out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
      save_checkpoint(path, ck);
      save_checkpoint(out_dir / "last.ckpt", ck);
      result.last_checkpoint = out_dir / "last.ckpt";
      if (!val.empty()) {
        const auto report = evaluate(generator_predictor(trainer.generator()), val, cfg.tasks, validation_options(cfg));
        nlohmann::json j = report_to_json(report);
        j["epoch"] = epoch;
        j["step"] = trainer.step();
        val_log.write(j);
      }
    }
  }
  result.steps = trainer.step();
  return result;
}

}  // namespace collagan
