#pragma once

// Shared encoder-decoder generator with skip connections and a single tanh
// head carrying all task channels, plus the per-task conditional
// discriminators.

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "collagan/nn.hpp"
#include "collagan/tasks.hpp"
#include "collagan/tensor.hpp"

namespace collagan {

inline constexpr int kNumLandmarks = 5;
inline constexpr int kImageChannels = 3;

struct GeneratorConfig {
  int side = 128;
  std::vector<int> enc_channels{64, 128, 256, 512, 512, 512, 512};
  int seg_classes = 10;
  bool skip = true;

  int depth() const { return static_cast<int>(enc_channels.size()); }
  int out_channels() const { return kImageChannels + seg_classes + kNumLandmarks; }

  void validate() const {
    if (enc_channels.empty()) throw std::invalid_argument("generator: enc_channels must not be empty");
    if (side <= 0 || (side >> depth()) < 1 || side % (1 << depth()) != 0) {
      throw std::invalid_argument("generator: side " + std::to_string(side) + " is not divisible by 2^" +
                                  std::to_string(depth()));
    }
    if (seg_classes < 2) throw std::invalid_argument("generator: seg_classes must be >= 2");
    for (int c : enc_channels) {
      if (c <= 0) throw std::invalid_argument("generator: channel widths must be positive");
    }
  }
};

struct DiscriminatorConfig {
  int in_channels = 6;
  std::vector<int> widths{64, 128, 256, 512, 512};

  void validate(int side) const {
    if (in_channels < 4) throw std::invalid_argument("discriminator: in_channels must be >= 4");
    if (widths.empty()) throw std::invalid_argument("discriminator: widths must not be empty");
    const int depth = static_cast<int>(widths.size());
    if (side <= 0 || (side >> depth) < 1 || side % (1 << depth) != 0) {
      throw std::invalid_argument("discriminator: side " + std::to_string(side) + " is not divisible by 2^" +
                                  std::to_string(depth));
    }
  }
};

/// Per-task tensors: generator outputs (all values in (-1, 1)) or the
/// matching supervision targets.
template <typename T>
struct TaskTensors {
  Tensor<T> image;     // N x 3 x S x S
  Tensor<T> segments;  // N x C_s x S x S
  Tensor<T> heatmaps;  // N x 5 x S x S

  Tensor<T>& of(Task t) { return t == Task::inpaint ? image : t == Task::segment ? segments : heatmaps; }
  const Tensor<T>& of(Task t) const {
    return t == Task::inpaint ? image : t == Task::segment ? segments : heatmaps;
  }
};

template <typename T>
using GeneratorOutput = TaskTensors<T>;

template <typename T>
GeneratorOutput<T> split_output(const Tensor<T>& stacked, int seg_classes) {
  if (stacked.dim(1) != kImageChannels + seg_classes + kNumLandmarks) {
    throw std::invalid_argument("split_output: unexpected channel count " + stacked.shape_string());
  }
  return {slice_channels(stacked, 0, kImageChannels), slice_channels(stacked, kImageChannels, seg_classes),
          slice_channels(stacked, kImageChannels + seg_classes, kNumLandmarks)};
}

template <typename T>
Tensor<T> join_output(const GeneratorOutput<T>& out) {
  return concat_channels(concat_channels(out.image, out.segments), out.heatmaps);
}

template <typename T>
class Generator {
 public:
  explicit Generator(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int depth = cfg_.depth();
    const auto& enc = cfg_.enc_channels;
    for (int k = 0; k < depth; ++k) {
      const std::string name = "gen.enc" + std::to_string(k + 1);
      enc_conv_.emplace_back(name + ".conv", k == 0 ? kImageChannels : enc[k - 1], enc[k], 4, 2, 1);
      enc_bn_.emplace_back(name + ".bn", enc[k]);
      enc_act_.emplace_back(T(0.2));
    }
    for (int k = 0; k < depth; ++k) {
      const std::string name = "gen.dec" + std::to_string(k + 1);
      const int in = (k == depth - 1 || !cfg_.skip) ? enc[k] : 2 * enc[k];
      const int out = k == 0 ? cfg_.out_channels() : enc[k - 1];
      dec_conv_.emplace_back(name + ".deconv", in, out, 4, 2, 1);
      dec_bn_.emplace_back(name + ".bn", out);
      dec_act_.push_back(nn::make_relu<T>());
    }
  }

  const GeneratorConfig& config() const { return cfg_; }

  void reset(Rng& rng) {
    for (int k = 0; k < depth(); ++k) {
      enc_conv_[k].reset(rng);
      dec_conv_[k].reset(rng);
      if (k > 0) {
        enc_bn_[k].reset(rng);
        dec_bn_[k].reset(rng);
      }
    }
  }

  /// Input-layer width of decoder layer k (0 = output layer).
  int decoder_input_channels(int k) const { return dec_conv_.at(k).in_channels(); }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != kImageChannels || x.dim(2) != cfg_.side || x.dim(3) != cfg_.side) {
      throw std::invalid_argument("generator: expected N x 3 x " + std::to_string(cfg_.side) + " x " +
                                  std::to_string(cfg_.side) + " input, got " + x.shape_string());
    }
    const int depth = this->depth();
    enc_out_.assign(depth, {});
    Tensor<T> h = x;
    for (int k = 0; k < depth; ++k) {
      h = enc_conv_[k].forward(h);
      if (k > 0) h = enc_bn_[k].forward(h);
      h = enc_act_[k].forward(h);
      enc_out_[k] = h;
    }
    Tensor<T> d = enc_out_[depth - 1];
    for (int k = depth - 1; k >= 0; --k) {
      if (k != depth - 1 && cfg_.skip) d = concat_channels(d, enc_out_[k]);
      d = dec_conv_[k].forward(d);
      if (k > 0) {
        d = dec_bn_[k].forward(d);
        d = dec_act_[k].forward(d);
      } else {
        d = head_.forward(d);
      }
    }
    return d;
  }

  GeneratorOutput<T> forward_split(const Tensor<T>& x) { return split_output(forward(x), cfg_.seg_classes); }

  /// Backpropagates d(loss)/d(output), accumulating parameter gradients.
  void backward(const Tensor<T>& dout) {
    const int depth = this->depth();
    std::vector<Tensor<T>> enc_grad(depth);
    Tensor<T> g = dout;
    for (int k = 0; k < depth; ++k) {
      if (k > 0) {
        g = dec_act_[k].backward(g);
        g = dec_bn_[k].backward(g);
      } else {
        g = head_.backward(g);
      }
      g = dec_conv_[k].backward(g);
      if (k != depth - 1 && cfg_.skip) {
        const int c = cfg_.enc_channels[k];
        enc_grad[k] = slice_channels(g, c, c);
        g = slice_channels(g, 0, c);
      }
    }
    for (int k = depth - 1; k >= 0; --k) {
      if (!enc_grad[k].empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += enc_grad[k][i];
      }
      g = enc_act_[k].backward(g);
      if (k > 0) g = enc_bn_[k].backward(g);
      g = enc_conv_[k].backward(g, k > 0);
    }
  }

  void set_training(bool on) {
    for (auto& bn : enc_bn_) bn.set_training(on);
    for (auto& bn : dec_bn_) bn.set_training(on);
  }

  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> out;
    for (int k = 0; k < depth(); ++k) {
      enc_conv_[k].parameters(out);
      if (k > 0) enc_bn_[k].parameters(out);
    }
    for (int k = depth() - 1; k >= 0; --k) {
      dec_conv_[k].parameters(out);
      if (k > 0) dec_bn_[k].parameters(out);
    }
    return out;
  }

  std::vector<nn::Buffer<T>> buffers() {
    std::vector<nn::Buffer<T>> out;
    for (int k = 1; k < depth(); ++k) enc_bn_[k].buffers(out);
    for (int k = depth() - 1; k >= 1; --k) dec_bn_[k].buffers(out);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  /// Spatial side of encoder activation k (1-based), for shape checks.
  int encoder_side(int k) const { return enc_out_.at(k - 1).dim(2); }
  const Tensor<T>& encoder_activation(int k) const { return enc_out_.at(k - 1); }

 private:
  int depth() const { return cfg_.depth(); }

  GeneratorConfig cfg_;
  std::vector<nn::Conv2d<T>> enc_conv_;
  std::vector<nn::BatchNorm2d<T>> enc_bn_;
  std::vector<nn::LeakyReLU<T>> enc_act_;
  std::vector<nn::ConvTranspose2d<T>> dec_conv_;
  std::vector<nn::BatchNorm2d<T>> dec_bn_;
  std::vector<nn::ReLU<T>> dec_act_;
  nn::Tanh<T> head_;
  std::vector<Tensor<T>> enc_out_;
};

/// Conditional patch discriminator scoring (condition image, task output) pairs.
template <typename T>
class Discriminator {
 public:
  Discriminator(std::string name, DiscriminatorConfig cfg, int side) : name_(std::move(name)), cfg_(std::move(cfg)) {
    cfg_.validate(side);
    for (std::size_t k = 0; k < cfg_.widths.size(); ++k) {
      const std::string layer = name_ + ".conv" + std::to_string(k + 1);
      conv_.emplace_back(layer, k == 0 ? cfg_.in_channels : cfg_.widths[k - 1], cfg_.widths[k], 4, 2, 1);
      bn_.emplace_back(name_ + ".bn" + std::to_string(k + 1), cfg_.widths[k]);
      act_.emplace_back(T(0.2));
    }
    score_ = nn::Conv2d<T>(name_ + ".score", cfg_.widths.back(), 1, 1, 1, 0);
  }

  const std::string& name() const { return name_; }
  const DiscriminatorConfig& config() const { return cfg_; }

  void reset(Rng& rng) {
    for (std::size_t k = 0; k < conv_.size(); ++k) {
      conv_[k].reset(rng);
      if (k > 0) bn_[k].reset(rng);
    }
    score_.reset(rng);
  }

  /// Realness map in (0, 1) for the channel concatenation of x and y.
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& y) {
    if (x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) || x.dim(3) != y.dim(3)) {
      throw std::invalid_argument(name_ + ": condition " + x.shape_string() + " and candidate " + y.shape_string() +
                                  " are not aligned");
    }
    if (x.dim(1) + y.dim(1) != cfg_.in_channels) {
      throw std::invalid_argument(name_ + ": expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                                  std::to_string(x.dim(1) + y.dim(1)));
    }
    cond_channels_ = x.dim(1);
    Tensor<T> h = concat_channels(x, y);
    for (std::size_t k = 0; k < conv_.size(); ++k) {
      h = conv_[k].forward(h);
      if (k > 0) h = bn_[k].forward(h);
      h = act_[k].forward(h);
    }
    return sigmoid_.forward(score_.forward(h));
  }

  /// Backpropagates d(loss)/d(map); returns the gradient w.r.t. the candidate y.
  Tensor<T> backward(const Tensor<T>& dmap, bool need_input_grad = true) {
    Tensor<T> g = score_.backward(sigmoid_.backward(dmap));
    for (int k = static_cast<int>(conv_.size()) - 1; k >= 0; --k) {
      g = act_[k].backward(g);
      if (k > 0) g = bn_[k].backward(g);
      g = conv_[k].backward(g, need_input_grad || k > 0);
    }
    if (!need_input_grad) return {};
    return slice_channels(g, cond_channels_, cfg_.in_channels - cond_channels_);
  }

  void set_training(bool on) {
    for (auto& bn : bn_) bn.set_training(on);
  }

  /// Frozen discriminators still propagate input gradients but leave their
  /// parameter gradients untouched.
  void set_trainable(bool on) {
    for (auto& c : conv_) c.set_trainable(on);
    for (auto& bn : bn_) bn.set_trainable(on);
    score_.set_trainable(on);
  }

  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> out;
    for (std::size_t k = 0; k < conv_.size(); ++k) {
      conv_[k].parameters(out);
      if (k > 0) bn_[k].parameters(out);
    }
    score_.parameters(out);
    return out;
  }

  std::vector<nn::Buffer<T>> buffers() {
    std::vector<nn::Buffer<T>> out;
    for (std::size_t k = 1; k < bn_.size(); ++k) bn_[k].buffers(out);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

 private:
  std::string name_;
  DiscriminatorConfig cfg_;
  std::vector<nn::Conv2d<T>> conv_;
  std::vector<nn::BatchNorm2d<T>> bn_;
  std::vector<nn::LeakyReLU<T>> act_;
  nn::Conv2d<T> score_;
  nn::Sigmoid<T> sigmoid_;
  int cond_channels_ = kImageChannels;
};

template <typename T>
void zero_grad(const std::vector<nn::Parameter<T>*>& params) {
  for (auto* p : params) p->grad.zero();
}

}  // namespace collagan
