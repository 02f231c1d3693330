#pragma once

// Minimal layer set for the generator and discriminators: strided convolution,
// transposed convolution, batch normalization and pointwise activations, each
// with an explicit backward pass.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "collagan/rng.hpp"
#include "collagan/tensor.hpp"

namespace collagan::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
};

/// Named non-trainable state (batch-norm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T>* value;
};

struct ConvGeometry {
  int channels, height, width;  // image side
  int kernel, stride, pad;
  int out_height, out_width;  // column side

  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_height * out_width; }
};

/// Unfolds one CHW image into a (C*k*k) x (Ho*Wo) matrix.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const int hw = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * static_cast<std::size_t>(hw);
        const T* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.out_width;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.out_width, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_width; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-and-adds columns back into a zeroed CHW image.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const int hw = g.cols();
  std::fill_n(img, static_cast<std::size_t>(g.channels) * g.height * g.width, T(0));
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * static_cast<std::size_t>(hw);
        T* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const T* src = row + oy * g.out_width;
          for (int ox = 0; ox < g.out_width; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void init_normal(Tensor<T>& t, Rng& rng, double mean, double stddev) {
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(mean, stddev));
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int kernel, int stride, int pad)
      : weight_(name + ".weight", {out, in, kernel, kernel}),
        bias_(name + ".bias", {out}),
        in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(pad) {}

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int output_side(int side) const { return (side + 2 * pad_ - kernel_) / stride_ + 1; }

  void reset(Rng& rng) {
    init_normal(weight_.value, rng, 0.0, 0.02);
    bias_.value.zero();
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != in_) {
      throw std::invalid_argument(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                                  x.shape_string());
    }
    input_ = x;
    const auto g = geometry(x);
    Tensor<T> y(x.dim(0), out_, g.out_height, g.out_width);
    std::vector<T> col(static_cast<std::size_t>(g.rows()) * g.cols());
    for (int n = 0; n < x.dim(0); ++n) {
      im2col(x.data() + n * x.stride0(), g, col.data());
      T* yn = y.data() + n * y.stride0();
      for (int o = 0; o < out_; ++o) std::fill_n(yn + o * g.cols(), g.cols(), bias_.value[o]);
      blas::gemm(false, false, out_, g.cols(), g.rows(), T(1), weight_.value.data(), col.data(), T(1), yn);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true) {
    const auto g = geometry(input_);
    Tensor<T> dx;
    if (need_input_grad) dx = Tensor<T>(input_.shape());
    std::vector<T> col(static_cast<std::size_t>(g.rows()) * g.cols());
    for (int n = 0; n < input_.dim(0); ++n) {
      const T* dyn = dy.data() + n * dy.stride0();
      if (trainable_) {
        im2col(input_.data() + n * input_.stride0(), g, col.data());
        blas::gemm(false, true, out_, g.rows(), g.cols(), T(1), dyn, col.data(), T(1), weight_.grad.data());
        for (int o = 0; o < out_; ++o) {
          T s = 0;
          for (int k = 0; k < g.cols(); ++k) s += dyn[o * g.cols() + k];
          bias_.grad[o] += s;
        }
      }
      if (need_input_grad) {
        blas::gemm(true, false, g.rows(), g.cols(), out_, T(1), weight_.value.data(), dyn, T(0), col.data());
        col2im(col.data(), g, dx.data() + n * dx.stride0());
      }
    }
    return dx;
  }

  void set_trainable(bool on) { trainable_ = on; }
  void parameters(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  std::size_t parameter_count() const { return weight_.value.size() + bias_.value.size(); }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  ConvGeometry geometry(const Tensor<T>& x) const {
    return {in_, x.dim(2), x.dim(3), kernel_, stride_, pad_, output_side(x.dim(2)), output_side(x.dim(3))};
  }

  Parameter<T> weight_, bias_;
  int in_ = 0, out_ = 0, kernel_ = 0, stride_ = 1, pad_ = 0;
  bool trainable_ = true;
  Tensor<T> input_;
};

/// Fractionally strided convolution; weight layout is (in, out, k, k).
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int in, int out, int kernel, int stride, int pad)
      : weight_(name + ".weight", {in, out, kernel, kernel}),
        bias_(name + ".bias", {out}),
        in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(pad) {}

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int output_side(int side) const { return (side - 1) * stride_ - 2 * pad_ + kernel_; }

  void reset(Rng& rng) {
    init_normal(weight_.value, rng, 0.0, 0.02);
    bias_.value.zero();
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != in_) {
      throw std::invalid_argument(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                                  x.shape_string());
    }
    input_ = x;
    const auto g = geometry(x);
    Tensor<T> y(x.dim(0), out_, g.height, g.width);
    std::vector<T> col(static_cast<std::size_t>(g.rows()) * g.cols());
    const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
    for (int n = 0; n < x.dim(0); ++n) {
      blas::gemm(true, false, g.rows(), g.cols(), in_, T(1), weight_.value.data(), x.data() + n * x.stride0(), T(0),
                 col.data());
      T* yn = y.data() + n * y.stride0();
      col2im(col.data(), g, yn);
      for (int o = 0; o < out_; ++o) {
        T* p = yn + o * plane;
        for (std::size_t k = 0; k < plane; ++k) p[k] += bias_.value[o];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true) {
    const auto g = geometry(input_);
    Tensor<T> dx;
    if (need_input_grad) dx = Tensor<T>(input_.shape());
    std::vector<T> col(static_cast<std::size_t>(g.rows()) * g.cols());
    const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
    for (int n = 0; n < input_.dim(0); ++n) {
      const T* dyn = dy.data() + n * dy.stride0();
      im2col(dyn, g, col.data());
      if (trainable_) {
        blas::gemm(false, true, in_, g.rows(), g.cols(), T(1), input_.data() + n * input_.stride0(), col.data(), T(1),
                   weight_.grad.data());
        for (int o = 0; o < out_; ++o) {
          T s = 0;
          for (std::size_t k = 0; k < plane; ++k) s += dyn[o * plane + k];
          bias_.grad[o] += s;
        }
      }
      if (need_input_grad) {
        blas::gemm(false, false, in_, g.cols(), g.rows(), T(1), weight_.value.data(), col.data(), T(0),
                   dx.data() + n * dx.stride0());
      }
    }
    return dx;
  }

  void set_trainable(bool on) { trainable_ = on; }
  void parameters(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  std::size_t parameter_count() const { return weight_.value.size() + bias_.value.size(); }

 private:
  // The "image" side of the unfold is the (larger) output; columns index input pixels.
  ConvGeometry geometry(const Tensor<T>& x) const {
    return {out_, output_side(x.dim(2)), output_side(x.dim(3)), kernel_, stride_, pad_, x.dim(2), x.dim(3)};
  }

  Parameter<T> weight_, bias_;
  int in_ = 0, out_ = 0, kernel_ = 0, stride_ = 1, pad_ = 0;
  bool trainable_ = true;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels, double momentum = 0.1, double eps = 1e-5)
      : gamma_(name + ".gamma", {channels}),
        beta_(name + ".beta", {channels}),
        running_mean_({channels}, T(0)),
        running_var_({channels}, T(1)),
        name_(name), channels_(channels), momentum_(momentum), eps_(eps) {
    gamma_.value.fill(T(1));
  }

  void reset(Rng& rng) {
    init_normal(gamma_.value, rng, 1.0, 0.02);
    beta_.value.zero();
    running_mean_.fill(T(0));
    running_var_.fill(T(1));
  }

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.dim(1) != channels_) throw std::invalid_argument(name_ + ": channel mismatch " + x.shape_string());
    const int n = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const double m = static_cast<double>(n) * plane;
    Tensor<T> y(x.shape());
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(channels_, T(0));
    for (int c = 0; c < channels_; ++c) {
      double mean, var;
      if (training_) {
        double s = 0;
        for (int i = 0; i < n; ++i) {
          const T* p = x.data() + x.offset(i, c, 0, 0);
          for (std::size_t k = 0; k < plane; ++k) s += p[k];
        }
        mean = s / m;
        double ss = 0;
        for (int i = 0; i < n; ++i) {
          const T* p = x.data() + x.offset(i, c, 0, 0);
          for (std::size_t k = 0; k < plane; ++k) ss += (p[k] - mean) * (p[k] - mean);
        }
        var = ss / m;
        const double unbiased = m > 1 ? ss / (m - 1) : var;
        running_mean_[c] = static_cast<T>((1 - momentum_) * running_mean_[c] + momentum_ * mean);
        running_var_[c] = static_cast<T>((1 - momentum_) * running_var_[c] + momentum_ * unbiased);
      } else {
        mean = running_mean_[c];
        var = running_var_[c];
      }
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[c] = static_cast<T>(inv);
      const T g = gamma_.value[c], b = beta_.value[c];
      for (int i = 0; i < n; ++i) {
        const std::size_t off = x.offset(i, c, 0, 0);
        for (std::size_t k = 0; k < plane; ++k) {
          const T h = static_cast<T>((x[off + k] - mean) * inv);
          xhat_[off + k] = h;
          y[off + k] = g * h + b;
        }
      }
    }
    batch_stats_ = training_;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int n = dy.dim(0);
    const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
    const double m = static_cast<double>(n) * plane;
    Tensor<T> dx(dy.shape());
    for (int c = 0; c < channels_; ++c) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int i = 0; i < n; ++i) {
        const std::size_t off = dy.offset(i, c, 0, 0);
        for (std::size_t k = 0; k < plane; ++k) {
          sum_dy += dy[off + k];
          sum_dy_xhat += static_cast<double>(dy[off + k]) * xhat_[off + k];
        }
      }
      if (trainable_) {
        gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
        beta_.grad[c] += static_cast<T>(sum_dy);
      }
      const double g = gamma_.value[c], inv = inv_std_[c];
      for (int i = 0; i < n; ++i) {
        const std::size_t off = dy.offset(i, c, 0, 0);
        for (std::size_t k = 0; k < plane; ++k) {
          if (batch_stats_) {
            dx[off + k] = static_cast<T>(g * inv / m * (m * dy[off + k] - sum_dy - xhat_[off + k] * sum_dy_xhat));
          } else {
            dx[off + k] = static_cast<T>(g * inv * dy[off + k]);
          }
        }
      }
    }
    return dx;
  }

  void set_trainable(bool on) { trainable_ = on; }
  void parameters(std::vector<Parameter<T>*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void buffers(std::vector<Buffer<T>>& out) {
    out.push_back({name_ + ".running_mean", &running_mean_});
    out.push_back({name_ + ".running_var", &running_var_});
  }
  std::size_t parameter_count() const { return gamma_.value.size() + beta_.value.size(); }

 private:
  Parameter<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  std::string name_;
  int channels_ = 0;
  double momentum_ = 0.1, eps_ = 1e-5;
  bool training_ = true, trainable_ = true, batch_stats_ = true;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

template <typename T>
class LeakyReLU {
 public:
  explicit LeakyReLU(T slope = T(0.2)) : slope_(slope) {}
  Tensor<T> forward(const Tensor<T>& x) {
    input_ = x;
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : slope_ * x[i];
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = input_[i] > 0 ? dy[i] : slope_ * dy[i];
    return dx;
  }

 private:
  T slope_;
  Tensor<T> input_;
};

template <typename T>
using ReLU = LeakyReLU<T>;

template <typename T>
ReLU<T> make_relu() {
  return ReLU<T>(T(0));
}

template <typename T>
class Tanh {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    output_ = Tensor<T>(x.shape());
    // Saturated values are held one ulp inside the open interval.
    const T hi = std::nextafter(T(1), T(0));
    for (std::size_t i = 0; i < x.size(); ++i) output_[i] = std::clamp(std::tanh(x[i]), -hi, hi);
    return output_;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    if (dy.shape() != output_.shape()) throw std::invalid_argument("Tanh::backward: gradient shape mismatch");
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * (T(1) - output_[i] * output_[i]);
    return dx;
  }

 private:
  Tensor<T> output_;
};

template <typename T>
class Sigmoid {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    output_ = Tensor<T>(x.shape());
    const T lo = std::numeric_limits<T>::min(), hi = std::nextafter(T(1), T(0));
    for (std::size_t i = 0; i < x.size(); ++i) output_[i] = std::clamp(T(1) / (T(1) + std::exp(-x[i])), lo, hi);
    return output_;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * output_[i] * (T(1) - output_[i]);
    return dx;
  }

 private:
  Tensor<T> output_;
};

}  // namespace collagan::nn
