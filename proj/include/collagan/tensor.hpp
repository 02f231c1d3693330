#pragma once

#include <cblas.h>

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace collagan {

/// Dense row-major tensor. Network activations use NCHW order.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }
  Tensor(std::initializer_list<int> shape, T fill = T(0)) : Tensor(std::vector<int>(shape), fill) {}
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(std::vector<int>{n, c, h, w}, fill) {}

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors (NCHW).
  T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  /// Size of one item along axis 0.
  std::size_t stride0() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  void reshape(std::vector<int> shape) {
    if (count(shape) != data_.size()) throw std::invalid_argument("reshape: element count mismatch");
    shape_ = std::move(shape);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ']';
    return os.str();
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                                b.shape_string());
  }
}

template <typename T, typename U>
Tensor<U> tensor_cast(const Tensor<T>& t) {
  Tensor<U> out(t.shape());
  std::transform(t.values().begin(), t.values().end(), out.values().begin(),
                 [](T v) { return static_cast<U>(v); });
  return out;
}

/// Copies channels [c0, c0+nc) of an NCHW tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, int c0, int nc) {
  const int n = t.dim(0), c = t.dim(1), hw = t.dim(2) * t.dim(3);
  if (c0 < 0 || c0 + nc > c) throw std::out_of_range("slice_channels");
  Tensor<T> out(n, nc, t.dim(2), t.dim(3));
  for (int i = 0; i < n; ++i) {
    std::copy_n(t.data() + (static_cast<std::size_t>(i) * c + c0) * hw, static_cast<std::size_t>(nc) * hw,
                out.data() + static_cast<std::size_t>(i) * nc * hw);
  }
  return out;
}

/// Writes `src` into channels starting at c0 of `dst`, adding when accumulate is set.
template <typename T>
void put_channels(Tensor<T>& dst, const Tensor<T>& src, int c0, bool accumulate = false) {
  const int n = dst.dim(0), c = dst.dim(1), nc = src.dim(1), hw = dst.dim(2) * dst.dim(3);
  if (src.dim(0) != n || c0 + nc > c || src.dim(2) * src.dim(3) != hw) throw std::out_of_range("put_channels");
  for (int i = 0; i < n; ++i) {
    const T* s = src.data() + static_cast<std::size_t>(i) * nc * hw;
    T* d = dst.data() + (static_cast<std::size_t>(i) * c + c0) * hw;
    const std::size_t len = static_cast<std::size_t>(nc) * hw;
    if (accumulate) {
      for (std::size_t k = 0; k < len; ++k) d[k] += s[k];
    } else {
      std::copy_n(s, len, d);
    }
  }
}

/// Channel-wise concatenation of two NCHW tensors with equal N, H, W.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw std::invalid_argument("concat_channels: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor<T> out(a.dim(0), a.dim(1) + b.dim(1), a.dim(2), a.dim(3));
  put_channels(out, a, 0);
  put_channels(out, b, a.dim(1));
  return out;
}

/// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw std::invalid_argument("stack: empty");
  std::vector<int> shape{static_cast<int>(items.size())};
  for (int d : items.front().shape()) shape.push_back(d);
  Tensor<T> out(shape);
  const std::size_t len = items.front().size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items.front().shape()) throw std::invalid_argument("stack: shape mismatch");
    std::copy_n(items[i].data(), len, out.data() + i * len);
  }
  return out;
}

namespace blas {

// C(MxN) = alpha * op(A) * op(B) + beta * C, row-major.
inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, const float* b, float beta,
                 float* c) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a,
              ta ? m : k, b, tb ? k : n, beta, c, n);
}
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, const double* b,
                 double beta, double* c) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a,
              ta ? m : k, b, tb ? k : n, beta, c, n);
}

}  // namespace blas
}  // namespace collagan
