#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "collagan/nn.hpp"

namespace collagan {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<nn::Parameter<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0)) throw std::invalid_argument("adam: learning rate must be > 0");
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& w = params_[i]->value;
      const auto& g = params_[i]->grad;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k];
        m[k] = static_cast<T>(cfg_.beta1 * m[k] + (1 - cfg_.beta1) * gk);
        v[k] = static_cast<T>(cfg_.beta2 * v[k] + (1 - cfg_.beta2) * gk * gk);
        const double mhat = m[k] / c1, vhat = v[k] / c2;
        w[k] = static_cast<T>(w[k] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<nn::Parameter<T>*>& parameters() const { return params_; }

 private:
  std::vector<nn::Parameter<T>*> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

}  // namespace collagan
