#pragma once

// Adversarial and reconstruction objectives. Every loss returns its value in
// double precision and, when given a gradient tensor, adds d(loss)/d(input)
// into it.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "collagan/model.hpp"
#include "collagan/tasks.hpp"
#include "collagan/tensor.hpp"

namespace collagan {

inline constexpr double kLogEpsilon = 1e-7;

namespace detail {

inline double clamp_prob(double p) { return std::clamp(p, kLogEpsilon, 1.0 - kLogEpsilon); }

template <typename T>
void check_mask(const Tensor<T>& mask, const Tensor<T>& like, const char* what) {
  if (mask.rank() != 4 || mask.dim(1) != 1 || mask.dim(0) != like.dim(0) || mask.dim(2) != like.dim(2) ||
      mask.dim(3) != like.dim(3)) {
    throw std::invalid_argument(std::string(what) + ": mask " + mask.shape_string() + " does not match " +
                                like.shape_string());
  }
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask[k] != T(0) && mask[k] != T(1)) {
      throw std::invalid_argument(std::string(what) + ": mask is not binary at flat index " + std::to_string(k));
    }
  }
}

template <typename T>
void check_grad(const Tensor<T>* grad, const Tensor<T>& like, const char* what) {
  if (grad && grad->shape() != like.shape()) {
    throw std::invalid_argument(std::string(what) + ": gradient buffer shape mismatch");
  }
}

}  // namespace detail

/// Replaces the unoccluded region (mask = 1) of the generated image with the
/// input pixels: g * (1 - M) + x * M, with M broadcast over channels.
template <typename T>
Tensor<T> compose_inpaint(const Tensor<T>& generated, const Tensor<T>& x, const Tensor<T>& mask) {
  require_same_shape(generated, x, "compose_inpaint");
  detail::check_mask(mask, x, "compose_inpaint");
  Tensor<T> out(x.shape());
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          out.at(i, ch, y, xx) = mask.at(i, 0, y, xx) != T(0) ? x.at(i, ch, y, xx) : generated.at(i, ch, y, xx);
        }
      }
    }
  }
  return out;
}

/// Zeroes a gradient w.r.t. the composed image wherever mask = 1, giving the
/// gradient w.r.t. the generated image.
template <typename T>
void mask_occluded_only(Tensor<T>& grad, const Tensor<T>& mask) {
  detail::check_mask(mask, grad, "mask_occluded_only");
  for (int i = 0; i < grad.dim(0); ++i) {
    for (int ch = 0; ch < grad.dim(1); ++ch) {
      for (int y = 0; y < grad.dim(2); ++y) {
        for (int x = 0; x < grad.dim(3); ++x) {
          if (mask.at(i, 0, y, x) != T(0)) grad.at(i, ch, y, x) = T(0);
        }
      }
    }
  }
}

/// -mean(log p): the discriminator's loss on real pairs.
template <typename T>
double bce_real_term(const Tensor<T>& real_map, Tensor<T>* d_real = nullptr) {
  detail::check_grad(d_real, real_map, "bce_real_term");
  const double n = static_cast<double>(real_map.size());
  double s = 0;
  for (std::size_t k = 0; k < real_map.size(); ++k) {
    const double p = detail::clamp_prob(real_map[k]);
    s -= std::log(p);
    if (d_real) (*d_real)[k] += static_cast<T>(-1.0 / (p * n));
  }
  return s / n;
}

/// -mean(log(1 - p)): the discriminator's loss on generated pairs.
template <typename T>
double bce_fake_term(const Tensor<T>& fake_map, Tensor<T>* d_fake = nullptr) {
  detail::check_grad(d_fake, fake_map, "bce_fake_term");
  const double n = static_cast<double>(fake_map.size());
  double s = 0;
  for (std::size_t k = 0; k < fake_map.size(); ++k) {
    const double p = detail::clamp_prob(fake_map[k]);
    s -= std::log(1.0 - p);
    if (d_fake) (*d_fake)[k] += static_cast<T>(1.0 / ((1.0 - p) * n));
  }
  return s / n;
}

/// Binary cross-entropy for the discriminator:
/// -mean(log real) - mean(log(1 - fake)).
template <typename T>
double adv_loss_discriminator(const Tensor<T>& real_map, const Tensor<T>& fake_map, Tensor<T>* d_real = nullptr,
                              Tensor<T>* d_fake = nullptr) {
  return bce_real_term(real_map, d_real) + bce_fake_term(fake_map, d_fake);
}

/// Non-saturating generator term: lambda * -mean(log fake).
template <typename T>
double adv_loss_generator(const Tensor<T>& fake_map, double lambda, Tensor<T>* d_fake = nullptr) {
  detail::check_grad(d_fake, fake_map, "adv_loss_generator");
  const double n = static_cast<double>(fake_map.size());
  double s = 0;
  for (std::size_t k = 0; k < fake_map.size(); ++k) {
    const double p = detail::clamp_prob(fake_map[k]);
    s -= std::log(p);
    if (d_fake) (*d_fake)[k] += static_cast<T>(-lambda / (p * n));
  }
  return lambda * s / n;
}

/// lambda * mean |g - y| over every element.
template <typename T>
double rec_loss_inpaint_full(const Tensor<T>& generated, const Tensor<T>& target, double lambda,
                             Tensor<T>* d_generated = nullptr) {
  require_same_shape(generated, target, "rec_loss_inpaint_full");
  detail::check_grad(d_generated, generated, "rec_loss_inpaint_full");
  const double n = static_cast<double>(generated.size());
  double s = 0;
  for (std::size_t k = 0; k < generated.size(); ++k) {
    const double diff = static_cast<double>(generated[k]) - static_cast<double>(target[k]);
    s += std::abs(diff);
    if (d_generated && diff != 0) (*d_generated)[k] += static_cast<T>(lambda * (diff > 0 ? 1.0 : -1.0) / n);
  }
  return lambda * s / n;
}

/// L1 restricted to occluded pixels (mask = 0), normalized by
/// occluded-pixel count times channels. Zero when nothing is occluded.
template <typename T>
double rec_loss_inpaint_masked(const Tensor<T>& generated, const Tensor<T>& target, const Tensor<T>& mask,
                               double lambda, Tensor<T>* d_generated = nullptr) {
  require_same_shape(generated, target, "rec_loss_inpaint_masked");
  detail::check_mask(mask, generated, "rec_loss_inpaint_masked");
  detail::check_grad(d_generated, generated, "rec_loss_inpaint_masked");
  std::size_t occluded = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) occluded += mask[k] == T(0);
  if (occluded == 0) return 0.0;
  const double n = static_cast<double>(occluded) * generated.dim(1);
  double s = 0;
  for (int i = 0; i < generated.dim(0); ++i) {
    for (int c = 0; c < generated.dim(1); ++c) {
      for (int y = 0; y < generated.dim(2); ++y) {
        for (int x = 0; x < generated.dim(3); ++x) {
          if (mask.at(i, 0, y, x) != T(0)) continue;
          const double diff =
              static_cast<double>(generated.at(i, c, y, x)) - static_cast<double>(target.at(i, c, y, x));
          s += std::abs(diff);
          if (d_generated && diff != 0) d_generated->at(i, c, y, x) += static_cast<T>(lambda * (diff > 0 ? 1 : -1) / n);
        }
      }
    }
  }
  return lambda * s / n;
}

/// lambda * mean (pred - target)^2; used for segmentation maps and heatmaps.
template <typename T>
double rec_loss_l2(const Tensor<T>& pred, const Tensor<T>& target, double lambda, Tensor<T>* d_pred = nullptr) {
  require_same_shape(pred, target, "rec_loss_l2");
  detail::check_grad(d_pred, pred, "rec_loss_l2");
  const double n = static_cast<double>(pred.size());
  double s = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double diff = static_cast<double>(pred[k]) - static_cast<double>(target[k]);
    s += diff * diff;
    if (d_pred) (*d_pred)[k] += static_cast<T>(2.0 * lambda * diff / n);
  }
  return lambda * s / n;
}

struct LossTerm {
  Task task;
  std::string term;  // "adv" or "rec"
  double value;
};

struct GeneratorLoss {
  double total = 0;
  std::vector<LossTerm> terms;

  double term(Task t, const std::string& name) const {
    for (const auto& lt : terms) {
      if (lt.task == t && lt.term == name) return lt.value;
    }
    throw std::out_of_range("no loss term " + name + " for task " + std::string(1, task_code(t)));
  }
};

/// Gradients of the total generator loss w.r.t. the raw task outputs and the
/// discriminator realness maps.
template <typename T>
struct GeneratorLossGrads {
  GeneratorOutput<T> outputs;
  std::map<Task, Tensor<T>> fake_maps;
};

/// Sum over active tasks of adversarial and reconstruction terms. In
/// concentrated mode the inpainting reconstruction only sees occluded pixels;
/// the caller is responsible for having scored the composed image with D_i.
template <typename T>
GeneratorLoss total_generator_loss(const GeneratorOutput<T>& outputs, const TaskTensors<T>& targets,
                                   const Tensor<T>& x, const Tensor<T>& mask, const LossWeights& weights,
                                   const TaskSet& tasks, bool concentrated,
                                   const std::map<Task, Tensor<T>>& fake_maps,
                                   GeneratorLossGrads<T>* grads = nullptr) {
  if (tasks.empty()) throw std::invalid_argument("total_generator_loss: empty task set");
  for (Task t : tasks.tasks()) {
    if (!weights.adv.contains(t) || !weights.rec.contains(t)) {
      throw std::invalid_argument(std::string("total_generator_loss: missing weight for task ") + task_code(t));
    }
    if (!fake_maps.contains(t)) {
      throw std::invalid_argument(std::string("total_generator_loss: missing realness map for task ") + task_code(t));
    }
  }
  require_same_shape(outputs.image, x, "total_generator_loss");
  if (grads) {
    for (Task t : tasks.tasks()) {
      if (grads->outputs.of(t).shape() != outputs.of(t).shape()) grads->outputs.of(t) = Tensor<T>(outputs.of(t).shape());
      if (grads->fake_maps[t].shape() != fake_maps.at(t).shape()) grads->fake_maps[t] = Tensor<T>(fake_maps.at(t).shape());
    }
  }
  GeneratorLoss loss;
  for (Task t : tasks.tasks()) {
    Tensor<T>* d_map = grads ? &grads->fake_maps[t] : nullptr;
    Tensor<T>* d_out = grads ? &grads->outputs.of(t) : nullptr;
    const double adv = adv_loss_generator(fake_maps.at(t), weights.adv.at(t), d_map);
    double rec = 0;
    const double lambda = weights.rec.at(t);
    if (t == Task::inpaint) {
      rec = concentrated ? rec_loss_inpaint_masked(outputs.image, targets.image, mask, lambda, d_out)
                         : rec_loss_inpaint_full(outputs.image, targets.image, lambda, d_out);
    } else {
      rec = rec_loss_l2(outputs.of(t), targets.of(t), lambda, d_out);
    }
    loss.terms.push_back({t, "adv", adv});
    loss.terms.push_back({t, "rec", rec});
    loss.total += adv + rec;
  }
  return loss;
}

}  // namespace collagan
