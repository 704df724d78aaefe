#pragma once

#include "sacmt/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace sacmt {

struct AdamOptions {
  double learning_rate = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;  // decoupled: p -= lr * wd * p
};

/// Adam with bias correction and decoupled weight decay.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      first_.emplace_back(p.numel(), 0.0);
      second_.emplace_back(p.numel(), 0.0);
    }
  }

  /// Applies one update from the accumulated gradients. Returns false, leaving
  /// parameters and moments untouched, if any gradient is non-finite.
  bool step() {
    for (const auto& p : params_)
      if (!all_finite(p.grad())) {
        ++skipped_;
        return false;
      }
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double c1 = 1.0 - std::pow(options_.beta1, t);
    const double c2 = 1.0 - std::pow(options_.beta2, t);
    const double lr = options_.learning_rate;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto value = params_[i].mutable_values();
      auto grad = params_[i].grad();
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = grad[j];
        m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g;
        v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g * g;
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        value[j] -= lr * (mhat / (std::sqrt(vhat) + options_.epsilon) + options_.weight_decay * value[j]);
      }
    }
    return true;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::span<Tensor> params() { return params_; }
  std::uint64_t step_count() const { return step_count_; }
  std::uint64_t skipped_steps() const { return skipped_; }
  double learning_rate() const { return options_.learning_rate; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  const AdamOptions& options() const { return options_; }
  const std::vector<std::vector<double>>& first_moments() const { return first_; }
  const std::vector<std::vector<double>>& second_moments() const { return second_; }

  /// Reinstates counters and moments saved from an optimizer over the same
  /// parameter shapes.
  void load_state(std::uint64_t steps, std::uint64_t skipped, std::vector<std::vector<double>> first,
                  std::vector<std::vector<double>> second) {
    if (first.size() != params_.size() || second.size() != params_.size())
      throw std::invalid_argument("Adam::load_state: parameter count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (first[i].size() != params_[i].numel() || second[i].size() != params_[i].numel())
        throw std::invalid_argument("Adam::load_state: moment size mismatch");
    step_count_ = steps;
    skipped_ = skipped;
    first_ = std::move(first);
    second_ = std::move(second);
  }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> first_, second_;
  std::uint64_t step_count_ = 0;
  std::uint64_t skipped_ = 0;
};

inline double global_grad_norm(std::span<const Tensor> params) {
  double sq = 0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  return std::sqrt(sq);
}

/// Rescales all gradients by max_norm / norm when their joint L2 norm exceeds
/// max_norm. Returns the norm measured before clipping.
inline double clip_global_norm(std::span<Tensor> params, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

}  // namespace sacmt
