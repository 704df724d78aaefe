#pragma once

// Soft Q critics: two mains and two EMA targets, each a Seq2Seq over the
// target vocabulary whose encoder reads the reference. Q(s_t, .) is the
// critic's unmasked output row after decoding the prefix of s_t.

#include "sacmt/agent.hpp"

#include <array>
#include <memory>
#include <span>
#include <vector>

namespace sacmt {

inline std::vector<double> min_q(std::span<const double> q1, std::span<const double> q2) {
  if (q1.size() != q2.size())
    throw std::invalid_argument("min_q: lengths " + std::to_string(q1.size()) + " and " + std::to_string(q2.size()));
  std::vector<double> out(q1.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(q1[i], q2[i]);
  return out;
}

/// V = sum_a pi(a) (Q(a) - alpha log pi(a)); zero-probability actions add nothing.
inline double soft_value(std::span<const double> q, std::span<const double> probs, double alpha) {
  if (q.size() != probs.size()) throw std::invalid_argument("soft_value: Q and policy lengths differ");
  double v = 0;
  for (std::size_t a = 0; a < q.size(); ++a)
    if (probs[a] > 0) v += probs[a] * (q[a] - alpha * std::log(probs[a]));
  return v;
}

/// y_i = r_i + gamma (1 - done_i) V(s'_i), V from min(Q1', Q2') and pi(s').
/// All matrices are [batch, actions].
inline std::vector<double> soft_bellman_targets(std::span<const double> rewards, std::span<const char> done,
                                                const Tensor& next_q1, const Tensor& next_q2,
                                                const Tensor& next_probs, double alpha, double gamma) {
  const std::size_t n = rewards.size(), v = next_q1.cols();
  if (done.size() != n || next_q1.rows() != n || next_q2.shape() != next_q1.shape() ||
      next_probs.shape() != next_q1.shape())
    throw std::invalid_argument("soft_bellman_targets: inconsistent batch shapes");
  std::vector<double> y(n);
  auto q1 = next_q1.values(), q2 = next_q2.values(), p = next_probs.values();
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = rewards[i];
    if (done[i]) continue;
    auto qmin = min_q(q1.subspan(i * v, v), q2.subspan(i * v, v));
    y[i] += gamma * soft_value(qmin, p.subspan(i * v, v), alpha);
  }
  return y;
}

/// Mean over the batch and over the critics of (Q_i(s, a) - y)^2. Each entry
/// of `chosen` is a [batch, 1] column of Q at the taken actions.
inline Tensor critic_mse(const std::vector<Tensor>& chosen, std::span<const double> y) {
  if (chosen.empty() || y.empty()) throw std::invalid_argument("critic_loss: empty batch");
  Tensor target({y.size(), 1}, {y.begin(), y.end()});
  Tensor total;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    Tensor l = mean(square(sub(chosen[i], target)));
    total = i == 0 ? l : add(total, l);
  }
  return scale(total, 1.0 / static_cast<double>(chosen.size()));
}

/// Mean over rows of pi^T (alpha log pi - Q). `q` is a constant [batch, actions]
/// matrix; gradients reach the policy only through `logits`.
inline Tensor actor_loss_from_logits(const Tensor& logits, const Tensor& q, double alpha) {
  if (logits.shape() != q.shape())
    throw std::invalid_argument("actor_loss: logits " + shape_str(logits.shape()) + " vs Q " + shape_str(q.shape()));
  Tensor lp = log_softmax(logits);
  Tensor p = exp(lp);
  Tensor inner = sub(scale(lp, alpha), q.detach());
  return scale(sum(mul(p, inner)), 1.0 / static_cast<double>(logits.rows()));
}

/// Logits of decoder step `steps[b]` for each row b, after teacher-forcing
/// `inputs`: a [batch, vocab] tensor.
inline Tensor logits_at_steps(const Seq2Seq& model, const EncoderStates& enc, const PaddedIds& inputs,
                              std::span<const std::size_t> steps) {
  if (steps.size() != inputs.batch()) throw std::invalid_argument("logits_at_steps: one step per row required");
  std::size_t width = 0;
  for (auto s : steps) width = std::max(width, s + 1);
  if (width > inputs.width) throw std::out_of_range("logits_at_steps: step beyond the decoded inputs");
  PaddedIds trimmed = inputs;
  trimmed.width = width;
  for (auto& row : trimmed.rows) row.resize(width);
  auto per_step = model.teacher_force(enc, trimmed);
  const std::size_t b = inputs.batch();
  std::vector<std::size_t> rows(b);
  for (std::size_t i = 0; i < b; ++i) rows[i] = steps[i] * b + i;
  return index_rows(concat(per_step, 0), rows);
}

class CriticEnsemble {
 public:
  CriticEnsemble(std::size_t vocab, ModelDims dims, Rng& rng) {
    for (auto& m : mains_) m = std::make_unique<Seq2Seq>(vocab, vocab, dims, rng, false);
    for (std::size_t i = 0; i < 2; ++i) {
      targets_[i] = std::make_unique<Seq2Seq>(vocab, vocab, dims, rng, false);
      targets_[i]->params().copy_values_from(mains_[i]->params());
    }
  }

  Seq2Seq& main(std::size_t i) { return *mains_.at(i); }
  const Seq2Seq& main(std::size_t i) const { return *mains_.at(i); }
  const Seq2Seq& target(std::size_t i) const { return *targets_.at(i); }
  Seq2Seq& target_mutable(std::size_t i) { return *targets_.at(i); }

  std::vector<Tensor> main_parameters() const {
    auto a = mains_[0]->params().tensors();
    auto b = mains_[1]->params().tensors();
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }

  /// target <- tau * main + (1 - tau) * target.
  void ema_update(double tau) {
    if (tau < 0 || tau > 1) throw std::invalid_argument("ema_update: tau must lie in [0, 1]");
    for (std::size_t i = 0; i < 2; ++i) targets_[i]->params().blend_from(mains_[i]->params(), tau);
  }

  void put(Checkpoint& ck) const {
    for (std::size_t i = 0; i < 2; ++i) {
      ck.put("critic.main" + std::to_string(i + 1), mains_[i]->params());
      ck.put("critic.target" + std::to_string(i + 1), targets_[i]->params());
    }
  }
  void take(const Checkpoint& ck) {
    for (std::size_t i = 0; i < 2; ++i) {
      ck.take("critic.main" + std::to_string(i + 1), mains_[i]->params());
      ck.take("critic.target" + std::to_string(i + 1), targets_[i]->params());
    }
  }

 private:
  std::array<std::unique_ptr<Seq2Seq>, 2> mains_;
  std::array<std::unique_ptr<Seq2Seq>, 2> targets_;
};

/// Q(s, .) of one critic for the state reached by `prefix`, conditioned on
/// `conditioning` (the reference including its EOS).
inline std::vector<double> q_values(const Seq2Seq& critic, const std::vector<Id>& conditioning,
                                    const std::vector<Id>& prefix) {
  if (conditioning.empty()) throw std::invalid_argument("q_values: empty conditioning sentence");
  const auto limit = max_decode_length(conditioning.size() - 1);
  if (prefix.size() >= limit)
    throw std::out_of_range("q_values: prefix length " + std::to_string(prefix.size()) + " reaches max decode length " +
                            std::to_string(limit));
  NoGradGuard no_grad;
  auto enc = critic.encode(conditioning);
  std::vector<Id> inputs{Vocabulary::kBos};
  inputs.insert(inputs.end(), prefix.begin(), prefix.end());
  auto logits = critic.teacher_force(enc, pad_sequences({inputs}));
  auto row = logits.back().values();
  return {row.begin(), row.end()};
}

}  // namespace sacmt
