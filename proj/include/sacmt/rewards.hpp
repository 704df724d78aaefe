#pragma once

// Reward engines: shaped smoothed-BLEU deltas with a length penalty, and the
// skill-discriminator reward log q(z | x, a) - log p(z) with uniform p(z).

#include "sacmt/agent.hpp"
#include "sacmt/bleu.hpp"
#include "sacmt/optim.hpp"

#include <cmath>
#include <random>
#include <span>
#include <vector>

namespace sacmt {

enum class RewardMode { kSupervisedBleu, kUnsupervisedSkill };

struct RewardSpec {
  RewardMode mode = RewardMode::kSupervisedBleu;
  double length_penalty = 1e-4;
  double rescale_alpha = 0.01;
  std::size_t skills = 4;
};

/// r / alpha.
inline double rescale_reward(double r, double alpha) {
  if (!(alpha > 0)) throw std::invalid_argument("rescale_reward: alpha must be positive");
  return r / alpha;
}

/// Words of a sampled action sequence: everything before the first EOS.
inline std::vector<Id> strip_eos(std::span<const Id> actions) {
  std::vector<Id> out;
  for (Id a : actions) {
    if (a == Vocabulary::kEos) break;
    out.push_back(a);
  }
  return out;
}

/// r_t = BLEU(y^_1..t) - BLEU(y^_1..t-1) - coeff * |t - |ref||, t = 1..T.
/// EOS contributes no word, so its BLEU delta is zero. The rewards telescope:
/// their sum plus coeff * sum_t |t - |ref|| is the BLEU of the full hypothesis.
inline std::vector<double> per_step_bleu_rewards(std::span<const Id> actions, std::span<const Id> reference,
                                                 double length_penalty) {
  std::vector<double> out;
  out.reserve(actions.size());
  std::vector<Id> words;
  double previous = 0.0;
  bool ended = false;
  for (std::size_t t = 1; t <= actions.size(); ++t) {
    Id a = actions[t - 1];
    if (a == Vocabulary::kEos) ended = true;
    double score = previous;
    if (!ended) {
      words.push_back(a);
      score = smoothed_sentence_bleu(std::span<const Id>(words), reference);
    }
    const double lp = length_penalty * std::abs(static_cast<double>(t) - static_cast<double>(reference.size()));
    out.push_back(score - previous - lp);
    previous = score;
  }
  return out;
}

inline std::vector<double> per_step_bleu_rewards(const std::vector<Id>& actions, const std::vector<Id>& reference,
                                                 double length_penalty) {
  return per_step_bleu_rewards(std::span<const Id>(actions), std::span<const Id>(reference), length_penalty);
}

// ---------------------------------------------------------------------------
// Skill discriminator

inline constexpr double kSkillProbFloor = 1e-8;

/// r_z = log clamp(q, 1e-8, 1) - log(1/K).
inline double skill_reward_from_prob(double q, std::size_t skills) {
  const double clamped = std::clamp(q, kSkillProbFloor, 1.0);
  return std::log(clamped) + std::log(static_cast<double>(skills));
}

/// One uniform skill label per sampled token.
inline std::vector<std::size_t> assign_skills(std::size_t tokens, std::size_t skills, Rng& rng) {
  if (skills < 2) throw std::invalid_argument("assign_skills: need at least 2 skills (K=1 gives a constant zero reward)");
  std::uniform_int_distribution<std::size_t> d(0, skills - 1);
  std::vector<std::size_t> z(tokens);
  for (auto& v : z) v = d(rng);
  return z;
}

/// Bag-of-words classifier q(z | x, a): the pooled source encoding joined with
/// an embedding of the action word, two tanh layers, softmax over K skills.
class Discriminator {
 public:
  Discriminator(std::size_t source_dim, std::size_t action_vocab, std::size_t action_embed, std::size_t skills,
                Rng& rng, std::size_t hidden = 100)
      : source_dim_(source_dim), action_vocab_(action_vocab), skills_(skills) {
    if (skills < 2) throw std::invalid_argument("Discriminator: need at least 2 skills");
    embed_ = params_.add("disc.action_embed", {action_vocab, action_embed}, rng);
    w1_ = params_.add("disc.l1.w", {source_dim + action_embed, hidden}, rng);
    b1_ = params_.add("disc.l1.b", {hidden}, rng, ParamSet::Init::kZero);
    w2_ = params_.add("disc.l2.w", {hidden, hidden}, rng);
    b2_ = params_.add("disc.l2.b", {hidden}, rng, ParamSet::Init::kZero);
    w3_ = params_.add("disc.out.w", {hidden, skills}, rng);
    b3_ = params_.add("disc.out.b", {skills}, rng, ParamSet::Init::kZero);
  }

  std::size_t skills() const { return skills_; }
  std::size_t source_dim() const { return source_dim_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// [batch, K] log-probabilities. `sources` is [batch, source_dim].
  Tensor log_probs(const Tensor& sources, std::span<const Id> actions) const {
    if (sources.cols() != source_dim_ || sources.rows() != actions.size())
      throw std::invalid_argument("Discriminator: source encodings " + shape_str(sources.shape()) + " for " +
                                  std::to_string(actions.size()) + " actions");
    Tensor x = concat({sources, embedding(embed_, actions)}, 1);
    Tensor h1 = tanh(add(matmul(x, w1_), b1_));
    Tensor h2 = tanh(add(matmul(h1, w2_), b2_));
    return log_softmax(add(matmul(h2, w3_), b3_));
  }

  /// q(. | x, a) for a single pair.
  std::vector<double> probabilities(std::span<const double> source, Id action) const {
    NoGradGuard no_grad;
    Tensor s({1, source.size()}, {source.begin(), source.end()});
    Id a[] = {action};
    Tensor lp = log_probs(s, a);
    std::vector<double> p(skills_);
    for (std::size_t k = 0; k < skills_; ++k) p[k] = std::exp(lp.values()[k]);
    return p;
  }

 private:
  std::size_t source_dim_, action_vocab_, skills_;
  ParamSet params_;
  Tensor embed_, w1_, b1_, w2_, b2_, w3_, b3_;
};

inline double unsup_reward(const Discriminator& disc, std::span<const double> source, Id action, std::size_t z) {
  if (z >= disc.skills())
    throw std::out_of_range("unsup_reward: skill " + std::to_string(z) + " >= K=" + std::to_string(disc.skills()));
  return skill_reward_from_prob(disc.probabilities(source, action)[z], disc.skills());
}

/// Batched r_z for rows of `sources` ([n, source_dim]).
inline std::vector<double> unsup_rewards(const Discriminator& disc, const Tensor& sources, std::span<const Id> actions,
                                         std::span<const std::size_t> skills) {
  NoGradGuard no_grad;
  Tensor lp = disc.log_probs(sources, actions);
  std::vector<double> r(actions.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (skills[i] >= disc.skills()) throw std::out_of_range("unsup_rewards: skill label out of range");
    r[i] = skill_reward_from_prob(std::exp(lp.at(i, skills[i])), disc.skills());
  }
  return r;
}

struct SkillExample {
  std::vector<double> source;
  Id action = 0;
  std::size_t skill = 0;
};

struct DiscriminatorStep {
  double loss = 0.0;
  bool applied = false;
};

/// Cross-entropy training of q(z | x, a) against the assigned labels.
class DiscriminatorTrainer {
 public:
  DiscriminatorTrainer(Discriminator& disc, AdamOptions options, double clip_norm = 1.0)
      : disc_(disc), opt_(disc.params().tensors(), options), clip_norm_(clip_norm) {}

  Adam& optimizer() { return opt_; }
  const Adam& optimizer() const { return opt_; }

  DiscriminatorStep update(std::span<const SkillExample> batch) {
    if (batch.empty()) throw std::invalid_argument("discriminator_update: empty batch");
    const std::size_t dim = disc_.source_dim();
    std::vector<double> src;
    std::vector<Id> actions;
    std::vector<std::size_t> labels;
    src.reserve(batch.size() * dim);
    for (const auto& ex : batch) {
      if (ex.source.size() != dim) throw std::invalid_argument("discriminator_update: source encoding width mismatch");
      src.insert(src.end(), ex.source.begin(), ex.source.end());
      actions.push_back(ex.action);
      labels.push_back(ex.skill);
    }
    opt_.zero_grad();
    Tensor lp = disc_.log_probs(Tensor({batch.size(), dim}, std::move(src)), actions);
    Tensor loss = scale(sum(gather(lp, labels)), -1.0 / static_cast<double>(batch.size()));
    DiscriminatorStep out{loss.item(), false};
    if (!std::isfinite(out.loss)) return out;
    backward(loss);
    clip_global_norm(opt_.params(), clip_norm_);
    out.applied = opt_.step();
    return out;
  }

 private:
  Discriminator& disc_;
  Adam opt_;
  double clip_norm_;
};

}  // namespace sacmt
