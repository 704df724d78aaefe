#pragma once

// Training pipeline: MLE pretraining of the actor, critic pretraining against
// a frozen actor, joint SAC training off a replay buffer, oracle-mode updates
// for the skill reward, early stopping and learning-rate halving.

#include "sacmt/critic.hpp"
#include "sacmt/rewards.hpp"

#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace sacmt {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TrainMode { kMle, kSacBleu, kSacUnsup };

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "mle") return TrainMode::kMle;
  if (s == "sac-bleu") return TrainMode::kSacBleu;
  if (s == "sac-unsup") return TrainMode::kSacUnsup;
  throw std::invalid_argument("unknown training mode '" + s + "' (expected mle, sac-bleu or sac-unsup)");
}

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kMle: return "mle";
    case TrainMode::kSacBleu: return "sac-bleu";
    case TrainMode::kSacUnsup: return "sac-unsup";
  }
  return "?";
}

/// How sampled returns enter the actor update under the skill reward.
enum class UnsupUpdate { kOracle, kPolicyGradient };

struct TrainConfig {
  std::size_t embed = 200;
  std::size_t hidden = 320;
  double alpha = 0.01;              // entropy temperature; 0.001 is the other documented default
  double reward_scale_alpha = 0.01;  // rewards are divided by this
  double gamma = 0.99;
  double tau = 0.005;
  double lambda_mle = 0.1;
  double lr_mle = 4e-4;
  double lr_actor = 4e-4;
  double lr_critic = 4e-4;
  double lr_critic_pretrain = 3e-4;
  double lr_discriminator = 1e-4;
  double weight_decay = 1e-5;
  double clip_norm = 1.0;
  double length_penalty = 1e-4;
  std::size_t batch_size = 64;
  std::size_t buffer_capacity = 1000;
  std::size_t gradient_steps = 1;
  std::size_t actor_patience = 10;
  std::size_t actor_max_epochs = 100;
  std::size_t critic_epochs = 3;
  std::size_t sac_patience = 10;
  std::size_t sac_max_epochs = 100;
  std::size_t lr_patience = 2;
  std::size_t skills = 4;
  std::size_t discriminator_hidden = 100;
  std::size_t discriminator_embed = 32;
  UnsupUpdate unsup_update = UnsupUpdate::kOracle;
  bool auto_alpha = false;
  double target_entropy = 0.1;
  double lr_alpha = 1e-3;
  std::size_t max_skipped_updates = 3;
  std::uint64_t seed = 1;
};

/// Every violated constraint, so callers can report them all before training.
inline std::vector<std::string> config_errors(const TrainConfig& c) {
  std::vector<std::string> e;
  auto positive = [&](double v, const char* name) {
    if (!(v > 0) || !std::isfinite(v)) e.push_back(std::string(name) + " must be positive");
  };
  auto at_least_one = [&](std::size_t v, const char* name) {
    if (v == 0) e.push_back(std::string(name) + " must be at least 1");
  };
  at_least_one(c.embed, "embed");
  at_least_one(c.hidden, "hidden");
  if (!(c.alpha >= 0) || !std::isfinite(c.alpha)) e.push_back("alpha must be non-negative");
  positive(c.reward_scale_alpha, "reward_scale_alpha");
  if (!(c.gamma >= 0 && c.gamma <= 1)) e.push_back("gamma must lie in [0, 1]");
  if (!(c.tau >= 0 && c.tau <= 1)) e.push_back("tau must lie in [0, 1]");
  if (!(c.lambda_mle >= 0) || !std::isfinite(c.lambda_mle)) e.push_back("lambda_mle must be non-negative");
  positive(c.lr_mle, "lr_mle");
  positive(c.lr_actor, "lr_actor");
  positive(c.lr_critic, "lr_critic");
  positive(c.lr_critic_pretrain, "lr_critic_pretrain");
  positive(c.lr_discriminator, "lr_discriminator");
  if (!(c.weight_decay >= 0)) e.push_back("weight_decay must be non-negative");
  positive(c.clip_norm, "clip_norm");
  if (!(c.length_penalty >= 0)) e.push_back("length_penalty must be non-negative");
  at_least_one(c.batch_size, "batch_size");
  at_least_one(c.buffer_capacity, "buffer_capacity");
  at_least_one(c.gradient_steps, "gradient_steps");
  at_least_one(c.actor_max_epochs, "actor_max_epochs");
  at_least_one(c.sac_max_epochs, "sac_max_epochs");
  at_least_one(c.lr_patience, "lr_patience");
  if (c.skills < 2) e.push_back("skills must be at least 2");
  at_least_one(c.discriminator_hidden, "discriminator_hidden");
  at_least_one(c.discriminator_embed, "discriminator_embed");
  positive(c.lr_alpha, "lr_alpha");
  at_least_one(c.max_skipped_updates, "max_skipped_updates");
  return e;
}

inline void validate(const TrainConfig& c) {
  auto e = config_errors(c);
  if (e.empty()) return;
  std::string msg = "invalid training configuration:";
  for (const auto& s : e) msg += "\n  " + s;
  throw std::invalid_argument(msg);
}

// ---------------------------------------------------------------------------
// Transitions and the replay buffer

struct Transition {
  std::vector<Id> source;     // with EOS
  std::vector<Id> prefix;     // actions before this step; defines s_t
  Id action = 0;
  double reward = 0.0;        // after rescaling
  bool done = false;
  std::vector<Id> reference;  // with EOS; empty under the skill reward
  std::size_t skill = 0;
};

inline void check_transition(const Transition& t) {
  if (t.source.empty()) throw std::invalid_argument("transition: empty source");
  const auto limit = max_decode_length(t.source.size() - 1);
  if (t.prefix.size() >= limit)
    throw std::invalid_argument("transition: prefix length " + std::to_string(t.prefix.size()) +
                                " reaches the decode limit " + std::to_string(limit));
  if (t.done && t.action != Vocabulary::kEos && t.prefix.size() + 1 != limit)
    throw std::invalid_argument("transition: done before EOS or the decode limit");
}

/// Bounded FIFO store; index 0 is the oldest entry.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  }

  void push(Transition t) {
    check_transition(t);
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
    ++inserted_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  /// Total pushes over the buffer's lifetime.
  std::uint64_t inserted() const { return inserted_; }
  const Transition& operator[](std::size_t i) const { return items_.at(i); }

  /// Uniform draws with replacement.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    if (items_.empty()) throw std::logic_error("ReplayBuffer: sampling from an empty buffer");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<std::size_t> out(n);
    for (auto& i : out) i = pick(rng);
    return out;
  }

  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
    std::vector<const Transition*> out;
    for (auto i : sample_indices(n, rng)) out.push_back(&items_[i]);
    return out;
  }

  void clear() {
    items_.clear();
    inserted_ = 0;
  }

  void restore_counter(std::uint64_t inserted) { inserted_ = inserted; }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
  std::uint64_t inserted_ = 0;
};

// ---------------------------------------------------------------------------
// Trajectory collection

using Trajectory = std::vector<Transition>;

inline std::vector<Id> trimmed_row(const PaddedIds& p, std::size_t b) {
  return {p.rows[b].begin(), p.rows[b].begin() + static_cast<std::ptrdiff_t>(p.lengths[b])};
}

/// Samples one translation per batch row from the policy. Rewards are left at
/// zero; with `skills` > 0 every token gets a uniformly drawn skill label.
inline std::vector<Trajectory> sample_trajectories(const Seq2Seq& agent, const Batch& batch, Rng& rng,
                                                   std::size_t skills = 0) {
  auto samples = decode_batch(agent, batch.source, &rng);
  std::vector<Trajectory> out(samples.size());
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto& tokens = samples[b].tokens;
    auto source = trimmed_row(batch.source, b);
    auto reference = trimmed_row(batch.target, b);
    std::vector<std::size_t> z = skills > 0 ? assign_skills(tokens.size(), skills, rng)
                                            : std::vector<std::size_t>(tokens.size(), 0);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      Transition tr;
      tr.source = source;
      tr.prefix.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(t));
      tr.action = tokens[t];
      tr.done = t + 1 == tokens.size();
      if (skills == 0) tr.reference = reference;
      tr.skill = z[t];
      out[b].push_back(std::move(tr));
    }
  }
  return out;
}

/// Per-step BLEU rewards against each trajectory's reference, divided by
/// `scale_alpha`.
inline void score_bleu(std::vector<Trajectory>& trajectories, double length_penalty, double scale_alpha) {
  for (auto& traj : trajectories) {
    if (traj.empty()) continue;
    std::vector<Id> actions;
    for (const auto& t : traj) actions.push_back(t.action);
    auto ref = strip_eos(traj.front().reference);
    auto r = per_step_bleu_rewards(actions, ref, length_penalty);
    for (std::size_t i = 0; i < traj.size(); ++i) traj[i].reward = rescale_reward(r[i], scale_alpha);
  }
}

/// Skill rewards r_z under `disc`; `pooled` row b encodes trajectory b's source.
inline void score_skills(std::vector<Trajectory>& trajectories, const Discriminator& disc, const Tensor& pooled,
                         double scale_alpha) {
  if (pooled.rows() != trajectories.size()) throw std::invalid_argument("score_skills: one encoding per trajectory");
  std::vector<std::size_t> rows, skills;
  std::vector<Id> actions;
  for (std::size_t b = 0; b < trajectories.size(); ++b)
    for (const auto& t : trajectories[b]) {
      rows.push_back(b);
      actions.push_back(t.action);
      skills.push_back(t.skill);
    }
  if (rows.empty()) return;
  NoGradGuard no_grad;
  auto r = unsup_rewards(disc, index_rows(pooled, rows), actions, skills);
  std::size_t k = 0;
  for (auto& traj : trajectories)
    for (auto& t : traj) t.reward = rescale_reward(r[k++], scale_alpha);
}

inline Tensor pooled_sources(const Seq2Seq& agent, const PaddedIds& source) {
  NoGradGuard no_grad;
  return agent.encode(source).pooled.detach();
}

/// Samples from the policy and scores the samples with the active reward.
inline std::vector<Trajectory> collect_trajectories(const Seq2Seq& agent, const Batch& batch, const RewardSpec& spec,
                                                    Rng& rng, const Discriminator* disc = nullptr) {
  if (spec.mode == RewardMode::kSupervisedBleu) {
    auto traj = sample_trajectories(agent, batch, rng);
    score_bleu(traj, spec.length_penalty, spec.rescale_alpha);
    return traj;
  }
  if (!disc) throw std::invalid_argument("collect_trajectories: the skill reward needs a discriminator");
  auto traj = sample_trajectories(agent, batch, rng, spec.skills);
  score_skills(traj, *disc, pooled_sources(agent, batch.source), spec.rescale_alpha);
  return traj;
}

/// Q^_t = sum_{k >= t} gamma^(k - t) r_k.
inline std::vector<double> monte_carlo_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> q(rewards.size());
  double acc = 0;
  for (std::size_t i = rewards.size(); i-- > 0;) q[i] = acc = rewards[i] + gamma * acc;
  return q;
}

// ---------------------------------------------------------------------------
// Updates

/// Transitions laid out for batched teacher forcing: `inputs` row b is
/// [BOS, prefix..., action], so step `steps[b]` yields s_t and step
/// `steps[b] + 1` yields s_{t+1}.
struct TransitionBatch {
  PaddedIds sources, references, inputs;
  std::vector<std::size_t> steps, next_steps;
  std::vector<Id> actions;
  std::vector<double> rewards;
  std::vector<char> done;
};

inline TransitionBatch make_transition_batch(std::span<const Transition* const> items) {
  std::vector<std::vector<Id>> src, ref, in;
  TransitionBatch tb;
  for (const auto* t : items) {
    src.push_back(t->source);
    ref.push_back(t->reference.empty() ? std::vector<Id>{Vocabulary::kEos} : t->reference);
    std::vector<Id> row{Vocabulary::kBos};
    row.insert(row.end(), t->prefix.begin(), t->prefix.end());
    row.push_back(t->action);
    in.push_back(std::move(row));
    tb.steps.push_back(t->prefix.size());
    tb.next_steps.push_back(t->prefix.size() + 1);
    tb.actions.push_back(t->action);
    tb.rewards.push_back(t->reward);
    tb.done.push_back(t->done ? 1 : 0);
  }
  tb.sources = pad_sequences(src);
  tb.references = pad_sequences(ref);
  tb.inputs = pad_sequences(in);
  return tb;
}

struct UpdateStats {
  double loss = std::numeric_limits<double>::quiet_NaN();
  bool applied = false;
};

inline bool finite_loss(double v) { return std::isfinite(v); }

/// One Bellman-regression step on both main critics.
inline UpdateStats critic_update(CriticEnsemble& critics, const Seq2Seq& agent, Adam& opt, const TransitionBatch& tb,
                                 double alpha, double gamma, double clip_norm) {
  std::vector<double> y;
  {
    NoGradGuard no_grad;
    auto aenc = agent.encode(tb.sources);
    Tensor next_probs = softmax(logits_at_steps(agent, aenc, tb.inputs, tb.next_steps));
    auto e1 = critics.target(0).encode(tb.references);
    auto e2 = critics.target(1).encode(tb.references);
    Tensor q1 = logits_at_steps(critics.target(0), e1, tb.inputs, tb.next_steps);
    Tensor q2 = logits_at_steps(critics.target(1), e2, tb.inputs, tb.next_steps);
    y = soft_bellman_targets(tb.rewards, tb.done, q1, q2, next_probs, alpha, gamma);
  }
  opt.zero_grad();
  std::vector<Tensor> chosen;
  for (std::size_t i = 0; i < 2; ++i) {
    auto enc = critics.main(i).encode(tb.references);
    chosen.push_back(gather(logits_at_steps(critics.main(i), enc, tb.inputs, tb.steps), tb.actions));
  }
  Tensor loss = critic_mse(chosen, y);
  UpdateStats s{loss.item(), false};
  if (!finite_loss(s.loss)) return s;
  backward(loss);
  clip_global_norm(opt.params(), clip_norm);
  s.applied = opt.step();
  return s;
}

/// Min over the two main critics at s_t, as a constant [batch, vocab] matrix.
inline Tensor min_main_q(const CriticEnsemble& critics, const TransitionBatch& tb) {
  NoGradGuard no_grad;
  auto e1 = critics.main(0).encode(tb.references);
  auto e2 = critics.main(1).encode(tb.references);
  Tensor q1 = logits_at_steps(critics.main(0), e1, tb.inputs, tb.steps);
  Tensor q2 = logits_at_steps(critics.main(1), e2, tb.inputs, tb.steps);
  return Tensor(q1.shape(), min_q(q1.values(), q2.values()));
}

struct ActorStats {
  double loss = std::numeric_limits<double>::quiet_NaN();  // policy term only
  double mle = std::numeric_limits<double>::quiet_NaN();
  double entropy = 0;  // mean policy entropy over the batch states
  bool applied = false;
};

/// Minimises policy_loss + lambda_mle * MLE(parallel) in one optimizer step.
inline ActorStats apply_actor_step(Seq2Seq& agent, Adam& opt, const Tensor& policy_loss, const Batch* parallel,
                                   double lambda_mle, double clip_norm) {
  ActorStats s;
  s.loss = policy_loss.item();
  Tensor total = policy_loss;
  if (parallel && lambda_mle > 0) {
    Tensor mle = mle_loss(agent, *parallel);
    s.mle = mle.item();
    total = add(total, scale(mle, lambda_mle));
  }
  if (!finite_loss(total.item())) return s;
  backward(total);
  clip_global_norm(opt.params(), clip_norm);
  s.applied = opt.step();
  return s;
}

inline double mean_row_entropy(const Tensor& logits) {
  double h = 0;
  const std::size_t v = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) h += entropy(softmax_row(logits.values().subspan(r * v, v)));
  return logits.rows() ? h / static_cast<double>(logits.rows()) : 0.0;
}

/// Actor step on the soft policy objective against min(Q1, Q2).
inline ActorStats actor_update(Seq2Seq& agent, const CriticEnsemble& critics, Adam& opt, const TransitionBatch& tb,
                               const Batch* parallel, double alpha, double lambda_mle, double clip_norm) {
  Tensor qmin = min_main_q(critics, tb);
  opt.zero_grad();
  auto enc = agent.encode(tb.sources);
  Tensor logits = logits_at_steps(agent, enc, tb.inputs, tb.steps);
  auto s = apply_actor_step(agent, opt, actor_loss_from_logits(logits, qmin, alpha), parallel, lambda_mle, clip_norm);
  s.entropy = mean_row_entropy(logits);
  return s;
}

struct SacStepStats {
  UpdateStats critic;
  ActorStats actor;
  bool skipped() const { return !critic.applied || !actor.applied; }
};

/// Critic step on a uniform buffer sample, actor step on the same states plus
/// the MLE term on `parallel`, then the EMA of both targets.
inline SacStepStats sac_update(Seq2Seq& agent, CriticEnsemble& critics, Adam& actor_opt, Adam& critic_opt,
                               const ReplayBuffer& buffer, const Batch& parallel, const TrainConfig& cfg,
                               double alpha, Rng& rng) {
  auto picked = buffer.sample(cfg.batch_size, rng);
  auto tb = make_transition_batch(picked);
  SacStepStats s;
  s.critic = critic_update(critics, agent, critic_opt, tb, alpha, cfg.gamma, cfg.clip_norm);
  s.actor = actor_update(agent, critics, actor_opt, tb, &parallel, alpha, cfg.lambda_mle, cfg.clip_norm);
  critics.ema_update(cfg.tau);
  return s;
}

/// Actor step with Monte-Carlo returns in place of a critic. Under kOracle the
/// returns fill the taken actions' entries of an otherwise-zero Q matrix for
/// the soft policy objective; under kPolicyGradient the loss is
/// -mean log pi(a_t) Q^_t.
inline ActorStats oracle_mode_update(Seq2Seq& agent, Adam& opt, const std::vector<Trajectory>& trajectories,
                                     const Batch* parallel, const TrainConfig& cfg, double alpha) {
  std::vector<const Transition*> items;
  std::vector<double> returns;
  for (const auto& traj : trajectories) {
    std::vector<double> r;
    for (const auto& t : traj) {
      items.push_back(&t);
      r.push_back(t.reward);
    }
    auto q = monte_carlo_returns(r, cfg.gamma);
    returns.insert(returns.end(), q.begin(), q.end());
  }
  if (items.empty()) return {};
  auto tb = make_transition_batch(items);
  opt.zero_grad();
  auto enc = agent.encode(tb.sources);
  Tensor logits = logits_at_steps(agent, enc, tb.inputs, tb.steps);
  const std::size_t n = items.size(), v = logits.cols();
  Tensor policy_loss;
  if (cfg.unsup_update == UnsupUpdate::kOracle) {
    std::vector<double> q(n * v, 0.0);
    for (std::size_t i = 0; i < n; ++i) q[i * v + tb.actions[i]] = returns[i];
    policy_loss = actor_loss_from_logits(logits, Tensor({n, v}, std::move(q)), alpha);
  } else {
    Tensor picked = gather(log_softmax(logits), tb.actions);
    policy_loss = scale(sum(mul(picked, Tensor({n, 1}, returns))), -1.0 / static_cast<double>(n));
  }
  auto s = apply_actor_step(agent, opt, policy_loss, parallel, cfg.lambda_mle, cfg.clip_norm);
  s.entropy = mean_row_entropy(logits);
  return s;
}

/// Cross-entropy step of the discriminator on every token of the trajectories.
inline DiscriminatorStep discriminator_update(DiscriminatorTrainer& trainer, const std::vector<Trajectory>& trajectories,
                                              const Tensor& pooled) {
  std::vector<SkillExample> examples;
  const std::size_t dim = pooled.cols();
  for (std::size_t b = 0; b < trajectories.size(); ++b) {
    auto row = pooled.values().subspan(b * dim, dim);
    for (const auto& t : trajectories[b]) examples.push_back({{row.begin(), row.end()}, t.action, t.skill});
  }
  if (examples.empty()) return {};
  return trainer.update(examples);
}

/// Counts consecutive skipped updates and aborts training at the limit.
class SkipGuard {
 public:
  explicit SkipGuard(std::size_t limit = 3) : limit_(limit) {}

  void record(bool skipped, const std::string& what) {
    consecutive_ = skipped ? consecutive_ + 1 : 0;
    if (skipped) ++total_;
    if (consecutive_ >= limit_)
      throw TrainingError(what + " training aborted after " + std::to_string(consecutive_) +
                          " consecutive non-finite updates");
  }

  std::size_t consecutive() const { return consecutive_; }
  std::size_t total() const { return total_; }
  void restore(std::size_t consecutive, std::size_t total) {
    consecutive_ = consecutive;
    total_ = total;
  }

 private:
  std::size_t limit_;
  std::size_t consecutive_ = 0, total_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double bleu = 0;          // corpus BLEU of greedy outputs, 0-100
  double mean_entropy = 0;  // mean policy entropy per greedy decoding step
  double loss = 0;          // teacher-forced MLE loss per token
};

inline double corpus_bleu_ids(const std::vector<std::vector<Id>>& hyps, const std::vector<std::vector<Id>>& refs) {
  BleuStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    auto h = strip_eos(hyps[i]), r = strip_eos(refs[i]);
    total += bleu_stats(std::span<const Id>(h), std::span<const Id>(r));
  }
  return 100.0 * bleu_from_stats(total);
}

inline double corpus_mle_loss(const Seq2Seq& model, const EncodedCorpus& data, std::size_t batch_size) {
  NoGradGuard no_grad;
  double total = 0, tokens = 0;
  for (const auto& b : batch_iter(data, batch_size, nullptr)) {
    double n = 0;
    for (auto len : b.target.lengths) n += static_cast<double>(len);
    total += mle_loss(model, b).item() * n;
    tokens += n;
  }
  return tokens > 0 ? total / tokens : 0.0;
}

inline EvalResult evaluate_model(const Seq2Seq& model, const EncodedCorpus& data, std::size_t batch_size = 64) {
  EvalResult r;
  if (data.size() == 0) return r;
  std::vector<double> ent;
  auto hyps = greedy_decode_all(model, data.source, batch_size, &ent);
  r.bleu = corpus_bleu_ids(hyps, data.target);
  for (double h : ent) r.mean_entropy += h;
  if (!ent.empty()) r.mean_entropy /= static_cast<double>(ent.size());
  r.loss = corpus_mle_loss(model, data, batch_size);
  return r;
}

// ---------------------------------------------------------------------------
// Report

enum class Stage { kActorPretrain = 0, kCriticPretrain = 1, kJoint = 2, kDone = 3 };

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::kActorPretrain: return "actor-pretrain";
    case Stage::kCriticPretrain: return "critic-pretrain";
    case Stage::kJoint: return "sac";
    case Stage::kDone: return "done";
  }
  return "?";
}

inline constexpr double kNotApplicable = std::numeric_limits<double>::quiet_NaN();

struct EpochRecord {
  Stage stage = Stage::kActorPretrain;
  std::size_t epoch = 0;
  double mle_loss = kNotApplicable;
  double valid_loss = kNotApplicable;
  double critic_loss = kNotApplicable;
  double actor_loss = kNotApplicable;
  double mean_reward = kNotApplicable;
  double mean_entropy = kNotApplicable;
  double valid_bleu = kNotApplicable;
  double learning_rate = kNotApplicable;
};

inline constexpr const char* kReportHeader =
    "stage,epoch,mle_loss,valid_loss,critic_loss,actor_loss,mean_reward,mean_entropy,valid_bleu,learning_rate";

inline std::string format_field(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string report_csv(const std::vector<EpochRecord>& rows) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    out += to_string(r.stage) + "," + std::to_string(r.epoch);
    for (double v : {r.mle_loss, r.valid_loss, r.critic_loss, r.actor_loss, r.mean_reward, r.mean_entropy,
                     r.valid_bleu})
      out += "," + format_field(v);
    char lr[64];
    std::snprintf(lr, sizeof lr, "%.3e", r.learning_rate);
    out += "," + (std::isnan(r.learning_rate) ? std::string() : std::string(lr)) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Orchestration

struct TrainingData {
  EncodedCorpus train;
  EncodedCorpus valid;
};

/// Running mean that ignores NaN entries.
class Mean {
 public:
  void add(double v) {
    if (std::isnan(v)) return;
    sum_ += v;
    ++n_;
  }
  double value() const { return n_ ? sum_ / static_cast<double>(n_) : kNotApplicable; }

 private:
  double sum_ = 0;
  std::size_t n_ = 0;
};

/// Owns every model, optimizer and counter of a training run. `step_epoch`
/// advances the schedule by one epoch; the whole state round-trips through a
/// Checkpoint so an interrupted run continues exactly where it stopped.
class Trainer {
 public:
  using EpochHook = std::function<bool(const Trainer&)>;

  Trainer(TrainConfig cfg, TrainMode mode, std::size_t source_vocab, std::size_t target_vocab)
      : cfg_(cfg), mode_(mode), rng_(cfg.seed), alpha_(cfg.alpha), skips_(cfg.max_skipped_updates) {
    validate(cfg_);
    const ModelDims dims{cfg_.embed, cfg_.hidden};
    agent_ = std::make_unique<Seq2Seq>(source_vocab, target_vocab, dims, rng_);
    mle_opt_ = std::make_unique<Adam>(agent_->params().tensors(), adam(cfg_.lr_mle));
    if (mode_ != TrainMode::kMle) actor_opt_ = std::make_unique<Adam>(agent_->params().tensors(), adam(cfg_.lr_actor));
    if (mode_ == TrainMode::kSacBleu) {
      critics_ = std::make_unique<CriticEnsemble>(target_vocab, dims, rng_);
      critic_pretrain_opt_ =
          std::make_unique<Adam>(critics_->main_parameters(), adam(cfg_.lr_critic_pretrain));
      critic_opt_ = std::make_unique<Adam>(critics_->main_parameters(), adam(cfg_.lr_critic));
      buffer_ = std::make_unique<ReplayBuffer>(cfg_.buffer_capacity);
    }
    if (mode_ == TrainMode::kSacUnsup) {
      disc_ = std::make_unique<Discriminator>(cfg_.hidden, target_vocab, cfg_.discriminator_embed, cfg_.skills, rng_,
                                              cfg_.discriminator_hidden);
      disc_trainer_ = std::make_unique<DiscriminatorTrainer>(*disc_, adam(cfg_.lr_discriminator), cfg_.clip_norm);
    }
  }

  const TrainConfig& config() const { return cfg_; }
  TrainMode mode() const { return mode_; }
  Stage stage() const { return stage_; }
  std::size_t stage_epoch() const { return epoch_; }
  double alpha() const { return alpha_; }
  Seq2Seq& agent() { return *agent_; }
  const Seq2Seq& agent() const { return *agent_; }
  CriticEnsemble* critics() { return critics_.get(); }
  const CriticEnsemble* critics() const { return critics_.get(); }
  Discriminator* discriminator() { return disc_.get(); }
  const ReplayBuffer* buffer() const { return buffer_.get(); }
  const std::vector<EpochRecord>& report() const { return report_; }
  std::size_t skipped_updates() const { return skips_.total(); }
  /// Best validation score of the current or last completed stage.
  double best_score() const { return best_; }
  /// Agent parameters at that score; empty before the first evaluation.
  const std::vector<std::vector<double>>& best_parameters() const { return best_snapshot_; }

  /// Loads a pretrained actor from `prefix`-qualified arrays and skips actor
  /// pretraining. Only valid on a fresh trainer.
  void start_from_pretrained(const Checkpoint& model, const std::string& prefix = "agent.") {
    if (stage_ != Stage::kActorPretrain || epoch_ != 0)
      throw std::logic_error("start_from_pretrained: training has already started");
    model.take(prefix, agent_->params());
    best_snapshot_ = agent_->params().snapshot();
    leave_actor_pretraining();
  }

  RewardSpec reward_spec() const {
    RewardSpec s;
    s.mode = mode_ == TrainMode::kSacUnsup ? RewardMode::kUnsupervisedSkill : RewardMode::kSupervisedBleu;
    s.length_penalty = cfg_.length_penalty;
    s.rescale_alpha = cfg_.reward_scale_alpha;
    s.skills = cfg_.skills;
    return s;
  }

  /// Runs until the schedule finishes or `hook` returns false after an epoch.
  void run(const TrainingData& data, const EpochHook& hook = {}) {
    while (step_epoch(data))
      if (hook && !hook(*this)) return;
  }

  /// One epoch of the current stage, followed by stage bookkeeping. Returns
  /// false once the schedule is complete.
  bool step_epoch(const TrainingData& data) {
    if (data.train.size() == 0) throw std::invalid_argument("training corpus is empty");
    if (data.valid.size() == 0) throw std::invalid_argument("validation split is empty");
    switch (stage_) {
      case Stage::kActorPretrain: actor_pretrain_epoch(data); break;
      case Stage::kCriticPretrain: critic_pretrain_epoch(data); break;
      case Stage::kJoint: joint_epoch(data); break;
      case Stage::kDone: return false;
    }
    return true;
  }

  Checkpoint state() const {
    Checkpoint ck;
    ck.meta["trainer.mode"] = to_string(mode_);
    std::ostringstream rs;
    rs << rng_;
    ck.meta["trainer.rng"] = rs.str();
    ck.arrays["trainer.counters"] = NamedArray{
        {9},
        {static_cast<double>(stage_), static_cast<double>(epoch_), best_, static_cast<double>(bad_epochs_),
         static_cast<double>(lr_bad_epochs_), static_cast<double>(skips_.consecutive()), alpha_,
         static_cast<double>(buffer_ ? buffer_->inserted() : 0), static_cast<double>(skips_.total())}};
    ck.put("agent.", agent_->params());
    put_snapshot(ck, "best.", best_snapshot_);
    put_optimizer(ck, "opt.mle.", *mle_opt_);
    if (actor_opt_) put_optimizer(ck, "opt.actor.", *actor_opt_);
    if (critics_) {
      critics_->put(ck);
      put_optimizer(ck, "opt.critic_pretrain.", *critic_pretrain_opt_);
      put_optimizer(ck, "opt.critic.", *critic_opt_);
      put_buffer(ck, *buffer_);
    }
    if (disc_) {
      ck.put("disc.", disc_->params());
      put_optimizer(ck, "opt.disc.", disc_trainer_->optimizer());
    }
    std::vector<double> rows;
    for (const auto& r : report_)
      rows.insert(rows.end(), {static_cast<double>(r.stage), static_cast<double>(r.epoch), r.mle_loss, r.valid_loss,
                               r.critic_loss, r.actor_loss, r.mean_reward, r.mean_entropy, r.valid_bleu,
                               r.learning_rate});
    ck.arrays["trainer.report"] = NamedArray{{report_.size(), kReportFields}, std::move(rows)};
    return ck;
  }

  void restore(const Checkpoint& ck) {
    if (ck.meta.at("trainer.mode") != to_string(mode_))
      throw std::invalid_argument("checkpoint was written in mode " + ck.meta.at("trainer.mode") + ", not " +
                                  to_string(mode_));
    std::istringstream rs(ck.meta.at("trainer.rng"));
    rs >> rng_;
    const auto& c = ck.arrays.at("trainer.counters").values;
    stage_ = static_cast<Stage>(static_cast<int>(c.at(0)));
    epoch_ = static_cast<std::size_t>(c[1]);
    best_ = c[2];
    bad_epochs_ = static_cast<std::size_t>(c[3]);
    lr_bad_epochs_ = static_cast<std::size_t>(c[4]);
    skips_.restore(static_cast<std::size_t>(c[5]), static_cast<std::size_t>(c.at(8)));
    alpha_ = c[6];
    ck.take("agent.", agent_->params());
    best_snapshot_ = take_snapshot(ck, "best.");
    take_optimizer(ck, "opt.mle.", *mle_opt_);
    if (actor_opt_) take_optimizer(ck, "opt.actor.", *actor_opt_);
    if (critics_) {
      critics_->take(ck);
      take_optimizer(ck, "opt.critic_pretrain.", *critic_pretrain_opt_);
      take_optimizer(ck, "opt.critic.", *critic_opt_);
      take_buffer(ck, *buffer_);
      buffer_->restore_counter(static_cast<std::uint64_t>(c[7]));
    }
    if (disc_) {
      ck.take("disc.", disc_->params());
      take_optimizer(ck, "opt.disc.", disc_trainer_->optimizer());
    }
    report_.clear();
    const auto& rep = ck.arrays.at("trainer.report");
    for (std::size_t i = 0; i < rep.shape.at(0); ++i) {
      const double* r = rep.values.data() + i * kReportFields;
      report_.push_back({static_cast<Stage>(static_cast<int>(r[0])), static_cast<std::size_t>(r[1]), r[2], r[3], r[4],
                         r[5], r[6], r[7], r[8], r[9]});
    }
  }

 private:
  static constexpr std::size_t kReportFields = 10;

  AdamOptions adam(double lr) const {
    AdamOptions o;
    o.learning_rate = lr;
    o.weight_decay = cfg_.weight_decay;
    return o;
  }

  // -- stages --------------------------------------------------------------

  void actor_pretrain_epoch(const TrainingData& data) {
    Mean train_loss;
    std::size_t index = 0;
    for (const auto& batch : batch_iter(data.train, cfg_.batch_size, &rng_)) {
      mle_opt_->zero_grad();
      Tensor loss = mle_loss(*agent_, batch);
      const double v = loss.item();
      if (!finite_loss(v))
        throw TrainingError("actor pretraining diverged: non-finite MLE loss at epoch " + std::to_string(epoch_ + 1) +
                            ", batch " + std::to_string(index + 1));
      backward(loss);
      clip_global_norm(mle_opt_->params(), cfg_.clip_norm);
      mle_opt_->step();
      train_loss.add(v);
      ++index;
    }
    auto ev = evaluate_model(*agent_, data.valid, cfg_.batch_size);
    ++epoch_;
    EpochRecord rec;
    rec.stage = Stage::kActorPretrain;
    rec.epoch = epoch_;
    rec.mle_loss = train_loss.value();
    rec.valid_loss = ev.loss;
    rec.mean_entropy = ev.mean_entropy;
    rec.valid_bleu = ev.bleu;
    rec.learning_rate = mle_opt_->learning_rate();
    report_.push_back(rec);

    const bool stop = track(-ev.loss, cfg_.actor_patience, cfg_.actor_max_epochs, {mle_opt_.get()});
    if (!stop) return;
    agent_->params().restore(best_snapshot_);
    leave_actor_pretraining();
  }

  void leave_actor_pretraining() {
    if (mode_ == TrainMode::kMle) enter(Stage::kDone);
    else if (mode_ == TrainMode::kSacBleu && cfg_.critic_epochs > 0) enter(Stage::kCriticPretrain);
    else enter(Stage::kJoint);
  }

  void critic_pretrain_epoch(const TrainingData& data) {
    Mean closs, reward;
    const auto spec = reward_spec();
    for (const auto& batch : batch_iter(data.train, cfg_.batch_size, &rng_)) {
      for (auto& traj : collect_trajectories(*agent_, batch, spec, rng_))
        for (auto& t : traj) {
          reward.add(t.reward);
          buffer_->push(std::move(t));
        }
      for (std::size_t g = 0; g < cfg_.gradient_steps; ++g) {
        auto picked = buffer_->sample(cfg_.batch_size, rng_);
        auto s = critic_update(*critics_, *agent_, *critic_pretrain_opt_, make_transition_batch(picked), alpha_,
                               cfg_.gamma, cfg_.clip_norm);
        note_skip(!s.applied, "critic pretraining");
        closs.add(s.loss);
        critics_->ema_update(cfg_.tau);
      }
    }
    ++epoch_;
    EpochRecord rec;
    rec.stage = Stage::kCriticPretrain;
    rec.epoch = epoch_;
    rec.critic_loss = closs.value();
    rec.mean_reward = reward.value();
    rec.learning_rate = critic_pretrain_opt_->learning_rate();
    report_.push_back(rec);
    if (epoch_ >= cfg_.critic_epochs) enter(Stage::kJoint);
  }

  void joint_epoch(const TrainingData& data) {
    Mean mle, closs, aloss, reward;
    const auto spec = reward_spec();
    for (const auto& batch : batch_iter(data.train, cfg_.batch_size, &rng_)) {
      if (mode_ == TrainMode::kSacBleu) {
        for (auto& traj : collect_trajectories(*agent_, batch, spec, rng_))
          for (auto& t : traj) {
            reward.add(t.reward);
            buffer_->push(std::move(t));
          }
        for (std::size_t g = 0; g < cfg_.gradient_steps; ++g) {
          auto s = sac_update(*agent_, *critics_, *actor_opt_, *critic_opt_, *buffer_, batch, cfg_, alpha_, rng_);
          note_skip(s.skipped(), "SAC");
          closs.add(s.critic.loss);
          aloss.add(s.actor.loss);
          mle.add(s.actor.mle);
          if (cfg_.auto_alpha && s.actor.applied) tune_alpha(s.actor.entropy);
        }
      } else {
        auto traj = sample_trajectories(*agent_, batch, rng_, cfg_.skills);
        Tensor pooled = pooled_sources(*agent_, batch.source);
        for (std::size_t g = 0; g < cfg_.gradient_steps; ++g) {
          discriminator_update(*disc_trainer_, traj, pooled);
          score_skills(traj, *disc_, pooled, spec.rescale_alpha);
          auto s = oracle_mode_update(*agent_, *actor_opt_, traj, &batch, cfg_, alpha_);
          note_skip(!s.applied, "oracle-mode");
          aloss.add(s.loss);
          mle.add(s.mle);
          if (cfg_.auto_alpha && s.applied) tune_alpha(s.entropy);
        }
        for (const auto& tr : traj)
          for (const auto& t : tr) reward.add(t.reward);
      }
    }
    auto ev = evaluate_model(*agent_, data.valid, cfg_.batch_size);
    ++epoch_;
    EpochRecord rec;
    rec.stage = Stage::kJoint;
    rec.epoch = epoch_;
    rec.mle_loss = mle.value();
    rec.valid_loss = ev.loss;
    rec.critic_loss = closs.value();
    rec.actor_loss = aloss.value();
    rec.mean_reward = reward.value();
    rec.mean_entropy = ev.mean_entropy;
    rec.valid_bleu = ev.bleu;
    rec.learning_rate = actor_opt_->learning_rate();
    report_.push_back(rec);

    std::vector<Adam*> opts{actor_opt_.get()};
    if (critic_opt_) opts.push_back(critic_opt_.get());
    if (track(ev.bleu, cfg_.sac_patience, cfg_.sac_max_epochs, opts, true)) {
      agent_->params().restore(best_snapshot_);
      enter(Stage::kDone);
    }
  }

  // -- bookkeeping ---------------------------------------------------------

  void enter(Stage s) {
    stage_ = s;
    epoch_ = 0;
    best_ = -std::numeric_limits<double>::infinity();
    bad_epochs_ = lr_bad_epochs_ = 0;
  }

  /// Records `score` (higher is better), snapshots the agent on improvement and
  /// halves learning rates after `lr_patience` epochs without one. With
  /// `ties_improve` an equal score keeps the newer parameters. Returns true
  /// when the stage should stop.
  bool track(double score, std::size_t patience, std::size_t max_epochs, const std::vector<Adam*>& opts,
             bool ties_improve = false) {
    if (score > best_ || (ties_improve && score == best_)) {
      best_ = score;
      best_snapshot_ = agent_->params().snapshot();
      bad_epochs_ = lr_bad_epochs_ = 0;
    } else {
      ++bad_epochs_;
      if (++lr_bad_epochs_ >= cfg_.lr_patience) {
        for (auto* o : opts) o->set_learning_rate(o->learning_rate() * 0.5);
        lr_bad_epochs_ = 0;
      }
    }
    return bad_epochs_ >= patience || epoch_ >= max_epochs;
  }

  void note_skip(bool skipped, const char* what) { skips_.record(skipped, what); }

  /// Gradient step on log alpha for J(alpha) = alpha (H - H_target).
  void tune_alpha(double policy_entropy) {
    const double log_alpha = std::log(std::max(alpha_, 1e-12)) - cfg_.lr_alpha * alpha_ * (policy_entropy - cfg_.target_entropy);
    alpha_ = std::exp(log_alpha);
  }

  // -- serialisation helpers -----------------------------------------------

  static void put_snapshot(Checkpoint& ck, const std::string& prefix, const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < snap.size(); ++i)
      ck.arrays[prefix + std::to_string(i)] = NamedArray{{snap[i].size()}, snap[i]};
  }

  static std::vector<std::vector<double>> take_snapshot(const Checkpoint& ck, const std::string& prefix) {
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0;; ++i) {
      auto it = ck.arrays.find(prefix + std::to_string(i));
      if (it == ck.arrays.end()) return out;
      out.push_back(it->second.values);
    }
  }

  static void put_optimizer(Checkpoint& ck, const std::string& prefix, const Adam& opt) {
    ck.arrays[prefix + "counters"] = NamedArray{
        {3},
        {static_cast<double>(opt.step_count()), static_cast<double>(opt.skipped_steps()), opt.learning_rate()}};
    put_snapshot(ck, prefix + "m.", opt.first_moments());
    put_snapshot(ck, prefix + "v.", opt.second_moments());
  }

  static void take_optimizer(const Checkpoint& ck, const std::string& prefix, Adam& opt) {
    const auto& c = ck.arrays.at(prefix + "counters").values;
    opt.load_state(static_cast<std::uint64_t>(c.at(0)), static_cast<std::uint64_t>(c.at(1)),
                   take_snapshot(ck, prefix + "m."), take_snapshot(ck, prefix + "v."));
    opt.set_learning_rate(c.at(2));
  }

  static void put_ids(std::vector<double>& out, const std::vector<Id>& ids) {
    out.push_back(static_cast<double>(ids.size()));
    for (auto i : ids) out.push_back(static_cast<double>(i));
  }

  static std::vector<Id> take_ids(const std::vector<double>& in, std::size_t& pos) {
    const auto n = static_cast<std::size_t>(in.at(pos++));
    std::vector<Id> ids(n);
    for (auto& i : ids) i = static_cast<Id>(in.at(pos++));
    return ids;
  }

  static void put_buffer(Checkpoint& ck, const ReplayBuffer& buf) {
    std::vector<double> flat;
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const auto& t = buf[i];
      put_ids(flat, t.source);
      put_ids(flat, t.prefix);
      put_ids(flat, t.reference);
      flat.insert(flat.end(), {static_cast<double>(t.action), t.reward, t.done ? 1.0 : 0.0,
                               static_cast<double>(t.skill)});
    }
    ck.arrays["buffer"] = NamedArray{{flat.size()}, std::move(flat)};
  }

  static void take_buffer(const Checkpoint& ck, ReplayBuffer& buf) {
    buf.clear();
    const auto& flat = ck.arrays.at("buffer").values;
    std::size_t pos = 0;
    while (pos < flat.size()) {
      Transition t;
      t.source = take_ids(flat, pos);
      t.prefix = take_ids(flat, pos);
      t.reference = take_ids(flat, pos);
      t.action = static_cast<Id>(flat.at(pos++));
      t.reward = flat.at(pos++);
      t.done = flat.at(pos++) != 0.0;
      t.skill = static_cast<std::size_t>(flat.at(pos++));
      buf.push(std::move(t));
    }
  }

  TrainConfig cfg_;
  TrainMode mode_;
  Rng rng_;
  double alpha_;
  std::unique_ptr<Seq2Seq> agent_;
  std::unique_ptr<Adam> mle_opt_, actor_opt_, critic_pretrain_opt_, critic_opt_;
  std::unique_ptr<CriticEnsemble> critics_;
  std::unique_ptr<ReplayBuffer> buffer_;
  std::unique_ptr<Discriminator> disc_;
  std::unique_ptr<DiscriminatorTrainer> disc_trainer_;

  Stage stage_ = Stage::kActorPretrain;
  std::size_t epoch_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0, lr_bad_epochs_ = 0;
  SkipGuard skips_;
  std::vector<std::vector<double>> best_snapshot_;
  std::vector<EpochRecord> report_;
};

}  // namespace sacmt
