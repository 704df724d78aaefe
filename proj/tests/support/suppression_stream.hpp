#pragma once

// Synthetic skill stream: one frequent action labelled with uniformly random
// skills, and K rare actions, the k-th always labelled k. Each rare action
// appears 10x less often than the frequent one and the skill marginal stays
// uniform.

#include "sacmt/rewards.hpp"

#include <algorithm>
#include <vector>

namespace sacmt::test {

struct SuppressionStream {
  std::size_t skills = 4;
  Id frequent = 4;
  std::size_t source_dim = 6;
  std::size_t vocab = 12;
  double ratio = 10.0;

  Id rare(std::size_t k) const { return frequent + 1 + static_cast<Id>(k); }

  std::vector<SkillExample> batch(Rng& rng, std::size_t n) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> z(0, skills - 1);
    std::normal_distribution<double> noise(0.0, 0.05);
    const double p_frequent = ratio / (ratio + static_cast<double>(skills));
    std::vector<SkillExample> out(n);
    for (auto& ex : out) {
      ex.source.resize(source_dim);
      for (std::size_t d = 0; d < source_dim; ++d) ex.source[d] = 0.1 * static_cast<double>(d % 3) + noise(rng);
      if (u(rng) < p_frequent) {
        ex.action = frequent;
        ex.skill = z(rng);
      } else {
        ex.skill = z(rng);
        ex.action = rare(ex.skill);
      }
    }
    return out;
  }
};

struct SuppressionTrace {
  double frequent_expected_reward = 0;  // E_z[r_z(frequent)], z uniform
  double rare_min_max_reward = 0;       // min over rare actions of max_z r_z
  std::size_t frequent_count = 0, rare_count = 0;
};

/// Trains a fresh discriminator on the stream and measures both rewards at a
/// noise-free source.
inline SuppressionTrace run_suppression(const SuppressionStream& s, std::uint64_t seed, std::size_t steps = 1500,
                                        std::size_t batch = 64) {
  Rng rng(seed);
  Discriminator disc(s.source_dim, s.vocab, 8, s.skills, rng, 32);
  DiscriminatorTrainer tr(disc, AdamOptions{.learning_rate = 3e-3, .weight_decay = 0});
  SuppressionTrace out;
  for (std::size_t i = 0; i < steps; ++i) {
    auto b = s.batch(rng, batch);
    for (const auto& ex : b) (ex.action == s.frequent ? out.frequent_count : out.rare_count) += 1;
    tr.update(b);
  }
  std::vector<double> src(s.source_dim);
  for (std::size_t d = 0; d < s.source_dim; ++d) src[d] = 0.1 * static_cast<double>(d % 3);
  const double k = static_cast<double>(s.skills);
  for (std::size_t z = 0; z < s.skills; ++z) out.frequent_expected_reward += unsup_reward(disc, src, s.frequent, z) / k;
  out.rare_min_max_reward = 1e300;
  for (std::size_t a = 0; a < s.skills; ++a) {
    double best = -1e300;
    for (std::size_t z = 0; z < s.skills; ++z) best = std::max(best, unsup_reward(disc, src, s.rare(a), z));
    out.rare_min_max_reward = std::min(out.rare_min_max_reward, best);
  }
  return out;
}

}  // namespace sacmt::test
