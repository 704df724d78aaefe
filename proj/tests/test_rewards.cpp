#include "sacmt/rewards.hpp"
#include "support/bleu_oracle.hpp"
#include "support/suppression_stream.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace sacmt;

namespace {

std::vector<Id> ids(std::initializer_list<Id> l) { return l; }

std::vector<Id> random_ids(Rng& rng, std::size_t max_len, Id vocab, std::size_t min_len = 0) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<Id> tok(Vocabulary::kReserved, Vocabulary::kReserved + vocab - 1);
  std::vector<Id> s(len(rng));
  for (auto& t : s) t = tok(rng);
  return s;
}

}  // namespace

TEST(Bleu, IdentityScoresOne) {
  auto r = ids({4, 5, 6, 7, 8});
  EXPECT_DOUBLE_EQ(smoothed_sentence_bleu(r, r), 1.0);
}

TEST(Bleu, ShortHypothesisBrevityPenalty) {
  auto h = ids({4, 5, 6, 7});
  auto r = ids({4, 5, 6, 7, 8});
  EXPECT_NEAR(smoothed_sentence_bleu(h, r), std::exp(1.0 - 5.0 / 4.0), 1e-15);
  EXPECT_NEAR(smoothed_sentence_bleu(h, r), 0.7788, 1e-4);
}

TEST(Bleu, SmoothingKeepsScorePositiveWithoutFourGrams) {
  auto h = ids({4, 6, 5, 7});
  auto r = ids({4, 5, 6, 7});
  EXPECT_GT(smoothed_sentence_bleu(h, r), 0.0);
}

TEST(Bleu, EmptyHypothesisIsZero) { EXPECT_EQ(smoothed_sentence_bleu(std::vector<Id>{}, ids({4, 5})), 0.0); }

TEST(Bleu, MatchesBruteForceOracle) {
  Rng rng(11);
  for (int i = 0; i < 300; ++i) {
    auto h = random_ids(rng, 12, 6);
    auto r = random_ids(rng, 12, 6, 1);
    ASSERT_NEAR(smoothed_sentence_bleu(h, r), sacmt::test::oracle_sentence_bleu(h, r), 1e-12) << "instance " << i;
  }
}

TEST(Bleu, BoundedAndInvariantUnderRelabeling) {
  Rng rng(12);
  std::vector<Id> perm(10);
  std::iota(perm.begin(), perm.end(), Vocabulary::kReserved);
  for (int i = 0; i < 200; ++i) {
    auto h = random_ids(rng, 10, 10);
    auto r = random_ids(rng, 10, 10, 1);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto relabel = [&](std::vector<Id> s) {
      for (auto& t : s) t = perm[t - Vocabulary::kReserved];
      return s;
    };
    double b = smoothed_sentence_bleu(h, r);
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 1.0);
    EXPECT_NEAR(b, smoothed_sentence_bleu(relabel(h), relabel(r)), 1e-15);
  }
}

TEST(StepRewards, TelescopeToSentenceBleu) {
  Rng rng(13);
  const double coeff = 1e-4;
  for (int i = 0; i < 100; ++i) {
    auto ref = random_ids(rng, 10, 5, 1);
    auto actions = random_ids(rng, 14, 5, 0);
    actions.push_back(Vocabulary::kEos);
    auto r = per_step_bleu_rewards(actions, ref, coeff);
    ASSERT_EQ(r.size(), actions.size());
    double total = 0, penalty = 0;
    for (std::size_t t = 1; t <= r.size(); ++t) {
      total += r[t - 1];
      penalty += coeff * std::abs(double(t) - double(ref.size()));
    }
    ASSERT_NEAR(total + penalty, smoothed_sentence_bleu(strip_eos(actions), ref), 1e-12);
  }
}

TEST(StepRewards, SingleTokenMatch) {
  auto r = per_step_bleu_rewards(ids({9}), ids({9}), 1e-4);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_DOUBLE_EQ(r[0], 1.0);
}

TEST(StepRewards, UnchangedScoreGivesZero) {
  // the second token adds nothing when the score is already 0 and coeff is 0
  auto r = per_step_bleu_rewards(ids({5, 6}), ids({9, 9}), 0.0);
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 0.0);
}

TEST(Rescale, Cases) {
  EXPECT_DOUBLE_EQ(rescale_reward(0.5, 0.01), 50.0);
  EXPECT_DOUBLE_EQ(rescale_reward(0.37, 1.0), 0.37);
  EXPECT_THROW(rescale_reward(1.0, 0.0), std::invalid_argument);
  std::vector<double> r{0.1, -0.3, 0.7, 0.2};
  auto best = std::max_element(r.begin(), r.end()) - r.begin();
  for (auto& x : r) x = rescale_reward(x, 0.01);
  EXPECT_EQ(std::max_element(r.begin(), r.end()) - r.begin(), best);
}

TEST(SkillReward, Bounds) {
  EXPECT_NEAR(skill_reward_from_prob(0.25, 4), 0.0, 1e-15);
  EXPECT_NEAR(skill_reward_from_prob(1.0, 4), std::log(4.0), 1e-15);
  EXPECT_NEAR(skill_reward_from_prob(0.0, 4), std::log(1e-8) + std::log(4.0), 1e-12);
  for (double q = 0.0; q <= 1.0; q += 0.01) {
    double r = skill_reward_from_prob(q, 4);
    EXPECT_LE(r, std::log(4.0) + 1e-15);
    EXPECT_EQ(r < 0, q < 0.25);
  }
}

TEST(Skills, UniformWithinThreeSigma) {
  Rng rng(14);
  const std::size_t n = 10000, k = 4;
  auto z = assign_skills(n, k, rng);
  std::vector<double> counts(k, 0);
  for (auto v : z) {
    ASSERT_LT(v, k);
    counts[v] += 1;
  }
  const double p = 1.0 / k, sigma = std::sqrt(n * p * (1 - p));
  for (double c : counts) EXPECT_LT(std::abs(c - n * p), 3 * sigma);
}

TEST(Skills, SingleSkillRejected) {
  Rng rng(1);
  EXPECT_THROW(assign_skills(5, 1, rng), std::invalid_argument);
}

TEST(Skills, IndependentOfToken) {
  // chi-square test of independence on a 5-token x 4-skill contingency table
  Rng rng(15);
  const std::size_t tokens = 5, k = 4, n = 20000;
  std::uniform_int_distribution<std::size_t> tok(0, tokens - 1);
  std::vector<std::size_t> words(n);
  for (auto& w : words) w = tok(rng);
  auto z = assign_skills(n, k, rng);
  std::vector<double> table(tokens * k, 0), row(tokens, 0), col(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    table[words[i] * k + z[i]] += 1;
    row[words[i]] += 1;
    col[z[i]] += 1;
  }
  double chi2 = 0;
  for (std::size_t a = 0; a < tokens; ++a)
    for (std::size_t b = 0; b < k; ++b) {
      double e = row[a] * col[b] / n;
      chi2 += (table[a * k + b] - e) * (table[a * k + b] - e) / e;
    }
  // 12 degrees of freedom, 99th percentile
  EXPECT_LT(chi2, 26.217);
}

TEST(Discriminator, OutputsDistribution) {
  Rng rng(16);
  Discriminator d(6, 10, 5, 4, rng);
  std::vector<double> src{0.1, -0.2, 0.3, 0.0, 0.5, -0.1};
  auto p = d.probabilities(src, 7);
  ASSERT_EQ(p.size(), 4u);
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  EXPECT_THROW(unsup_reward(d, src, 7, 4), std::out_of_range);
}

TEST(Discriminator, UntrainedLossNearLogK) {
  Rng rng(17);
  Discriminator d(8, 12, 8, 4, rng);
  DiscriminatorTrainer tr(d, AdamOptions{.learning_rate = 1e-4});
  std::vector<SkillExample> batch;
  std::normal_distribution<double> g(0.0, 0.1);
  std::uniform_int_distribution<Id> act(4, 11);
  for (int i = 0; i < 64; ++i) {
    SkillExample ex;
    for (int j = 0; j < 8; ++j) ex.source.push_back(g(rng));
    ex.action = act(rng);
    ex.skill = static_cast<std::size_t>(i % 4);
    batch.push_back(ex);
  }
  auto step = tr.update(batch);
  EXPECT_TRUE(step.applied);
  EXPECT_NEAR(step.loss, std::log(4.0), 0.15);
}

TEST(Discriminator, OverfitsFixedMapping) {
  Rng rng(18);
  Discriminator d(4, 10, 8, 4, rng);
  DiscriminatorTrainer tr(d, AdamOptions{.learning_rate = 1e-2, .weight_decay = 0});
  std::vector<SkillExample> batch;
  for (std::size_t a = 4; a < 8; ++a) batch.push_back({{0.2, -0.1, 0.4, 0.3}, a, a - 4});
  for (int i = 0; i < 300; ++i) tr.update(batch);
  for (const auto& ex : batch) EXPECT_GT(d.probabilities(ex.source, ex.action)[ex.skill], 0.95);
  EXPECT_GT(unsup_reward(d, batch[0].source, batch[0].action, batch[0].skill), std::log(4.0) - 0.06);
}

TEST(Discriminator, FrequentRandomLabelledTokenSuppressed) {
  sacmt::test::SuppressionStream stream;
  auto trace = sacmt::test::run_suppression(stream, 19);
  const double ratio = static_cast<double>(trace.frequent_count) / (static_cast<double>(trace.rare_count) / 4.0);
  EXPECT_NEAR(ratio, 10.0, 0.5);
  EXPECT_NEAR(trace.frequent_expected_reward, 0.0, 0.05);
  EXPECT_GT(trace.rare_min_max_reward, 0.5);
}
