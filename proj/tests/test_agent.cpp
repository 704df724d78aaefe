#include "sacmt/agent.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace sacmt;

namespace {

constexpr std::size_t kSrcVocab = 11, kTgtVocab = 9;

Seq2Seq small_model(std::uint64_t seed = 1, ModelDims dims = {6, 8}) {
  Rng rng(seed);
  return Seq2Seq(kSrcVocab, kTgtVocab, dims, rng);
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  auto v = t.values();
  return {v.begin() + static_cast<std::ptrdiff_t>(r * t.cols()), v.begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

// log-softmax written out directly
std::vector<double> reference_log_softmax(const std::vector<double>& x) {
  double mx = *std::max_element(x.begin(), x.end()), z = 0;
  for (double v : x) z += std::exp(v - mx);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - mx - std::log(z);
  return out;
}

}  // namespace

TEST(Encode, OneStatePerPositionAndDeterministic) {
  auto m = small_model();
  std::vector<Id> src{4, 5, 6, 7, Vocabulary::kEos};
  auto a = m.encode(src), b = m.encode(src);
  ASSERT_EQ(a.positions(), src.size());
  for (std::size_t t = 0; t < src.size(); ++t) {
    EXPECT_EQ(a.states[t].shape(), (std::vector<std::size_t>{1, 8}));
    EXPECT_EQ(max_abs_diff(a.states[t], b.states[t]), 0.0);
  }
}

TEST(Encode, PermutationChangesStates) {
  auto m = small_model(3);
  auto a = m.encode(std::vector<Id>{4, 5, 6, 7, Vocabulary::kEos});
  auto b = m.encode(std::vector<Id>{4, 6, 5, 7, Vocabulary::kEos});
  double diff = 0;
  for (std::size_t t = 0; t < a.positions(); ++t) diff = std::max(diff, max_abs_diff(a.states[t], b.states[t]));
  EXPECT_GT(diff, 1e-6);
  EXPECT_EQ(max_abs_diff(a.states[0], b.states[0]), 0.0);
}

TEST(Encode, PaddingDoesNotLeakIntoShorterRows) {
  auto m = small_model(4);
  std::vector<Id> shorter{4, 5, Vocabulary::kEos}, longer{6, 7, 8, 9, 10, Vocabulary::kEos};
  auto alone = m.encode(shorter);
  auto batched = m.encode(pad_sequences({shorter, longer}));
  for (std::size_t t = 0; t < shorter.size(); ++t) {
    auto r = row(batched.states[t], 0);
    for (std::size_t k = 0; k < r.size(); ++k) EXPECT_NEAR(r[k], alone.states[t].values()[k], 1e-14);
  }
  auto pooled = row(batched.pooled, 0);
  for (std::size_t k = 0; k < pooled.size(); ++k) EXPECT_NEAR(pooled[k], alone.pooled.values()[k], 1e-14);
}

TEST(Encode, RejectsBadInput) {
  auto m = small_model();
  EXPECT_THROW(m.encode(std::vector<Id>{4, static_cast<Id>(kSrcVocab)}), std::out_of_range);
  EXPECT_THROW(m.encode(std::vector<Id>{}), std::invalid_argument);
}

TEST(DecodeStep, DistributionsAndTimestep) {
  auto m = small_model(5);
  auto enc = m.encode(pad_sequences({{4, 5, 6, Vocabulary::kEos}, {7, Vocabulary::kEos}}));
  auto st = m.initial_state(enc);
  std::vector<Id> prev(2, Vocabulary::kBos);
  for (std::size_t step = 0; step < 3; ++step) {
    auto out = m.decode_step(enc, st, prev);
    ASSERT_EQ(out.next.step, st.step + 1);
    for (std::size_t b = 0; b < 2; ++b) {
      auto logits = row(out.logits, b);
      for (double x : logits) EXPECT_TRUE(std::isfinite(x));
      auto p = softmax_row(logits);
      EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
      auto att = row(out.attention, b);
      for (double a : att) EXPECT_GE(a, 0.0);
      EXPECT_NEAR(std::accumulate(att.begin(), att.end(), 0.0), 1.0, 1e-12);
    }
    // the short row attends only to its two real positions
    auto att = row(out.attention, 1);
    EXPECT_NEAR(att[0] + att[1], 1.0, 1e-12);
    st = out.next;
    prev = {5, 6};
  }
}

TEST(DecodeStep, SinglePositionAttentionIsOne) {
  auto m = small_model(6);
  auto enc = m.encode(std::vector<Id>{Vocabulary::kEos});
  auto out = m.decode_step(enc, m.initial_state(enc), std::vector<Id>{Vocabulary::kBos});
  ASSERT_EQ(out.attention.numel(), 1u);
  EXPECT_EQ(out.attention.values()[0], 1.0);
}

TEST(DecodeStep, PastMaxLengthRejected) {
  auto m = small_model();
  auto enc = m.encode(std::vector<Id>{4, Vocabulary::kEos});
  auto st = m.initial_state(enc, 2);
  std::vector<Id> prev{Vocabulary::kBos};
  st = m.decode_step(enc, st, prev).next;
  st = m.decode_step(enc, st, prev).next;
  EXPECT_THROW(m.decode_step(enc, st, prev), std::out_of_range);
  EXPECT_THROW(m.decode_step(enc, m.initial_state(enc), std::vector<Id>{static_cast<Id>(kTgtVocab)}),
               std::out_of_range);
}

TEST(Sampling, LogProbsMatchEmittedLogits) {
  auto m = small_model(7);
  Rng rng(70);
  std::vector<Id> src{4, 5, 6, Vocabulary::kEos};
  for (double temperature : {1.0, 0.5}) {
    auto s = sample_sequence(m, src, temperature, rng);
    ASSERT_FALSE(s.tokens.empty());
    EXPECT_TRUE(s.ended_with_eos() || s.tokens.size() == max_decode_length(3));
    // replay the chosen tokens and compare with log-softmax of the logits / temperature
    auto enc = m.encode(src);
    auto st = m.initial_state(enc);
    Id prev = Vocabulary::kBos;
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      auto out = m.decode_step(enc, st, std::vector<Id>{prev});
      auto logits = row(out.logits, 0);
      for (auto& x : logits) x /= temperature;
      EXPECT_NEAR(s.log_probs[t], reference_log_softmax(logits)[s.tokens[t]], 1e-10);
      prev = s.tokens[t];
      st = out.next;
    }
  }
}

TEST(Sampling, ColdTemperatureEqualsGreedy) {
  for (std::uint64_t seed : {8, 9, 10}) {
    auto m = small_model(seed);
    Rng rng(seed);
    std::vector<Id> src{4, 9, 6, 10, Vocabulary::kEos};
    EXPECT_EQ(sample_sequence(m, src, 1e-6, rng).tokens, greedy_decode(m, src));
  }
  auto m = small_model();
  Rng rng(1);
  EXPECT_THROW(sample_sequence(m, {4, Vocabulary::kEos}, 0.0, rng), std::invalid_argument);
}

TEST(Sampling, FirstTokenFrequenciesWithinThreeSigma) {
  auto m = small_model(11, {6, 8});
  std::vector<Id> src{4, 5, Vocabulary::kEos};
  auto enc = m.encode(src);
  auto first = m.decode_step(enc, m.initial_state(enc), std::vector<Id>{Vocabulary::kBos});
  auto p = softmax_row(row(first.logits, 0));

  constexpr std::size_t kDraws = 10000;
  Rng rng(110);
  auto draws = decode_batch(m, pad_sequences(std::vector<std::vector<Id>>(kDraws, src)), &rng);
  std::vector<double> count(kTgtVocab, 0);
  for (const auto& d : draws) count[d.tokens.front()] += 1;
  for (std::size_t k = 0; k < kTgtVocab; ++k) {
    const double sigma = std::sqrt(kDraws * p[k] * (1 - p[k]));
    EXPECT_LE(std::abs(count[k] - kDraws * p[k]), 3 * sigma + 1e-9) << "token " << k;
  }
  EXPECT_EQ(count[Vocabulary::kPad], 0);
  EXPECT_EQ(count[Vocabulary::kBos], 0);
}

TEST(Greedy, DeterministicAndNeverPad) {
  Rng data(12);
  std::uniform_int_distribution<Id> tok(4, kSrcVocab - 1);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto m = small_model(seed);
    for (int i = 0; i < 10; ++i) {
      std::vector<Id> src(1 + i % 6);
      for (auto& t : src) t = tok(data);
      src.push_back(Vocabulary::kEos);
      auto a = greedy_decode(m, src);
      EXPECT_EQ(a, greedy_decode(m, src));
      EXPECT_LE(a.size(), max_decode_length(src.size() - 1));
      for (Id t : a) {
        EXPECT_NE(t, Vocabulary::kPad);
        EXPECT_NE(t, Vocabulary::kBos);
      }
    }
  }
}

TEST(Greedy, BatchedEqualsSingle) {
  auto m = small_model(13);
  std::vector<std::vector<Id>> sources{{4, 5, Vocabulary::kEos}, {6, 7, 8, 9, Vocabulary::kEos}, {10, Vocabulary::kEos}};
  auto all = greedy_decode_all(m, sources, 2);
  for (std::size_t i = 0; i < sources.size(); ++i) EXPECT_EQ(all[i], greedy_decode(m, sources[i]));
}

TEST(MleLoss, UntrainedNearLogOfLiveVocabulary) {
  auto m = small_model(14);
  EncodedCorpus c;
  Rng data(140);
  std::uniform_int_distribution<Id> tok(4, kTgtVocab - 1);
  for (int i = 0; i < 32; ++i) {
    std::vector<Id> s(3), t(3);
    for (auto& x : s) x = tok(data);
    for (auto& x : t) x = tok(data);
    s.push_back(Vocabulary::kEos);
    t.push_back(Vocabulary::kEos);
    c.source.push_back(s);
    c.target.push_back(t);
  }
  std::vector<std::size_t> ids(32);
  std::iota(ids.begin(), ids.end(), 0);
  // PAD and BOS are masked, so a uniform policy scores ln(V - 2)
  EXPECT_NEAR(mle_loss(m, make_batch(c, ids)).item(), std::log(kTgtVocab - 2.0), 0.15);
  EXPECT_THROW(mle_loss(m, Batch{}), std::invalid_argument);
}

TEST(MleLoss, EqualsTeacherForcedNegativeLogLikelihood) {
  auto m = small_model(15);
  EncodedCorpus c;
  c.source = {{4, 5, Vocabulary::kEos}, {6, 7, 8, 9, Vocabulary::kEos}};
  c.target = {{5, 6, 7, Vocabulary::kEos}, {8, Vocabulary::kEos}};
  const double loss = mle_loss(m, make_batch(c, {0, 1})).item();

  double nll = 0, tokens = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    auto enc = m.encode(c.source[i]);
    auto st = m.initial_state(enc, c.target[i].size());
    Id prev = Vocabulary::kBos;
    for (Id y : c.target[i]) {
      auto out = m.decode_step(enc, st, std::vector<Id>{prev});
      nll -= reference_log_softmax(row(out.logits, 0))[y];
      tokens += 1;
      prev = y;
      st = out.next;
    }
  }
  EXPECT_NEAR(loss, nll / tokens, 1e-10);
}

TEST(MleLoss, PaddingInvariant) {
  auto m = small_model(16);
  EncodedCorpus c;
  c.source = {{4, 5, Vocabulary::kEos}, {6, 7, 8, 9, 10, 4, Vocabulary::kEos}};
  c.target = {{5, Vocabulary::kEos}, {8, 4, 5, 6, 7, 8, Vocabulary::kEos}};
  Batch b = make_batch(c, {0});
  const double alone = mle_loss(m, b).item();
  for (auto* p : {&b.source, &b.target}) {
    for (auto& r : p->rows) r.resize(r.size() + 3, Vocabulary::kPad);
    p->width += 3;
  }
  EXPECT_NEAR(mle_loss(m, b).item(), alone, 1e-12);
}

TEST(Params, OutputProjectionSharesTargetEmbedding) {
  auto m = small_model(17);
  EXPECT_EQ(m.target_embedding().values().data(), m.output_projection().values().data());
  const auto& entries = m.params().entries();
  EXPECT_EQ(std::count_if(entries.begin(), entries.end(),
                          [](const auto& e) { return e.first.find("tgt_embed") != std::string::npos; }),
            1);

  // perturbing the embedding row of a token moves that token's logit
  auto enc = m.encode(std::vector<Id>{4, Vocabulary::kEos});
  auto before = row(m.decode_step(enc, m.initial_state(enc), std::vector<Id>{Vocabulary::kBos}).logits, 0);
  Tensor shared = m.target_embedding();
  auto data = shared.mutable_values();
  for (std::size_t k = 0; k < 6; ++k) data[6 * 7 + k] += 0.5;
  auto after = row(m.decode_step(enc, m.initial_state(enc), std::vector<Id>{Vocabulary::kBos}).logits, 0);
  EXPECT_NE(before[7], after[7]);
  EXPECT_EQ(before[5], after[5]);
}

TEST(Params, DefaultDimensions) {
  ModelDims d;
  EXPECT_EQ(d.embed, 200u);
  EXPECT_EQ(d.hidden, 320u);
}
