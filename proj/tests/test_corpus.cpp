#include "sacmt/corpus.hpp"
#include "sacmt/metrics.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace sacmt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto d = fs::path(testing::TempDir()) / "sacmt_corpus" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  return {std::istreambuf_iterator<char>(is), {}};
}

/// Word-by-word translator for the ambiguous task that reads the sense off the
/// trigger token (or always picks `forced_sense` when set).
Sentence lexicon_translate(const Sentence& src, std::optional<std::size_t> forced_sense = std::nullopt) {
  std::map<std::string, std::string> sense_of;  // ambiguous word index -> sense
  for (const auto& t : src)
    if (t.rfind("ctx", 0) == 0) {
      auto us = t.find('_');
      sense_of[t.substr(3, us - 3)] = t.substr(us + 1);
    }
  Sentence out;
  for (const auto& t : src) {
    if (t.rfind("ctx", 0) == 0) {
      out.push_back("tc" + t.substr(3));
    } else if (t.rfind("amb", 0) == 0) {
      auto w = t.substr(3);
      out.push_back(t + "_s" + (forced_sense ? std::to_string(*forced_sense) : sense_of.at(w)));
    } else {
      out.push_back("v" + t.substr(1));
    }
  }
  return out;
}

SynthTaskSpec ambiguous_spec(std::size_t pairs) {
  SynthTaskSpec s;
  s.kind = TaskKind::kAmbiguousLexicon;
  s.vocab_size = 30;
  s.ambiguous_words = 4;
  s.pairs = pairs;
  return s;
}

}  // namespace

TEST(LoadParallel, ThreeLinesThreeExamples) {
  auto d = scratch("three");
  write(d / "a.src", "x y\nz\nx  z   y\n");
  write(d / "a.tgt", "1\n2 3\n4\n");
  auto c = load_parallel((d / "a.src").string(), (d / "a.tgt").string());
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.source[2], (Sentence{"x", "z", "y"}));
  EXPECT_EQ(c.target[1], (Sentence{"2", "3"}));
}

TEST(LoadParallel, MismatchNamesBothCounts) {
  auto d = scratch("mismatch");
  write(d / "a.src", "x\ny\nz\n");
  write(d / "a.tgt", "1\n2\n");
  try {
    load_parallel((d / "a.src").string(), (d / "a.tgt").string());
    FAIL();
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("3 lines"), std::string::npos) << msg;
    EXPECT_NE(msg.find("has 2"), std::string::npos) << msg;
  }
}

TEST(LoadParallel, EmptyLineRejectedWithLineNumber) {
  auto d = scratch("empty");
  write(d / "a.src", "x\n\nz\n");
  write(d / "a.tgt", "1\n2\n3\n");
  try {
    load_parallel((d / "a.src").string(), (d / "a.tgt").string());
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(LoadParallel, WriteReadRoundTrip) {
  auto d = scratch("roundtrip");
  Rng rng(3);
  auto c = synth_corpus(ambiguous_spec(50), rng).corpus;
  write_parallel(c, (d / "c.src").string(), (d / "c.tgt").string());
  auto back = load_parallel((d / "c.src").string(), (d / "c.tgt").string());
  EXPECT_EQ(back.source, c.source);
  EXPECT_EQ(back.target, c.target);
  write_parallel(back, (d / "d.src").string(), (d / "d.tgt").string());
  EXPECT_EQ(slurp(d / "c.src"), slurp(d / "d.src"));
}

TEST(BuildVocab, MinFreqDropsRareTokens) {
  auto v = build_vocab({{"a", "a", "b"}}, 2);
  EXPECT_EQ(v.size(), Vocabulary::kReserved + 1);
  EXPECT_EQ(v.id("a"), Vocabulary::kReserved);
  EXPECT_EQ(v.id("b"), Vocabulary::kUnk);
}

TEST(BuildVocab, ReservedIdsAndOrdering) {
  auto v = build_vocab({{"c", "b", "b", "a", "a", "d"}, {"<unk>", "<s>", "c"}});
  EXPECT_EQ(v.token(0), "<pad>");
  EXPECT_EQ(v.token(1), "<s>");
  EXPECT_EQ(v.token(2), "</s>");
  EXPECT_EQ(v.token(3), "<unk>");
  // descending count, ties lexicographic
  std::vector<std::string> rest;
  for (std::size_t i = Vocabulary::kReserved; i < v.size(); ++i) rest.push_back(v.token(i));
  EXPECT_EQ(rest, (std::vector<std::string>{"a", "b", "c", "d"}));
  auto capped = build_vocab({{"c", "b", "b", "a", "a", "d"}}, 1, 2);
  EXPECT_EQ(capped.size(), Vocabulary::kReserved + 2);
  EXPECT_EQ(capped.id("c"), Vocabulary::kUnk);
  EXPECT_THROW(build_vocab({}), std::invalid_argument);
}

TEST(BuildVocab, DeterministicAndSerializes) {
  Rng a(9), b(9);
  auto ca = synth_corpus(ambiguous_spec(200), a).corpus;
  auto cb = synth_corpus(ambiguous_spec(200), b).corpus;
  auto va = build_vocab(ca.target), vb = build_vocab(cb.target);
  EXPECT_EQ(va, vb);
  EXPECT_EQ(Vocabulary::deserialize(va.serialize()), va);
}

TEST(BuildVocab, CoversItsOwnCorpus) {
  Rng rng(10);
  auto c = synth_corpus(ambiguous_spec(300), rng).corpus;
  for (const auto* side : {&c.source, &c.target}) {
    auto v = build_vocab(*side);
    for (const auto& s : *side)
      for (const auto& t : s) EXPECT_NE(v.id(t), Vocabulary::kUnk) << t;
  }
}

TEST(BatchIter, EachSentenceOncePerEpochLastBatchNonEmpty) {
  Rng data(11);
  SynthTaskSpec spec;
  spec.pairs = 103;
  auto c = synth_corpus(spec, data).corpus;
  VocabPair vp{build_vocab(c.source), build_vocab(c.target)};
  auto enc = encode_corpus(c, vp);
  Rng shuffle(12);
  std::vector<std::size_t> first_order;
  for (int epoch = 0; epoch < 2; ++epoch) {
    auto batches = batch_iter(enc, 10, &shuffle);
    ASSERT_EQ(batches.size(), 11u);
    EXPECT_EQ(batches.back().size(), 3u);
    std::multiset<std::size_t> seen;
    std::vector<std::size_t> order;
    for (const auto& b : batches) {
      EXPECT_GT(b.size(), 0u);
      for (std::size_t r = 0; r < b.size(); ++r) {
        seen.insert(b.example_ids[r]);
        order.push_back(b.example_ids[r]);
        // right-padded, EOS-framed
        const auto& row = b.target.rows[r];
        EXPECT_EQ(row[b.target.lengths[r] - 1], Vocabulary::kEos);
        for (std::size_t t = b.target.lengths[r]; t < b.target.width; ++t) EXPECT_EQ(row[t], Vocabulary::kPad);
      }
    }
    EXPECT_EQ(seen.size(), 103u);
    for (std::size_t i = 0; i < 103; ++i) EXPECT_EQ(seen.count(i), 1u);
    if (epoch == 0) first_order = order;
    else EXPECT_NE(order, first_order);
  }
  EXPECT_THROW(batch_iter(enc, 0, nullptr), std::invalid_argument);
}

TEST(BatchIter, ContentRoundTripsThroughDetokenization) {
  Rng data(13);
  auto c = synth_corpus(ambiguous_spec(40), data).corpus;
  VocabPair vp{build_vocab(c.source), build_vocab(c.target)};
  auto enc = encode_corpus(c, vp);
  for (const auto& b : batch_iter(enc, 7, nullptr))
    for (std::size_t r = 0; r < b.size(); ++r) {
      EXPECT_EQ(vp.source.decode(b.source.rows[r]), c.source[b.example_ids[r]]);
      EXPECT_EQ(vp.target.decode(b.target.rows[r]), c.target[b.example_ids[r]]);
    }
}

TEST(Synth, PureFunctionOfSpecAndSeed) {
  Rng a(21), b(21), c(22);
  auto x = synth_corpus(ambiguous_spec(100), a), y = synth_corpus(ambiguous_spec(100), b),
       z = synth_corpus(ambiguous_spec(100), c);
  EXPECT_EQ(x.corpus.source, y.corpus.source);
  EXPECT_EQ(x.corpus.target, y.corpus.target);
  EXPECT_NE(x.corpus.source, z.corpus.source);
}

TEST(Synth, CopyAndReverseTargets) {
  SynthTaskSpec s;
  s.pairs = 50;
  Rng rng(23);
  auto copy = synth_corpus(s, rng).corpus;
  s.kind = TaskKind::kReverse;
  auto rev = synth_corpus(s, rng).corpus;
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(copy.source[i], copy.target[i]);
    EXPECT_EQ(Sentence(rev.source[i].rbegin(), rev.source[i].rend()), rev.target[i]);
    EXPECT_GE(copy.source[i].size(), s.min_length);
    EXPECT_LE(copy.source[i].size(), s.max_length);
  }
}

TEST(Synth, RareSenseBinomialCount) {
  Rng rng(24);
  auto out = synth_corpus(ambiguous_spec(1000), rng);
  std::size_t rare = 0;
  for (const auto& r : out.records) rare += r.correct.front().ends_with("_s1");
  // mean 200, binomial sd 12.6
  EXPECT_NEAR(static_cast<double>(rare), 200.0, 40.0);
}

TEST(Synth, OracleTranslatorScoresFullLta) {
  Rng rng(25);
  auto out = synth_corpus(ambiguous_spec(500), rng);
  std::vector<Sentence> hyps;
  for (const auto& s : out.corpus.source) hyps.push_back(lexicon_translate(s));
  EXPECT_EQ(hyps, out.corpus.target);
  EXPECT_EQ(lta(hyps, out.records), 1.0);
}

TEST(Synth, MajoritySenseTranslatorScoresDominantFrequency) {
  Rng rng(26);
  auto out = synth_corpus(ambiguous_spec(1000), rng);
  std::vector<Sentence> hyps;
  std::size_t dominant = 0;
  for (const auto& s : out.corpus.source) {
    hyps.push_back(lexicon_translate(s, 0));
    for (const auto& t : s) dominant += t.rfind("ctx", 0) == 0 && t.ends_with("_0");
  }
  const double score = lta(hyps, out.records);
  EXPECT_DOUBLE_EQ(score, static_cast<double>(dominant) / 1000.0);
  EXPECT_NEAR(score, 0.8, 3 * std::sqrt(0.8 * 0.2 / 1000.0));
}

TEST(Synth, InfeasibleSpecsRejected) {
  Rng rng(1);
  auto s = ambiguous_spec(10);
  s.vocab_size = 13;
  EXPECT_THROW(synth_corpus(s, rng), std::invalid_argument);
  s = ambiguous_spec(10);
  s.senses = 1;
  s.sense_skew = {1.0};
  EXPECT_THROW(synth_corpus(s, rng), std::invalid_argument);
  s = ambiguous_spec(10);
  s.sense_skew = {0.7, 0.2};
  EXPECT_THROW(synth_corpus(s, rng), std::invalid_argument);
  s = ambiguous_spec(10);
  s.min_length = 0;
  EXPECT_THROW(synth_corpus(s, rng), std::invalid_argument);
}
