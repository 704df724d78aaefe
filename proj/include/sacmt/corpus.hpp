#pragma once

// Corpus ingestion, vocabularies, padded batching and synthetic tasks.

#include "sacmt/mlt.hpp"
#include "sacmt/params.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sacmt {

using Id = std::size_t;
using Sentence = std::vector<std::string>;

class Vocabulary {
 public:
  static constexpr Id kPad = 0, kBos = 1, kEos = 2, kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary() {
    for (const char* t : {"<pad>", "<s>", "</s>", "<unk>"}) push(t);
  }

  /// Adds a token if absent; returns its id.
  Id add(const std::string& token) {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    return push(token);
  }

  Id id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(Id id) const {
    if (id >= tokens_.size()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    return tokens_[id];
  }
  std::size_t size() const { return tokens_.size(); }

  std::vector<Id> encode(const Sentence& s) const {
    std::vector<Id> out;
    out.reserve(s.size());
    for (const auto& t : s) out.push_back(id(t));
    return out;
  }

  /// Drops PAD/BOS and stops at the first EOS.
  Sentence decode(const std::vector<Id>& ids) const {
    Sentence out;
    for (Id i : ids) {
      if (i == kEos) break;
      if (i == kPad || i == kBos) continue;
      out.push_back(token(i));
    }
    return out;
  }

  std::string serialize() const {
    std::string s;
    for (const auto& t : tokens_) s += t + "\n";
    return s;
  }
  static Vocabulary deserialize(const std::string& text) {
    Vocabulary v;
    std::istringstream is(text);
    std::string line;
    std::size_t i = 0;
    while (std::getline(is, line)) {
      if (i < kReserved) {
        if (line != v.tokens_[i]) throw std::runtime_error("serialized vocabulary has bad reserved token '" + line + "'");
      } else {
        v.push(line);
      }
      ++i;
    }
    return v;
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  Id push(const std::string& t) {
    Id i = tokens_.size();
    tokens_.push_back(t);
    index_.emplace(t, i);
    return i;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Id> index_;
};

/// Frequency-ordered vocabulary: descending count, ties lexicographic.
/// Tokens under min_freq or past max_size are left out and encode as UNK.
inline Vocabulary build_vocab(const std::vector<Sentence>& side, std::size_t min_freq = 1,
                              std::optional<std::size_t> max_size = std::nullopt) {
  if (side.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : side)
    for (const auto& t : s) ++counts[t];
  Vocabulary probe;
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [t, c] : counts)
    if (c >= min_freq && !(probe.contains(t) && probe.id(t) < Vocabulary::kReserved)) ranked.emplace_back(t, c);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_size && ranked.size() > *max_size) ranked.resize(*max_size);
  Vocabulary v;
  for (const auto& [t, c] : ranked) v.add(t);
  return v;
}

struct ParallelCorpus {
  std::vector<Sentence> source;
  std::vector<Sentence> target;
  std::string split = "train";

  std::size_t size() const { return source.size(); }
};

inline Sentence tokenize(const std::string& line) {
  Sentence out;
  std::istringstream is(line);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

inline std::string join_tokens(const Sentence& s) { return detail::join(s, " "); }

inline std::vector<Sentence> read_sentences(const std::string& path, bool allow_empty = false) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<Sentence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto toks = tokenize(line);
    if (toks.empty() && !allow_empty) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty line");
    out.push_back(std::move(toks));
  }
  return out;
}

inline void write_sentences(const std::string& path, const std::vector<Sentence>& sentences) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  for (const auto& s : sentences) os << join_tokens(s) << '\n';
}

inline ParallelCorpus load_parallel(const std::string& source_path, const std::string& target_path,
                                    std::string split = "train") {
  ParallelCorpus c;
  c.source = read_sentences(source_path);
  c.target = read_sentences(target_path);
  c.split = std::move(split);
  if (c.source.size() != c.target.size())
    throw std::runtime_error("parallel files differ in length: " + source_path + " has " +
                             std::to_string(c.source.size()) + " lines, " + target_path + " has " +
                             std::to_string(c.target.size()));
  return c;
}

inline void write_parallel(const ParallelCorpus& c, const std::string& source_path, const std::string& target_path) {
  write_sentences(source_path, c.source);
  write_sentences(target_path, c.target);
}

// ---------------------------------------------------------------------------
// Id-level corpora and batches

struct VocabPair {
  Vocabulary source;
  Vocabulary target;
};

/// Sentences as ids, each terminated by EOS.
struct EncodedCorpus {
  std::vector<std::vector<Id>> source;
  std::vector<std::vector<Id>> target;
  std::size_t size() const { return source.size(); }
};

inline std::vector<Id> encode_with_eos(const Vocabulary& v, const Sentence& s) {
  auto ids = v.encode(s);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

inline EncodedCorpus encode_corpus(const ParallelCorpus& c, const VocabPair& vocab) {
  EncodedCorpus e;
  for (std::size_t i = 0; i < c.size(); ++i) {
    e.source.push_back(encode_with_eos(vocab.source, c.source[i]));
    e.target.push_back(encode_with_eos(vocab.target, c.target[i]));
  }
  return e;
}

struct EncodedSplit {
  EncodedCorpus train;
  EncodedCorpus valid;
};

/// The last `valid_count` pairs become the validation split.
inline EncodedSplit holdout_split(const EncodedCorpus& all, std::size_t valid_count) {
  if (valid_count == 0 || valid_count >= all.size())
    throw std::invalid_argument("holdout_split: need 0 < validation size (" + std::to_string(valid_count) +
                                ") < corpus size (" + std::to_string(all.size()) + ")");
  EncodedSplit s;
  const std::size_t cut = all.size() - valid_count;
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& d = i < cut ? s.train : s.valid;
    d.source.push_back(all.source[i]);
    d.target.push_back(all.target[i]);
  }
  return s;
}

/// Right-padded id matrix.
struct PaddedIds {
  std::vector<std::vector<Id>> rows;
  std::vector<std::size_t> lengths;
  std::size_t width = 0;

  std::size_t batch() const { return rows.size(); }
  /// Column t across the batch.
  std::vector<Id> column(std::size_t t) const {
    std::vector<Id> out(rows.size());
    for (std::size_t b = 0; b < rows.size(); ++b) out[b] = rows[b][t];
    return out;
  }
};

inline PaddedIds pad_sequences(const std::vector<std::vector<Id>>& seqs) {
  PaddedIds p;
  for (const auto& s : seqs) p.width = std::max(p.width, s.size());
  for (const auto& s : seqs) {
    auto row = s;
    row.resize(p.width, Vocabulary::kPad);
    p.rows.push_back(std::move(row));
    p.lengths.push_back(s.size());
  }
  return p;
}

/// Targets carry their EOS; the decoder prepends BOS itself.
struct Batch {
  std::vector<std::size_t> example_ids;
  PaddedIds source;
  PaddedIds target;
  std::size_t size() const { return example_ids.size(); }
};

inline Batch make_batch(const EncodedCorpus& corpus, const std::vector<std::size_t>& ids) {
  Batch b;
  b.example_ids = ids;
  std::vector<std::vector<Id>> src, tgt;
  for (auto i : ids) {
    src.push_back(corpus.source.at(i));
    tgt.push_back(corpus.target.at(i));
  }
  b.source = pad_sequences(src);
  b.target = pad_sequences(tgt);
  return b;
}

/// One epoch of batches. Shuffled under `rng` when given, else corpus order.
inline std::vector<Batch> batch_iter(const EncodedCorpus& corpus, std::size_t batch_size, Rng* rng) {
  if (batch_size == 0) throw std::invalid_argument("batch_iter: batch size must be >= 1");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  if (rng) std::shuffle(order.begin(), order.end(), *rng);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(i),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    out.push_back(make_batch(corpus, ids));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class TaskKind { kCopy, kReverse, kAmbiguousLexicon };

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "copy") return TaskKind::kCopy;
  if (s == "reverse") return TaskKind::kReverse;
  if (s == "ambiguous-lexicon" || s == "ambiguous") return TaskKind::kAmbiguousLexicon;
  throw std::invalid_argument("unknown task kind '" + s + "'");
}

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kReverse: return "reverse";
    case TaskKind::kAmbiguousLexicon: return "ambiguous-lexicon";
  }
  return "?";
}

struct SynthTaskSpec {
  TaskKind kind = TaskKind::kCopy;
  /// Source vocabulary size. For the ambiguous task this counts plain words,
  /// ambiguous words and their trigger tokens together.
  std::size_t vocab_size = 20;
  std::size_t min_length = 1;
  std::size_t max_length = 8;
  std::size_t pairs = 2000;
  std::size_t ambiguous_words = 4;
  std::size_t senses = 2;
  std::vector<double> sense_skew{0.8, 0.2};
};

inline void validate(const SynthTaskSpec& s) {
  if (s.pairs == 0) throw std::invalid_argument("synthetic spec: pairs must be positive");
  if (s.min_length == 0 || s.max_length < s.min_length)
    throw std::invalid_argument("synthetic spec: need 1 <= min_length <= max_length");
  if (s.kind != TaskKind::kAmbiguousLexicon) {
    if (s.vocab_size < 2) throw std::invalid_argument("synthetic spec: vocab_size must be at least 2");
    return;
  }
  if (s.senses < 2) throw std::invalid_argument("synthetic spec: senses per word must be >= 2");
  if (s.ambiguous_words == 0) throw std::invalid_argument("synthetic spec: need at least one ambiguous word");
  if (s.sense_skew.size() != s.senses)
    throw std::invalid_argument("synthetic spec: sense_skew has " + std::to_string(s.sense_skew.size()) +
                                " entries for " + std::to_string(s.senses) + " senses");
  double total = 0;
  for (double p : s.sense_skew) {
    if (!(p > 0)) throw std::invalid_argument("synthetic spec: sense frequencies must be positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("synthetic spec: sense_skew must sum to 1");
  const std::size_t reserved = s.ambiguous_words * (1 + s.senses);
  if (s.vocab_size < reserved + 2)
    throw std::invalid_argument("synthetic spec: vocab_size " + std::to_string(s.vocab_size) + " too small for " +
                                std::to_string(s.ambiguous_words) + " ambiguous words with " +
                                std::to_string(s.senses) + " senses (need at least " +
                                std::to_string(reserved + 2) + ")");
}

struct SynthCorpus {
  ParallelCorpus corpus;
  std::vector<MltRecord> records;  // empty unless the task is ambiguous-lexicon
};

namespace synth {
inline std::string plain_source(std::size_t i) { return "w" + std::to_string(i); }
inline std::string plain_target(std::size_t i) { return "v" + std::to_string(i); }
inline std::string ambiguous_source(std::size_t w) { return "amb" + std::to_string(w); }
inline std::string sense_target(std::size_t w, std::size_t s) {
  return "amb" + std::to_string(w) + "_s" + std::to_string(s);
}
inline std::string trigger_source(std::size_t w, std::size_t s) {
  return "ctx" + std::to_string(w) + "_" + std::to_string(s);
}
inline std::string trigger_target(std::size_t w, std::size_t s) {
  return "tc" + std::to_string(w) + "_" + std::to_string(s);
}
}  // namespace synth

/// Pure function of (spec, rng state). Ambiguous-lexicon sentences contain
/// one ambiguous word and one trigger token selecting its sense; the target
/// is a word-by-word translation in which the ambiguous word's translation
/// depends on the trigger. Senses are drawn with the configured skew.
inline SynthCorpus synth_corpus(const SynthTaskSpec& spec, Rng& rng) {
  validate(spec);
  SynthCorpus out;
  std::uniform_int_distribution<std::size_t> len_dist(spec.min_length, spec.max_length);
  if (spec.kind != TaskKind::kAmbiguousLexicon) {
    std::uniform_int_distribution<std::size_t> word(0, spec.vocab_size - 1);
    for (std::size_t i = 0; i < spec.pairs; ++i) {
      Sentence s(len_dist(rng));
      for (auto& t : s) t = synth::plain_source(word(rng));
      Sentence t = s;
      if (spec.kind == TaskKind::kReverse) std::reverse(t.begin(), t.end());
      out.corpus.source.push_back(std::move(s));
      out.corpus.target.push_back(std::move(t));
    }
    return out;
  }

  const std::size_t plain = spec.vocab_size - spec.ambiguous_words * (1 + spec.senses);
  std::uniform_int_distribution<std::size_t> word(0, plain - 1);
  std::uniform_int_distribution<std::size_t> amb(0, spec.ambiguous_words - 1);
  std::discrete_distribution<std::size_t> sense(spec.sense_skew.begin(), spec.sense_skew.end());
  for (std::size_t i = 0; i < spec.pairs; ++i) {
    const std::size_t n = len_dist(rng);
    const std::size_t w = amb(rng);
    const std::size_t s = sense(rng);
    std::vector<std::pair<std::string, std::string>> toks;
    for (std::size_t k = 0; k < n; ++k) {
      auto id = word(rng);
      toks.emplace_back(synth::plain_source(id), synth::plain_target(id));
    }
    std::uniform_int_distribution<std::size_t> amb_pos(0, toks.size());
    toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(amb_pos(rng)),
                {synth::ambiguous_source(w), synth::sense_target(w, s)});
    std::uniform_int_distribution<std::size_t> trig_pos(0, toks.size());
    toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(trig_pos(rng)),
                {synth::trigger_source(w, s), synth::trigger_target(w, s)});
    Sentence src, tgt;
    for (auto& [a, b] : toks) {
      src.push_back(a);
      tgt.push_back(b);
    }
    MltRecord rec;
    rec.sentence_id = i;
    rec.word = synth::ambiguous_source(w);
    rec.correct = {synth::sense_target(w, s)};
    for (std::size_t o = 0; o < spec.senses; ++o)
      if (o != s) rec.incorrect.push_back(synth::sense_target(w, o));
    out.corpus.source.push_back(std::move(src));
    out.corpus.target.push_back(std::move(tgt));
    out.records.push_back(std::move(rec));
  }
  return out;
}

}  // namespace sacmt
