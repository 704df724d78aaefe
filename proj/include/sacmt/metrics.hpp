#pragma once

#include "sacmt/bleu.hpp"
#include "sacmt/corpus.hpp"
#include "sacmt/mlt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace sacmt {

// ---------------------------------------------------------------------------
// Corpus BLEU

inline void check_aligned(std::size_t hyps, std::size_t refs) {
  if (hyps != refs)
    throw std::invalid_argument("hypothesis count " + std::to_string(hyps) + " differs from reference count " +
                                std::to_string(refs));
}

inline BleuStats corpus_bleu_stats(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  check_aligned(hyps.size(), refs.size());
  BleuStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (refs[i].empty()) throw std::invalid_argument("empty reference at line " + std::to_string(i + 1));
    total += bleu_stats(std::span<const std::string>(hyps[i]), std::span<const std::string>(refs[i]));
  }
  return total;
}

/// Corpus-level BLEU (no smoothing), reported on a 0-100 scale.
inline double corpus_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  return 100.0 * bleu_from_stats(corpus_bleu_stats(hyps, refs));
}

// ---------------------------------------------------------------------------
// TER

struct TerResult {
  std::size_t edits = 0;   // insertions + deletions + substitutions after shifting
  std::size_t shifts = 0;  // block moves applied
  std::size_t ref_length = 0;
  double score() const { return static_cast<double>(edits + shifts) / static_cast<double>(ref_length); }
};

namespace detail {

struct Alignment {
  std::size_t distance = 0;
  std::vector<bool> hyp_matched;
  std::vector<bool> ref_matched;
};

inline Alignment word_alignment(const Sentence& hyp, const Sentence& ref) {
  const std::size_t n = hyp.size(), m = ref.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j) + 1, at(i, j - 1) + 1, at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
  Alignment a{at(n, m), std::vector<bool>(n, false), std::vector<bool>(m, false)};
  std::size_t i = n, j = m;
  while (i > 0 && j > 0) {
    const bool same = hyp[i - 1] == ref[j - 1];
    if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
      if (same) a.hyp_matched[i - 1] = a.ref_matched[j - 1] = true;
      --i;
      --j;
    } else if (at(i, j) == at(i - 1, j) + 1) {
      --i;
    } else {
      --j;
    }
  }
  return a;
}

inline std::size_t word_edit_distance(const Sentence& hyp, const Sentence& ref) {
  const std::size_t m = ref.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[m];
}

inline Sentence move_block(const Sentence& s, std::size_t start, std::size_t len, std::size_t dest) {
  Sentence block(s.begin() + static_cast<std::ptrdiff_t>(start), s.begin() + static_cast<std::ptrdiff_t>(start + len));
  Sentence rest;
  rest.reserve(s.size());
  rest.insert(rest.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(start));
  rest.insert(rest.end(), s.begin() + static_cast<std::ptrdiff_t>(start + len), s.end());
  rest.insert(rest.begin() + static_cast<std::ptrdiff_t>(dest), block.begin(), block.end());
  return rest;
}

}  // namespace detail

struct TerOptions {
  std::size_t max_shift_size = 10;
  std::size_t max_shift_distance = 50;
};

/// Translation edit rate with the greedy shift search: repeatedly apply the
/// block move that most reduces word edit distance, considering only blocks
/// that occur in the reference and contain an unmatched word; stop when no
/// move helps. Exact minimisation is NP-hard, so this is the usual heuristic.
inline TerResult ter(const Sentence& hyp, const Sentence& ref, TerOptions opt = {}) {
  if (ref.empty()) throw std::invalid_argument("ter: empty reference");
  TerResult res;
  res.ref_length = ref.size();
  Sentence cur = hyp;
  for (;;) {
    auto align = detail::word_alignment(cur, ref);
    std::size_t best_distance = align.distance;
    Sentence best;
    const std::size_t n = cur.size();
    for (std::size_t len = std::min(opt.max_shift_size, n); len >= 1; --len) {
      for (std::size_t i = 0; i + len <= n; ++i) {
        bool all_matched = true;
        for (std::size_t k = i; k < i + len; ++k) all_matched = all_matched && align.hyp_matched[k];
        if (all_matched) continue;
        bool in_ref = false;
        for (std::size_t j = 0; j + len <= ref.size() && !in_ref; ++j)
          in_ref = std::equal(cur.begin() + static_cast<std::ptrdiff_t>(i),
                              cur.begin() + static_cast<std::ptrdiff_t>(i + len),
                              ref.begin() + static_cast<std::ptrdiff_t>(j));
        if (!in_ref) continue;
        for (std::size_t dest = 0; dest + len <= n; ++dest) {
          if (dest == i) continue;
          const std::size_t moved = dest > i ? dest - i : i - dest;
          if (moved > opt.max_shift_distance) continue;
          auto candidate = detail::move_block(cur, i, len, dest);
          auto dist = detail::word_edit_distance(candidate, ref);
          if (dist < best_distance) {
            best_distance = dist;
            best = std::move(candidate);
          }
        }
      }
      if (len == 1) break;
    }
    if (best.empty() && best_distance == align.distance) {
      res.edits = align.distance;
      return res;
    }
    cur = std::move(best);
    ++res.shifts;
  }
}

/// Corpus TER: total edits and shifts over total reference length.
inline double corpus_ter(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  check_aligned(hyps.size(), refs.size());
  std::size_t num = 0, den = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    auto r = ter(hyps[i], refs[i]);
    num += r.edits + r.shifts;
    den += r.ref_length;
  }
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

// ---------------------------------------------------------------------------
// Ambiguous-word accuracy

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

namespace detail {

inline bool sentence_contains_any(const Sentence& out, const std::vector<std::string>& candidates) {
  for (const auto& c : candidates) {
    const auto lc = lowercase(c);
    for (const auto& w : out)
      if (lowercase(w) == lc) return true;
  }
  return false;
}

/// +1 correct candidate present, -1 only a known-incorrect one, 0 neither.
inline int record_outcome(const std::vector<Sentence>& outputs, const MltRecord& r) {
  if (r.sentence_id >= outputs.size())
    throw std::out_of_range("MLT record refers to sentence " + std::to_string(r.sentence_id) + " but only " +
                            std::to_string(outputs.size()) + " outputs exist");
  const auto& out = outputs[r.sentence_id];
  if (sentence_contains_any(out, r.correct)) return 1;
  if (sentence_contains_any(out, r.incorrect)) return -1;
  return 0;
}

}  // namespace detail

/// Lexical translation accuracy: fraction of records whose output contains a
/// correct candidate.
inline double lta(const std::vector<Sentence>& outputs, const std::vector<MltRecord>& records) {
  if (records.empty()) throw std::invalid_argument("lta: no records");
  double s = 0;
  for (const auto& r : records) s += detail::record_outcome(outputs, r) == 1 ? 1.0 : 0.0;
  return s / static_cast<double>(records.size());
}

/// Ambiguous lexical index: +1 correct, -1 known-incorrect, 0 otherwise, averaged.
inline double ali(const std::vector<Sentence>& outputs, const std::vector<MltRecord>& records) {
  if (records.empty()) throw std::invalid_argument("ali: no records");
  double s = 0;
  for (const auto& r : records) s += detail::record_outcome(outputs, r);
  return s / static_cast<double>(records.size());
}

inline std::unordered_map<std::string, std::size_t> word_counts(const std::vector<Sentence>& corpus) {
  std::unordered_map<std::string, std::size_t> c;
  for (const auto& s : corpus)
    for (const auto& w : s) ++c[lowercase(w)];
  return c;
}

/// Records whose correct translation is not the most frequent of the word's
/// candidate translations in the training targets.
inline std::vector<MltRecord> rare_records(const std::vector<MltRecord>& records,
                                           const std::vector<Sentence>& training_targets) {
  auto counts = word_counts(training_targets);
  auto count = [&](const std::string& w) {
    auto it = counts.find(lowercase(w));
    return it == counts.end() ? std::size_t{0} : it->second;
  };
  std::vector<MltRecord> out;
  for (const auto& r : records) {
    std::size_t best_correct = 0, best_any = 0;
    for (const auto& c : r.correct) best_correct = std::max(best_correct, count(c));
    best_any = best_correct;
    for (const auto& c : r.incorrect) best_any = std::max(best_any, count(c));
    if (best_correct < best_any) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paired bootstrap resampling

enum class SignificanceMetric { kBleu, kTer };

struct BootstrapResult {
  double score_a = 0, score_b = 0;
  int winner = 0;  // +1 system A, -1 system B, 0 identical scores
  double p_value = 1.0;
  bool no_difference() const { return winner == 0; }
  bool significant(double level = 0.05) const { return winner != 0 && p_value <= level; }
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Paired bootstrap over sentence indices. p is the fraction of resamples in
/// which the system that wins on the full set does not win. Symmetric in A/B.
/// Each resample draws from its own seed derived from `seed`.
inline BootstrapResult bootstrap_significance(const std::vector<Sentence>& hyp_a, const std::vector<Sentence>& hyp_b,
                                              const std::vector<Sentence>& refs, SignificanceMetric metric,
                                              std::size_t resamples = 1000, std::uint64_t seed = 1) {
  check_aligned(hyp_a.size(), refs.size());
  check_aligned(hyp_b.size(), refs.size());
  const std::size_t n = refs.size();
  if (n < 10) throw std::invalid_argument("bootstrap: need at least 10 sentences, got " + std::to_string(n));
  if (resamples == 0) throw std::invalid_argument("bootstrap: resamples must be positive");

  // Per-sentence sufficient statistics so each resample is a cheap sum.
  std::vector<BleuStats> bleu_a, bleu_b;
  std::vector<double> edits_a, edits_b, ref_len;
  for (std::size_t i = 0; i < n; ++i) {
    if (metric == SignificanceMetric::kBleu) {
      bleu_a.push_back(bleu_stats(std::span<const std::string>(hyp_a[i]), std::span<const std::string>(refs[i])));
      bleu_b.push_back(bleu_stats(std::span<const std::string>(hyp_b[i]), std::span<const std::string>(refs[i])));
    } else {
      auto ta = ter(hyp_a[i], refs[i]);
      auto tb = ter(hyp_b[i], refs[i]);
      edits_a.push_back(static_cast<double>(ta.edits + ta.shifts));
      edits_b.push_back(static_cast<double>(tb.edits + tb.shifts));
      ref_len.push_back(static_cast<double>(refs[i].size()));
    }
  }
  // Higher is better in both cases: TER enters negated.
  auto score = [&](const std::vector<std::size_t>& idx, bool system_a) {
    if (metric == SignificanceMetric::kBleu) {
      BleuStats s;
      for (auto i : idx) s += system_a ? bleu_a[i] : bleu_b[i];
      return 100.0 * bleu_from_stats(s);
    }
    double e = 0, r = 0;
    for (auto i : idx) {
      e += system_a ? edits_a[i] : edits_b[i];
      r += ref_len[i];
    }
    return -e / r;
  };

  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  BootstrapResult res;
  const double full_a = score(all, true), full_b = score(all, false);
  res.score_a = metric == SignificanceMetric::kTer ? -full_a : full_a;
  res.score_b = metric == SignificanceMetric::kTer ? -full_b : full_b;
  res.winner = full_a > full_b ? 1 : full_a < full_b ? -1 : 0;
  if (res.winner == 0) {
    res.p_value = 1.0;
    return res;
  }
  std::size_t losses = 0;
  std::vector<std::size_t> idx(n);
  for (std::size_t k = 0; k < resamples; ++k) {
    std::mt19937_64 rng(detail::splitmix64(seed + k));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (auto& i : idx) i = pick(rng);
    const double a = score(idx, true), b = score(idx, false);
    const bool winner_wins = res.winner == 1 ? a > b : b > a;
    if (!winner_wins) ++losses;
  }
  res.p_value = static_cast<double>(losses) / static_cast<double>(resamples);
  return res;
}

// ---------------------------------------------------------------------------
// Output-word training frequency

struct FrequencyReport {
  std::vector<std::size_t> word_frequencies;          // one per output token, in order
  std::vector<std::pair<int, double>> percentiles;    // (percentile, training frequency)
};

/// Training-set frequency of every word the system produced, summarised at
/// percentiles 0, 10, ..., 100 (nearest rank).
inline FrequencyReport frequency_report(const std::vector<Sentence>& outputs, const std::vector<Sentence>& training) {
  auto counts = word_counts(training);
  FrequencyReport rep;
  for (const auto& s : outputs)
    for (const auto& w : s) {
      auto it = counts.find(lowercase(w));
      rep.word_frequencies.push_back(it == counts.end() ? 0 : it->second);
    }
  auto sorted = rep.word_frequencies;
  std::sort(sorted.begin(), sorted.end());
  for (int p = 0; p <= 100; p += 10) {
    double v = 0;
    if (!sorted.empty()) {
      auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
      v = static_cast<double>(sorted[rank == 0 ? 0 : rank - 1]);
    }
    rep.percentiles.emplace_back(p, v);
  }
  return rep;
}

}  // namespace sacmt
