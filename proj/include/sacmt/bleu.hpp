#pragma once

// BLEU over arbitrary token types (strings or ids).

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <span>
#include <vector>

namespace sacmt {

inline constexpr std::size_t kBleuOrder = 4;

template <class Tok>
using NgramCounts = std::map<std::vector<Tok>, std::size_t>;

template <class Tok>
NgramCounts<Tok> count_ngrams(std::span<const Tok> s, std::size_t n) {
  NgramCounts<Tok> c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[std::vector<Tok>(s.begin() + i, s.begin() + i + n)];
  return c;
}

/// Clipped n-gram matches and hypothesis n-gram totals for orders 1..4.
struct BleuStats {
  std::array<std::size_t, kBleuOrder> matches{};
  std::array<std::size_t, kBleuOrder> totals{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (std::size_t n = 0; n < kBleuOrder; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    hyp_length += o.hyp_length;
    ref_length += o.ref_length;
    return *this;
  }
};

template <class Tok>
BleuStats bleu_stats(std::span<const Tok> hyp, std::span<const Tok> ref) {
  BleuStats st;
  st.hyp_length = hyp.size();
  st.ref_length = ref.size();
  for (std::size_t n = 1; n <= kBleuOrder; ++n) {
    auto h = count_ngrams(hyp, n);
    auto r = count_ngrams(ref, n);
    for (const auto& [g, c] : h) {
      auto it = r.find(g);
      if (it != r.end()) st.matches[n - 1] += std::min(c, it->second);
    }
    st.totals[n - 1] = hyp.size() >= n ? hyp.size() - n + 1 : 0;
  }
  return st;
}

inline double brevity_penalty(std::size_t hyp_length, std::size_t ref_length) {
  if (hyp_length == 0) return 0.0;
  if (hyp_length >= ref_length) return 1.0;
  return std::exp(1.0 - static_cast<double>(ref_length) / static_cast<double>(hyp_length));
}

/// Sentence BLEU with add-1 smoothing on the precisions of orders 2..4.
/// An empty hypothesis, or one without any unigram match, scores 0.
template <class Tok>
double smoothed_sentence_bleu(std::span<const Tok> hyp, std::span<const Tok> ref) {
  if (hyp.empty()) return 0.0;
  BleuStats st = bleu_stats(hyp, ref);
  if (st.matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(st.matches[0]) / static_cast<double>(st.totals[0]));
  for (std::size_t n = 1; n < kBleuOrder; ++n)
    log_sum += std::log((static_cast<double>(st.matches[n]) + 1.0) / (static_cast<double>(st.totals[n]) + 1.0));
  return brevity_penalty(st.hyp_length, st.ref_length) * std::exp(log_sum / kBleuOrder);
}

template <class Tok>
double smoothed_sentence_bleu(const std::vector<Tok>& hyp, const std::vector<Tok>& ref) {
  return smoothed_sentence_bleu(std::span<const Tok>(hyp), std::span<const Tok>(ref));
}

/// Unsmoothed BLEU from accumulated statistics, in [0, 1].
inline double bleu_from_stats(const BleuStats& st) {
  double log_sum = 0;
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    if (st.matches[n] == 0 || st.totals[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(st.matches[n]) / static_cast<double>(st.totals[n]));
  }
  return brevity_penalty(st.hyp_length, st.ref_length) * std::exp(log_sum / kBleuOrder);
}

}  // namespace sacmt
