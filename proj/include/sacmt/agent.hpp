#pragma once

// Attention-based GRU sequence-to-sequence network. The same structure backs
// the policy and each of the four critics; critics read their logits as
// per-action Q values.

#include "sacmt/corpus.hpp"
#include "sacmt/gru.hpp"
#include "sacmt/params.hpp"
#include "sacmt/tensor.hpp"

#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace sacmt {

struct ModelDims {
  std::size_t embed = 200;
  std::size_t hidden = 320;
};

inline constexpr double kMaskedLogit = -1e9;

/// Free-running decode limit for a source of `source_tokens` tokens.
inline std::size_t max_decode_length(std::size_t source_tokens) { return 2 * source_tokens + 5; }

struct EncoderStates {
  std::vector<Tensor> states;  // per source position, [batch, hidden]
  std::vector<Tensor> keys;    // attention keys per position, [batch, hidden]
  Tensor mask;                 // [batch, positions], 0 on real tokens, kMaskedLogit on padding
  Tensor pooled;               // mean of the real-position states, [batch, hidden]
  std::vector<std::size_t> lengths;

  std::size_t batch() const { return lengths.size(); }
  std::size_t positions() const { return states.size(); }
};

struct DecoderState {
  std::vector<Tensor> hidden;  // one [batch, hidden] per decoder layer
  std::size_t step = 0;
  std::size_t max_length = 0;
};

struct StepOutput {
  Tensor logits;     // [batch, vocab]
  Tensor attention;  // [batch, positions]
  DecoderState next;
};

struct SampledSequence {
  std::vector<Id> tokens;  // includes the final EOS when one was emitted
  std::vector<double> log_probs;
  bool ended_with_eos() const { return !tokens.empty() && tokens.back() == Vocabulary::kEos; }
};

class Seq2Seq {
 public:
  /// `mask_special` removes PAD and BOS from the output distribution; the
  /// policy sets it, critics do not.
  Seq2Seq(std::size_t source_vocab, std::size_t target_vocab, ModelDims dims, Rng& rng, bool mask_special = true)
      : source_vocab_(source_vocab), target_vocab_(target_vocab), dims_(dims), mask_special_(mask_special) {
    if (target_vocab <= Vocabulary::kReserved || source_vocab <= Vocabulary::kReserved)
      throw std::invalid_argument("vocabularies must contain at least one non-reserved token");
    const auto e = dims.embed, h = dims.hidden;
    src_embed_ = params_.add("src_embed", {source_vocab, e}, rng);
    tgt_embed_ = params_.add("tgt_embed", {target_vocab, e}, rng);
    enc_[0] = GruParams::create(params_, "enc.l0", e, h, rng);
    enc_[1] = GruParams::create(params_, "enc.l1", h, h, rng);
    init_w_ = params_.add("dec.init.w", {h, 2 * h}, rng);
    init_b_ = params_.add("dec.init.b", {2 * h}, rng, ParamSet::Init::kZero);
    dec_in_ = GruParams::create(params_, "dec.l0.gru1", e, h, rng);
    dec_ctx_ = GruParams::create(params_, "dec.l0.gru2", h, h, rng);
    dec_top_ = GruParams::create(params_, "dec.l1", 2 * h, h, rng);
    att_query_ = params_.add("att.query", {h, h}, rng);
    att_key_ = params_.add("att.key", {h, h}, rng);
    att_v_ = params_.add("att.v", {h, 1}, rng);
    out_state_ = params_.add("out.state", {h, e}, rng);
    out_prev_ = params_.add("out.prev", {e, e}, rng);
    out_ctx_ = params_.add("out.ctx", {h, e}, rng);
    out_b_ = params_.add("out.b", {e}, rng, ParamSet::Init::kZero);
    out_bias_ = params_.add("out.vocab_bias", {target_vocab}, rng, ParamSet::Init::kZero);
    std::vector<double> m(target_vocab, 0.0);
    if (mask_special_) m[Vocabulary::kPad] = m[Vocabulary::kBos] = kMaskedLogit;
    logit_mask_ = Tensor({1, target_vocab}, std::move(m));
  }

  std::size_t source_vocab() const { return source_vocab_; }
  std::size_t target_vocab() const { return target_vocab_; }
  const ModelDims& dims() const { return dims_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// The decoder input embedding; the output projection multiplies by this
  /// same tensor.
  const Tensor& target_embedding() const { return tgt_embed_; }
  const Tensor& output_projection() const { return tgt_embed_; }

  EncoderStates encode(const PaddedIds& source) const {
    if (source.batch() == 0 || source.width == 0) throw std::invalid_argument("encode: empty source batch");
    for (auto len : source.lengths)
      if (len == 0) throw std::invalid_argument("encode: empty source sentence");
    for (const auto& row : source.rows)
      for (Id i : row)
        if (i >= source_vocab_)
          throw std::out_of_range("encode: token id " + std::to_string(i) + " outside source vocabulary of " +
                                  std::to_string(source_vocab_));
    const std::size_t batch = source.batch(), hd = dims_.hidden;
    EncoderStates enc;
    enc.lengths = source.lengths;
    std::vector<Tensor> h(2, Tensor::zeros({batch, hd}));
    Tensor pooled_sum;
    std::vector<double> inv_len(batch), mask(batch * source.width, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      inv_len[b] = 1.0 / static_cast<double>(source.lengths[b]);
      for (std::size_t t = source.lengths[b]; t < source.width; ++t) mask[b * source.width + t] = kMaskedLogit;
    }
    for (std::size_t t = 0; t < source.width; ++t) {
      auto ids = source.column(t);
      Tensor x = embedding(src_embed_, ids);
      std::vector<double> live(batch);
      bool all_live = true;
      for (std::size_t b = 0; b < batch; ++b) {
        live[b] = t < source.lengths[b] ? 1.0 : 0.0;
        all_live = all_live && live[b] == 1.0;
      }
      Tensor keep({batch, 1}, live);
      for (int l = 0; l < 2; ++l) {
        Tensor next = gru_cell(l == 0 ? x : h[0], h[l], enc_[l]);
        h[l] = all_live ? next : add(h[l], mul(keep, sub(next, h[l])));
      }
      enc.states.push_back(h[1]);
      enc.keys.push_back(matmul(h[1], att_key_));
      Tensor contrib = all_live ? h[1] : mul(h[1], keep);
      pooled_sum = t == 0 ? contrib : add(pooled_sum, contrib);
    }
    enc.pooled = mul(pooled_sum, Tensor({batch, 1}, inv_len));
    enc.mask = Tensor({batch, source.width}, std::move(mask));
    return enc;
  }

  EncoderStates encode(const std::vector<Id>& source) const { return encode(pad_sequences({source})); }

  /// Initial decoder state from the pooled encoder states through a learned
  /// tanh projection. `max_length` defaults to the free-running limit of the
  /// longest source in the batch (sources here include their EOS).
  DecoderState initial_state(const EncoderStates& enc, std::optional<std::size_t> max_length = std::nullopt) const {
    const auto hd = dims_.hidden;
    Tensor init = tanh(add(matmul(enc.pooled, init_w_), init_b_));
    DecoderState st;
    st.hidden = {slice_cols(init, 0, hd), slice_cols(init, hd, hd)};
    if (max_length) {
      st.max_length = *max_length;
    } else {
      std::size_t longest = 0;
      for (auto l : enc.lengths) longest = std::max(longest, l);
      st.max_length = max_decode_length(longest > 0 ? longest - 1 : 0);
    }
    return st;
  }

  StepOutput decode_step(const EncoderStates& enc, const DecoderState& state, std::span<const Id> prev) const {
    if (state.step >= state.max_length)
      throw std::out_of_range("decode_step: step " + std::to_string(state.step) + " reaches max decode length " +
                              std::to_string(state.max_length));
    if (prev.size() != enc.batch())
      throw std::invalid_argument("decode_step: " + std::to_string(prev.size()) + " previous tokens for batch of " +
                                  std::to_string(enc.batch()));
    for (Id i : prev)
      if (i >= target_vocab_) throw std::out_of_range("decode_step: token id " + std::to_string(i) + " outside vocabulary");

    Tensor e = embedding(tgt_embed_, prev);
    Tensor s1 = gru_cell(e, state.hidden[0], dec_in_);

    // additive attention over encoder positions
    Tensor query = matmul(s1, att_query_);
    std::vector<Tensor> scores;
    scores.reserve(enc.positions());
    for (const auto& key : enc.keys) scores.push_back(matmul(tanh(add(key, query)), att_v_));
    Tensor attention = softmax(add(concat(scores, 1), enc.mask));
    Tensor context;
    for (std::size_t j = 0; j < enc.positions(); ++j) {
      Tensor part = mul(enc.states[j], slice_cols(attention, j, 1));
      context = j == 0 ? part : add(context, part);
    }

    Tensor s1b = gru_cell(context, s1, dec_ctx_);
    Tensor s2 = gru_cell(concat({s1b, context}, 1), state.hidden[1], dec_top_);
    Tensor readout =
        tanh(add(add(add(matmul(s2, out_state_), matmul(e, out_prev_)), matmul(context, out_ctx_)), out_b_));
    Tensor logits = add(matmul_bt(readout, tgt_embed_), out_bias_);
    if (mask_special_) logits = add(logits, logit_mask_);

    StepOutput out{std::move(logits), std::move(attention), {}};
    out.next.hidden = {std::move(s1b), std::move(s2)};
    out.next.step = state.step + 1;
    out.next.max_length = state.max_length;
    return out;
  }

  /// Runs the decoder over fixed inputs (first column is normally BOS);
  /// returns the logits of every step.
  std::vector<Tensor> teacher_force(const EncoderStates& enc, const PaddedIds& inputs) const {
    DecoderState st = initial_state(enc, inputs.width);
    std::vector<Tensor> logits;
    logits.reserve(inputs.width);
    for (std::size_t t = 0; t < inputs.width; ++t) {
      auto col = inputs.column(t);
      auto out = decode_step(enc, st, col);
      logits.push_back(std::move(out.logits));
      st = std::move(out.next);
    }
    return logits;
  }

 private:
  std::size_t source_vocab_, target_vocab_;
  ModelDims dims_;
  bool mask_special_;
  ParamSet params_;
  Tensor src_embed_, tgt_embed_;
  GruParams enc_[2];
  Tensor init_w_, init_b_;
  GruParams dec_in_, dec_ctx_, dec_top_;
  Tensor att_query_, att_key_, att_v_;
  Tensor out_state_, out_prev_, out_ctx_, out_b_, out_bias_;
  Tensor logit_mask_;
};

/// BOS followed by each row without its last token: the decoder inputs that
/// teacher-force `targets`.
inline PaddedIds shift_right(const PaddedIds& targets) {
  PaddedIds in = targets;
  for (auto& row : in.rows) {
    row.insert(row.begin(), Vocabulary::kBos);
    row.pop_back();
  }
  return in;
}

/// Mean negative log-likelihood per non-PAD target token under teacher forcing.
inline Tensor mle_loss(const Seq2Seq& model, const Batch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("mle_loss: empty batch");
  auto enc = model.encode(batch.source);
  auto logits = model.teacher_force(enc, shift_right(batch.target));
  Tensor lp = log_softmax(concat(logits, 0));
  const std::size_t bsz = batch.size();
  std::vector<std::size_t> idx(bsz * batch.target.width);
  std::vector<double> weight(idx.size(), 0.0);
  double count = 0;
  for (std::size_t t = 0; t < batch.target.width; ++t)
    for (std::size_t b = 0; b < bsz; ++b) {
      Id y = batch.target.rows[b][t];
      idx[t * bsz + b] = y;
      if (y != Vocabulary::kPad) {
        weight[t * bsz + b] = 1.0;
        count += 1;
      }
    }
  Tensor picked = gather(lp, idx);
  return scale(sum(mul(picked, Tensor({idx.size(), 1}, std::move(weight)))), -1.0 / count);
}

inline std::vector<double> softmax_row(std::span<const double> logits, double temperature = 1.0) {
  std::vector<double> p(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) mx = std::max(mx, x / temperature);
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(logits[i] / temperature - mx));
  for (auto& x : p) x /= s;
  return p;
}

inline double entropy(std::span<const double> probs) {
  double h = 0;
  for (double p : probs)
    if (p > 0) h -= p * std::log(p);
  return h;
}

/// Decodes a batch of sources. With `rng` set, samples each token from
/// softmax(logits / temperature); otherwise takes the argmax. Runs without
/// recording gradients. `step_entropy`, when given, receives the policy
/// entropy of every emitted step.
inline std::vector<SampledSequence> decode_batch(const Seq2Seq& model, const PaddedIds& source, Rng* rng,
                                                 double temperature = 1.0,
                                                 std::vector<double>* step_entropy = nullptr) {
  if (!(temperature > 0)) throw std::invalid_argument("temperature must be positive");
  NoGradGuard no_grad;
  auto enc = model.encode(source);
  const std::size_t batch = source.batch();
  auto st = model.initial_state(enc);
  std::vector<SampledSequence> out(batch);
  std::vector<bool> done(batch, false);
  std::vector<std::size_t> limit(batch);
  for (std::size_t b = 0; b < batch; ++b) limit[b] = max_decode_length(source.lengths[b] - 1);
  std::vector<Id> prev(batch, Vocabulary::kBos);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t v = model.target_vocab();
  while (st.step < st.max_length) {
    auto step = model.decode_step(enc, st, prev);
    auto logits = step.logits.values();
    bool any = false;
    for (std::size_t b = 0; b < batch; ++b) {
      if (done[b]) continue;
      auto row = logits.subspan(b * v, v);
      auto probs = softmax_row(row, temperature);
      Id choice = 0;
      if (rng) {
        double u = unif(*rng), acc = 0;
        choice = v - 1;
        for (std::size_t k = 0; k < v; ++k) {
          acc += probs[k];
          if (u < acc) {
            choice = k;
            break;
          }
        }
        while (probs[choice] == 0.0 && choice > 0) --choice;  // guard against rounding at the tail
      } else {
        choice = static_cast<Id>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      }
      out[b].tokens.push_back(choice);
      out[b].log_probs.push_back(std::log(probs[choice]));
      if (step_entropy) step_entropy->push_back(entropy(softmax_row(row)));
      prev[b] = choice;
      if (choice == Vocabulary::kEos || out[b].tokens.size() >= limit[b]) done[b] = true;
      any = any || !done[b];
    }
    st = std::move(step.next);
    if (!any) break;
  }
  return out;
}

inline SampledSequence sample_sequence(const Seq2Seq& model, const std::vector<Id>& source, double temperature,
                                       Rng& rng) {
  return decode_batch(model, pad_sequences({source}), &rng, temperature).front();
}

inline std::vector<Id> greedy_decode(const Seq2Seq& model, const std::vector<Id>& source) {
  return decode_batch(model, pad_sequences({source}), nullptr).front().tokens;
}

/// Greedy decoding over many sentences in fixed-size chunks.
inline std::vector<std::vector<Id>> greedy_decode_all(const Seq2Seq& model, const std::vector<std::vector<Id>>& sources,
                                                      std::size_t chunk = 64,
                                                      std::vector<double>* step_entropy = nullptr) {
  std::vector<std::vector<Id>> out;
  for (std::size_t i = 0; i < sources.size(); i += chunk) {
    std::vector<std::vector<Id>> part(sources.begin() + static_cast<std::ptrdiff_t>(i),
                                      sources.begin() + static_cast<std::ptrdiff_t>(std::min(sources.size(), i + chunk)));
    for (auto& s : decode_batch(model, pad_sequences(part), nullptr, 1.0, step_entropy)) out.push_back(std::move(s.tokens));
  }
  return out;
}

}  // namespace sacmt
