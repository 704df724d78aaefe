#pragma once

#include "sacmt/params.hpp"
#include "sacmt/tensor.hpp"

#include <string>

namespace sacmt {

/// Gated recurrent unit weights. Gate order in the fused matrices is
/// (update z, reset r, candidate).
struct GruParams {
  Tensor w;     // [input, 3*hidden]
  Tensor u_zr;  // [hidden, 2*hidden]
  Tensor u_h;   // [hidden, hidden]
  Tensor b;     // [3*hidden]

  std::size_t input_dim() const { return w.rows(); }
  std::size_t hidden_dim() const { return u_h.rows(); }

  static GruParams create(ParamSet& params, const std::string& prefix, std::size_t input, std::size_t hidden,
                          Rng& rng) {
    GruParams g;
    g.w = params.add(prefix + ".w", {input, 3 * hidden}, rng);
    g.u_zr = params.add(prefix + ".u_zr", {hidden, 2 * hidden}, rng);
    g.u_h = params.add(prefix + ".u_h", {hidden, hidden}, rng);
    g.b = params.add(prefix + ".b", {3 * hidden}, rng, ParamSet::Init::kZero);
    return g;
  }
};

/// One GRU step over a batch:
///   z  = sigmoid(x W_z + h U_z + b_z)
///   r  = sigmoid(x W_r + h U_r + b_r)
///   h~ = tanh(x W_h + (r * h) U_h + b_h)
///   h' = z * h + (1 - z) * h~
/// x is [batch, input], h is [batch, hidden].
inline Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p) {
  const std::size_t hd = p.hidden_dim();
  if (x.cols() != p.input_dim() || h.cols() != hd || x.rows() != h.rows())
    throw std::invalid_argument("gru_cell: input " + shape_str(x.shape()) + " / hidden " + shape_str(h.shape()) +
                                " do not fit weights " + shape_str(p.w.shape()) + " / " + shape_str(p.u_h.shape()));
  if (!all_finite(x.values()) || !all_finite(h.values()))
    throw std::invalid_argument("gru_cell: non-finite input or hidden state");
  Tensor xw = add(matmul(x, p.w), p.b);
  Tensor hu = matmul(h, p.u_zr);
  Tensor z = sigmoid(add(slice_cols(xw, 0, hd), slice_cols(hu, 0, hd)));
  Tensor r = sigmoid(add(slice_cols(xw, hd, hd), slice_cols(hu, hd, hd)));
  Tensor cand = tanh(add(slice_cols(xw, 2 * hd, hd), matmul(mul(r, h), p.u_h)));
  // z*h + (1-z)*cand == cand + z*(h - cand)
  return add(cand, mul(z, sub(h, cand)));
}

}  // namespace sacmt
