#pragma once

// Feature-wise transformer layer: every row of the input is a token of
// width P. Multi-head self-attention and a feed-forward sublayer, each with
// a residual connection and layer normalization. No positional encoding, so
// the layer is permutation-equivariant over tokens.

#include <cmath>
#include <vector>

#include "stts/autodiff.hpp"

namespace stts {

struct TransformerWeights {
  std::vector<ad::Var> wq, wk, wv;  // per head: width × head_dim
  ad::Var wo;                       // (heads * head_dim) × width
  ad::Var bo;                       // 1 × width
  ad::Var ln1_gain, ln1_bias;       // 1 × width
  ad::Var ff_w1, ff_b1;             // width × ffn, 1 × ffn
  ad::Var ff_w2, ff_b2;             // ffn × width, 1 × width
  ad::Var ln2_gain, ln2_bias;
};

inline std::size_t head_dim(std::size_t width, std::size_t heads) {
  return (width + heads - 1) / heads;
}

// Multi-head attention sublayer output (before the residual path).
inline ad::Var self_attention(ad::Var tokens, const TransformerWeights& w) {
  require(!w.wq.empty() && w.wq.size() == w.wk.size() && w.wq.size() == w.wv.size(),
          ErrorKind::dimension, "self_attention: inconsistent head weights");
  std::vector<ad::Var> heads;
  heads.reserve(w.wq.size());
  for (std::size_t h = 0; h < w.wq.size(); ++h) {
    const ad::Var q = ad::matmul(tokens, w.wq[h]);
    const ad::Var k = ad::matmul(tokens, w.wk[h]);
    const ad::Var v = ad::matmul(tokens, w.wv[h]);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt));
    heads.push_back(ad::matmul(attn, v));
  }
  const ad::Var joined = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
  return ad::add_row(ad::matmul(joined, w.wo), w.bo);
}

inline ad::Var transformer_block(ad::Var tokens, const TransformerWeights& w) {
  const ad::Var x1 = ad::layer_norm_rows(ad::add(tokens, self_attention(tokens, w)),
                                         w.ln1_gain, w.ln1_bias);
  const ad::Var ff = ad::add_row(
      ad::matmul(ad::relu(ad::add_row(ad::matmul(x1, w.ff_w1), w.ff_b1)), w.ff_w2), w.ff_b2);
  return ad::layer_norm_rows(ad::add(x1, ff), w.ln2_gain, w.ln2_bias);
}

}  // namespace stts
