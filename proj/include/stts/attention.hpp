#pragma once

// GATv2-style attention over the selected block X' (M × P).
//
// Temporal attention treats each of the P columns as a unit (d_u = M);
// spatial attention treats each of the M rows, extended with its series
// embedding, as a unit (d_u = P + d). Scores are
//   p_ij = a · LeakyReLU(W (u_i ⊕ u_j)),
// normalized by a row softmax, and the attended units pass through ELU.

#include "stts/autodiff.hpp"

namespace stts {

struct AttentionResult {
  ad::Var output;   // M × P
  ad::Var weights;  // softmax rows: P × P (temporal) or M × M (spatial)
};

namespace detail {

// Splits W = [W_left | W_right] (d' × 2 d_u) and returns the score matrix
// for unit rows `units` (n × d_u).
inline ad::Var attention_scores(ad::Var units, ad::Var w, ad::Var a, double slope) {
  const Eigen::Index du = units.cols();
  require(w.cols() == 2 * du && a.rows() == w.rows() && a.cols() == 1, ErrorKind::dimension,
          "attention parameters do not match the unit width");
  const ad::Var left = ad::transpose(ad::slice_cols(w, 0, du));
  const ad::Var right = ad::transpose(ad::slice_cols(w, du, du));
  return ad::pairwise_scores(ad::matmul(units, left), ad::matmul(units, right), a, slope);
}

}  // namespace detail

// x: M × P, w: d' × 2M, a: d' × 1.
inline AttentionResult temporal_attention(ad::Var x, ad::Var w, ad::Var a, double slope = 0.2) {
  const ad::Var columns = ad::transpose(x);  // P × M, one unit per timestamp
  const ad::Var alpha = ad::softmax_rows(detail::attention_scores(columns, w, a, slope));
  // H[:, i] = ELU(sum_j alpha_ij X[:, j])
  const ad::Var h = ad::elu(ad::matmul(x, ad::transpose(alpha)));
  return {h, alpha};
}

// x: M × P, e: M × d, w: d' × 2(P+d), a: d' × 1, proj_w: (P+d) × P,
// proj_b: 1 × P. The attended units (length P+d) are projected back to P.
inline AttentionResult spatial_attention(ad::Var x, ad::Var e, ad::Var w, ad::Var a,
                                         ad::Var proj_w, ad::Var proj_b, double slope = 0.2) {
  require(e.rows() == x.rows(), ErrorKind::dimension,
          "spatial attention: embedding rows must match the selected series");
  require(proj_w.rows() == x.cols() + e.cols() && proj_w.cols() == x.cols(), ErrorKind::dimension,
          "spatial attention: embedding width does not match the projection");
  const ad::Var units = ad::concat_cols({x, e});  // M × (P + d)
  const ad::Var alpha = ad::softmax_rows(detail::attention_scores(units, w, a, slope));
  const ad::Var attended = ad::elu(ad::matmul(alpha, units));
  return {ad::add_row(ad::matmul(attended, proj_w), proj_b), alpha};
}

}  // namespace stts
