#pragma once

#include <cstddef>
#include <vector>

#include "attnscope/matrix.hpp"
#include "attnscope/trace.hpp"

namespace attnscope {

/// Equally shaped matrices X^(0..m-1).
struct BlockFamily {
  std::vector<Matrix> blocks;

  /// Throws ShapeError if the family is empty or shapes differ.
  void validate() const;
  Eigen::Index rows() const { return blocks.front().rows(); }
  Eigen::Index cols() const { return blocks.front().cols(); }
  std::size_t size() const { return blocks.size(); }
};

/// Horizontal concatenation: block i occupies columns [i*s, (i+1)*s).
Matrix conc(const BlockFamily& f);
/// Vertical concatenation: block i occupies rows [i*r, (i+1)*r).
Matrix tconc(const BlockFamily& f);

BlockFamily split_columns(const Matrix& m, std::size_t parts);
BlockFamily split_rows(const Matrix& m, std::size_t parts);

/// ||conc(xs) tconc(ys) - sum_i X^(i) Y^(i)||_F relative to the sum.
double verify_block_product(const BlockFamily& xs, const BlockFamily& ys);

/// ||Y conc(f) - conc(Y X^(i))||_F relative.
double verify_left_distributivity(const Matrix& y, const BlockFamily& f);

struct LnRankReport {
  std::size_t rank_before = 0;
  std::size_t rank_after_centering = 0;
  std::size_t rank_after_full_ln = 0;
  /// Whether the all-ones vector lies in the row space of Y. Row centering
  /// annihilates that direction, so the rank drops by one exactly when this holds.
  bool ones_in_row_space = false;
  bool pass = false;
};

/// Ranks of Y, of Y with each row centered, and of layer_norm_rows(Y).
/// Throws DegenerateInputError on zero-variance rows.
LnRankReport verify_ln_rank_invariance(const Matrix& y, double rtol = 1e-9);

struct RankOneUpdateReport {
  std::size_t rank_a = 0;
  std::size_t rank_updated = 0;
  bool within_bounds = false;
  bool lower_tight = false;  // rank_updated == rank_a - 1
  bool upper_tight = false;  // rank_updated == rank_a + 1
};

RankOneUpdateReport rank_one_update_bounds(const Matrix& a, const Vector& x, const Vector& y, double rtol = 1e-9);

/// MLP output split by information source:
///   max(sum_i Yt^(i) W_1^(i) + 1 b_1^T, 0) W_2 + 1 b_2^T
///     = context_term + anisotropic_bias + uniform_bias
/// where context_term = sum_i (mask o Yt^(i) W_1^(i)) W_2 + clip_correction and
/// clip_correction = -((1 - mask) o 1 b_1^T) W_2 carries the bias entries the
/// ReLU removed. Sums over heads run in ascending head order.
struct StreamDecomposition {
  std::vector<Matrix> head_preactivations;  // Yt^(i) W_1^(i), n x d_ff
  std::vector<Matrix> head_contributions;   // (mask o Yt^(i) W_1^(i)) W_2, n x d_model
  Matrix clip_correction;
  Matrix context_term;
  Matrix anisotropic_bias;  // 1 b_1^T W_2
  Matrix uniform_bias;      // 1 b_2^T
  Matrix relu_mask;         // 1 where the pre-activation is kept, else 0
  Matrix mlp_output;        // computed directly from conc(Yt) W_1
  double block_product_residual = 0.0;
  double residual = 0.0;  // relative Frobenius of the three-term sum against mlp_output
};

/// Requires `activation == Relu` (UnsupportedError otherwise); W_1 is split
/// into yblocks.size() row blocks.
StreamDecomposition mlp_stream_decomposition(const BlockFamily& yblocks, const Matrix& w1, const Vector& b1,
                                             const Matrix& w2, const Vector& b2,
                                             Activation activation = Activation::Relu);

/// Relative Frobenius distance between the actual MLP output under
/// `activation` and the ReLU stream decomposition. Informational for GeLU.
double mlp_linearization_residual(const BlockFamily& yblocks, const Matrix& w1, const Vector& b1, const Matrix& w2,
                                  const Vector& b2, Activation activation);

/// max(sum_i P_i + 1 b_1^T, 0) W_2 + 1 b_2^T, summing P_i in the given order.
Matrix mlp_from_preactivations(const std::vector<Matrix>& preactivations, const Vector& b1, const Matrix& w2,
                               const Vector& b2);

struct HeadOrderReport {
  double max_abs_diff = 0.0;       // permuted vs. original MLP output, no re-sorting
  bool exact_after_resort = false;  // bitwise equal once per-head terms are restored to ascending order
};

/// Permutes the pairs (Yt^(i), W_1^(i)) jointly by `permutation` (new position
/// t holds old head permutation[t]) and compares MLP outputs.
HeadOrderReport verify_head_order_erasure(const BlockFamily& yblocks, const Matrix& w1, const Vector& b1,
                                          const Matrix& w2, const Vector& b2,
                                          const std::vector<std::size_t>& permutation);

struct SubstitutionReport {
  double four_term_residual = 0.0;   // qk_decomposition of the stream input vs. Q K^T
  double context_expansion_residual = 0.0;  // (sum C_i) M (sum C_j)^T vs. sum_ij C_i M C_j^T
};

/// Feeds the stream-decomposed MLP output into the next head's similarity
/// decomposition and checks both identities end to end.
SubstitutionReport verify_searching_engine_substitution(const StreamDecomposition& stream, const HeadWeights& next_head);

}  // namespace attnscope
