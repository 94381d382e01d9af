#include "attnscope/stream.hpp"

#include <algorithm>
#include <numeric>

#include "attnscope/encoder.hpp"
#include "attnscope/metrics.hpp"

namespace attnscope {

void BlockFamily::validate() const {
  if (blocks.empty()) throw ShapeError("block family is empty");
  for (std::size_t i = 1; i < blocks.size(); ++i) {
    if (blocks[i].rows() != blocks[0].rows() || blocks[i].cols() != blocks[0].cols()) {
      throw ShapeError("block " + std::to_string(i) + " has shape " + std::to_string(blocks[i].rows()) + "x" +
                       std::to_string(blocks[i].cols()) + ", block 0 has " + std::to_string(blocks[0].rows()) + "x" +
                       std::to_string(blocks[0].cols()));
    }
  }
}

Matrix conc(const BlockFamily& f) {
  f.validate();
  const Eigen::Index s = f.cols();
  Matrix out(f.rows(), s * static_cast<Eigen::Index>(f.size()));
  for (std::size_t i = 0; i < f.size(); ++i) out.middleCols(static_cast<Eigen::Index>(i) * s, s) = f.blocks[i];
  return out;
}

Matrix tconc(const BlockFamily& f) {
  f.validate();
  const Eigen::Index r = f.rows();
  Matrix out(r * static_cast<Eigen::Index>(f.size()), f.cols());
  for (std::size_t i = 0; i < f.size(); ++i) out.middleRows(static_cast<Eigen::Index>(i) * r, r) = f.blocks[i];
  return out;
}

BlockFamily split_columns(const Matrix& m, std::size_t parts) {
  if (parts == 0 || m.cols() % static_cast<Eigen::Index>(parts) != 0) {
    throw ShapeError("cannot split " + std::to_string(m.cols()) + " columns into " + std::to_string(parts) + " blocks");
  }
  const Eigen::Index s = m.cols() / static_cast<Eigen::Index>(parts);
  BlockFamily f;
  for (std::size_t i = 0; i < parts; ++i) f.blocks.emplace_back(m.middleCols(static_cast<Eigen::Index>(i) * s, s));
  return f;
}

BlockFamily split_rows(const Matrix& m, std::size_t parts) {
  if (parts == 0 || m.rows() % static_cast<Eigen::Index>(parts) != 0) {
    throw ShapeError("cannot split " + std::to_string(m.rows()) + " rows into " + std::to_string(parts) + " blocks");
  }
  const Eigen::Index r = m.rows() / static_cast<Eigen::Index>(parts);
  BlockFamily f;
  for (std::size_t i = 0; i < parts; ++i) f.blocks.emplace_back(m.middleRows(static_cast<Eigen::Index>(i) * r, r));
  return f;
}

double verify_block_product(const BlockFamily& xs, const BlockFamily& ys) {
  xs.validate();
  ys.validate();
  if (xs.size() != ys.size()) throw ShapeError("block families differ in size");
  if (xs.cols() != ys.rows()) throw ShapeError("inner dimensions of the block families differ");
  const Matrix lhs = conc(xs) * tconc(ys);
  Matrix rhs = Matrix::Zero(xs.rows(), ys.cols());
  for (std::size_t i = 0; i < xs.size(); ++i) rhs += xs.blocks[i] * ys.blocks[i];
  return relative_frobenius(lhs, rhs);
}

double verify_left_distributivity(const Matrix& y, const BlockFamily& f) {
  f.validate();
  if (y.cols() != f.rows()) throw ShapeError("left factor has " + std::to_string(y.cols()) + " columns, blocks have " +
                                             std::to_string(f.rows()) + " rows");
  BlockFamily mapped;
  for (const auto& b : f.blocks) mapped.blocks.emplace_back(y * b);
  return relative_frobenius(y * conc(f), conc(mapped));
}

LnRankReport verify_ln_rank_invariance(const Matrix& y, double rtol) {
  const Matrix normalized = layer_norm_rows(y);  // throws on degenerate rows
  const Eigen::VectorXd row_means = y.rowwise().mean();
  const Matrix centered = y - row_means * Eigen::RowVectorXd::Ones(y.cols());

  LnRankReport rep;
  rep.rank_before = numeric_rank(y, rtol);
  rep.rank_after_centering = numeric_rank(centered, rtol);
  rep.rank_after_full_ln = numeric_rank(normalized, rtol);
  Matrix augmented(y.rows() + 1, y.cols());
  augmented.topRows(y.rows()) = y / std::max(y.norm(), 1e-300);
  augmented.row(y.rows()).setConstant(1.0 / std::sqrt(static_cast<double>(y.cols())));
  rep.ones_in_row_space = numeric_rank(augmented, rtol) == rep.rank_before;
  rep.pass = rep.rank_before == rep.rank_after_centering && rep.rank_before == rep.rank_after_full_ln;
  return rep;
}

RankOneUpdateReport rank_one_update_bounds(const Matrix& a, const Vector& x, const Vector& y, double rtol) {
  if (x.size() != a.rows() || y.size() != a.cols()) throw ShapeError("rank-one update: vector lengths do not match A");
  RankOneUpdateReport rep;
  rep.rank_a = numeric_rank(a, rtol);
  rep.rank_updated = numeric_rank(a + x * y.transpose(), rtol);
  const std::size_t lower = rep.rank_a > 0 ? rep.rank_a - 1 : 0;
  rep.within_bounds = rep.rank_updated >= lower && rep.rank_updated <= rep.rank_a + 1;
  rep.lower_tight = rep.rank_a > 0 && rep.rank_updated == rep.rank_a - 1;
  rep.upper_tight = rep.rank_updated == rep.rank_a + 1;
  return rep;
}

namespace {

struct MlpInputs {
  BlockFamily w1_blocks;
};

MlpInputs check_mlp_inputs(const BlockFamily& yblocks, const Matrix& w1, const Vector& b1, const Matrix& w2,
                           const Vector& b2) {
  yblocks.validate();
  const Eigen::Index d_model = yblocks.cols() * static_cast<Eigen::Index>(yblocks.size());
  require_shape(w1, d_model, w1.cols(), "W_1");
  require_shape(w2, w1.cols(), w2.cols(), "W_2");
  if (b1.size() != w1.cols() || b2.size() != w2.cols()) throw ShapeError("MLP bias lengths do not match W_1 / W_2");
  return {split_rows(w1, yblocks.size())};
}

Matrix row_broadcast(Eigen::Index rows, const Vector& v) { return Eigen::VectorXd::Ones(rows) * v.transpose(); }

}  // namespace

Matrix mlp_from_preactivations(const std::vector<Matrix>& preactivations, const Vector& b1, const Matrix& w2,
                               const Vector& b2) {
  if (preactivations.empty()) throw ShapeError("no head pre-activations");
  Matrix pre = preactivations.front();
  for (std::size_t i = 1; i < preactivations.size(); ++i) pre += preactivations[i];
  pre.rowwise() += b1.transpose();
  return (pre.cwiseMax(0.0) * w2).rowwise() + b2.transpose();
}

StreamDecomposition mlp_stream_decomposition(const BlockFamily& yblocks, const Matrix& w1, const Vector& b1,
                                             const Matrix& w2, const Vector& b2, Activation activation) {
  if (activation != Activation::Relu) {
    throw UnsupportedError("MLP stream decomposition is exact only for ReLU (max{., 0})");
  }
  const auto in = check_mlp_inputs(yblocks, w1, b1, w2, b2);
  const Eigen::Index n = yblocks.rows();

  StreamDecomposition d;
  d.block_product_residual = verify_block_product(yblocks, in.w1_blocks);

  const Matrix y = conc(yblocks);
  const Matrix pre_direct = (y * w1).rowwise() + b1.transpose();
  d.mlp_output = (pre_direct.cwiseMax(0.0) * w2).rowwise() + b2.transpose();

  Matrix pre = Matrix::Zero(n, w1.cols());
  for (std::size_t i = 0; i < yblocks.size(); ++i) {
    d.head_preactivations.push_back(yblocks.blocks[i] * in.w1_blocks.blocks[i]);
    pre += d.head_preactivations.back();
  }
  pre.rowwise() += b1.transpose();
  d.relu_mask = (pre.array() > 0.0).cast<double>().matrix();

  d.context_term = Matrix::Zero(n, w2.cols());
  for (const auto& p : d.head_preactivations) {
    d.head_contributions.push_back(d.relu_mask.cwiseProduct(p) * w2);
    d.context_term += d.head_contributions.back();
  }
  const Matrix clipped_bias = (Matrix::Ones(n, w1.cols()) - d.relu_mask).cwiseProduct(row_broadcast(n, b1));
  d.clip_correction = -(clipped_bias * w2);
  d.context_term += d.clip_correction;
  d.anisotropic_bias = row_broadcast(n, w2.transpose() * b1);
  d.uniform_bias = row_broadcast(n, b2);

  d.residual = relative_frobenius(d.context_term + d.anisotropic_bias + d.uniform_bias, d.mlp_output);
  return d;
}

double mlp_linearization_residual(const BlockFamily& yblocks, const Matrix& w1, const Vector& b1, const Matrix& w2,
                                  const Vector& b2, Activation activation) {
  const auto d = mlp_stream_decomposition(yblocks, w1, b1, w2, b2, Activation::Relu);
  if (activation == Activation::Relu) return d.residual;
  const Matrix pre = (conc(yblocks) * w1).rowwise() + b1.transpose();
  const Matrix actual = (apply_activation(pre, activation) * w2).rowwise() + b2.transpose();
  return relative_frobenius(d.context_term + d.anisotropic_bias + d.uniform_bias, actual);
}

HeadOrderReport verify_head_order_erasure(const BlockFamily& yblocks, const Matrix& w1, const Vector& b1,
                                          const Matrix& w2, const Vector& b2,
                                          const std::vector<std::size_t>& permutation) {
  const auto in = check_mlp_inputs(yblocks, w1, b1, w2, b2);
  const std::size_t heads = yblocks.size();
  std::vector<std::size_t> sorted = permutation;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> identity(heads);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  if (sorted != identity) throw ValidationError("head order check: not a permutation of 0.." + std::to_string(heads - 1));

  BlockFamily py, pw;
  for (std::size_t t = 0; t < heads; ++t) {
    py.blocks.push_back(yblocks.blocks[permutation[t]]);
    pw.blocks.push_back(in.w1_blocks.blocks[permutation[t]]);
  }
  const auto original = mlp_stream_decomposition(yblocks, w1, b1, w2, b2);
  const auto permuted = mlp_stream_decomposition(py, tconc(pw), b1, w2, b2);

  HeadOrderReport rep;
  rep.max_abs_diff = max_abs_diff(permuted.mlp_output, original.mlp_output);

  std::vector<Matrix> restored(heads);
  for (std::size_t t = 0; t < heads; ++t) restored[permutation[t]] = permuted.head_preactivations[t];
  const Matrix a = mlp_from_preactivations(original.head_preactivations, b1, w2, b2);
  const Matrix b = mlp_from_preactivations(restored, b1, w2, b2);
  rep.exact_after_resort = (a.array() == b.array()).all();
  return rep;
}

SubstitutionReport verify_searching_engine_substitution(const StreamDecomposition& stream, const HeadWeights& next_head) {
  const Matrix x = stream.context_term + stream.anisotropic_bias + stream.uniform_bias;
  const auto dec = qk_decomposition(x, next_head);
  const Matrix q = (x * next_head.w_q).rowwise() + next_head.b_q.transpose();
  const Matrix k = (x * next_head.w_k).rowwise() + next_head.b_k.transpose();

  SubstitutionReport rep;
  rep.four_term_residual = relative_frobenius(dec.sum(), q * k.transpose());

  Matrix summed = Matrix::Zero(x.rows(), x.cols());
  for (const auto& c : stream.head_contributions) summed += c;
  summed += stream.clip_correction;
  std::vector<Matrix> parts = stream.head_contributions;
  parts.push_back(stream.clip_correction);
  Matrix expanded = Matrix::Zero(x.rows(), x.rows());
  for (const auto& ci : parts) {
    const Matrix left = ci * dec.m;
    for (const auto& cj : parts) expanded += left * cj.transpose();
  }
  rep.context_expansion_residual = relative_frobenius(expanded, summed * dec.m * summed.transpose());
  return rep;
}

}  // namespace attnscope
