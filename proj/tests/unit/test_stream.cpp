#include <doctest.h>

#include <numeric>

#include "../oracles.hpp"
#include "attnscope/encoder.hpp"
#include "attnscope/errors.hpp"
#include "attnscope/metrics.hpp"
#include "attnscope/sampling.hpp"
#include "attnscope/stream.hpp"

using namespace attnscope;

namespace {

struct Mlp {
  BlockFamily y;
  Matrix w1, w2;
  Vector b1, b2;
};

Mlp random_mlp(SplitMix64& rng, Eigen::Index n, std::size_t heads, Eigen::Index d_k, Eigen::Index d_ff) {
  Mlp m;
  for (std::size_t h = 0; h < heads; ++h) m.y.blocks.push_back(random_matrix(rng, n, d_k));
  const auto d_model = static_cast<Eigen::Index>(heads) * d_k;
  m.w1 = random_matrix(rng, d_model, d_ff);
  m.w2 = random_matrix(rng, d_ff, d_model);
  m.b1 = random_vector(rng, d_ff);
  m.b2 = random_vector(rng, d_model);
  return m;
}

// Rank from the Jacobi oracle with a loose threshold; planted ranks are well separated.
std::size_t oracle_rank(const Matrix& m) {
  const auto sv = oracle::singular_values(m);
  std::size_t r = 0;
  for (double s : sv) r += s > 1e-6 * sv.front() ? 1 : 0;
  return r;
}

Matrix direct_mlp(const Mlp& m) {
  Matrix h = oracle::add_row(oracle::matmul(conc(m.y), m.w1), m.b1);
  h = h.cwiseMax(0.0);
  return oracle::add_row(oracle::matmul(h, m.w2), m.b2);
}

}  // namespace

TEST_CASE("conc and tconc") {
  Matrix a(2, 1), b(2, 1);
  a << 1, 2;
  b << 3, 4;
  Matrix expected(2, 2);
  expected << 1, 3, 2, 4;
  CHECK(conc({{a, b}}) == expected);
  CHECK(conc({{a}}) == a);
  CHECK(tconc({{a}}) == a);

  Matrix r1(1, 2), r2(1, 2);
  r1 << 1, 2;
  r2 << 3, 4;
  Matrix stacked(2, 2);
  stacked << 1, 2, 3, 4;
  CHECK(tconc({{r1, r2}}) == stacked);
  CHECK(tconc({{r1, r2}}).transpose() == conc({{r1.transpose(), r2.transpose()}}));

  CHECK_THROWS_AS(conc({{a, r1}}), ShapeError);
  CHECK_THROWS_AS(conc(BlockFamily{}), ShapeError);

  const auto parts = split_columns(expected, 2);
  CHECK(parts.blocks[1] == b);
  CHECK(tconc(split_rows(stacked, 2)) == stacked);
  CHECK_THROWS_AS(split_columns(expected, 3), ShapeError);
}

TEST_CASE("block product and left distributivity") {
  SplitMix64 rng(30);
  CHECK(verify_block_product({{random_matrix(rng, 3, 2)}}, {{random_matrix(rng, 2, 4)}}) == 0.0);

  BlockFamily xs, ys;
  for (int i = 0; i < 2; ++i) {
    xs.blocks.push_back(random_matrix(rng, 2, 2));
    ys.blocks.push_back(random_matrix(rng, 2, 2));
  }
  CHECK(verify_block_product(xs, ys) < 1e-12);

  BlockFamily x12, y12;
  for (int i = 0; i < 12; ++i) {
    x12.blocks.push_back(random_matrix(rng, 8, 4));
    y12.blocks.push_back(random_matrix(rng, 4, 8));
  }
  CHECK(verify_block_product(x12, y12) < 1e-12);
  CHECK(verify_left_distributivity(random_matrix(rng, 5, 8), x12) < 1e-12);
  CHECK_THROWS_AS(verify_block_product(x12, xs), ShapeError);
  CHECK_THROWS_AS(verify_left_distributivity(random_matrix(rng, 5, 7), x12), ShapeError);
}

TEST_CASE("layer norm rank: centering removes the all-ones direction") {
  SplitMix64 rng(31);
  // Square full rank: the ones vector lies in the row space, so centering drops one.
  const auto full = verify_ln_rank_invariance(random_matrix(rng, 8, 8));
  CHECK(full.rank_before == 8);
  CHECK(full.rank_after_centering == 7);
  CHECK(full.rank_after_full_ln == 7);
  CHECK(full.ones_in_row_space);
  CHECK(!full.pass);

  // Rank 3 in six columns: generic row space misses the ones vector.
  const auto planted = verify_ln_rank_invariance(planted_rank_matrix(rng, 12, 6, 3));
  CHECK(planted.rank_before == 3);
  CHECK(planted.rank_after_centering == 3);
  CHECK(planted.rank_after_full_ln == 3);
  CHECK(!planted.ones_in_row_space);
  CHECK(planted.pass);

  // Fewer rows than columns, the token-matrix regime.
  const auto wide = verify_ln_rank_invariance(random_matrix(rng, 6, 16));
  CHECK(wide.pass);
  CHECK(wide.rank_before == 6);

  const Matrix constant_rows = Eigen::VectorXd::Ones(4) * Eigen::RowVectorXd::Constant(5, 2.0);
  CHECK_THROWS_AS(verify_ln_rank_invariance(constant_rows), DegenerateInputError);
}

TEST_CASE("rank-one update bounds") {
  SplitMix64 rng(32);
  const Matrix a = planted_rank_matrix(rng, 6, 5, 3);
  const auto same = rank_one_update_bounds(a, Vector::Zero(6), random_vector(rng, 5));
  CHECK(same.rank_updated == 3);
  CHECK(same.within_bounds);

  const Vector u = random_vector(rng, 6), v = random_vector(rng, 5);
  const auto drop = rank_one_update_bounds(u * v.transpose(), -u, v);
  CHECK(drop.rank_a == 1);
  CHECK(drop.rank_updated == 0);
  CHECK(drop.lower_tight);

  const auto up = rank_one_update_bounds(a, random_vector(rng, 6), random_vector(rng, 5));
  CHECK(up.upper_tight);

  for (int t = 0; t < 500; ++t) {
    const auto r = static_cast<Eigen::Index>(1 + rng.below(16));
    const auto c = static_cast<Eigen::Index>(1 + rng.below(16));
    const auto k = static_cast<Eigen::Index>(1 + rng.below(static_cast<std::uint64_t>(std::min(r, c))));
    const Matrix m = planted_rank_matrix(rng, r, c, k);
    const Vector x = random_vector(rng, r), y = random_vector(rng, c);
    const auto rep = rank_one_update_bounds(m, x, y);
    CHECK(rep.rank_a == oracle_rank(m));
    CHECK(rep.rank_updated == oracle_rank(m + x * y.transpose()));
    CHECK(rep.within_bounds);
  }
}

TEST_CASE("mlp stream decomposition") {
  SplitMix64 rng(33);
  Mlp m = random_mlp(rng, 8, 2, 4, 16);
  const auto d = mlp_stream_decomposition(m.y, m.w1, m.b1, m.w2, m.b2);
  CHECK(d.residual < 1e-9);
  CHECK(d.block_product_residual < 1e-12);
  CHECK(relative_frobenius(d.mlp_output, direct_mlp(m)) < 1e-12);
  CHECK(d.head_contributions.size() == 2);
  CHECK(((d.relu_mask.array() == 0.0) || (d.relu_mask.array() == 1.0)).all());
  // The mask genuinely clips something in this instance, so the clip correction matters.
  CHECK(!d.clip_correction.isZero());
  CHECK(relative_frobenius(d.anisotropic_bias.row(3), (m.w2.transpose() * m.b1).transpose()) == 0.0);
  CHECK(d.uniform_bias.row(5) == m.b2.transpose());

  // W_1 = 0: only bias terms remain.
  Mlp zero = m;
  zero.w1.setZero();
  const auto z = mlp_stream_decomposition(zero.y, zero.w1, zero.b1, zero.w2, zero.b2);
  CHECK(z.residual < 1e-12);
  for (const auto& p : z.head_preactivations) CHECK(p.isZero());
  Matrix expected = oracle::add_row(Matrix::Zero(8, 8), zero.b2) +
                    oracle::add_row(Matrix::Zero(8, 16), zero.b1).cwiseMax(0.0) * zero.w2;
  CHECK(relative_frobenius(z.context_term + z.anisotropic_bias + z.uniform_bias, expected) <
        1e-12);

  // No biases and nonnegative pre-activations: plain sum of Y^(i) W_1^(i) W_2.
  Mlp pos = m;
  for (auto& b : pos.y.blocks) b = b.cwiseAbs();
  pos.w1 = pos.w1.cwiseAbs();
  pos.b1.setZero();
  pos.b2.setZero();
  const auto p = mlp_stream_decomposition(pos.y, pos.w1, pos.b1, pos.w2, pos.b2);
  CHECK(p.relu_mask == Matrix::Ones(8, 16));
  CHECK(p.clip_correction.isZero());
  const auto w1_blocks = split_rows(pos.w1, 2);
  const Matrix plain = pos.y.blocks[0] * w1_blocks.blocks[0] * pos.w2 + pos.y.blocks[1] * w1_blocks.blocks[1] * pos.w2;
  CHECK(relative_frobenius(p.context_term, plain) < 1e-12);

  CHECK_THROWS_AS(mlp_stream_decomposition(m.y, m.w1, m.b1, m.w2, m.b2, Activation::Gelu), UnsupportedError);
  CHECK_THROWS_AS(mlp_stream_decomposition(m.y, m.w2, m.b1, m.w2, m.b2), ShapeError);
}

TEST_CASE("gelu linearization residual is informational and nonzero") {
  SplitMix64 rng(34);
  Mlp m = random_mlp(rng, 8, 2, 4, 16);
  CHECK(mlp_linearization_residual(m.y, m.w1, m.b1, m.w2, m.b2, Activation::Relu) < 1e-9);
  CHECK(mlp_linearization_residual(m.y, m.w1, m.b1, m.w2, m.b2, Activation::Gelu) > 1e-3);
}

TEST_CASE("head order erasure") {
  SplitMix64 rng(35);
  Mlp m = random_mlp(rng, 6, 4, 3, 10);
  const auto rep = verify_head_order_erasure(m.y, m.w1, m.b1, m.w2, m.b2, {2, 0, 3, 1});
  CHECK(rep.exact_after_resort);
  CHECK(rep.max_abs_diff < 1e-12);
  const auto identity = verify_head_order_erasure(m.y, m.w1, m.b1, m.w2, m.b2, {0, 1, 2, 3});
  CHECK(identity.max_abs_diff == 0.0);
  CHECK_THROWS_AS(verify_head_order_erasure(m.y, m.w1, m.b1, m.w2, m.b2, {0, 0, 1, 2}), ValidationError);
}

TEST_CASE("searching engine substitution") {
  SplitMix64 rng(36);
  Mlp m = random_mlp(rng, 8, 2, 4, 16);
  const auto d = mlp_stream_decomposition(m.y, m.w1, m.b1, m.w2, m.b2);
  const HeadWeights next{random_matrix(rng, 8, 4), random_matrix(rng, 8, 4), random_matrix(rng, 8, 4),
                         random_vector(rng, 4),    random_vector(rng, 4),    random_vector(rng, 4)};
  const auto s = verify_searching_engine_substitution(d, next);
  CHECK(s.four_term_residual < 1e-9);
  CHECK(s.context_expansion_residual < 1e-9);
}
