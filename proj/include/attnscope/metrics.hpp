#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "attnscope/matrix.hpp"
#include "attnscope/trace.hpp"

namespace attnscope {

/// Euclidean norm of the sum of the rows of `x`.
double cone_index(const Matrix& x);

struct RowEntropy {
  std::vector<double> per_row;  // nats
  double mean = 0.0;
  double normalized_mean = 0.0;  // mean / ln(columns); 0 when there is a single column
};

/// Shannon entropy (nats) of each row, with 0 ln 0 = 0. Rows are renormalized
/// to sum to 1 first; tiny negative entries down to -1e-6 are clamped to zero.
/// Throws ValidationError for larger negative entries, rows off by more than
/// `stochastic_tol` from unit sum, or non-finite values.
RowEntropy row_entropy(const Matrix& s, double stochastic_tol = 1e-4);

/// Mean over heads of each head's mean row entropy.
RowEntropy layer_entropy(const std::vector<const Matrix*>& maps);

struct LillieforsResult {
  std::size_t n = 0;
  double statistic = 0.0;  // D
  double critical = 0.0;   // at alpha = 0.05
  bool reject = false;
};

/// 5% critical value of the Lilliefors statistic. Published table for n <= 30
/// (linear interpolation between tabulated sizes), 0.886 / sqrt(n) above.
double lilliefors_critical(std::size_t n);

/// Kolmogorov-Smirnov distance between the empirical CDF and the normal CDF
/// with the sample mean and (n-1) standard deviation. Requires n >= 5 and
/// non-zero variance (DegenerateInputError otherwise).
LillieforsResult lilliefors(std::span<const double> sample);

double normal_cdf(double z);

struct Spectrum {
  std::vector<double> values;  // descending, length min(rows, cols)
  double max = 0.0;
};

Spectrum singular_spectrum(const Matrix& y);

/// Number of singular values strictly greater than rtol * sigma_max.
std::size_t numeric_rank(const Matrix& y, double rtol = 1e-9);

/// QK^T = X M X^T + 1 b_Q^T W_K^T X^T + X W_Q b_K 1^T + 1 b_Q^T b_K 1^T,
/// with M = W_Q W_K^T.
struct SimilarityDecomposition {
  Matrix m;
  Matrix context;     // X M X^T
  Matrix key_bias;    // 1 b_Q^T W_K^T X^T
  Matrix query_bias;  // X W_Q b_K 1^T, constant along each row
  Matrix constant;    // 1 b_Q^T b_K 1^T, globally constant

  Matrix sum() const { return context + key_bias + query_bias + constant; }
};

SimilarityDecomposition qk_decomposition(const Matrix& x, const HeadWeights& w);

/// softmax((context + key_bias) / sqrt(d_k)): the attention map with the two
/// row-constant terms dropped.
Matrix reduced_attention(const SimilarityDecomposition& d, std::size_t d_k);

struct Histogram {
  std::vector<double> edges;  // bins + 1 entries
  std::vector<std::size_t> counts;
};

/// Equal-width histogram over [min, max]; the last bin is closed. When all
/// values coincide every value lands in the first bin.
Histogram histogram(std::span<const double> values, std::size_t bins);

std::vector<double> row_norms(const Matrix& m);

/// Histogram of the Euclidean norms of the rows of `m`.
Histogram norm_histogram(const Matrix& m, std::size_t bins);

struct FeatureSum {
  std::vector<double> sums;  // one per column
  LillieforsResult test;
};

/// Column sums of `x` (sum of all row vectors) and the Lilliefors test on them.
FeatureSum feature_sum_distribution(const Matrix& x);

}  // namespace attnscope
