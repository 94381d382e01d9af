#include "attnscope/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <Eigen/SVD>

namespace attnscope {

double cone_index(const Matrix& x) { return x.colwise().sum().norm(); }

RowEntropy row_entropy(const Matrix& s, double stochastic_tol) {
  RowEntropy out;
  out.per_row.reserve(static_cast<std::size_t>(s.rows()));
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      const double p = s(r, c);
      if (!std::isfinite(p)) throw ValidationError("entropy: row " + std::to_string(r) + " has a non-finite entry");
      if (p < -1e-6) {
        throw ValidationError("entropy: row " + std::to_string(r) + " has negative entry " + std::to_string(p));
      }
      sum += std::max(p, 0.0);
    }
    if (std::abs(sum - 1.0) > stochastic_tol) {
      throw ValidationError("entropy: row " + std::to_string(r) + " sums to " + std::to_string(sum));
    }
    double h = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      const double p = std::max(s(r, c), 0.0) / sum;
      if (p > 0.0) h -= p * std::log(p);
    }
    out.per_row.push_back(h);
  }
  if (!out.per_row.empty()) {
    double total = 0.0;
    for (double h : out.per_row) total += h;
    out.mean = total / static_cast<double>(out.per_row.size());
  }
  out.normalized_mean = s.cols() > 1 ? out.mean / std::log(static_cast<double>(s.cols())) : 0.0;
  return out;
}

RowEntropy layer_entropy(const std::vector<const Matrix*>& maps) {
  RowEntropy out;
  if (maps.empty()) return out;
  double mean = 0.0;
  double normalized = 0.0;
  for (const Matrix* s : maps) {
    const auto e = row_entropy(*s);
    out.per_row.push_back(e.mean);
    mean += e.mean;
    normalized += e.normalized_mean;
  }
  out.mean = mean / static_cast<double>(maps.size());
  out.normalized_mean = normalized / static_cast<double>(maps.size());
  return out;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double lilliefors_critical(std::size_t n) {
  // Lilliefors (1967), alpha = 0.05.
  struct Entry {
    std::size_t n;
    double d;
  };
  static constexpr std::array<Entry, 19> kTable{{{4, 0.381},  {5, 0.337},  {6, 0.319},  {7, 0.300},  {8, 0.285},
                                                 {9, 0.271},  {10, 0.258}, {11, 0.249}, {12, 0.242}, {13, 0.234},
                                                 {14, 0.227}, {15, 0.220}, {16, 0.213}, {17, 0.206}, {18, 0.200},
                                                 {19, 0.195}, {20, 0.190}, {25, 0.180}, {30, 0.161}}};
  if (n < kTable.front().n) throw DegenerateInputError("lilliefors: sample size must be >= 4");
  if (n > kTable.back().n) return 0.886 / std::sqrt(static_cast<double>(n));
  for (std::size_t t = 0; t < kTable.size(); ++t) {
    if (kTable[t].n == n) return kTable[t].d;
    if (kTable[t].n > n) {
      const auto& lo = kTable[t - 1];
      const auto& hi = kTable[t];
      const double frac = static_cast<double>(n - lo.n) / static_cast<double>(hi.n - lo.n);
      return lo.d + frac * (hi.d - lo.d);
    }
  }
  return kTable.back().d;
}

LillieforsResult lilliefors(std::span<const double> sample) {
  const std::size_t n = sample.size();
  if (n < 5) throw DegenerateInputError("lilliefors: sample size must be >= 5, got " + std::to_string(n));
  double mean = 0.0;
  for (double x : sample) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : sample) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0) || !std::isfinite(sd)) throw DegenerateInputError("lilliefors: sample has zero variance");

  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  double d = 0.0;
  const double nn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = normal_cdf((sorted[i] - mean) / sd);
    d = std::max({d, static_cast<double>(i + 1) / nn - f, f - static_cast<double>(i) / nn});
  }
  LillieforsResult res;
  res.n = n;
  res.statistic = d;
  res.critical = lilliefors_critical(n);
  res.reject = d > res.critical;
  return res;
}

Spectrum singular_spectrum(const Matrix& y) {
  Spectrum out;
  if (y.size() == 0) return out;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(y), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  out.values.assign(sv.data(), sv.data() + sv.size());
  std::sort(out.values.begin(), out.values.end(), std::greater<>());
  out.max = out.values.empty() ? 0.0 : out.values.front();
  return out;
}

std::size_t numeric_rank(const Matrix& y, double rtol) {
  const auto spec = singular_spectrum(y);
  if (spec.max == 0.0) return 0;
  const double threshold = rtol * spec.max;
  return static_cast<std::size_t>(
      std::count_if(spec.values.begin(), spec.values.end(), [&](double s) { return s > threshold; }));
}

SimilarityDecomposition qk_decomposition(const Matrix& x, const HeadWeights& w) {
  const Eigen::Index d_model = x.cols();
  const Eigen::Index d_k = w.w_q.cols();
  require_shape(w.w_q, d_model, d_k, "W_Q");
  require_shape(w.w_k, d_model, d_k, "W_K");
  if (w.b_q.size() != d_k || w.b_k.size() != d_k) throw ShapeError("b_Q, b_K must have length d_k");

  const Eigen::Index n = x.rows();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  SimilarityDecomposition d;
  d.m = w.w_q * w.w_k.transpose();
  d.context = x * d.m * x.transpose();
  const Eigen::RowVectorXd key_row = (x * w.w_k * w.b_q).transpose();  // (b_Q^T W_K^T X^T)
  d.key_bias = ones * key_row;
  const Eigen::VectorXd query_col = x * w.w_q * w.b_k;
  d.query_bias = query_col * ones.transpose();
  d.constant = Matrix::Constant(n, n, w.b_q.dot(w.b_k));
  return d;
}

Matrix reduced_attention(const SimilarityDecomposition& d, std::size_t d_k) {
  Matrix logits = (d.context + d.key_bias) / std::sqrt(static_cast<double>(d_k));
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    auto e = (logits.row(r).array() - mx).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins < 1) throw ValidationError("histogram: bins must be >= 1");
  Histogram h;
  h.counts.assign(bins, 0);
  if (values.empty()) {
    h.edges.assign(bins + 1, 0.0);
    return h;
  }
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const double width = (hi - lo) / static_cast<double>(bins);
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.edges.back() = hi;
  for (double v : values) {
    std::size_t b = 0;
    if (width > 0.0) {
      b = static_cast<std::size_t>((v - lo) / width);
      if (b >= bins) b = bins - 1;
    }
    ++h.counts[b];
  }
  return h;
}

std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> norms(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) norms[static_cast<std::size_t>(r)] = m.row(r).norm();
  return norms;
}

Histogram norm_histogram(const Matrix& m, std::size_t bins) {
  const auto norms = row_norms(m);
  return histogram(norms, bins);
}

FeatureSum feature_sum_distribution(const Matrix& x) {
  FeatureSum out;
  const Eigen::RowVectorXd sums = x.colwise().sum();
  out.sums.assign(sums.data(), sums.data() + sums.size());
  out.test = lilliefors(out.sums);
  return out;
}

}  // namespace attnscope
