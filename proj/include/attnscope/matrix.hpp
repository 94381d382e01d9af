#pragma once

#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "attnscope/errors.hpp"

namespace attnscope {

// All analysis runs at 64-bit; storage down-converts to f32 (see tensor.hpp).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

/// ||a - b||_F / max(||b||_F, tiny). Returns the absolute difference when b is zero.
inline double relative_frobenius(const Matrix& a, const Matrix& b) {
  const double denom = b.norm();
  const double diff = (a - b).norm();
  return denom > 0.0 ? diff / denom : diff;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace attnscope
