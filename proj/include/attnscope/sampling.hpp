#pragma once

#include <cstddef>

#include "attnscope/matrix.hpp"
#include "attnscope/rng.hpp"

namespace attnscope {

/// Entries uniform on (-1, 1).
inline Matrix random_matrix(SplitMix64& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.symmetric(1.0);
  return m;
}

inline Vector random_vector(SplitMix64& rng, Eigen::Index size) {
  Vector v(size);
  for (Eigen::Index i = 0; i < size; ++i) v(i) = rng.symmetric(1.0);
  return v;
}

inline Matrix normal_matrix(SplitMix64& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

/// (rows x rank)(rank x cols) product of normal factors; rank `rank` almost surely.
inline Matrix planted_rank_matrix(SplitMix64& rng, Eigen::Index rows, Eigen::Index cols, Eigen::Index rank) {
  return normal_matrix(rng, rows, rank) * normal_matrix(rng, rank, cols);
}

}  // namespace attnscope
