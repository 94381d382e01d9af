#pragma once

#include <cstddef>
#include <vector>

#include "attnscope/matrix.hpp"

namespace attnscope {

/// Dense row-major f32 array; the on-disk carrier for every matrix and vector.
struct TensorF32 {
  std::vector<std::size_t> dims;
  std::vector<float> data;

  TensorF32() = default;
  TensorF32(std::vector<std::size_t> dims_, std::vector<float> data_);

  std::size_t element_count() const;
  std::size_t rank() const { return dims.size(); }

  /// Throws ValidationError if dims/data disagree, an extent is zero, or
  /// (when require_finite) any value is NaN or infinite.
  void validate(bool require_finite = true) const;

  /// 2-D view widened to f64. A 1-D tensor becomes a single row.
  Matrix to_matrix() const;
  /// 1-D tensor widened to f64.
  Vector to_vector() const;

  static TensorF32 from_matrix(const Matrix& m);
  static TensorF32 from_vector(const Vector& v);

  friend bool operator==(const TensorF32& a, const TensorF32& b);
};

/// Round every entry through f32, matching what persistence stores.
Matrix round_to_f32(const Matrix& m);
Vector round_to_f32(const Vector& v);

}  // namespace attnscope
