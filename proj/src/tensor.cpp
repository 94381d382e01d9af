#include "attnscope/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <string>

namespace attnscope {

TensorF32::TensorF32(std::vector<std::size_t> dims_, std::vector<float> data_)
    : dims(std::move(dims_)), data(std::move(data_)) {}

std::size_t TensorF32::element_count() const {
  if (dims.empty()) return 0;
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

void TensorF32::validate(bool require_finite) const {
  if (dims.empty()) throw ValidationError("tensor has no dimensions");
  for (std::size_t d = 0; d < dims.size(); ++d) {
    if (dims[d] == 0) throw ValidationError("tensor extent " + std::to_string(d) + " is zero");
  }
  if (data.size() != element_count()) {
    throw ValidationError("tensor data length " + std::to_string(data.size()) + " != product of dims " +
                          std::to_string(element_count()));
  }
  if (require_finite) {
    for (std::size_t k = 0; k < data.size(); ++k) {
      if (!std::isfinite(data[k])) {
        throw ValidationError("tensor value at flat index " + std::to_string(k) + " is not finite");
      }
    }
  }
}

Matrix TensorF32::to_matrix() const {
  validate(false);
  if (dims.size() > 2) throw ShapeError("tensor of rank " + std::to_string(dims.size()) + " is not a matrix");
  const auto rows = dims.size() == 2 ? static_cast<Eigen::Index>(dims[0]) : Eigen::Index{1};
  const auto cols = static_cast<Eigen::Index>(dims.back());
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<double>(data[static_cast<std::size_t>(k)]);
  return m;
}

Vector TensorF32::to_vector() const {
  validate(false);
  if (dims.size() != 1) throw ShapeError("tensor of rank " + std::to_string(dims.size()) + " is not a vector");
  Vector v(static_cast<Eigen::Index>(dims[0]));
  for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = static_cast<double>(data[static_cast<std::size_t>(k)]);
  return v;
}

TensorF32 TensorF32::from_matrix(const Matrix& m) {
  TensorF32 t;
  t.dims = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index k = 0; k < m.size(); ++k) t.data[static_cast<std::size_t>(k)] = static_cast<float>(m.data()[k]);
  return t;
}

TensorF32 TensorF32::from_vector(const Vector& v) {
  TensorF32 t;
  t.dims = {static_cast<std::size_t>(v.size())};
  t.data.resize(static_cast<std::size_t>(v.size()));
  for (Eigen::Index k = 0; k < v.size(); ++k) t.data[static_cast<std::size_t>(k)] = static_cast<float>(v[k]);
  return t;
}

bool operator==(const TensorF32& a, const TensorF32& b) {
  // Bitwise: distinguishes -0.0 from 0.0 and compares NaN payloads.
  return a.dims == b.dims && a.data.size() == b.data.size() &&
         (a.data.empty() || std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

Matrix round_to_f32(const Matrix& m) {
  return m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

Vector round_to_f32(const Vector& v) {
  return v.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

}  // namespace attnscope
