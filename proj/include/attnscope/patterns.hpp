#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnscope/matrix.hpp"

namespace attnscope {

/// The eight idealized attention gates. All indices in this library are
/// 0-based.
enum class PatternKind { Vertical, Diagonal, SubDiagonal, SuperDiagonal, Block, Point, MaxEntropy, Horizontal };

std::string to_string(PatternKind k);
PatternKind parse_pattern_kind(const std::string& name);

/// Field use by kind:
///   Vertical(i)          every row one-hot at column i
///   Diagonal             identity
///   SubDiagonal(j)       row r >= j attends column r - j; rows [0, j) are noise
///   SuperDiagonal(j)     row r < n - j attends column r + j; the last j rows are noise
///   Block(i, j; k)       rows [j, j+k) spread 1/k over columns [i, i+k)
///   Point(i, j)          row j one-hot at column i
///   MaxEntropy           every entry 1/n
///   Horizontal(j, K)     row j spread 1/|K| over the columns in `support`
/// Noise rows are uniform 1/n. `span` optionally shortens the band of the
/// diagonal kinds to its first `span` pattern rows.
struct PatternSpec {
  PatternKind kind = PatternKind::MaxEntropy;
  std::size_t n = 1;
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t k = 0;
  std::vector<std::size_t> support;
  std::optional<std::size_t> span;

  static PatternSpec vertical(std::size_t n, std::size_t column);
  static PatternSpec diagonal(std::size_t n);
  static PatternSpec sub_diagonal(std::size_t n, std::size_t offset);
  static PatternSpec super_diagonal(std::size_t n, std::size_t offset);
  static PatternSpec block(std::size_t n, std::size_t column, std::size_t row, std::size_t size);
  static PatternSpec point(std::size_t n, std::size_t column, std::size_t row);
  static PatternSpec max_entropy(std::size_t n);
  static PatternSpec horizontal(std::size_t n, std::size_t row, std::vector<std::size_t> columns);

  /// Throws InvalidPatternError if an index is out of range.
  void validate() const;

  /// Rows whose content is the pattern (everything else is 1/n noise).
  std::vector<std::size_t> pattern_rows() const;

  bool operator==(const PatternSpec&) const = default;
};

/// Convex combination of patterns sharing one n.
struct PatternComposition {
  std::vector<std::pair<PatternSpec, double>> parts;

  /// Throws InvalidPatternError unless weights are positive and sum to 1
  /// (within 1e-9) and every part has the same n.
  void validate() const;
};

/// Short label such as "vertical(i=5)" or "block(i=2,j=3,k=4)".
std::string describe(const PatternSpec& spec);

Matrix generate(const PatternSpec& spec);

/// Closed-form S * V without forming S.
Matrix analytic_output(const PatternSpec& spec, const Matrix& v);

Matrix compose(const PatternComposition& composition);

/// sum_p w_p * analytic_output(spec_p, v).
Matrix compose_output(const PatternComposition& composition, const Matrix& v);

void to_json(nlohmann::json& j, const PatternSpec& spec);
void from_json(const nlohmann::json& j, PatternSpec& spec);
void to_json(nlohmann::json& j, const PatternComposition& c);
void from_json(const nlohmann::json& j, PatternComposition& c);

}  // namespace attnscope
