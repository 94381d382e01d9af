#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnscope/matrix.hpp"
#include "attnscope/patterns.hpp"

namespace attnscope {

struct ClassifierParams {
  double c_sig = 2.0;        // a cell is significant when S > c_sig / n
  std::size_t min_run = 4;   // minimum line length for diagonal and vertical runs
  double fill_min = 0.6;     // minimum bounding-box fill for a block
  double mass_min = 0.05;    // below this significant mass (in rows) the map is closed
  double block_aspect_min = 0.5;  // min(h, w) / max(h, w) for a block bounding box
  double stochastic_tol = 1e-4;
};

struct Span {
  std::size_t row_begin = 0, row_end = 0;  // [begin, end)
  std::size_t col_begin = 0, col_end = 0;
};

struct DetectedPattern {
  PatternSpec spec;
  double mass = 0.0;  // share of the significant mass claimed by this detection
  Span span;
  std::vector<std::pair<std::size_t, std::size_t>> cells;  // (row, column) claimed
  /// Alternative reading; a Horizontal detection lists its Point decomposition.
  std::vector<PatternSpec> alternatives;
};

struct PatternReport {
  std::size_t n = 0;
  std::vector<DetectedPattern> detections;  // descending mass
  double significant_mass = 0.0;            // sum of significant entries, in rows of attention
  double residual_mass = 0.0;
  double residual_entropy = 0.0;  // mean row entropy of residual(S, report)
  double noise_floor = 0.0;       // 1 / n
};

/// Decomposes an attention map into gate patterns.
///
/// Cells with S > c_sig/n are significant. Dense, roughly square connected
/// regions of significant cells (bounding-box fill >= fill_min) are set aside
/// as block candidates first so that their internal diagonals and columns are
/// not mistaken for lines. Cells are then claimed greedily: diagonal runs
/// (offset 0 -> Diagonal, below -> SubDiagonal, above -> SuperDiagonal),
/// vertical runs, blocks, rows with two or more leftover cells (Horizontal),
/// and single leftover cells (Point). Runs must hold at least min_run
/// unclaimed cells; cells already owned or inside a block bridge a run
/// without counting toward it. If the significant mass is below mass_min the
/// map is reported as a single MaxEntropy detection.
PatternReport classify(const Matrix& s, const ClassifierParams& params = {});

struct Residual {
  Matrix matrix;
  double mean_entropy = 0.0;
};

/// Removes the claimed cells of `report` from `s` and returns their mass to
/// the noise floor: claimed entries become zero and each row receives its
/// removed mass spread uniformly over all n columns. Rows stay stochastic.
Residual residual(const Matrix& s, const PatternReport& report);

void to_json(nlohmann::json& j, const ClassifierParams& p);
void from_json(const nlohmann::json& j, ClassifierParams& p);
void to_json(nlohmann::json& j, const DetectedPattern& d);
void to_json(nlohmann::json& j, const PatternReport& r);

}  // namespace attnscope
