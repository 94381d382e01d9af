#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnscope/metrics.hpp"
#include "attnscope/trace.hpp"

namespace attnscope {

/// Metric names accepted by parse_metric_selection: cone, entropy,
/// lilliefors, featuresum, svd, rank, norms, qkdecomp.
using MetricSelection = std::set<std::string>;

MetricSelection all_metrics();
/// Comma separated list; "all" selects everything. Unknown names raise ValidationError.
MetricSelection parse_metric_selection(const std::string& list);

struct TokenNormality {
  std::size_t token = 0;
  std::optional<LillieforsResult> test;  // empty when the row is degenerate
  std::string note;
};

struct HeadMetrics {
  double entropy = 0.0;
  double entropy_normalized = 0.0;
  Spectrum spectrum;  // of the head output Y
  std::size_t rank = 0;
  std::vector<double> q_norms, k_norms, v_norms;
  // Present when the run carries weights.
  std::optional<double> msv_q, msv_k, msv_v;
  std::optional<double> bias_nullity;  // max |softmax(full) - softmax(context + key bias)|
  std::optional<double> decomposition_residual;
};

struct FeatureSumResult {
  std::string placement;  // "ln1", "ln2" or "all-layers"
  std::vector<double> sums;
  std::optional<LillieforsResult> test;
  std::string note;
};

struct LayerMetrics {
  std::size_t layer = 0;
  std::optional<double> cone_index;  // on the layer output
  double entropy = 0.0;              // mean over heads of mean row entropy
  double entropy_normalized = 0.0;
  std::optional<std::size_t> rank_ln1;
  std::size_t rank_output = 0;
  std::vector<HeadMetrics> heads;
  std::vector<TokenNormality> tokens;  // Lilliefors on each post-LN1 row
  std::vector<FeatureSumResult> feature_sums;
};

struct MetricsReport {
  std::string run_id;
  std::size_t n = 0;
  Placement placement = Placement::LayerNorm;
  MetricSelection selection;
  std::vector<LayerMetrics> layers;
  std::optional<FeatureSumResult> all_layers;
  std::vector<std::string> notes;
};

MetricsReport compute_metrics(const RunTrace& run, const MetricSelection& selection = all_metrics());

nlohmann::json to_json(const MetricsReport& r);

/// Writes metrics.json plus one CSV per selected metric into `dir`:
/// entropy.csv, entropy_heads.csv, cone.csv, spectra.csv, rank.csv,
/// lilliefors.csv, feature_sum.csv, norms.csv, qkdecomp.csv.
/// Returns the written file names.
std::vector<std::string> write_metrics(const MetricsReport& r, const std::filesystem::path& dir);

}  // namespace attnscope
