#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attnscope/matrix.hpp"

namespace attnscope {

enum class Activation { Relu, Gelu };

/// Whether the attention block applies a learned W_O after head concatenation
/// or an identity map (the pipeline without an output projection).
enum class OutputProjection { Learned, Identity };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);
std::string to_string(OutputProjection p);
OutputProjection parse_output_projection(const std::string& name);

/// Encoder shape and seed. Defaults are the BERT-base extents; tests use far
/// smaller configurations.
struct EncoderConfig {
  std::size_t layers = 12;
  std::size_t heads = 12;
  std::size_t d_model = 768;
  std::size_t d_k = 64;
  std::size_t d_ff = 3072;
  std::size_t n = 512;
  Activation activation = Activation::Relu;
  std::uint64_t seed = 0;
  OutputProjection output_projection = OutputProjection::Learned;
  /// Biases are zero unless this is positive, in which case each bias entry is
  /// drawn uniformly from (-bias_scale, bias_scale).
  double bias_scale = 0.0;

  /// Throws ValidationError unless d_model == heads * d_k and every extent
  /// except `layers` is at least 1.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

struct HeadWeights {
  Matrix w_q, w_k, w_v;  // d_model x d_k
  Vector b_q, b_k, b_v;  // d_k
};

struct LayerWeights {
  std::vector<HeadWeights> heads;
  Matrix w_o;  // d_model x d_model
  Vector b_o;
  Matrix w_1;  // d_model x d_ff
  Vector b_1;
  Matrix w_2;  // d_ff x d_model
  Vector b_2;
};

struct EncoderWeights {
  std::vector<LayerWeights> layers;
};

struct HeadTrace {
  Matrix q, k, v;  // n x d_k
  Matrix s;        // n x n, row-stochastic
  Matrix y;        // n x d_k, y = s * v
};

struct LayerTrace {
  Matrix input;  // n x d_model
  std::vector<HeadTrace> heads;
  Matrix y_mh;  // column-wise concatenation of head outputs
  Matrix ln1;   // after attention + skip + layer norm
  Matrix mlp;   // feed-forward output before the second skip connection
  Matrix ln2;   // layer output
};

/// Where hidden states were captured. Runs produced by the reference encoder
/// always carry both layer-norm placements; external extractors may only
/// expose layer outputs.
enum class Placement { LayerNorm, OutputOnly };

std::string to_string(Placement p);
Placement parse_placement(const std::string& name);

struct RunTrace {
  std::string run_id;
  EncoderConfig config;
  Placement placement = Placement::LayerNorm;
  std::vector<std::string> tokens;
  Matrix input;  // embedded input (token embedding + positional encoding); may be empty for external runs
  std::vector<LayerTrace> layers;
  std::optional<EncoderWeights> weights;
};

}  // namespace attnscope
