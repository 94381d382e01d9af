#include "attnscope/trace.hpp"

namespace attnscope {

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "gelu"; }

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "gelu") return Activation::Gelu;
  throw ValidationError("unknown activation '" + name + "' (expected relu or gelu)");
}

std::string to_string(OutputProjection p) { return p == OutputProjection::Learned ? "learned" : "identity"; }

OutputProjection parse_output_projection(const std::string& name) {
  if (name == "learned") return OutputProjection::Learned;
  if (name == "identity") return OutputProjection::Identity;
  throw ValidationError("unknown output_projection '" + name + "' (expected learned or identity)");
}

std::string to_string(Placement p) { return p == Placement::LayerNorm ? "ln" : "output-only"; }

Placement parse_placement(const std::string& name) {
  if (name == "ln") return Placement::LayerNorm;
  if (name == "output-only") return Placement::OutputOnly;
  throw ValidationError("unknown placement '" + name + "'");
}

void EncoderConfig::validate() const {
  if (heads < 1 || d_model < 1 || d_k < 1 || d_ff < 1 || n < 1) {
    throw ValidationError("encoder extents (A, d_model, d_k, d_ff, n) must all be >= 1");
  }
  if (d_model != heads * d_k) {
    throw ValidationError("d_model (" + std::to_string(d_model) + ") must equal A * d_k (" +
                          std::to_string(heads) + " * " + std::to_string(d_k) + ")");
  }
  if (!(bias_scale >= 0.0)) throw ValidationError("bias_scale must be non-negative");
}

}  // namespace attnscope
