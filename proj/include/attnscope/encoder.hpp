#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "attnscope/matrix.hpp"
#include "attnscope/trace.hpp"

namespace attnscope {

/// Sinusoidal encodings: column 2i holds sin(pos / 10000^(2i/d_model)),
/// column 2i+1 the matching cosine.
Matrix positional_encoding(std::size_t n, std::size_t d_model);

/// Row-wise softmax with the row maximum subtracted before exponentiation.
Matrix softmax_rows(const Matrix& m);

/// Row-wise (y - mean) / population std, no affine parameters.
/// Throws DegenerateInputError naming the first zero-variance row.
Matrix layer_norm_rows(const Matrix& m);

double gelu(double x);
Matrix apply_activation(const Matrix& m, Activation a);

/// Xavier-uniform bound sqrt(6 / (fan_in + fan_out)).
double xavier_bound(std::size_t fan_in, std::size_t fan_out);

/// Deterministic weights from config.seed. Matrices are drawn from a single
/// splitmix64 stream in the order layer -> (head -> W_Q, W_K, W_V) -> W_O ->
/// W_1 -> W_2, each entry uniform on (-a, a) with the Xavier bound of that
/// matrix. Biases are zero unless config.bias_scale > 0.
EncoderWeights init_encoder(const EncoderConfig& config);

HeadTrace head_forward(const Matrix& x, const HeadWeights& w);

/// One encoder block with inference semantics (no dropout):
///   ln1 = LN(Conc(heads) W_O + b_O + X)
///   ln2 = LN(act(ln1 W_1 + b_1) W_2 + b_2 + ln1)
LayerTrace layer_forward(const Matrix& x, const LayerWeights& w, Activation activation);

/// Windows sequence[i, i+k) for i = 0, stride, 2*stride, ... while i + k <= size.
std::vector<std::string> kmer_tokenize(std::string_view sequence, std::size_t k, std::size_t stride);

/// On-the-fly vocabulary. Id 0 is the reserved padding token; other tokens get
/// ids in order of first appearance.
class Vocabulary {
 public:
  static constexpr std::string_view kPad = "[PAD]";

  Vocabulary();
  /// Returns the id of `token`, inserting it if new. Empty tokens and the
  /// reserved padding literal raise VocabularyError.
  std::uint64_t intern(const std::string& token);
  std::uint64_t id(const std::string& token) const;
  std::size_t size() const { return ids_.size(); }

 private:
  std::map<std::string, std::uint64_t, std::less<>> ids_;
};

/// Seeded embedding row for a token id; depends only on (seed, id, d_model).
Vector token_embedding(std::uint64_t seed, std::uint64_t id, std::size_t d_model);

/// Pads with [PAD] or truncates to config.n, embeds, adds positional
/// encodings and runs every layer. The returned trace carries the weights.
RunTrace encode(const std::vector<std::string>& tokens, const EncoderConfig& config);
RunTrace encode(const std::vector<std::string>& tokens, const EncoderConfig& config, const EncoderWeights& weights);

/// Synthetic input of `count` distinct tokens "t0", "t1", ...
RunTrace encode_count(std::size_t count, const EncoderConfig& config);

}  // namespace attnscope
