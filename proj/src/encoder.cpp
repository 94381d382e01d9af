#include "attnscope/encoder.hpp"

#include <cmath>
#include <numbers>

#include "attnscope/rng.hpp"

namespace attnscope {

Matrix positional_encoding(std::size_t n, std::size_t d_model) {
  Matrix pe(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_model));
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t col = 0; col < d_model; ++col) {
      const std::size_t two_i = col - (col % 2);
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(two_i) / static_cast<double>(d_model));
      pe(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(col)) =
          (col % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double e = std::exp(m(r, c) - mx);
      out(r, c) = e;
      sum += e;
    }
    out.row(r) /= sum;
  }
  return out;
}

Matrix layer_norm_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  const double cols = static_cast<double>(m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mean = m.row(r).sum() / cols;
    double var = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double d = m(r, c) - mean;
      var += d * d;
    }
    var /= cols;
    const double sd = std::sqrt(var);
    const double scale = std::max(1.0, m.row(r).cwiseAbs().maxCoeff());
    if (!(sd > 1e-12 * scale)) {
      throw DegenerateInputError("layer norm: row " + std::to_string(r) + " has zero variance");
    }
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(r, c) = (m(r, c) - mean) / sd;
  }
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Matrix apply_activation(const Matrix& m, Activation a) {
  if (a == Activation::Relu) return m.cwiseMax(0.0);
  return m.unaryExpr([](double x) { return gelu(x); });
}

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace {

Matrix draw_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols) {
  const double a = xavier_bound(rows, cols);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.symmetric(a);
  return m;
}

Vector draw_bias(SplitMix64& rng, std::size_t len, double scale) {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(len));
  if (scale > 0.0) {
    for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = rng.symmetric(scale);
  }
  return v;
}

constexpr std::uint64_t kEmbeddingStream = 0x454D4245444449ULL;  // "EMBEDDI"

}  // namespace

EncoderWeights init_encoder(const EncoderConfig& config) {
  config.validate();
  SplitMix64 rng(config.seed);
  EncoderWeights weights;
  weights.layers.resize(config.layers);
  for (auto& layer : weights.layers) {
    layer.heads.resize(config.heads);
    for (auto& head : layer.heads) {
      head.w_q = draw_matrix(rng, config.d_model, config.d_k);
      head.w_k = draw_matrix(rng, config.d_model, config.d_k);
      head.w_v = draw_matrix(rng, config.d_model, config.d_k);
    }
    if (config.output_projection == OutputProjection::Learned) {
      layer.w_o = draw_matrix(rng, config.d_model, config.d_model);
    } else {
      layer.w_o = Matrix::Identity(static_cast<Eigen::Index>(config.d_model), static_cast<Eigen::Index>(config.d_model));
    }
    layer.w_1 = draw_matrix(rng, config.d_model, config.d_ff);
    layer.w_2 = draw_matrix(rng, config.d_ff, config.d_model);

    for (auto& head : layer.heads) {
      head.b_q = draw_bias(rng, config.d_k, config.bias_scale);
      head.b_k = draw_bias(rng, config.d_k, config.bias_scale);
      head.b_v = draw_bias(rng, config.d_k, config.bias_scale);
    }
    const double bo_scale = config.output_projection == OutputProjection::Learned ? config.bias_scale : 0.0;
    layer.b_o = draw_bias(rng, config.d_model, bo_scale);
    layer.b_1 = draw_bias(rng, config.d_ff, config.bias_scale);
    layer.b_2 = draw_bias(rng, config.d_model, config.bias_scale);
  }
  return weights;
}

HeadTrace head_forward(const Matrix& x, const HeadWeights& w) {
  const Eigen::Index d_model = x.cols();
  const Eigen::Index d_k = w.w_q.cols();
  require_shape(w.w_q, d_model, d_k, "W_Q");
  require_shape(w.w_k, d_model, d_k, "W_K");
  require_shape(w.w_v, d_model, d_k, "W_V");
  if (w.b_q.size() != d_k || w.b_k.size() != d_k || w.b_v.size() != d_k) {
    throw ShapeError("head biases must have length d_k = " + std::to_string(d_k));
  }

  HeadTrace t;
  t.q = (x * w.w_q).rowwise() + w.b_q.transpose();
  t.k = (x * w.w_k).rowwise() + w.b_k.transpose();
  t.v = (x * w.w_v).rowwise() + w.b_v.transpose();
  const Matrix logits = (t.q * t.k.transpose()) / std::sqrt(static_cast<double>(d_k));
  t.s = softmax_rows(logits);
  t.y = t.s * t.v;
  return t;
}

LayerTrace layer_forward(const Matrix& x, const LayerWeights& w, Activation activation) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d_model = x.cols();
  if (w.heads.empty()) throw ShapeError("layer has no heads");
  const Eigen::Index d_k = w.heads.front().w_q.cols();
  if (d_k * static_cast<Eigen::Index>(w.heads.size()) != d_model) {
    throw ShapeError("heads * d_k must equal the input width " + std::to_string(d_model));
  }
  require_shape(w.w_o, d_model, d_model, "W_O");
  require_shape(w.w_1, d_model, w.w_1.cols(), "W_1");
  require_shape(w.w_2, w.w_1.cols(), d_model, "W_2");
  if (w.b_o.size() != d_model || w.b_1.size() != w.w_1.cols() || w.b_2.size() != d_model) {
    throw ShapeError("layer bias length mismatch");
  }

  LayerTrace t;
  t.input = x;
  t.y_mh.resize(n, d_model);
  for (std::size_t h = 0; h < w.heads.size(); ++h) {
    t.heads.push_back(head_forward(x, w.heads[h]));
    t.y_mh.middleCols(static_cast<Eigen::Index>(h) * d_k, d_k) = t.heads.back().y;
  }
  const Matrix attn = ((t.y_mh * w.w_o).rowwise() + w.b_o.transpose()) + x;
  t.ln1 = layer_norm_rows(attn);
  const Matrix pre = (t.ln1 * w.w_1).rowwise() + w.b_1.transpose();
  t.mlp = (apply_activation(pre, activation) * w.w_2).rowwise() + w.b_2.transpose();
  t.ln2 = layer_norm_rows(t.mlp + t.ln1);
  return t;
}

std::vector<std::string> kmer_tokenize(std::string_view sequence, std::size_t k, std::size_t stride) {
  if (k < 1 || stride < 1) throw ValidationError("kmer_tokenize: k and stride must be >= 1");
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i + k <= sequence.size(); i += stride) tokens.emplace_back(sequence.substr(i, k));
  return tokens;
}

Vocabulary::Vocabulary() { ids_.emplace(std::string(kPad), 0); }

std::uint64_t Vocabulary::intern(const std::string& token) {
  if (token.empty()) throw VocabularyError("empty token");
  if (token == kPad) throw VocabularyError("token '" + token + "' is reserved for padding");
  const auto [it, inserted] = ids_.emplace(token, ids_.size());
  return it->second;
}

std::uint64_t Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) throw VocabularyError("unknown token '" + token + "'");
  return it->second;
}

Vector token_embedding(std::uint64_t seed, std::uint64_t id, std::size_t d_model) {
  SplitMix64 rng(derive_seed(derive_seed(seed, kEmbeddingStream), id));
  const double a = xavier_bound(1, d_model);
  Vector e(static_cast<Eigen::Index>(d_model));
  for (Eigen::Index k = 0; k < e.size(); ++k) e[k] = rng.symmetric(a);
  return e;
}

RunTrace encode(const std::vector<std::string>& tokens, const EncoderConfig& config) {
  return encode(tokens, config, init_encoder(config));
}

RunTrace encode(const std::vector<std::string>& tokens, const EncoderConfig& config, const EncoderWeights& weights) {
  config.validate();
  if (weights.layers.size() != config.layers) throw ShapeError("weights do not match config layer count");

  RunTrace run;
  run.config = config;
  run.run_id = "seed-" + std::to_string(config.seed);
  run.placement = Placement::LayerNorm;

  Vocabulary vocab;
  std::vector<std::uint64_t> ids;
  ids.reserve(config.n);
  for (std::size_t p = 0; p < config.n; ++p) {
    if (p < tokens.size()) {
      ids.push_back(vocab.intern(tokens[p]));
      run.tokens.push_back(tokens[p]);
    } else {
      ids.push_back(0);
      run.tokens.emplace_back(Vocabulary::kPad);
    }
  }

  Matrix x = positional_encoding(config.n, config.d_model);
  for (std::size_t p = 0; p < config.n; ++p) {
    x.row(static_cast<Eigen::Index>(p)) += token_embedding(config.seed, ids[p], config.d_model).transpose();
  }
  run.input = x;
  for (const auto& lw : weights.layers) {
    run.layers.push_back(layer_forward(x, lw, config.activation));
    x = run.layers.back().ln2;
  }
  run.weights = weights;
  return run;
}

RunTrace encode_count(std::size_t count, const EncoderConfig& config) {
  std::vector<std::string> tokens;
  tokens.reserve(count);
  for (std::size_t t = 0; t < count; ++t) tokens.push_back("t" + std::to_string(t));
  return encode(tokens, config);
}

}  // namespace attnscope
