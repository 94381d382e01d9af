#include "attnscope/interchange.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace attnscope {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kPreludeLen = 10;  // magic + 2 version bytes + 2 header-length bytes
constexpr std::size_t kAlign = 64;

std::uint32_t float_bits(float f) { return std::bit_cast<std::uint32_t>(f); }

void put_le32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

std::uint32_t get_le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string shape_literal(const std::vector<std::size_t>& dims) {
  std::string s = "(";
  for (std::size_t d = 0; d < dims.size(); ++d) {
    if (d > 0) s += ", ";
    s += std::to_string(dims[d]);
  }
  if (dims.size() == 1) s += ",";
  s += ")";
  return s;
}

// Returns the raw text of the value stored under `key` in a Python dict literal.
std::string dict_value(const std::string& header, const std::string& key) {
  const std::string quoted[] = {"'" + key + "'", "\"" + key + "\""};
  for (const auto& q : quoted) {
    auto pos = header.find(q);
    if (pos == std::string::npos) continue;
    pos = header.find(':', pos + q.size());
    if (pos == std::string::npos) break;
    ++pos;
    while (pos < header.size() && header[pos] == ' ') ++pos;
    if (pos >= header.size()) break;
    if (header[pos] == '(') {
      const auto end = header.find(')', pos);
      if (end == std::string::npos) break;
      return header.substr(pos, end - pos + 1);
    }
    if (header[pos] == '\'' || header[pos] == '"') {
      const auto end = header.find(header[pos], pos + 1);
      if (end == std::string::npos) break;
      return header.substr(pos + 1, end - pos - 1);
    }
    auto end = header.find_first_of(",}", pos);
    if (end == std::string::npos) break;
    auto v = header.substr(pos, end - pos);
    while (!v.empty() && v.back() == ' ') v.pop_back();
    return v;
  }
  throw FormatError("NPY header: missing key '" + key + "'");
}

std::vector<std::size_t> parse_shape(const std::string& literal) {
  if (literal.size() < 2 || literal.front() != '(' || literal.back() != ')') {
    throw FormatError("NPY header: malformed shape '" + literal + "'");
  }
  std::vector<std::size_t> dims;
  std::stringstream ss(literal.substr(1, literal.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove(item.begin(), item.end(), ' '), item.end());
    if (item.empty()) continue;
    if (!std::all_of(item.begin(), item.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw FormatError("NPY header: malformed shape '" + literal + "'");
    }
    dims.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  if (dims.empty()) throw FormatError("NPY header: shape must have at least one dimension");
  return dims;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistenceError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw PersistenceError("read failure on '" + path.string() + "'");
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PersistenceError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw PersistenceError("write failure on '" + path.string() + "'");
}

}  // namespace

std::string encode_npy(const TensorF32& t) {
  t.validate(true);
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape_literal(t.dims) + ", }";
  const std::size_t unpadded = kPreludeLen + header.size() + 1;
  const std::size_t padded = (unpadded + kAlign - 1) / kAlign * kAlign;
  header.append(padded - unpadded, ' ');
  header.push_back('\n');
  if (header.size() > 0xFFFF) throw FormatError("NPY header too long for version 1.0");

  std::string out;
  out.reserve(padded + t.data.size() * 4);
  out.append(kMagic, kMagicLen);
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(header.size() & 0xFF));
  out.push_back(static_cast<char>((header.size() >> 8) & 0xFF));
  out += header;
  for (float f : t.data) put_le32(out, float_bits(f));
  return out;
}

TensorF32 decode_npy(const std::string& bytes) {
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw FormatError("NPY magic: file does not start with \\x93NUMPY");
  }
  if (bytes.size() < kPreludeLen) throw FormatError("NPY header: file too short");
  if (raw[6] != 1 || raw[7] != 0) {
    throw FormatError("NPY version: expected 1.0, got " + std::to_string(raw[6]) + "." + std::to_string(raw[7]));
  }
  const std::size_t header_len = static_cast<std::size_t>(raw[8]) | (static_cast<std::size_t>(raw[9]) << 8);
  if (bytes.size() < kPreludeLen + header_len) throw FormatError("NPY header: truncated header");
  const std::string header = bytes.substr(kPreludeLen, header_len);

  const std::string descr = dict_value(header, "descr");
  if (descr != "<f4") throw FormatError("NPY dtype: expected '<f4', got '" + descr + "'");
  const std::string fortran = dict_value(header, "fortran_order");
  if (fortran != "False") throw FormatError("NPY fortran_order: only C order is supported");
  TensorF32 t;
  t.dims = parse_shape(dict_value(header, "shape"));
  for (auto d : t.dims) {
    if (d == 0) throw FormatError("NPY shape: zero extent");
  }

  const std::size_t count = t.element_count();
  const std::size_t offset = kPreludeLen + header_len;
  const std::size_t expected = count * 4;
  if (bytes.size() - offset != expected) {
    throw FormatError("NPY length: data section has " + std::to_string(bytes.size() - offset) +
                      " bytes, expected " + std::to_string(expected));
  }
  t.data.resize(count);
  for (std::size_t k = 0; k < count; ++k) t.data[k] = std::bit_cast<float>(get_le32(raw + offset + 4 * k));
  return t;
}

void write_tensor(const TensorF32& t, const fs::path& path) { write_file(path, encode_npy(t)); }

TensorF32 read_tensor(const fs::path& path) {
  try {
    return decode_npy(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_matrix(const Matrix& m, const fs::path& path) { write_tensor(TensorF32::from_matrix(m), path); }

Matrix read_matrix(const fs::path& path) {
  const auto t = read_tensor(path);
  if (t.rank() != 2) throw ShapeError(path.string() + ": expected a 2-D tensor");
  return t.to_matrix();
}

// ---------------------------------------------------------------------------
// Manifest

json config_to_json(const EncoderConfig& c) {
  json j;
  j["L"] = c.layers;
  j["A"] = c.heads;
  j["d_model"] = c.d_model;
  j["d_k"] = c.d_k;
  j["d_ff"] = c.d_ff;
  j["n"] = c.n;
  j["activation"] = to_string(c.activation);
  j["seed"] = c.seed;
  j["output_projection"] = to_string(c.output_projection);
  j["bias_scale"] = c.bias_scale;
  return j;
}

EncoderConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("encoder config must be a JSON object");
  EncoderConfig c;
  auto get_size = [&](std::initializer_list<const char*> keys, std::size_t& field) {
    for (const char* key : keys) {
      if (j.contains(key)) {
        const auto& v = j.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0) {
          throw ValidationError(std::string("config field '") + key + "' must be a non-negative integer");
        }
        field = v.get<std::size_t>();
        return;
      }
    }
  };
  get_size({"L", "layers"}, c.layers);
  get_size({"A", "heads"}, c.heads);
  get_size({"d_model"}, c.d_model);
  get_size({"d_k"}, c.d_k);
  get_size({"d_ff"}, c.d_ff);
  get_size({"n"}, c.n);
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("output_projection")) {
    c.output_projection = parse_output_projection(j.at("output_projection").get<std::string>());
  }
  if (j.contains("bias_scale")) c.bias_scale = j.at("bias_scale").get<double>();
  c.validate();
  return c;
}

std::vector<RunIssue> check_run(const RunTrace& run, double tol) {
  std::vector<RunIssue> issues;
  for (std::size_t l = 0; l < run.layers.size(); ++l) {
    for (std::size_t h = 0; h < run.layers[l].heads.size(); ++h) {
      const Matrix& s = run.layers[l].heads[h].s;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double sum = s.row(r).sum();
        const double lo = s.row(r).minCoeff();
        if (!std::isfinite(sum) || std::abs(sum - 1.0) > tol || lo < -tol) {
          std::ostringstream msg;
          msg << "layer " << l << " head " << h << " row " << r << ": not row-stochastic (sum " << sum
              << ", min " << lo << ")";
          issues.push_back({l, h, static_cast<std::size_t>(r), msg.str()});
        }
      }
    }
  }
  return issues;
}

namespace {

std::string layer_dir(std::size_t l) { return "layer" + std::to_string(l); }
std::string head_dir(std::size_t l, std::size_t h) { return layer_dir(l) + "/head" + std::to_string(h); }

std::string where(std::size_t l, std::optional<std::size_t> h) {
  std::string s = "layer " + std::to_string(l);
  if (h) s += " head " + std::to_string(*h);
  return s;
}

void expect(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name, std::size_t l,
            std::optional<std::size_t> h) {
  if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols) {
    throw ValidationError(where(l, h) + ": " + name + " has shape " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + ", config implies " + std::to_string(rows) + "x" +
                          std::to_string(cols));
  }
}

void expect_vec(const Vector& v, std::size_t len, const std::string& name, std::size_t l,
                std::optional<std::size_t> h) {
  if (static_cast<std::size_t>(v.size()) != len) {
    throw ValidationError(where(l, h) + ": " + name + " has length " + std::to_string(v.size()) +
                          ", config implies " + std::to_string(len));
  }
}

void validate_weights(const EncoderWeights& w, const EncoderConfig& c) {
  if (w.layers.size() != c.layers) throw ValidationError("weights have " + std::to_string(w.layers.size()) +
                                                         " layers, config has " + std::to_string(c.layers));
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& lw = w.layers[l];
    if (lw.heads.size() != c.heads) throw ValidationError(where(l, std::nullopt) + ": weight head count mismatch");
    for (std::size_t h = 0; h < lw.heads.size(); ++h) {
      const auto& hw = lw.heads[h];
      expect(hw.w_q, c.d_model, c.d_k, "W_Q", l, h);
      expect(hw.w_k, c.d_model, c.d_k, "W_K", l, h);
      expect(hw.w_v, c.d_model, c.d_k, "W_V", l, h);
      expect_vec(hw.b_q, c.d_k, "b_Q", l, h);
      expect_vec(hw.b_k, c.d_k, "b_K", l, h);
      expect_vec(hw.b_v, c.d_k, "b_V", l, h);
    }
    expect(lw.w_o, c.d_model, c.d_model, "W_O", l, std::nullopt);
    expect_vec(lw.b_o, c.d_model, "b_O", l, std::nullopt);
    expect(lw.w_1, c.d_model, c.d_ff, "W_1", l, std::nullopt);
    expect_vec(lw.b_1, c.d_ff, "b_1", l, std::nullopt);
    expect(lw.w_2, c.d_ff, c.d_model, "W_2", l, std::nullopt);
    expect_vec(lw.b_2, c.d_model, "b_2", l, std::nullopt);
  }
}

void validate_run_shapes(const RunTrace& run) {
  const auto& c = run.config;
  if (run.layers.size() != c.layers) {
    throw ValidationError("run has " + std::to_string(run.layers.size()) + " layers, config has " +
                          std::to_string(c.layers));
  }
  if (run.input.size() > 0) expect(run.input, c.n, c.d_model, "input", 0, std::nullopt);
  for (std::size_t l = 0; l < run.layers.size(); ++l) {
    const auto& layer = run.layers[l];
    if (layer.heads.size() != c.heads) {
      throw ValidationError(where(l, std::nullopt) + ": has " + std::to_string(layer.heads.size()) +
                            " heads, config has " + std::to_string(c.heads));
    }
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const auto& head = layer.heads[h];
      expect(head.q, c.n, c.d_k, "Q", l, h);
      expect(head.k, c.n, c.d_k, "K", l, h);
      expect(head.v, c.n, c.d_k, "V", l, h);
      expect(head.s, c.n, c.n, "S", l, h);
      expect(head.y, c.n, c.d_k, "Y", l, h);
    }
    if (run.placement == Placement::LayerNorm) expect(layer.ln1, c.n, c.d_model, "ln1", l, std::nullopt);
    expect(layer.ln2, c.n, c.d_model, "ln2", l, std::nullopt);
    if (layer.mlp.size() > 0) expect(layer.mlp, c.n, c.d_model, "mlp", l, std::nullopt);
  }
  if (run.weights) validate_weights(*run.weights, c);
}

class RunWriter {
 public:
  explicit RunWriter(fs::path root) : root_(std::move(root)) {}

  std::string matrix(const Matrix& m, const std::string& rel) {
    put(TensorF32::from_matrix(m), rel);
    return rel;
  }
  std::string vector(const Vector& v, const std::string& rel) {
    put(TensorF32::from_vector(v), rel);
    return rel;
  }

 private:
  void put(const TensorF32& t, const std::string& rel) {
    const fs::path p = root_ / rel;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw PersistenceError("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
    write_tensor(t, p);
  }
  fs::path root_;
};

class RunReader {
 public:
  explicit RunReader(fs::path root) : root_(std::move(root)) {}

  Matrix matrix(const json& ref, const std::string& field) const {
    const auto t = load(ref, field);
    if (t.rank() != 2) throw ValidationError(field + ": expected a 2-D tensor");
    return t.to_matrix();
  }
  Vector vector(const json& ref, const std::string& field) const {
    const auto t = load(ref, field);
    if (t.rank() != 1) throw ValidationError(field + ": expected a 1-D tensor");
    return t.to_vector();
  }

 private:
  TensorF32 load(const json& ref, const std::string& field) const {
    if (!ref.is_string()) throw FormatError("manifest: field '" + field + "' must name a file");
    const fs::path p = root_ / ref.get<std::string>();
    if (!fs::exists(p)) throw PersistenceError("missing file '" + p.string() + "' referenced by " + field);
    auto t = read_tensor(p);
    t.validate(true);
    return t;
  }
  fs::path root_;
};

const json& field(const json& obj, const char* key, const std::string& context) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw FormatError("manifest: missing '" + std::string(key) + "' in " + context);
  }
  return obj.at(key);
}

}  // namespace

void save_run(const RunTrace& run, const fs::path& dir) {
  run.config.validate();
  validate_run_shapes(run);

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw PersistenceError("cannot create run directory '" + dir.string() + "': " + ec.message());
  RunWriter w(dir);

  json m;
  m["format"] = "attnscope-run";
  m["version"] = 1;
  m["run_id"] = run.run_id;
  m["model"] = config_to_json(run.config);
  m["placement"] = to_string(run.placement);
  m["tokens"] = run.tokens;
  m["input"] = run.input.size() > 0 ? json(w.matrix(run.input, "input.npy")) : json(nullptr);

  json layers = json::array();
  for (std::size_t l = 0; l < run.layers.size(); ++l) {
    const auto& layer = run.layers[l];
    json entry;
    json heads = json::array();
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const auto& head = layer.heads[h];
      const std::string d = head_dir(l, h) + "/";
      heads.push_back({{"Q", w.matrix(head.q, d + "Q.npy")},
                       {"K", w.matrix(head.k, d + "K.npy")},
                       {"V", w.matrix(head.v, d + "V.npy")},
                       {"S", w.matrix(head.s, d + "S.npy")},
                       {"Y", w.matrix(head.y, d + "Y.npy")}});
    }
    entry["heads"] = std::move(heads);
    const std::string d = layer_dir(l) + "/";
    entry["ln1"] = layer.ln1.size() > 0 ? json(w.matrix(layer.ln1, d + "ln1.npy")) : json(nullptr);
    entry["ln2"] = w.matrix(layer.ln2, d + "ln2.npy");
    entry["mlp"] = layer.mlp.size() > 0 ? json(w.matrix(layer.mlp, d + "mlp.npy")) : json(nullptr);
    layers.push_back(std::move(entry));
  }
  m["layers"] = std::move(layers);

  if (run.weights) {
    json wl = json::array();
    for (std::size_t l = 0; l < run.weights->layers.size(); ++l) {
      const auto& lw = run.weights->layers[l];
      const std::string d = "weights/" + layer_dir(l) + "/";
      json heads = json::array();
      for (std::size_t h = 0; h < lw.heads.size(); ++h) {
        const auto& hw = lw.heads[h];
        const std::string hd = "weights/" + head_dir(l, h) + "/";
        heads.push_back({{"W_Q", w.matrix(hw.w_q, hd + "W_Q.npy")},
                         {"W_K", w.matrix(hw.w_k, hd + "W_K.npy")},
                         {"W_V", w.matrix(hw.w_v, hd + "W_V.npy")},
                         {"b_Q", w.vector(hw.b_q, hd + "b_Q.npy")},
                         {"b_K", w.vector(hw.b_k, hd + "b_K.npy")},
                         {"b_V", w.vector(hw.b_v, hd + "b_V.npy")}});
      }
      wl.push_back({{"heads", std::move(heads)},
                    {"W_O", w.matrix(lw.w_o, d + "W_O.npy")},
                    {"b_O", w.vector(lw.b_o, d + "b_O.npy")},
                    {"W_1", w.matrix(lw.w_1, d + "W_1.npy")},
                    {"b_1", w.vector(lw.b_1, d + "b_1.npy")},
                    {"W_2", w.matrix(lw.w_2, d + "W_2.npy")},
                    {"b_2", w.vector(lw.b_2, d + "b_2.npy")}});
    }
    m["weights"] = {{"layers", std::move(wl)}};
  } else {
    m["weights"] = nullptr;
  }

  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

RunTrace load_run(const fs::path& dir, const LoadOptions& options) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw PersistenceError("missing file '" + manifest_path.string() + "'");
  json m;
  try {
    m = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }

  RunTrace run;
  RunReader r(dir);
  try {
    run.run_id = m.value("run_id", std::string{});
    run.config = config_from_json(field(m, "model", "manifest"));
    run.placement = parse_placement(m.value("placement", std::string("ln")));
    if (m.contains("tokens") && m.at("tokens").is_array()) run.tokens = m.at("tokens").get<std::vector<std::string>>();
    if (m.contains("input") && !m.at("input").is_null()) run.input = r.matrix(m.at("input"), "input");

    const json& layers = field(m, "layers", "manifest");
    if (!layers.is_array() || layers.size() != run.config.layers) {
      throw ValidationError("manifest lists " + std::to_string(layers.is_array() ? layers.size() : 0) +
                            " layers, model has L=" + std::to_string(run.config.layers));
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const json& entry = layers[l];
      const std::string ctx = "layer " + std::to_string(l);
      const json& heads = field(entry, "heads", ctx);
      if (!heads.is_array() || heads.size() != run.config.heads) {
        throw ValidationError(ctx + ": manifest lists " + std::to_string(heads.is_array() ? heads.size() : 0) +
                              " heads, model has A=" + std::to_string(run.config.heads));
      }
      LayerTrace layer;
      for (std::size_t h = 0; h < heads.size(); ++h) {
        const std::string hctx = ctx + " head " + std::to_string(h);
        HeadTrace head;
        head.q = r.matrix(field(heads[h], "Q", hctx), hctx + " Q");
        head.k = r.matrix(field(heads[h], "K", hctx), hctx + " K");
        head.v = r.matrix(field(heads[h], "V", hctx), hctx + " V");
        head.s = r.matrix(field(heads[h], "S", hctx), hctx + " S");
        head.y = r.matrix(field(heads[h], "Y", hctx), hctx + " Y");
        layer.heads.push_back(std::move(head));
      }
      if (entry.contains("ln1") && !entry.at("ln1").is_null()) layer.ln1 = r.matrix(entry.at("ln1"), ctx + " ln1");
      layer.ln2 = r.matrix(field(entry, "ln2", ctx), ctx + " ln2");
      if (entry.contains("mlp") && !entry.at("mlp").is_null()) layer.mlp = r.matrix(entry.at("mlp"), ctx + " mlp");
      run.layers.push_back(std::move(layer));
    }

    if (m.contains("weights") && !m.at("weights").is_null()) {
      EncoderWeights weights;
      const json& wl = field(m.at("weights"), "layers", "weights");
      for (std::size_t l = 0; l < wl.size(); ++l) {
        const std::string ctx = "weights layer " + std::to_string(l);
        LayerWeights lw;
        for (const json& hw : field(wl[l], "heads", ctx)) {
          HeadWeights w;
          w.w_q = r.matrix(field(hw, "W_Q", ctx), ctx + " W_Q");
          w.w_k = r.matrix(field(hw, "W_K", ctx), ctx + " W_K");
          w.w_v = r.matrix(field(hw, "W_V", ctx), ctx + " W_V");
          w.b_q = r.vector(field(hw, "b_Q", ctx), ctx + " b_Q");
          w.b_k = r.vector(field(hw, "b_K", ctx), ctx + " b_K");
          w.b_v = r.vector(field(hw, "b_V", ctx), ctx + " b_V");
          lw.heads.push_back(std::move(w));
        }
        lw.w_o = r.matrix(field(wl[l], "W_O", ctx), ctx + " W_O");
        lw.b_o = r.vector(field(wl[l], "b_O", ctx), ctx + " b_O");
        lw.w_1 = r.matrix(field(wl[l], "W_1", ctx), ctx + " W_1");
        lw.b_1 = r.vector(field(wl[l], "b_1", ctx), ctx + " b_1");
        lw.w_2 = r.matrix(field(wl[l], "W_2", ctx), ctx + " W_2");
        lw.b_2 = r.vector(field(wl[l], "b_2", ctx), ctx + " b_2");
        weights.layers.push_back(std::move(lw));
      }
      run.weights = std::move(weights);
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }

  // Derived fields: layer inputs chain through the previous layer output, and
  // the multi-head output is the concatenation of the head outputs.
  for (std::size_t l = 0; l < run.layers.size(); ++l) {
    auto& layer = run.layers[l];
    if (l == 0) {
      layer.input = run.input;
    } else {
      layer.input = run.layers[l - 1].ln2;
    }
  }
  validate_run_shapes(run);
  for (auto& layer : run.layers) {
    layer.y_mh.resize(static_cast<Eigen::Index>(run.config.n), static_cast<Eigen::Index>(run.config.d_model));
    const auto dk = static_cast<Eigen::Index>(run.config.d_k);
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      layer.y_mh.middleCols(static_cast<Eigen::Index>(h) * dk, dk) = layer.heads[h].y;
    }
  }

  if (options.strict) {
    const auto issues = check_run(run, options.stochastic_tol);
    if (!issues.empty()) {
      std::string msg = issues.front().message;
      if (issues.size() > 1) msg += " (and " + std::to_string(issues.size() - 1) + " more rows)";
      throw ValidationError(msg);
    }
  }
  return run;
}

}  // namespace attnscope
