#include "attnscope/patterns.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace attnscope {

namespace {

struct KindName {
  PatternKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {PatternKind::Vertical, "vertical"},     {PatternKind::Diagonal, "diagonal"},
    {PatternKind::SubDiagonal, "subdiagonal"}, {PatternKind::SuperDiagonal, "superdiagonal"},
    {PatternKind::Block, "block"},           {PatternKind::Point, "point"},
    {PatternKind::MaxEntropy, "maxentropy"}, {PatternKind::Horizontal, "horizontal"},
};

[[noreturn]] void invalid(const PatternSpec& s, const std::string& what) {
  throw InvalidPatternError(to_string(s.kind) + " (n=" + std::to_string(s.n) + "): " + what);
}

// Number of pattern rows in a diagonal band before `span` is applied.
std::size_t full_band(const PatternSpec& s) {
  switch (s.kind) {
    case PatternKind::Diagonal: return s.n;
    case PatternKind::SubDiagonal:
    case PatternKind::SuperDiagonal: return s.n - s.j;
    default: return 0;
  }
}

std::size_t band_length(const PatternSpec& s) { return s.span ? *s.span : full_band(s); }

// First row of the band and the column offset (column = row + offset).
std::pair<std::size_t, long long> band_origin(const PatternSpec& s) {
  switch (s.kind) {
    case PatternKind::SubDiagonal: return {s.j, -static_cast<long long>(s.j)};
    case PatternKind::SuperDiagonal: return {0, static_cast<long long>(s.j)};
    default: return {0, 0};
  }
}

}  // namespace

std::string to_string(PatternKind k) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == k) return kn.name;
  }
  return "unknown";
}

PatternKind parse_pattern_kind(const std::string& name) {
  std::string lower;
  for (char c : name) {
    if (c == '_' || c == '-') continue;
    lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  for (const auto& kn : kKindNames) {
    if (lower == kn.name) return kn.kind;
  }
  throw InvalidPatternError("unknown pattern kind '" + name + "'");
}

PatternSpec PatternSpec::vertical(std::size_t n, std::size_t column) {
  return {.kind = PatternKind::Vertical, .n = n, .i = column};
}
PatternSpec PatternSpec::diagonal(std::size_t n) { return {.kind = PatternKind::Diagonal, .n = n}; }
PatternSpec PatternSpec::sub_diagonal(std::size_t n, std::size_t offset) {
  return {.kind = PatternKind::SubDiagonal, .n = n, .j = offset};
}
PatternSpec PatternSpec::super_diagonal(std::size_t n, std::size_t offset) {
  return {.kind = PatternKind::SuperDiagonal, .n = n, .j = offset};
}
PatternSpec PatternSpec::block(std::size_t n, std::size_t column, std::size_t row, std::size_t size) {
  return {.kind = PatternKind::Block, .n = n, .i = column, .j = row, .k = size};
}
PatternSpec PatternSpec::point(std::size_t n, std::size_t column, std::size_t row) {
  return {.kind = PatternKind::Point, .n = n, .i = column, .j = row};
}
PatternSpec PatternSpec::max_entropy(std::size_t n) { return {.kind = PatternKind::MaxEntropy, .n = n}; }
PatternSpec PatternSpec::horizontal(std::size_t n, std::size_t row, std::vector<std::size_t> columns) {
  std::sort(columns.begin(), columns.end());
  return {.kind = PatternKind::Horizontal, .n = n, .j = row, .support = std::move(columns)};
}

void PatternSpec::validate() const {
  if (n < 1) invalid(*this, "n must be >= 1");
  switch (kind) {
    case PatternKind::Vertical:
      if (i >= n) invalid(*this, "column i=" + std::to_string(i) + " out of range");
      break;
    case PatternKind::Diagonal:
      break;
    case PatternKind::SubDiagonal:
    case PatternKind::SuperDiagonal:
      if (j < 1 || j >= n) invalid(*this, "offset j=" + std::to_string(j) + " must lie in [1, n)");
      break;
    case PatternKind::Block:
      if (k < 1) invalid(*this, "block size k must be >= 1");
      if (i + k > n || j + k > n) invalid(*this, "block (i=" + std::to_string(i) + ", j=" + std::to_string(j) +
                                                     "; k=" + std::to_string(k) + ") exceeds the matrix");
      break;
    case PatternKind::Point:
      if (i >= n || j >= n) invalid(*this, "point (i=" + std::to_string(i) + ", j=" + std::to_string(j) +
                                               ") out of range");
      break;
    case PatternKind::MaxEntropy:
      break;
    case PatternKind::Horizontal: {
      if (j >= n) invalid(*this, "row j=" + std::to_string(j) + " out of range");
      if (support.empty()) invalid(*this, "support must be non-empty");
      const std::set<std::size_t> unique(support.begin(), support.end());
      if (unique.size() != support.size()) invalid(*this, "support has duplicate columns");
      if (*unique.rbegin() >= n) invalid(*this, "support column out of range");
      break;
    }
  }
  if (span) {
    if (kind != PatternKind::Diagonal && kind != PatternKind::SubDiagonal && kind != PatternKind::SuperDiagonal) {
      invalid(*this, "span applies only to diagonal kinds");
    }
    if (*span < 1 || *span > full_band(*this)) invalid(*this, "span must lie in [1, " + std::to_string(full_band(*this)) + "]");
  }
}

std::vector<std::size_t> PatternSpec::pattern_rows() const {
  std::vector<std::size_t> rows;
  switch (kind) {
    case PatternKind::Vertical:
      for (std::size_t r = 0; r < n; ++r) rows.push_back(r);
      break;
    case PatternKind::Diagonal:
    case PatternKind::SubDiagonal:
    case PatternKind::SuperDiagonal: {
      const auto [first, offset] = band_origin(*this);
      for (std::size_t t = 0; t < band_length(*this); ++t) rows.push_back(first + t);
      break;
    }
    case PatternKind::Block:
      for (std::size_t r = j; r < j + k; ++r) rows.push_back(r);
      break;
    case PatternKind::Point:
    case PatternKind::Horizontal:
      rows.push_back(j);
      break;
    case PatternKind::MaxEntropy:
      break;
  }
  return rows;
}

void PatternComposition::validate() const {
  if (parts.empty()) throw InvalidPatternError("composition has no parts");
  double total = 0.0;
  const std::size_t n = parts.front().first.n;
  for (const auto& [spec, weight] : parts) {
    spec.validate();
    if (spec.n != n) throw InvalidPatternError("composition parts disagree on n");
    if (!(weight > 0.0)) throw InvalidPatternError("composition weights must be positive");
    total += weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InvalidPatternError("composition weights sum to " + std::to_string(total) + ", expected 1");
  }
}

Matrix generate(const PatternSpec& spec) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.n);
  Matrix s = Matrix::Constant(n, n, 1.0 / static_cast<double>(spec.n));
  auto set_row = [&](std::size_t r) -> decltype(s.row(0)) {
    auto row = s.row(static_cast<Eigen::Index>(r));
    row.setZero();
    return row;
  };

  switch (spec.kind) {
    case PatternKind::Vertical:
      for (std::size_t r = 0; r < spec.n; ++r) set_row(r)(static_cast<Eigen::Index>(spec.i)) = 1.0;
      break;
    case PatternKind::Diagonal:
    case PatternKind::SubDiagonal:
    case PatternKind::SuperDiagonal: {
      const auto [first, offset] = band_origin(spec);
      for (std::size_t t = 0; t < band_length(spec); ++t) {
        const std::size_t r = first + t;
        set_row(r)(static_cast<Eigen::Index>(static_cast<long long>(r) + offset)) = 1.0;
      }
      break;
    }
    case PatternKind::Block:
      for (std::size_t r = spec.j; r < spec.j + spec.k; ++r) {
        set_row(r).segment(static_cast<Eigen::Index>(spec.i), static_cast<Eigen::Index>(spec.k))
            .setConstant(1.0 / static_cast<double>(spec.k));
      }
      break;
    case PatternKind::Point:
      set_row(spec.j)(static_cast<Eigen::Index>(spec.i)) = 1.0;
      break;
    case PatternKind::MaxEntropy:
      break;
    case PatternKind::Horizontal: {
      auto row = set_row(spec.j);
      for (auto c : spec.support) row(static_cast<Eigen::Index>(c)) = 1.0 / static_cast<double>(spec.support.size());
      break;
    }
  }
  return s;
}

Matrix analytic_output(const PatternSpec& spec, const Matrix& v) {
  spec.validate();
  if (static_cast<std::size_t>(v.rows()) != spec.n) {
    throw ShapeError("analytic_output: V has " + std::to_string(v.rows()) + " rows, pattern has n=" +
                     std::to_string(spec.n));
  }
  const Eigen::RowVectorXd global_mean = v.colwise().mean();
  Matrix out = global_mean.replicate(v.rows(), 1);
  auto row = [&](std::size_t r) { return out.row(static_cast<Eigen::Index>(r)); };
  auto vrow = [&](std::size_t r) { return v.row(static_cast<Eigen::Index>(r)); };

  switch (spec.kind) {
    case PatternKind::Vertical:
      out = vrow(spec.i).replicate(v.rows(), 1);
      break;
    case PatternKind::Diagonal:
    case PatternKind::SubDiagonal:
    case PatternKind::SuperDiagonal: {
      const auto [first, offset] = band_origin(spec);
      for (std::size_t t = 0; t < band_length(spec); ++t) {
        const std::size_t r = first + t;
        row(r) = vrow(static_cast<std::size_t>(static_cast<long long>(r) + offset));
      }
      break;
    }
    case PatternKind::Block: {
      const Eigen::RowVectorXd block_mean =
          v.middleRows(static_cast<Eigen::Index>(spec.i), static_cast<Eigen::Index>(spec.k)).colwise().mean();
      for (std::size_t r = spec.j; r < spec.j + spec.k; ++r) row(r) = block_mean;
      break;
    }
    case PatternKind::Point:
      row(spec.j) = vrow(spec.i);
      break;
    case PatternKind::MaxEntropy:
      break;
    case PatternKind::Horizontal: {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(v.cols());
      for (auto c : spec.support) acc += vrow(c);
      row(spec.j) = acc / static_cast<double>(spec.support.size());
      break;
    }
  }
  return out;
}

Matrix compose(const PatternComposition& composition) {
  composition.validate();
  const auto n = static_cast<Eigen::Index>(composition.parts.front().first.n);
  Matrix s = Matrix::Zero(n, n);
  for (const auto& [spec, weight] : composition.parts) s += weight * generate(spec);
  return s;
}

Matrix compose_output(const PatternComposition& composition, const Matrix& v) {
  composition.validate();
  Matrix out = Matrix::Zero(v.rows(), v.cols());
  for (const auto& [spec, weight] : composition.parts) out += weight * analytic_output(spec, v);
  return out;
}

void to_json(nlohmann::json& j, const PatternSpec& spec) {
  j = nlohmann::json{{"kind", to_string(spec.kind)}, {"n", spec.n}};
  switch (spec.kind) {
    case PatternKind::Vertical: j["i"] = spec.i; break;
    case PatternKind::SubDiagonal:
    case PatternKind::SuperDiagonal: j["j"] = spec.j; break;
    case PatternKind::Block:
      j["i"] = spec.i;
      j["j"] = spec.j;
      j["k"] = spec.k;
      break;
    case PatternKind::Point:
      j["i"] = spec.i;
      j["j"] = spec.j;
      break;
    case PatternKind::Horizontal:
      j["j"] = spec.j;
      j["support"] = spec.support;
      break;
    case PatternKind::Diagonal:
    case PatternKind::MaxEntropy: break;
  }
  if (spec.span) j["span"] = *spec.span;
}

void from_json(const nlohmann::json& j, PatternSpec& spec) {
  spec = PatternSpec{};
  spec.kind = parse_pattern_kind(j.at("kind").get<std::string>());
  spec.n = j.at("n").get<std::size_t>();
  spec.i = j.value("i", std::size_t{0});
  spec.j = j.value("j", std::size_t{0});
  spec.k = j.value("k", std::size_t{0});
  if (j.contains("support")) spec.support = j.at("support").get<std::vector<std::size_t>>();
  if (j.contains("span") && !j.at("span").is_null()) spec.span = j.at("span").get<std::size_t>();
  std::sort(spec.support.begin(), spec.support.end());
}

void to_json(nlohmann::json& j, const PatternComposition& c) {
  j = nlohmann::json::array();
  for (const auto& [spec, weight] : c.parts) j.push_back({{"spec", spec}, {"weight", weight}});
}

void from_json(const nlohmann::json& j, PatternComposition& c) {
  c.parts.clear();
  const nlohmann::json& parts = j.is_object() && j.contains("parts") ? j.at("parts") : j;
  for (const auto& p : parts) c.parts.emplace_back(p.at("spec").get<PatternSpec>(), p.at("weight").get<double>());
}

std::string describe(const PatternSpec& spec) {
  const auto field = [](const char* name, std::size_t v) { return std::string(name) + "=" + std::to_string(v); };
  std::string args;
  switch (spec.kind) {
    case PatternKind::Vertical: args = field("i", spec.i); break;
    case PatternKind::SubDiagonal:
    case PatternKind::SuperDiagonal: args = field("j", spec.j); break;
    case PatternKind::Block: args = field("i", spec.i) + "," + field("j", spec.j) + "," + field("k", spec.k); break;
    case PatternKind::Point: args = field("i", spec.i) + "," + field("j", spec.j); break;
    case PatternKind::Horizontal: {
      args = field("j", spec.j) + ",K={";
      for (std::size_t t = 0; t < spec.support.size(); ++t) args += (t ? "," : "") + std::to_string(spec.support[t]);
      args += "}";
      break;
    }
    case PatternKind::Diagonal:
    case PatternKind::MaxEntropy: break;
  }
  if (spec.span) args += (args.empty() ? "" : ",") + field("span", *spec.span);
  return to_string(spec.kind) + "(" + args + ")";
}

}  // namespace attnscope
