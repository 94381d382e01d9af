#include "attnscope/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "attnscope/metrics.hpp"

namespace attnscope {

namespace {

using Cell = std::pair<std::size_t, std::size_t>;

struct Grid {
  std::size_t n;
  std::vector<unsigned char> mask;
  std::vector<unsigned char> in_block;
  std::vector<int> owner;

  explicit Grid(std::size_t n_) : n(n_), mask(n_ * n_, 0), in_block(n_ * n_, 0), owner(n_ * n_, -1) {}
  std::size_t at(std::size_t r, std::size_t c) const { return r * n + c; }
};

struct Component {
  std::vector<Cell> cells;
  Span box;
};

std::vector<Component> components(const Grid& g) {
  std::vector<Component> out;
  std::vector<unsigned char> seen(g.n * g.n, 0);
  std::vector<Cell> stack;
  for (std::size_t r0 = 0; r0 < g.n; ++r0) {
    for (std::size_t c0 = 0; c0 < g.n; ++c0) {
      if (!g.mask[g.at(r0, c0)] || seen[g.at(r0, c0)]) continue;
      Component comp;
      comp.box = {r0, r0 + 1, c0, c0 + 1};
      stack.push_back({r0, c0});
      seen[g.at(r0, c0)] = 1;
      while (!stack.empty()) {
        const auto [r, c] = stack.back();
        stack.pop_back();
        comp.cells.push_back({r, c});
        comp.box.row_begin = std::min(comp.box.row_begin, r);
        comp.box.row_end = std::max(comp.box.row_end, r + 1);
        comp.box.col_begin = std::min(comp.box.col_begin, c);
        comp.box.col_end = std::max(comp.box.col_end, c + 1);
        const Cell nbrs[] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
        for (const auto& [nr, nc] : nbrs) {
          // Unsigned wrap-around on r - 1 / c - 1 lands outside [0, n).
          if (nr >= g.n || nc >= g.n) continue;
          if (!g.mask[g.at(nr, nc)] || seen[g.at(nr, nc)]) continue;
          seen[g.at(nr, nc)] = 1;
          stack.push_back({nr, nc});
        }
      }
      std::sort(comp.cells.begin(), comp.cells.end());
      out.push_back(std::move(comp));
    }
  }
  return out;
}

bool is_block(const Component& comp, const ClassifierParams& p) {
  const std::size_t h = comp.box.row_end - comp.box.row_begin;
  const std::size_t w = comp.box.col_end - comp.box.col_begin;
  if (h < 2 || w < 2) return false;
  const double fill = static_cast<double>(comp.cells.size()) / static_cast<double>(h * w);
  const double aspect = static_cast<double>(std::min(h, w)) / static_cast<double>(std::max(h, w));
  return fill >= p.fill_min && aspect >= p.block_aspect_min;
}

Span bounding_box(const std::vector<Cell>& cells) {
  Span s{std::numeric_limits<std::size_t>::max(), 0, std::numeric_limits<std::size_t>::max(), 0};
  for (const auto& [r, c] : cells) {
    s.row_begin = std::min(s.row_begin, r);
    s.row_end = std::max(s.row_end, r + 1);
    s.col_begin = std::min(s.col_begin, c);
    s.col_end = std::max(s.col_end, c + 1);
  }
  return s;
}

class Claimer {
 public:
  Claimer(const Matrix& s, Grid& grid, double significant_mass)
      : s_(s), grid_(grid), significant_mass_(significant_mass) {}

  void claim(PatternSpec spec, std::vector<Cell> cells) {
    DetectedPattern d;
    d.spec = std::move(spec);
    d.span = bounding_box(cells);
    double mass = 0.0;
    const int id = static_cast<int>(detections_.size());
    for (const auto& [r, c] : cells) {
      grid_.owner[grid_.at(r, c)] = id;
      mass += s_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
    d.mass = mass / significant_mass_;
    d.cells = std::move(cells);
    detections_.push_back(std::move(d));
  }

  // Walks a line of cells and returns maximal runs of eligible cells.
  // Non-significant cells end a run; owned or block cells bridge it.
  std::vector<std::vector<Cell>> runs(const std::vector<Cell>& line, std::size_t min_run) const {
    std::vector<std::vector<Cell>> out;
    std::vector<Cell> current;
    auto flush = [&] {
      if (current.size() >= min_run) out.push_back(current);
      current.clear();
    };
    for (const auto& [r, c] : line) {
      const auto idx = grid_.at(r, c);
      if (!grid_.mask[idx]) {
        flush();
        continue;
      }
      if (grid_.owner[idx] >= 0 || grid_.in_block[idx]) continue;
      current.push_back({r, c});
    }
    flush();
    return out;
  }

  std::vector<DetectedPattern> take() { return std::move(detections_); }

 private:
  const Matrix& s_;
  Grid& grid_;
  double significant_mass_;
  std::vector<DetectedPattern> detections_;
};

void check_stochastic(const Matrix& s, double tol) {
  if (s.rows() != s.cols() || s.rows() == 0) throw ValidationError("classify: attention map must be square and non-empty");
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double sum = s.row(r).sum();
    if (!std::isfinite(sum) || std::abs(sum - 1.0) > tol || s.row(r).minCoeff() < -tol) {
      throw ValidationError("classify: row " + std::to_string(r) + " is not stochastic (sum " + std::to_string(sum) + ")");
    }
  }
}

}  // namespace

PatternReport classify(const Matrix& s, const ClassifierParams& params) {
  check_stochastic(s, params.stochastic_tol);
  const auto n = static_cast<std::size_t>(s.rows());
  PatternReport report;
  report.n = n;
  report.noise_floor = 1.0 / static_cast<double>(n);

  Grid grid(n);
  const double tau = params.c_sig / static_cast<double>(n);
  double significant = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double v = s(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      if (v > tau) {
        grid.mask[grid.at(r, c)] = 1;
        significant += v;
      }
    }
  }
  report.significant_mass = significant;

  if (significant < params.mass_min) {
    DetectedPattern d;
    d.spec = PatternSpec::max_entropy(n);
    d.mass = 1.0;
    d.span = {0, n, 0, n};
    report.detections.push_back(std::move(d));
    report.residual_mass = 0.0;
    report.residual_entropy = residual(s, report).mean_entropy;
    return report;
  }

  std::vector<Component> blocks;
  for (auto& comp : components(grid)) {
    if (!is_block(comp, params)) continue;
    for (const auto& [r, c] : comp.cells) grid.in_block[grid.at(r, c)] = 1;
    blocks.push_back(std::move(comp));
  }

  Claimer claimer(s, grid, significant);

  // Diagonal runs, main diagonal first, then offsets by increasing distance.
  const auto ln = static_cast<long long>(n);
  std::vector<long long> offsets{0};
  for (long long d = 1; d < ln; ++d) {
    offsets.push_back(-d);
    offsets.push_back(d);
  }
  for (long long d : offsets) {
    std::vector<Cell> line;
    for (long long r = std::max(0LL, -d); r < ln && r + d < ln; ++r) {
      line.push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(r + d)});
    }
    for (auto& run : claimer.runs(line, params.min_run)) {
      PatternSpec spec = d == 0   ? PatternSpec::diagonal(n)
                         : d < 0 ? PatternSpec::sub_diagonal(n, static_cast<std::size_t>(-d))
                                 : PatternSpec::super_diagonal(n, static_cast<std::size_t>(d));
      claimer.claim(std::move(spec), std::move(run));
    }
  }

  for (std::size_t c = 0; c < n; ++c) {
    std::vector<Cell> line;
    for (std::size_t r = 0; r < n; ++r) line.push_back({r, c});
    for (auto& run : claimer.runs(line, params.min_run)) claimer.claim(PatternSpec::vertical(n, c), std::move(run));
  }

  for (const auto& comp : blocks) {
    std::vector<Cell> cells;
    for (const auto& cell : comp.cells) {
      if (grid.owner[grid.at(cell.first, cell.second)] < 0) cells.push_back(cell);
    }
    if (cells.empty()) continue;
    const std::size_t h = comp.box.row_end - comp.box.row_begin;
    const std::size_t w = comp.box.col_end - comp.box.col_begin;
    std::size_t k = std::max(h, w);
    k = std::min({k, n - comp.box.row_begin, n - comp.box.col_begin});
    claimer.claim(PatternSpec::block(n, comp.box.col_begin, comp.box.row_begin, k), std::move(cells));
  }

  // Leftover significant cells, grouped by row.
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<Cell> leftover;
    bool row_has_structure = false;
    for (std::size_t c = 0; c < n; ++c) {
      const auto idx = grid.at(r, c);
      if (!grid.mask[idx]) continue;
      if (grid.owner[idx] >= 0) {
        row_has_structure = true;
      } else {
        leftover.push_back({r, c});
      }
    }
    if (leftover.size() >= 2 && !row_has_structure) {
      std::vector<std::size_t> support;
      for (const auto& cell : leftover) support.push_back(cell.second);
      claimer.claim(PatternSpec::horizontal(n, r, support), leftover);
      continue;
    }
    for (const auto& [rr, cc] : leftover) claimer.claim(PatternSpec::point(n, cc, rr), {{rr, cc}});
  }

  report.detections = claimer.take();
  for (auto& d : report.detections) {
    if (d.spec.kind != PatternKind::Horizontal) continue;
    for (const auto& [r, c] : d.cells) d.alternatives.push_back(PatternSpec::point(n, c, r));
  }
  std::stable_sort(report.detections.begin(), report.detections.end(),
                   [](const DetectedPattern& a, const DetectedPattern& b) { return a.mass > b.mass; });

  double explained = 0.0;
  for (const auto& d : report.detections) explained += d.mass;
  report.residual_mass = std::max(0.0, 1.0 - explained);
  report.residual_entropy = residual(s, report).mean_entropy;
  return report;
}

Residual residual(const Matrix& s, const PatternReport& report) {
  if (s.rows() != s.cols() || static_cast<std::size_t>(s.rows()) != report.n) {
    throw ValidationError("residual: report was produced for n=" + std::to_string(report.n) + ", matrix is " +
                          std::to_string(s.rows()) + "x" + std::to_string(s.cols()));
  }
  const auto n = static_cast<Eigen::Index>(report.n);
  Residual out;
  out.matrix = s;
  Vector removed = Vector::Zero(n);
  for (const auto& d : report.detections) {
    for (const auto& [r, c] : d.cells) {
      if (r >= report.n || c >= report.n) throw ValidationError("residual: claimed cell outside the matrix");
      const auto ri = static_cast<Eigen::Index>(r);
      const auto ci = static_cast<Eigen::Index>(c);
      removed[ri] += out.matrix(ri, ci);
      out.matrix(ri, ci) = 0.0;
    }
  }
  for (Eigen::Index r = 0; r < n; ++r) out.matrix.row(r).array() += removed[r] / static_cast<double>(n);
  out.mean_entropy = row_entropy(out.matrix).mean;
  return out;
}

void to_json(nlohmann::json& j, const ClassifierParams& p) {
  j = {{"c_sig", p.c_sig},       {"min_run", p.min_run},
       {"fill_min", p.fill_min}, {"mass_min", p.mass_min},
       {"block_aspect_min", p.block_aspect_min}, {"stochastic_tol", p.stochastic_tol}};
}

void from_json(const nlohmann::json& j, ClassifierParams& p) {
  p = ClassifierParams{};
  p.c_sig = j.value("c_sig", p.c_sig);
  p.min_run = j.value("min_run", p.min_run);
  p.fill_min = j.value("fill_min", p.fill_min);
  p.mass_min = j.value("mass_min", p.mass_min);
  p.block_aspect_min = j.value("block_aspect_min", p.block_aspect_min);
  p.stochastic_tol = j.value("stochastic_tol", p.stochastic_tol);
  if (!(p.c_sig > 0.0) || p.min_run < 1 || p.fill_min < 0.0 || p.fill_min > 1.0 || p.mass_min < 0.0) {
    throw ValidationError("classifier params out of range");
  }
}

void to_json(nlohmann::json& j, const DetectedPattern& d) {
  j = {{"spec", d.spec},
       {"mass", d.mass},
       {"span",
        {{"row_begin", d.span.row_begin},
         {"row_end", d.span.row_end},
         {"col_begin", d.span.col_begin},
         {"col_end", d.span.col_end}}},
       {"cells", d.cells.size()}};
  if (!d.alternatives.empty()) j["alternatives"] = d.alternatives;
}

void to_json(nlohmann::json& j, const PatternReport& r) {
  j = {{"n", r.n},
       {"detections", r.detections},
       {"significant_mass", r.significant_mass},
       {"residual_mass", r.residual_mass},
       {"residual_entropy", r.residual_entropy},
       {"noise_floor", r.noise_floor}};
}

}  // namespace attnscope
