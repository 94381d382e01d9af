#include <doctest.h>

#include <cmath>

#include "attnscope/classifier.hpp"
#include "attnscope/errors.hpp"
#include "attnscope/patterns.hpp"

using namespace attnscope;

namespace {

double total_mass(const PatternReport& r) {
  double m = r.residual_mass;
  for (const auto& d : r.detections) m += d.mass;
  return m;
}

const DetectedPattern* find(const PatternReport& r, const PatternSpec& spec) {
  for (const auto& d : r.detections)
    if (d.spec.kind == spec.kind && d.spec.i == spec.i && d.spec.j == spec.j && d.spec.k == spec.k) return &d;
  return nullptr;
}

}  // namespace

TEST_CASE("pure diagonal: one detection, mass 1, residual 0") {
  const auto r = classify(generate(PatternSpec::diagonal(16)));
  REQUIRE(r.detections.size() == 1);
  CHECK(r.detections[0].spec.kind == PatternKind::Diagonal);
  CHECK(r.detections[0].mass == doctest::Approx(1.0));
  CHECK(r.residual_mass == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.noise_floor == 1.0 / 16.0);

  const auto res = residual(generate(PatternSpec::diagonal(16)), r);
  CHECK(max_abs_diff(res.matrix, Matrix::Constant(16, 16, 1.0 / 16.0)) < 1e-15);
  CHECK(res.mean_entropy == doctest::Approx(std::log(16.0)));
}

TEST_CASE("max entropy map") {
  const Matrix s = generate(PatternSpec::max_entropy(16));
  const auto r = classify(s);
  REQUIRE(r.detections.size() == 1);
  CHECK(r.detections[0].spec.kind == PatternKind::MaxEntropy);
  CHECK(r.detections[0].mass == 1.0);
  CHECK(r.residual_mass == 0.0);
  CHECK(residual(s, r).matrix == s);
}

TEST_CASE("diagonal plus vertical composition") {
  const PatternComposition c{{{PatternSpec::diagonal(32), 0.5}, {PatternSpec::vertical(32, 5), 0.5}}};
  const Matrix s = compose(c);
  const auto r = classify(s);
  const auto* d = find(r, PatternSpec::diagonal(32));
  const auto* v = find(r, PatternSpec::vertical(32, 5));
  REQUIRE(d != nullptr);
  REQUIRE(v != nullptr);
  CHECK(std::abs(d->mass - 0.5) <= 0.05);
  CHECK(std::abs(v->mass - 0.5) <= 0.05);
  CHECK(r.residual_mass < 0.05);
  CHECK(std::abs(residual(s, r).mean_entropy - std::log(32.0)) <= 0.02 * std::log(32.0));
}

TEST_CASE("pure patterns are recovered with their indices") {
  const std::size_t n = 20;
  const std::vector<PatternSpec> specs = {
      PatternSpec::vertical(n, 7),          PatternSpec::sub_diagonal(n, 3), PatternSpec::super_diagonal(n, 5),
      PatternSpec::block(n, 4, 9, 6),       PatternSpec::point(n, 11, 2),    PatternSpec::horizontal(n, 6, {1, 8, 15}),
      PatternSpec::sub_diagonal(n, n - 4)};
  for (const auto& spec : specs) {
    CAPTURE(describe(spec));
    const auto r = classify(generate(spec));
    REQUIRE(!r.detections.empty());
    const auto& top = r.detections[0];
    CHECK(top.spec.kind == spec.kind);
    CHECK(top.spec.i == spec.i);
    CHECK(top.spec.j == spec.j);
    CHECK(top.spec.k == spec.k);
    CHECK(top.spec.support == spec.support);
    CHECK(top.mass >= 0.95);
    CHECK(total_mass(r) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("horizontal detection lists its point reading") {
  const auto r = classify(generate(PatternSpec::horizontal(16, 4, {2, 9})));
  REQUIRE(r.detections.size() == 1);
  const auto& alt = r.detections[0].alternatives;
  REQUIRE(alt.size() == 2);
  CHECK(alt[0] == PatternSpec::point(16, 2, 4));
  CHECK(alt[1] == PatternSpec::point(16, 9, 4));
}

TEST_CASE("noise mixing up to 0.3 keeps the reading") {
  const std::size_t n = 24;
  for (const auto& spec : {PatternSpec::vertical(n, 3), PatternSpec::block(n, 10, 2, 8), PatternSpec::diagonal(n)}) {
    CAPTURE(describe(spec));
    const PatternComposition c{{{spec, 0.7}, {PatternSpec::max_entropy(n), 0.3}}};
    const auto r = classify(compose(c));
    REQUIRE(!r.detections.empty());
    CHECK(r.detections[0].spec == spec);
  }
}

TEST_CASE("short runs are not lines") {
  PatternSpec s = PatternSpec::diagonal(16);
  s.span = 3;
  ClassifierParams p;
  const auto r = classify(generate(s), p);
  for (const auto& d : r.detections) CHECK(d.spec.kind != PatternKind::Diagonal);
  p.min_run = 3;
  CHECK(classify(generate(s), p).detections[0].spec.kind == PatternKind::Diagonal);
}

TEST_CASE("determinism, conservation and ordering") {
  const PatternComposition c{{{PatternSpec::block(20, 0, 0, 5), 0.4},
                              {PatternSpec::super_diagonal(20, 2), 0.4},
                              {PatternSpec::max_entropy(20), 0.2}}};
  const Matrix s = compose(c);
  const auto a = classify(s);
  const auto b = classify(s);
  CHECK(nlohmann::json(a) == nlohmann::json(b));
  CHECK(total_mass(a) == doctest::Approx(1.0).epsilon(1e-9));
  for (std::size_t i = 1; i < a.detections.size(); ++i) CHECK(a.detections[i - 1].mass >= a.detections[i].mass);
  for (const auto& d : a.detections) {
    CHECK(d.mass >= 0.0);
    CHECK(d.mass <= 1.0);
    CHECK(d.span.row_end <= 20);
    CHECK(d.span.col_end <= 20);
  }
}

TEST_CASE("non-stochastic input is rejected") {
  Matrix s = generate(PatternSpec::diagonal(8));
  s(3, 3) = 0.9;
  CHECK_THROWS_AS(classify(s), ValidationError);
  CHECK_THROWS_AS(classify(Matrix::Constant(2, 3, 1.0 / 3.0)), ValidationError);
  const auto r = classify(generate(PatternSpec::diagonal(8)));
  CHECK_THROWS_AS(residual(generate(PatternSpec::diagonal(9)), r), ValidationError);
}

TEST_CASE("params json round trip") {
  ClassifierParams p;
  p.c_sig = 3.0;
  p.min_run = 6;
  nlohmann::json j = p;
  const auto back = j.get<ClassifierParams>();
  CHECK(back.c_sig == 3.0);
  CHECK(back.min_run == 6);
  CHECK(back.fill_min == p.fill_min);
}
