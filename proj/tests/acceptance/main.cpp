// Acceptance run: one PASS/FAIL line per criterion.
//
//   attnscope_acceptance [--expect-fail name ...]
//
// Exit status is 0 when the failing criteria are exactly the expected ones.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "../oracles.hpp"
#include "attnscope/classifier.hpp"
#include "attnscope/encoder.hpp"
#include "attnscope/interchange.hpp"
#include "attnscope/metrics.hpp"
#include "attnscope/patterns.hpp"
#include "attnscope/sampling.hpp"
#include "attnscope/stream.hpp"
#include "cli.hpp"

#ifndef ATTNSCOPE_TEST_DATA
#define ATTNSCOPE_TEST_DATA "tests/data"
#endif

using namespace attnscope;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::size_t uniform_size(SplitMix64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

HeadWeights random_head(SplitMix64& rng, Eigen::Index d_model, Eigen::Index d_k, double bias) {
  return {random_matrix(rng, d_model, d_k), random_matrix(rng, d_model, d_k), random_matrix(rng, d_model, d_k),
          random_vector(rng, d_k) * bias,   random_vector(rng, d_k) * bias,   random_vector(rng, d_k) * bias};
}

// ---------------------------------------------------------------------------

Outcome lilliefors_anchor() {
  const auto t0 = Clock::now();
  const double k = lilliefors_critical(768);
  const double ms = seconds_since(t0) * 1e3;
  const double rounded = std::round(k * 1000.0) / 1000.0;
  return {rounded == 0.032 && ms < 1.0,
          fmt("critical(768) = %.6f", k) + fmt(" -> %.3f", rounded) + fmt(", %.4f ms", ms)};
}

struct HeadCase {
  Matrix x;
  HeadWeights w;
  std::size_t d_k;
};

std::vector<HeadCase> head_cases() {
  SplitMix64 rng(derive_seed(2024, 1));
  std::vector<HeadCase> cases;
  for (int t = 0; t < 200; ++t) {
    const auto n = static_cast<Eigen::Index>(uniform_size(rng, 2, 32));
    const auto d_model = static_cast<Eigen::Index>(uniform_size(rng, 2, 32));
    const auto d_k = static_cast<Eigen::Index>(uniform_size(rng, 1, 16));
    cases.push_back({random_matrix(rng, n, d_model), random_head(rng, d_model, d_k, 2.0), static_cast<std::size_t>(d_k)});
  }
  return cases;
}

Outcome bias_nullity() {
  const auto cases = head_cases();
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& c : cases) {
    const Matrix full = head_forward(c.x, c.w).s;
    worst = std::max(worst, max_abs_diff(full, reduced_attention(qk_decomposition(c.x, c.w), c.d_k)));
  }
  const double s = seconds_since(t0);
  return {worst <= 1e-6 && s < 5.0, "200 heads, max |dS| = " + fmt("%.3g", worst) + fmt(", %.3f s", s)};
}

Outcome four_term_completeness() {
  const auto cases = head_cases();
  double worst = 0.0;
  for (const auto& c : cases) {
    const auto d = qk_decomposition(c.x, c.w);
    const Matrix q = oracle::add_row(oracle::matmul(c.x, c.w.w_q), c.w.b_q);
    const Matrix k = oracle::add_row(oracle::matmul(c.x, c.w.w_k), c.w.b_k);
    worst = std::max(worst, relative_frobenius(d.sum(), oracle::matmul(q, k.transpose())));
  }
  return {worst <= 1e-9, "200 heads, max relative residual = " + fmt("%.3g", worst)};
}

Outcome ln_rank_invariance() {
  SplitMix64 rng(derive_seed(2024, 2));
  const auto t0 = Clock::now();
  int held = 0, ones_in_span = 0, explained = 0;
  for (int t = 0; t < 500; ++t) {
    const auto r = static_cast<Eigen::Index>(uniform_size(rng, 2, 32));
    const auto c = static_cast<Eigen::Index>(uniform_size(rng, 2, 32));
    const auto k = static_cast<Eigen::Index>(uniform_size(rng, 1, static_cast<std::size_t>(std::min(r, c))));
    const auto rep = verify_ln_rank_invariance(planted_rank_matrix(rng, r, c, k));
    held += rep.pass ? 1 : 0;
    if (rep.ones_in_row_space) {
      ++ones_in_span;
      explained += (!rep.pass && rep.rank_after_centering + 1 == rep.rank_before) ? 1 : 0;
    }
  }
  const double s = seconds_since(t0);
  std::ostringstream d;
  d << held << "/500 preserved rank; " << 500 - held << " failures, " << explained
    << " of them with the all-ones vector in the row space (rank drops by exactly one)" << fmt(", %.3f s", s);
  return {held == 500 && s < 10.0, d.str()};
}

Outcome rank_one_bounds() {
  SplitMix64 rng(derive_seed(2024, 3));
  int held = 0;
  for (int t = 0; t < 500; ++t) {
    const auto r = static_cast<Eigen::Index>(uniform_size(rng, 1, 16));
    const auto c = static_cast<Eigen::Index>(uniform_size(rng, 1, 16));
    const auto k = static_cast<Eigen::Index>(uniform_size(rng, 1, static_cast<std::size_t>(std::min(r, c))));
    Matrix a = planted_rank_matrix(rng, r, c, k);
    Vector x = random_vector(rng, r), y = random_vector(rng, c);
    if (t % 5 == 0) {  // exact cancellation of a rank-one part
      const Vector u = random_vector(rng, r), v = random_vector(rng, c);
      a += u * v.transpose();
      x = -u;
      y = v;
    }
    held += rank_one_update_bounds(a, x, y).within_bounds ? 1 : 0;
  }
  return {held == 500, std::to_string(held) + "/500 within [rank-1, rank+1]"};
}

PatternSpec random_spec(SplitMix64& rng, PatternKind kind, std::size_t n) {
  switch (kind) {
    case PatternKind::Vertical: return PatternSpec::vertical(n, uniform_size(rng, 0, n - 1));
    case PatternKind::Diagonal: return PatternSpec::diagonal(n);
    case PatternKind::SubDiagonal: return PatternSpec::sub_diagonal(n, uniform_size(rng, 1, n - 1));
    case PatternKind::SuperDiagonal: return PatternSpec::super_diagonal(n, uniform_size(rng, 1, n - 1));
    case PatternKind::Block: {
      const std::size_t k = uniform_size(rng, 1, n);
      return PatternSpec::block(n, uniform_size(rng, 0, n - k), uniform_size(rng, 0, n - k), k);
    }
    case PatternKind::Point: return PatternSpec::point(n, uniform_size(rng, 0, n - 1), uniform_size(rng, 0, n - 1));
    case PatternKind::MaxEntropy: return PatternSpec::max_entropy(n);
    case PatternKind::Horizontal: {
      std::vector<std::size_t> support;
      for (std::size_t c = 0; c < n; ++c)
        if (rng.uniform01() < 0.4) support.push_back(c);
      if (support.empty()) support.push_back(uniform_size(rng, 0, n - 1));
      return PatternSpec::horizontal(n, uniform_size(rng, 0, n - 1), support);
    }
  }
  return PatternSpec::max_entropy(n);
}

const std::vector<PatternKind> kKinds = {PatternKind::Vertical,      PatternKind::Diagonal, PatternKind::SubDiagonal,
                                         PatternKind::SuperDiagonal, PatternKind::Block,    PatternKind::Point,
                                         PatternKind::MaxEntropy,    PatternKind::Horizontal};

Outcome pattern_algebra() {
  SplitMix64 rng(derive_seed(2024, 4));
  double worst = 0.0, diag = 0.0, entropy = 0.0;
  bool ranks_ok = true;
  for (const auto kind : kKinds) {
    for (int t = 0; t < 50; ++t) {
      const std::size_t n = uniform_size(rng, 2, 24);
      PatternSpec spec = random_spec(rng, kind, n);
      const bool banded =
          kind == PatternKind::Diagonal || kind == PatternKind::SubDiagonal || kind == PatternKind::SuperDiagonal;
      if (banded && rng.uniform01() < 0.3) spec.span = uniform_size(rng, 1, n - spec.j);
      const Matrix v = random_matrix(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(uniform_size(rng, 2, 8)));
      const Matrix s = generate(spec);
      worst = std::max(worst, max_abs_diff(oracle::matmul(s, v), analytic_output(spec, v)));
      if (kind == PatternKind::Vertical) ranks_ok = ranks_ok && numeric_rank(s * v) == 1;
      if (kind == PatternKind::Diagonal && !spec.span) diag = std::max(diag, max_abs_diff(s * v, v));
      if (kind == PatternKind::MaxEntropy) {
        for (double h : row_entropy(s).per_row) entropy = std::max(entropy, std::abs(h - std::log(static_cast<double>(n))));
      }
    }
  }
  std::ostringstream d;
  d << "8 kinds x 50 cases, max |S V - closed form| = " << fmt("%.3g", worst) << ", rank(S_V V)=1 "
    << (ranks_ok ? "always" : "NOT always") << ", max |S_D V - V| = " << fmt("%.3g", diag)
    << ", max |H(S_ME row) - ln n| = " << fmt("%.3g", entropy);
  return {worst <= 1e-12 && ranks_ok && diag <= 1e-12 && entropy <= 1e-12, d.str()};
}

// Specs with n >= 16 and line or block extents >= 4 (the detector's minimum run).
PatternSpec recoverable_spec(SplitMix64& rng, std::size_t n) {
  const PatternKind kind = kKinds[rng.below(kKinds.size())];
  switch (kind) {
    case PatternKind::SubDiagonal: return PatternSpec::sub_diagonal(n, uniform_size(rng, 1, n - 4));
    case PatternKind::SuperDiagonal: return PatternSpec::super_diagonal(n, uniform_size(rng, 1, n - 4));
    case PatternKind::Block: {
      // In-block weight 1/k must clear the significance threshold 2/n.
      const std::size_t k = uniform_size(rng, 4, (n - 1) / 2);
      return PatternSpec::block(n, uniform_size(rng, 0, n - k), uniform_size(rng, 0, n - k), k);
    }
    case PatternKind::Horizontal: {
      std::vector<std::size_t> support;
      const std::size_t m = uniform_size(rng, 2, 4);
      while (support.size() < m) {
        const std::size_t c = uniform_size(rng, 0, n - 1);
        if (std::find(support.begin(), support.end(), c) == support.end()) support.push_back(c);
      }
      return PatternSpec::horizontal(n, uniform_size(rng, 0, n - 1), support);
    }
    default: return random_spec(rng, kind, n);
  }
}

bool recovered(const PatternReport& r, const PatternSpec& spec) {
  if (r.detections.empty()) return false;
  const auto& top = r.detections.front().spec;
  return top.kind == spec.kind && top.i == spec.i && top.j == spec.j && top.k == spec.k && top.support == spec.support;
}

Outcome classifier_recovery() {
  SplitMix64 rng(derive_seed(2024, 5));
  const auto t0 = Clock::now();
  int pure_ok = 0, mixed_ok = 0;
  const int cases = 200;
  std::string first_miss;
  for (int t = 0; t < cases; ++t) {
    const std::size_t n = uniform_size(rng, 16, 48);
    const PatternSpec spec = recoverable_spec(rng, n);
    if (recovered(classify(generate(spec)), spec)) {
      ++pure_ok;
    } else if (first_miss.empty()) {
      first_miss = "pure " + describe(spec) + " n=" + std::to_string(n);
    }
    const double w = spec.kind == PatternKind::MaxEntropy ? 0.0 : 0.3 * rng.uniform01();
    const Matrix s = w > 0.0 ? compose({{{spec, 1.0 - w}, {PatternSpec::max_entropy(n), w}}}) : generate(spec);
    if (recovered(classify(s), spec)) {
      ++mixed_ok;
    } else if (first_miss.empty()) {
      first_miss = "mixed " + describe(spec) + fmt(" w=%.3f", w) + " n=" + std::to_string(n);
    }
  }
  const double s = seconds_since(t0);
  std::ostringstream d;
  d << "pure " << pure_ok << "/" << cases << ", mixed " << mixed_ok << "/" << cases << fmt(", %.3f s", s);
  if (!first_miss.empty()) d << "; first miss " << first_miss;
  return {pure_ok == cases && mixed_ok >= 0.95 * cases && s < 30.0, d.str()};
}

Outcome block_product() {
  SplitMix64 rng(derive_seed(2024, 6));
  double block = 0.0, left = 0.0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t m = uniform_size(rng, 1, 12);
    const auto r = static_cast<Eigen::Index>(uniform_size(rng, 1, 16));
    const auto p = static_cast<Eigen::Index>(uniform_size(rng, 1, 16));
    const auto s = static_cast<Eigen::Index>(uniform_size(rng, 1, 16));
    BlockFamily xs, ys;
    for (std::size_t i = 0; i < m; ++i) {
      xs.blocks.push_back(random_matrix(rng, r, p));
      ys.blocks.push_back(random_matrix(rng, p, s));
    }
    block = std::max(block, verify_block_product(xs, ys));
    left = std::max(left, verify_left_distributivity(random_matrix(rng, s, r), xs));
  }
  return {block < 1e-12 && left < 1e-12,
          "500 families, block product " + fmt("%.3g", block) + ", left distributivity " + fmt("%.3g", left)};
}

Outcome mlp_stream() {
  SplitMix64 rng(derive_seed(2024, 7));
  double worst = 0.0;
  int exact = 0;
  for (int t = 0; t < 100; ++t) {
    EncoderConfig c;
    c.layers = 1;
    c.heads = uniform_size(rng, 1, 6);
    c.d_k = uniform_size(rng, 1, 8);
    c.d_model = c.heads * c.d_k;
    c.d_ff = uniform_size(rng, 4, 48);
    c.n = uniform_size(rng, 2, 24);
    c.seed = rng.next();
    c.bias_scale = 0.5;
    if (c.d_model < 2) c.d_k = 2, c.d_model = 2 * c.heads;
    const RunTrace run = encode_count(c.n, c);
    const auto& lw = run.weights->layers[0];
    const BlockFamily y = split_columns(run.layers[0].ln1, c.heads);
    const auto d = mlp_stream_decomposition(y, lw.w_1, lw.b_1, lw.w_2, lw.b_2);
    worst = std::max({worst, d.residual, relative_frobenius(d.mlp_output, run.layers[0].mlp)});
    std::vector<std::size_t> perm(c.heads);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    exact += verify_head_order_erasure(y, lw.w_1, lw.b_1, lw.w_2, lw.b_2, perm).exact_after_resort ? 1 : 0;
  }
  return {worst < 1e-9 && exact == 100, "100 layers, max relative residual " + fmt("%.3g", worst) + ", " +
                                            std::to_string(exact) + "/100 permutations exact after re-sorting"};
}

Outcome lilliefors_calibration() {
  SplitMix64 rng(derive_seed(2024, 8));
  const auto t0 = Clock::now();
  int rejected = 0;
  std::vector<double> sample(768);
  for (int t = 0; t < 1000; ++t) {
    for (double& x : sample) x = rng.normal();
    rejected += lilliefors(sample).reject ? 1 : 0;
  }
  const double s = seconds_since(t0);
  const double rate = rejected / 1000.0;
  return {rate >= 0.03 && rate <= 0.07 && s < 60.0, fmt("rejection rate %.3f", rate) + fmt(", %.3f s", s)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome golden_files() {
  const fs::path golden = fs::path(ATTNSCOPE_TEST_DATA) / "golden";
  const fs::path tmp = fs::temp_directory_path() / ("attnscope-acceptance-golden-" + std::to_string(::getpid()));
  fs::create_directories(tmp);
  int ok = 0;
  for (const char* name : {"zero_1x1.npy", "ones_2x3.npy", "ramp_2x3x4.npy"}) {
    const std::string bytes = slurp(golden / name);
    const TensorF32 t = read_tensor(golden / name);
    write_tensor(t, tmp / name);
    const bool same = !bytes.empty() && slurp(tmp / name) == bytes && read_tensor(tmp / name) == t;
    ok += same ? 1 : 0;
  }
  fs::remove_all(tmp);
  return {ok == 3, std::to_string(ok) + "/3 fixtures byte-identical after read/write"};
}

Outcome determinism() {
  const fs::path tmp = fs::temp_directory_path() / ("attnscope-acceptance-det-" + std::to_string(::getpid()));
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  std::ofstream(tmp / "cfg.json") << R"({"L":2,"A":4,"d_model":32,"d_k":8,"d_ff":64,"n":24,"seed":7,"bias_scale":0.1})";
  std::ostringstream sink;
  int codes = 0;
  for (const char* out : {"a", "b"}) {
    codes += cli::run({"encode", "--config", (tmp / "cfg.json").string(), "--seed", "12345", "--out", (tmp / out).string()},
                      sink, sink);
  }
  std::size_t files = 0, same = 0;
  for (const auto& e : fs::recursive_directory_iterator(tmp / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), tmp / "a");
    same += fs::exists(tmp / "b" / rel) && slurp(e.path()) == slurp(tmp / "b" / rel) ? 1 : 0;
  }
  std::size_t other = 0;
  for (const auto& e : fs::recursive_directory_iterator(tmp / "b")) other += e.is_regular_file() ? 1 : 0;
  fs::remove_all(tmp);
  return {codes == 0 && files > 0 && same == files && other == files,
          std::to_string(same) + "/" + std::to_string(files) + " files byte-identical across two runs"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> expected;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--expect-fail") == 0 && i + 1 < argc) {
      expected.insert(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--expect-fail name ...]\n", argv[0]);
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"lilliefors-anchor", lilliefors_anchor},
      {"bias-nullity", bias_nullity},
      {"four-term-completeness", four_term_completeness},
      {"ln-rank-invariance", ln_rank_invariance},
      {"rank-one-update-bounds", rank_one_bounds},
      {"pattern-algebra", pattern_algebra},
      {"classifier-recovery", classifier_recovery},
      {"block-product-identity", block_product},
      {"mlp-stream-decomposition", mlp_stream},
      {"lilliefors-calibration", lilliefors_calibration},
      {"interchange-golden-files", golden_files},
      {"encode-determinism", determinism},
  };

  std::set<std::string> failed;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) failed.insert(name);
    const bool known = !o.pass && expected.count(name) > 0;
    std::printf("%s %-26s %s%s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
                known ? "  [expected]" : "");
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed.size(), criteria.size());
  if (failed != expected) {
    for (const auto& f : failed)
      if (!expected.count(f)) std::printf("unexpected failure: %s\n", f.c_str());
    for (const auto& e : expected)
      if (!failed.count(e)) std::printf("expected failure now passes: %s\n", e.c_str());
    return 1;
  }
  return 0;
}
