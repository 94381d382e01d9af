#include "attnscope/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attnscope/encoder.hpp"
#include "attnscope/errors.hpp"
#include "attnscope/metrics.hpp"
#include "attnscope/sampling.hpp"
#include "attnscope/stream.hpp"

namespace attnscope {

namespace {

// Tolerances for tensors that may have passed through f32 storage.
constexpr double kStoredTol = 1e-4;
constexpr double kStoredRelTol = 1e-5;

void add(VerificationReport& rep, std::string name, double residual, double tol, std::string detail = {}) {
  rep.checks.push_back({std::move(name), residual, residual <= tol, false, std::move(detail)});
}

void add_bool(VerificationReport& rep, std::string name, bool pass, std::string detail = {}) {
  rep.checks.push_back({std::move(name), pass ? 0.0 : 1.0, pass, false, std::move(detail)});
}

double stochastic_defect(const Matrix& s) {
  double worst = std::max(0.0, -s.minCoeff());
  for (Eigen::Index r = 0; r < s.rows(); ++r) worst = std::max(worst, std::abs(s.row(r).sum() - 1.0));
  return worst;
}

double ln_moment_defect(const Matrix& m) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mean = m.row(r).mean();
    const double var = (m.row(r).array() - mean).square().mean();
    worst = std::max({worst, std::abs(mean), std::abs(std::sqrt(var) - 1.0)});
  }
  return worst;
}

std::string lh(std::size_t l, std::size_t h) { return "layer" + std::to_string(l) + ".head" + std::to_string(h); }
std::string ll(std::size_t l) { return "layer" + std::to_string(l); }

}  // namespace

bool VerificationReport::ok() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass || c.informational; });
}

std::vector<std::string> VerificationReport::failures() const {
  std::vector<std::string> out;
  for (const auto& c : checks)
    if (!c.pass && !c.informational) out.push_back(c.name);
  return out;
}

VerificationReport verify_run(const RunTrace& run) {
  VerificationReport rep;
  const auto& cfg = run.config;
  const double scale = std::sqrt(static_cast<double>(cfg.d_k));

  for (std::size_t l = 0; l < run.layers.size(); ++l) {
    const LayerTrace& layer = run.layers[l];
    BlockFamily ys;
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const HeadTrace& head = layer.heads[h];
      add(rep, lh(l, h) + ".row_stochastic", stochastic_defect(head.s), kStoredTol);
      add(rep, lh(l, h) + ".y_equals_sv", relative_frobenius(head.s * head.v, head.y), kStoredRelTol);
      ys.blocks.push_back(head.y);
    }
    if (!ys.blocks.empty() && layer.y_mh.size() > 0) {
      add(rep, ll(l) + ".y_mh_concatenation", max_abs_diff(conc(ys), layer.y_mh), 0.0);
    }
    if (layer.ln1.size() > 0) add(rep, ll(l) + ".ln1_moments", ln_moment_defect(layer.ln1), kStoredRelTol);
    add(rep, ll(l) + ".ln2_moments", ln_moment_defect(layer.ln2), kStoredRelTol);

    if (!run.weights || layer.input.size() == 0 || layer.ln1.size() == 0) continue;
    const LayerWeights& w = run.weights->layers[l];
    const Matrix& x = layer.input;

    for (std::size_t h = 0; h < w.heads.size(); ++h) {
      const auto dec = qk_decomposition(x, w.heads[h]);
      const Matrix q = (x * w.heads[h].w_q).rowwise() + w.heads[h].b_q.transpose();
      const Matrix k = (x * w.heads[h].w_k).rowwise() + w.heads[h].b_k.transpose();
      add(rep, lh(l, h) + ".four_term_completeness", relative_frobenius(dec.sum(), q * k.transpose()), 1e-9);
      add(rep, lh(l, h) + ".bias_nullity",
          max_abs_diff(softmax_rows(q * k.transpose() / scale), reduced_attention(dec, cfg.d_k)), 1e-6);
    }

    const BlockFamily heads = split_columns(layer.y_mh, cfg.heads);
    add(rep, ll(l) + ".block_product", verify_block_product(heads, split_rows(w.w_o, cfg.heads)), 1e-12);
    add(rep, ll(l) + ".left_distributivity", verify_left_distributivity(layer.ln1, split_columns(w.w_1, cfg.heads)),
        1e-12);

    try {
      const Matrix z = (layer.y_mh * w.w_o).rowwise() + w.b_o.transpose() + x;
      const auto lr = verify_ln_rank_invariance(z);
      const std::string ranks = "ranks " + std::to_string(lr.rank_before) + "/" +
                                std::to_string(lr.rank_after_centering) + "/" + std::to_string(lr.rank_after_full_ln);
      if (lr.ones_in_row_space) {
        // Centering annihilates the all-ones direction, so equality cannot hold;
        // what must hold is a drop of exactly one.
        rep.checks.push_back({ll(l) + ".ln_rank_invariance", lr.pass ? 0.0 : 1.0, lr.pass, true,
                              "informational: all-ones vector lies in the row space, " + ranks});
        add_bool(rep, ll(l) + ".ln_rank_drop_by_one",
                 lr.rank_after_centering + 1 == lr.rank_before && lr.rank_after_full_ln == lr.rank_after_centering,
                 ranks);
      } else {
        add_bool(rep, ll(l) + ".ln_rank_invariance", lr.pass, ranks);
      }
    } catch (const DegenerateInputError& e) {
      add_bool(rep, ll(l) + ".ln_rank_invariance", false, e.what());
    }

    const BlockFamily yt = split_columns(layer.ln1, cfg.heads);
    const Matrix pre = (layer.ln1 * w.w_1).rowwise() + w.b_1.transpose();
    const Matrix mlp = (apply_activation(pre, cfg.activation) * w.w_2).rowwise() + w.b_2.transpose();
    if (layer.mlp.size() > 0) add(rep, ll(l) + ".mlp_trace_consistency", relative_frobenius(mlp, layer.mlp), kStoredRelTol);

    if (cfg.activation == Activation::Relu) {
      const auto d = mlp_stream_decomposition(yt, w.w_1, w.b_1, w.w_2, w.b_2);
      add(rep, ll(l) + ".mlp_block_product", d.block_product_residual, 1e-12);
      add(rep, ll(l) + ".mlp_stream_decomposition", d.residual, 1e-9);
      std::vector<std::size_t> perm(cfg.heads);
      std::iota(perm.rbegin(), perm.rend(), std::size_t{0});
      const auto ho = verify_head_order_erasure(yt, w.w_1, w.b_1, w.w_2, w.b_2, perm);
      add_bool(rep, ll(l) + ".head_order_erasure", ho.exact_after_resort,
               "max |diff| without re-sorting " + std::to_string(ho.max_abs_diff));
      const HeadWeights& next = l + 1 < run.weights->layers.size() ? run.weights->layers[l + 1].heads[0] : w.heads[0];
      const auto sub = verify_searching_engine_substitution(d, next);
      add(rep, ll(l) + ".substitution_four_term", sub.four_term_residual, 1e-9);
      add(rep, ll(l) + ".substitution_context_expansion", sub.context_expansion_residual, 1e-9);
    } else {
      const double r = mlp_linearization_residual(yt, w.w_1, w.b_1, w.w_2, w.b_2, cfg.activation);
      rep.checks.push_back({ll(l) + ".mlp_stream_decomposition", r, false, true,
                            "informational: exact only for relu, activation is " + to_string(cfg.activation)});
    }
  }
  return rep;
}

EncoderConfig seeded_suite_config(std::uint64_t seed) {
  EncoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 16;
  c.d_k = 8;
  c.d_ff = 32;
  c.n = 8;
  c.activation = Activation::Relu;
  c.seed = seed;
  c.bias_scale = 0.5;
  return c;
}

VerificationReport run_seeded_suite(const EncoderConfig& config) {
  config.validate();
  VerificationReport rep = verify_run(encode_count(config.n, config));

  SplitMix64 rng(derive_seed(config.seed, 0x5eed));
  double block = 0.0, left = 0.0, shift = 0.0;
  bool ln_ok = true, bounds_ok = true;
  for (int t = 0; t < 100; ++t) {
    const auto m = static_cast<std::size_t>(1 + rng.below(6));
    const auto r = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto p = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto s = static_cast<Eigen::Index>(1 + rng.below(8));
    BlockFamily xs, ys;
    for (std::size_t i = 0; i < m; ++i) {
      xs.blocks.push_back(random_matrix(rng, r, p));
      ys.blocks.push_back(random_matrix(rng, p, s));
    }
    block = std::max(block, verify_block_product(xs, ys));
    left = std::max(left, verify_left_distributivity(random_matrix(rng, s, r), xs));

    // Fewer rows than columns, as for token matrices with n < d_model.
    const auto rows = static_cast<Eigen::Index>(2 + rng.below(12));
    const auto cols = rows + static_cast<Eigen::Index>(1 + rng.below(8));
    const auto rank = static_cast<Eigen::Index>(1 + rng.below(static_cast<std::uint64_t>(rows)));
    ln_ok = ln_ok && verify_ln_rank_invariance(planted_rank_matrix(rng, rows, cols, rank)).pass;

    const Matrix a = planted_rank_matrix(rng, rows, cols, rank);
    bounds_ok = bounds_ok && rank_one_update_bounds(a, random_vector(rng, rows), random_vector(rng, cols)).within_bounds;

    const Matrix logits = random_matrix(rng, rows, cols) * 4.0;
    const Vector c = random_vector(rng, rows) * 10.0;
    shift = std::max(shift, max_abs_diff(softmax_rows(logits), softmax_rows(logits.colwise() + c)));
  }
  add(rep, "property.block_product", block, 1e-12);
  add(rep, "property.left_distributivity", left, 1e-12);
  add_bool(rep, "property.ln_rank_invariance", ln_ok, "100 planted-rank matrices with rows < columns");
  add_bool(rep, "property.rank_one_update_bounds", bounds_ok);
  add(rep, "property.softmax_shift_invariance", shift, 1e-9);
  add(rep, "property.lilliefors_critical_768", std::abs(lilliefors_critical(768) - 0.032), 0.0005);
  return rep;
}

nlohmann::json to_json(const VerificationReport& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) {
    nlohmann::json j = {{"name", c.name}, {"residual", c.residual}};
    if (c.informational) {
      j["pass"] = nullptr;
      j["status"] = "informational";
    } else {
      j["pass"] = c.pass;
    }
    if (!c.detail.empty()) j["detail"] = c.detail;
    checks.push_back(j);
  }
  return {{"ok", r.ok()}, {"failures", r.failures()}, {"checks", checks}};
}

}  // namespace attnscope
