#include "attnscope/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "attnscope/encoder.hpp"
#include "attnscope/errors.hpp"

namespace attnscope {

namespace {

const std::vector<std::string> kMetricNames = {"cone",  "entropy", "lilliefors", "featuresum",
                                               "svd",   "rank",    "norms",      "qkdecomp"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool has(const MetricSelection& s, const char* name) { return s.count(name) > 0; }

FeatureSumResult feature_sum(const std::string& placement, const Matrix& x) {
  FeatureSumResult out;
  out.placement = placement;
  const Eigen::VectorXd sums = x.colwise().sum().transpose();
  out.sums.assign(sums.data(), sums.data() + sums.size());
  try {
    out.test = lilliefors(out.sums);
  } catch (const DegenerateInputError& e) {
    out.note = e.what();
  }
  return out;
}

nlohmann::json lilliefors_json(const std::optional<LillieforsResult>& t, const std::string& note) {
  if (!t) return {{"degenerate", true}, {"note", note}};
  return {{"n", t->n}, {"statistic", t->statistic}, {"critical", t->critical}, {"reject", t->reject}};
}

nlohmann::json feature_json(const FeatureSumResult& f) {
  return {{"placement", f.placement}, {"sums", f.sums}, {"test", lilliefors_json(f.test, f.note)}};
}

template <class T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string opt_csv(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

std::string lilliefors_csv(const std::optional<LillieforsResult>& t, const std::string& note) {
  if (!t) return ",,,,\"" + note + "\"";
  return std::to_string(t->n) + "," + num(t->statistic) + "," + num(t->critical) + "," + (t->reject ? "1" : "0") + ",";
}

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& dir, const std::string& name, const std::string& header,
          std::vector<std::string>& written)
      : out_(dir / name, std::ios::binary) {
    if (!out_) throw PersistenceError("cannot write " + (dir / name).string());
    out_ << header << '\n';
    written.push_back(name);
  }
  void row(const std::string& line) { out_ << line << '\n'; }

 private:
  std::ofstream out_;
};

}  // namespace

MetricSelection all_metrics() { return {kMetricNames.begin(), kMetricNames.end()}; }

MetricSelection parse_metric_selection(const std::string& list) {
  MetricSelection out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "all") return all_metrics();
    if (std::find(kMetricNames.begin(), kMetricNames.end(), item) == kMetricNames.end()) {
      throw ValidationError("unknown metric '" + item + "'");
    }
    out.insert(item);
  }
  if (out.empty()) throw ValidationError("no metrics selected");
  return out;
}

MetricsReport compute_metrics(const RunTrace& run, const MetricSelection& selection) {
  MetricsReport rep;
  rep.run_id = run.run_id;
  rep.n = run.config.n;
  rep.placement = run.placement;
  rep.selection = selection;
  const double ln_n = std::log(static_cast<double>(run.config.n));
  Matrix all_sum = Matrix::Zero(run.config.n, run.config.d_model);

  for (std::size_t l = 0; l < run.layers.size(); ++l) {
    const LayerTrace& layer = run.layers[l];
    LayerMetrics lm;
    lm.layer = l;
    const bool have_ln1 = layer.ln1.size() > 0;

    if (has(selection, "cone")) lm.cone_index = cone_index(layer.ln2);

    double entropy_sum = 0.0;
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const HeadTrace& head = layer.heads[h];
      HeadMetrics hm;
      if (has(selection, "entropy")) {
        const auto e = row_entropy(head.s);
        hm.entropy = e.mean;
        hm.entropy_normalized = e.normalized_mean;
        entropy_sum += e.mean;
      }
      if (has(selection, "svd")) hm.spectrum = singular_spectrum(head.y);
      if (has(selection, "rank")) hm.rank = numeric_rank(head.y);
      if (has(selection, "norms")) {
        hm.q_norms = row_norms(head.q);
        hm.k_norms = row_norms(head.k);
        hm.v_norms = row_norms(head.v);
      }
      if (has(selection, "qkdecomp") && run.weights && layer.input.size() > 0) {
        const HeadWeights& w = run.weights->layers[l].heads[h];
        hm.msv_q = singular_spectrum(w.w_q).max;
        hm.msv_k = singular_spectrum(w.w_k).max;
        hm.msv_v = singular_spectrum(w.w_v).max;
        const auto dec = qk_decomposition(layer.input, w);
        const Matrix q = (layer.input * w.w_q).rowwise() + w.b_q.transpose();
        const Matrix k = (layer.input * w.w_k).rowwise() + w.b_k.transpose();
        hm.decomposition_residual = relative_frobenius(dec.sum(), q * k.transpose());
        const double scale = std::sqrt(static_cast<double>(run.config.d_k));
        hm.bias_nullity = max_abs_diff(softmax_rows(dec.sum() / scale), reduced_attention(dec, run.config.d_k));
      }
      lm.heads.push_back(std::move(hm));
    }
    if (has(selection, "entropy") && !layer.heads.empty()) {
      lm.entropy = entropy_sum / static_cast<double>(layer.heads.size());
      lm.entropy_normalized = ln_n > 0.0 ? lm.entropy / ln_n : 0.0;
    }
    if (has(selection, "rank")) {
      if (have_ln1) lm.rank_ln1 = numeric_rank(layer.ln1);
      lm.rank_output = numeric_rank(layer.ln2);
    }
    if (has(selection, "lilliefors") && have_ln1) {
      for (Eigen::Index r = 0; r < layer.ln1.rows(); ++r) {
        TokenNormality t;
        t.token = static_cast<std::size_t>(r);
        const Eigen::VectorXd row = layer.ln1.row(r).transpose();
        try {
          t.test = lilliefors(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
        } catch (const Error& e) {
          t.note = e.what();
          rep.notes.push_back("layer " + std::to_string(l) + " token " + std::to_string(r) + ": " + e.what());
        }
        lm.tokens.push_back(std::move(t));
      }
    }
    if (has(selection, "featuresum")) {
      if (have_ln1) lm.feature_sums.push_back(feature_sum("ln1", layer.ln1));
      lm.feature_sums.push_back(feature_sum("ln2", layer.ln2));
      for (const auto& f : lm.feature_sums) {
        if (!f.test) rep.notes.push_back("layer " + std::to_string(l) + " feature sum " + f.placement + ": " + f.note);
      }
      all_sum += layer.ln2;
    }
    rep.layers.push_back(std::move(lm));
  }
  if (has(selection, "featuresum") && !run.layers.empty()) {
    rep.all_layers = feature_sum("all-layers", all_sum);
    if (!rep.all_layers->test) rep.notes.push_back("all-layers feature sum: " + rep.all_layers->note);
  }
  if (has(selection, "qkdecomp") && !run.weights) rep.notes.push_back("run has no weights; qkdecomp skipped");
  if (run.placement == Placement::OutputOnly) {
    rep.notes.push_back("placement output-only: ln1 metrics unavailable, ln2 holds the layer output");
  }
  return rep;
}

nlohmann::json to_json(const MetricsReport& r) {
  using nlohmann::json;
  json j;
  j["run_id"] = r.run_id;
  j["n"] = r.n;
  j["placement"] = to_string(r.placement);
  j["metrics"] = json(std::vector<std::string>(r.selection.begin(), r.selection.end()));
  j["entropy_unit"] = "nats";
  j["entropy_aggregation"] = "mean over heads of mean row entropy";
  json layers = json::array();
  for (const auto& l : r.layers) {
    json lj;
    lj["layer"] = l.layer;
    lj["cone_index"] = opt(l.cone_index);
    lj["entropy"] = l.entropy;
    lj["entropy_normalized"] = l.entropy_normalized;
    lj["rank_ln1"] = opt(l.rank_ln1);
    lj["rank_output"] = l.rank_output;
    json heads = json::array();
    for (const auto& h : l.heads) {
      heads.push_back({{"entropy", h.entropy},
                       {"entropy_normalized", h.entropy_normalized},
                       {"singular_values", h.spectrum.values},
                       {"max_singular_value", h.spectrum.max},
                       {"rank", h.rank},
                       {"msv_W_Q", opt(h.msv_q)},
                       {"msv_W_K", opt(h.msv_k)},
                       {"msv_W_V", opt(h.msv_v)},
                       {"bias_nullity", opt(h.bias_nullity)},
                       {"decomposition_residual", opt(h.decomposition_residual)}});
    }
    lj["heads"] = heads;
    json tokens = json::array();
    for (const auto& t : l.tokens) {
      json tj = lilliefors_json(t.test, t.note);
      tj["token"] = t.token;
      tokens.push_back(tj);
    }
    lj["lilliefors"] = tokens;
    json fs = json::array();
    for (const auto& f : l.feature_sums) fs.push_back(feature_json(f));
    lj["feature_sums"] = fs;
    layers.push_back(lj);
  }
  j["layers"] = layers;
  j["all_layers_feature_sum"] = r.all_layers ? feature_json(*r.all_layers) : json(nullptr);
  j["notes"] = r.notes;
  return j;
}

std::vector<std::string> write_metrics(const MetricsReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  {
    std::ofstream out(dir / "metrics.json", std::ios::binary);
    if (!out) throw PersistenceError("cannot write " + (dir / "metrics.json").string());
    out << to_json(r).dump(2) << '\n';
    written.push_back("metrics.json");
  }
  const auto& sel = r.selection;
  if (has(sel, "entropy")) {
    CsvFile layers(dir, "entropy.csv", "layer,entropy,normalized_entropy", written);
    CsvFile heads(dir, "entropy_heads.csv", "layer,head,entropy,normalized_entropy", written);
    for (const auto& l : r.layers) {
      layers.row(std::to_string(l.layer) + "," + num(l.entropy) + "," + num(l.entropy_normalized));
      for (std::size_t h = 0; h < l.heads.size(); ++h) {
        heads.row(std::to_string(l.layer) + "," + std::to_string(h) + "," + num(l.heads[h].entropy) + "," +
                  num(l.heads[h].entropy_normalized));
      }
    }
  }
  if (has(sel, "cone")) {
    CsvFile cone(dir, "cone.csv", "layer,cone_index", written);
    for (const auto& l : r.layers) cone.row(std::to_string(l.layer) + "," + opt_csv(l.cone_index));
  }
  if (has(sel, "svd")) {
    CsvFile spectra(dir, "spectra.csv", "layer,head,index,singular_value", written);
    for (const auto& l : r.layers)
      for (std::size_t h = 0; h < l.heads.size(); ++h)
        for (std::size_t i = 0; i < l.heads[h].spectrum.values.size(); ++i)
          spectra.row(std::to_string(l.layer) + "," + std::to_string(h) + "," + std::to_string(i) + "," +
                      num(l.heads[h].spectrum.values[i]));
  }
  if (has(sel, "rank")) {
    CsvFile rank(dir, "rank.csv", "layer,target,rank", written);
    for (const auto& l : r.layers) {
      for (std::size_t h = 0; h < l.heads.size(); ++h)
        rank.row(std::to_string(l.layer) + ",head" + std::to_string(h) + "," + std::to_string(l.heads[h].rank));
      if (l.rank_ln1) rank.row(std::to_string(l.layer) + ",ln1," + std::to_string(*l.rank_ln1));
      rank.row(std::to_string(l.layer) + ",output," + std::to_string(l.rank_output));
    }
  }
  if (has(sel, "lilliefors")) {
    CsvFile lf(dir, "lilliefors.csv", "layer,token,n,statistic,critical,reject,note", written);
    for (const auto& l : r.layers)
      for (const auto& t : l.tokens)
        lf.row(std::to_string(l.layer) + "," + std::to_string(t.token) + "," + lilliefors_csv(t.test, t.note));
  }
  if (has(sel, "featuresum")) {
    CsvFile sums(dir, "feature_sum.csv", "placement,layer,feature,sum", written);
    CsvFile tests(dir, "feature_sum_tests.csv", "placement,layer,n,statistic,critical,reject,note", written);
    auto emit = [&](const FeatureSumResult& f, const std::string& layer) {
      for (std::size_t i = 0; i < f.sums.size(); ++i)
        sums.row(f.placement + "," + layer + "," + std::to_string(i) + "," + num(f.sums[i]));
      tests.row(f.placement + "," + layer + "," + lilliefors_csv(f.test, f.note));
    };
    for (const auto& l : r.layers)
      for (const auto& f : l.feature_sums) emit(f, std::to_string(l.layer));
    if (r.all_layers) emit(*r.all_layers, "all");
  }
  if (has(sel, "norms")) {
    CsvFile norms(dir, "norms.csv", "layer,head,tensor,token,norm", written);
    for (const auto& l : r.layers)
      for (std::size_t h = 0; h < l.heads.size(); ++h) {
        const auto& hm = l.heads[h];
        const std::string prefix = std::to_string(l.layer) + "," + std::to_string(h) + ",";
        for (std::size_t t = 0; t < hm.q_norms.size(); ++t) norms.row(prefix + "Q," + std::to_string(t) + "," + num(hm.q_norms[t]));
        for (std::size_t t = 0; t < hm.k_norms.size(); ++t) norms.row(prefix + "K," + std::to_string(t) + "," + num(hm.k_norms[t]));
        for (std::size_t t = 0; t < hm.v_norms.size(); ++t) norms.row(prefix + "V," + std::to_string(t) + "," + num(hm.v_norms[t]));
      }
  }
  if (has(sel, "qkdecomp")) {
    CsvFile qk(dir, "qkdecomp.csv", "layer,head,msv_W_Q,msv_W_K,msv_W_V,bias_nullity,decomposition_residual", written);
    for (const auto& l : r.layers)
      for (std::size_t h = 0; h < l.heads.size(); ++h) {
        const auto& hm = l.heads[h];
        qk.row(std::to_string(l.layer) + "," + std::to_string(h) + "," + opt_csv(hm.msv_q) + "," + opt_csv(hm.msv_k) +
               "," + opt_csv(hm.msv_v) + "," + opt_csv(hm.bias_nullity) + "," + opt_csv(hm.decomposition_residual));
      }
  }
  return written;
}

}  // namespace attnscope
