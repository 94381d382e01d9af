#include "cli.hpp"

#include <CLI11.hpp>

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "attnscope/classifier.hpp"
#include "attnscope/encoder.hpp"
#include "attnscope/errors.hpp"
#include "attnscope/interchange.hpp"
#include "attnscope/patterns.hpp"
#include "attnscope/report.hpp"
#include "attnscope/verify.hpp"

namespace attnscope::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw PersistenceError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void write_json(const json& j, const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw PersistenceError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("ATTNSCOPE_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || *end != '\0' || s[0] == '-') throw UsageError(std::string("ATTNSCOPE_SEED is not a u64: ") + s);
  return static_cast<std::uint64_t>(v);
}

std::vector<std::string> read_tokens(const fs::path& p) {
  std::istringstream in(read_file(p));
  std::vector<std::string> tokens;
  for (std::string t; in >> t;) tokens.push_back(t);
  return tokens;
}

// FASTA headers (lines starting with '>') are skipped; whitespace dropped.
std::string read_sequence(const fs::path& p) {
  std::istringstream in(read_file(p));
  std::string seq;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] == '>') continue;
    for (char c : line) {
      if (std::isspace(static_cast<unsigned char>(c))) continue;
      c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (std::string_view("ACGTN").find(c) == std::string_view::npos) {
        throw ValidationError(p.string() + ": unexpected base '" + std::string(1, c) + "'");
      }
      seq.push_back(c);
    }
  }
  return seq;
}

// ---- encode ----

struct EncodeArgs {
  std::string config, tokens, rna, out;
  std::uint64_t seed = 0;
  std::size_t k = 12, stride = 9;
};

int cmd_encode(const EncodeArgs& a, CLI::App& sub, std::ostream& out) {
  EncoderConfig cfg;
  if (!a.config.empty()) cfg = config_from_json(read_json(a.config));
  if (sub.count("--seed") > 0) cfg.seed = a.seed;
  if (auto s = env_seed()) cfg.seed = *s;
  cfg.validate();

  RunTrace run;
  if (!a.tokens.empty()) {
    run = encode(read_tokens(a.tokens), cfg);
  } else if (!a.rna.empty()) {
    if (a.k == 0 || a.stride == 0) throw UsageError("--k and --stride must be >= 1");
    run = encode(kmer_tokenize(read_sequence(a.rna), a.k, a.stride), cfg);
  } else {
    run = encode_count(cfg.n, cfg);
  }
  save_run(run, a.out);
  out << "wrote " << a.out << " (" << cfg.layers << " layers, " << cfg.heads << " heads, n=" << cfg.n
      << ", seed=" << cfg.seed << ")\n";
  return 0;
}

// ---- classify ----

struct ClassifyArgs {
  std::string run, tensor, params, out;
};

std::string span_text(const Span& s) {
  return "rows " + std::to_string(s.row_begin) + "-" + std::to_string(s.row_end) + " cols " +
         std::to_string(s.col_begin) + "-" + std::to_string(s.col_end);
}

void print_table(std::ostream& out, const std::string& label, const PatternReport& r) {
  out << label << "  significant mass " << std::fixed << std::setprecision(3) << r.significant_mass
      << "  residual " << r.residual_mass << "  residual entropy " << r.residual_entropy << '\n';
  for (const auto& d : r.detections) {
    out << "  " << std::left << std::setw(28) << describe(d.spec) << std::right << std::setw(7) << d.mass << "  "
        << span_text(d.span) << '\n';
  }
  out.unsetf(std::ios::floatfield);
}

int cmd_classify(const ClassifyArgs& a, std::ostream& out) {
  if (a.run.empty() == a.tensor.empty()) throw UsageError("classify needs exactly one of --run or --tensor");
  ClassifierParams params;
  if (!a.params.empty()) params = read_json(a.params).get<ClassifierParams>();

  struct Item {
    json key;
    std::string label;
    Matrix s;
  };
  std::vector<Item> items;
  if (!a.run.empty()) {
    const RunTrace run = load_run(a.run, {.strict = true, .stochastic_tol = params.stochastic_tol});
    for (std::size_t l = 0; l < run.layers.size(); ++l)
      for (std::size_t h = 0; h < run.layers[l].heads.size(); ++h)
        items.push_back({{{"layer", l}, {"head", h}},
                         "layer " + std::to_string(l) + " head " + std::to_string(h),
                         run.layers[l].heads[h].s});
  } else {
    const Matrix s = read_matrix(a.tensor);
    if (s.rows() != s.cols()) throw ValidationError(a.tensor + ": attention map must be square");
    items.push_back({{{"tensor", fs::path(a.tensor).filename().string()}}, fs::path(a.tensor).filename().string(), s});
  }

  json reports = json::array();
  std::ostringstream overlay;
  overlay << "layer,head,row,col,value,detection,pattern\n";
  for (const auto& item : items) {
    const PatternReport r = classify(item.s, params);
    json entry = item.key;
    entry["report"] = r;
    reports.push_back(entry);
    print_table(out, item.label, r);
    const std::string layer = item.key.contains("layer") ? std::to_string(item.key["layer"].get<std::size_t>()) : "";
    const std::string head = item.key.contains("head") ? std::to_string(item.key["head"].get<std::size_t>()) : "";
    for (std::size_t d = 0; d < r.detections.size(); ++d) {
      for (const auto& [row, col] : r.detections[d].cells) {
        char value[32];
        std::snprintf(value, sizeof value, "%.9g", item.s(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)));
        overlay << layer << ',' << head << ',' << row << ',' << col << ',' << value << ',' << d << ",\""
                << describe(r.detections[d].spec) << "\"\n";
      }
    }
  }
  if (!a.out.empty()) {
    write_json({{"params", params}, {"reports", reports}}, a.out);
    fs::path csv = a.out;
    csv.replace_extension(".overlay.csv");
    std::ofstream(csv, std::ios::binary) << overlay.str();
  }
  return 0;
}

// ---- generate ----

struct GenerateArgs {
  std::vector<std::string> patterns;
  std::size_t n = 0;
  std::vector<std::size_t> i, j, k, span, support;
  std::vector<double> weights;
  std::string spec, out;
};

std::size_t pick(const std::vector<std::size_t>& v, std::size_t p, const char* flag) {
  if (v.empty()) return 0;
  if (v.size() == 1) return v[0];
  if (p >= v.size()) throw UsageError(std::string("--") + flag + " has fewer values than --pattern");
  return v[p];
}

PatternSpec spec_from_flags(const GenerateArgs& a, std::size_t p) {
  const PatternKind kind = parse_pattern_kind(a.patterns[p]);
  const std::size_t i = pick(a.i, p, "i"), j = pick(a.j, p, "j"), k = pick(a.k, p, "k");
  PatternSpec s;
  switch (kind) {
    case PatternKind::Vertical: s = PatternSpec::vertical(a.n, i); break;
    case PatternKind::Diagonal: s = PatternSpec::diagonal(a.n); break;
    case PatternKind::SubDiagonal: s = PatternSpec::sub_diagonal(a.n, j); break;
    case PatternKind::SuperDiagonal: s = PatternSpec::super_diagonal(a.n, j); break;
    case PatternKind::Block: s = PatternSpec::block(a.n, i, j, k); break;
    case PatternKind::Point: s = PatternSpec::point(a.n, i, j); break;
    case PatternKind::MaxEntropy: s = PatternSpec::max_entropy(a.n); break;
    case PatternKind::Horizontal: s = PatternSpec::horizontal(a.n, j, a.support); break;
  }
  if (!a.span.empty()) s.span = pick(a.span, p, "span");
  return s;
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  PatternComposition comp;
  if (!a.spec.empty()) {
    if (!a.patterns.empty()) throw UsageError("--spec and --pattern are mutually exclusive");
    const json j = read_json(a.spec);
    if (j.is_array() || j.contains("parts")) {
      comp = j.get<PatternComposition>();
    } else {
      comp.parts.emplace_back(j.get<PatternSpec>(), 1.0);
    }
  } else {
    if (a.patterns.empty()) throw UsageError("generate needs --pattern or --spec");
    if (a.n == 0) throw UsageError("--n must be >= 1");
    if (!a.weights.empty() && a.weights.size() != a.patterns.size()) {
      throw UsageError("--weights needs one value per --pattern");
    }
    for (std::size_t p = 0; p < a.patterns.size(); ++p) {
      const double w = a.weights.empty() ? 1.0 / static_cast<double>(a.patterns.size()) : a.weights[p];
      comp.parts.emplace_back(spec_from_flags(a, p), w);
    }
  }
  comp.validate();
  const Matrix s = comp.parts.size() == 1 ? generate(comp.parts[0].first) : compose(comp);
  write_matrix(s, a.out);
  out << "wrote " << a.out << " (n=" << s.rows();
  for (const auto& [spec, w] : comp.parts) out << ", " << w << " " << describe(spec);
  out << ")\n";
  return 0;
}

// ---- metrics ----

struct MetricsArgs {
  std::string run, metrics = "all", out;
};

int cmd_metrics(const MetricsArgs& a, std::ostream& out) {
  const RunTrace run = load_run(a.run);
  const MetricsReport r = compute_metrics(run, parse_metric_selection(a.metrics));
  const auto files = write_metrics(r, a.out);
  out << "wrote " << files.size() << " files to " << a.out << '\n';
  for (const auto& n : r.notes) out << "note: " << n << '\n';
  return 0;
}

// ---- verify ----

struct VerifyArgs {
  std::string run, config, out;
  bool seeded = false;
  std::uint64_t seed = 0;
};

int cmd_verify(const VerifyArgs& a, CLI::App& sub, std::ostream& out, std::ostream& err) {
  if (a.run.empty() == !a.seeded) throw UsageError("verify needs exactly one of --run or --seeded-suite");
  VerificationReport rep;
  if (a.seeded) {
    EncoderConfig cfg = a.config.empty() ? seeded_suite_config() : config_from_json(read_json(a.config));
    if (sub.count("--seed") > 0) cfg.seed = a.seed;
    if (auto s = env_seed()) cfg.seed = *s;
    rep = run_seeded_suite(cfg);
  } else {
    const RunTrace run = load_run(a.run, {.strict = false});
    for (const auto& issue : check_run(run)) {
      rep.checks.push_back({"layer" + std::to_string(issue.layer) + ".head" + std::to_string(issue.head) +
                                ".load_validation",
                            1.0, false, false, "row " + std::to_string(issue.row) + ": " + issue.message});
    }
    auto more = verify_run(run);
    rep.checks.insert(rep.checks.end(), more.checks.begin(), more.checks.end());
  }
  if (!a.out.empty()) write_json(to_json(rep), a.out);
  std::size_t passed = 0, informational = 0;
  for (const auto& c : rep.checks) {
    if (c.informational) {
      ++informational;
      out << "info " << c.name << " residual " << c.residual << '\n';
    } else if (c.pass) {
      ++passed;
    }
  }
  const auto failures = rep.failures();
  for (const auto& c : rep.checks) {
    if (!c.pass && !c.informational) {
      err << "FAIL " << c.name << " residual " << c.residual << (c.detail.empty() ? "" : " (" + c.detail + ")") << '\n';
    }
  }
  out << passed << " passed, " << failures.size() << " failed, " << informational << " informational\n";
  return failures.empty() ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention map analysis toolkit", "attnscope"};
  app.require_subcommand(1, 1);

  EncodeArgs ea;
  auto* enc = app.add_subcommand("encode", "Run the reference encoder and save the trace");
  enc->add_option("--config", ea.config, "Encoder config JSON")->check(CLI::ExistingFile);
  enc->add_option("--seed", ea.seed, "Seed (ATTNSCOPE_SEED overrides)");
  auto* tok = enc->add_option("--tokens", ea.tokens, "Whitespace separated token file")->check(CLI::ExistingFile);
  enc->add_option("--rna", ea.rna, "Nucleotide sequence file, split into k-mers")->check(CLI::ExistingFile)->excludes(tok);
  enc->add_option("--k", ea.k, "k-mer length")->capture_default_str();
  enc->add_option("--stride", ea.stride, "k-mer stride")->capture_default_str();
  enc->add_option("--out", ea.out, "Run directory")->required();

  ClassifyArgs ca;
  auto* cls = app.add_subcommand("classify", "Decompose attention maps into gate patterns");
  cls->add_option("--run", ca.run, "Run directory")->check(CLI::ExistingDirectory);
  cls->add_option("--tensor", ca.tensor, "Attention map .npy")->check(CLI::ExistingFile);
  cls->add_option("--params", ca.params, "Classifier params JSON")->check(CLI::ExistingFile);
  cls->add_option("--out", ca.out, "Report JSON; the overlay CSV is written beside it");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Write an idealized attention map");
  gen->add_option("--pattern", ga.patterns, "Pattern kind(s)")->delimiter(',');
  gen->add_option("--n", ga.n, "Matrix size");
  gen->add_option("--i", ga.i, "Column index, per pattern")->delimiter(',');
  gen->add_option("--j", ga.j, "Row index or offset, per pattern")->delimiter(',');
  gen->add_option("--k", ga.k, "Block size, per pattern")->delimiter(',');
  gen->add_option("--span", ga.span, "Band length of diagonal kinds, per pattern")->delimiter(',');
  gen->add_option("--support", ga.support, "Horizontal support columns")->delimiter(',');
  gen->add_option("--weights", ga.weights, "Convex weights, one per pattern")->delimiter(',');
  gen->add_option("--spec", ga.spec, "Pattern spec or composition JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", ga.out, "Output .npy")->required();

  MetricsArgs ma;
  auto* met = app.add_subcommand("metrics", "Compute run diagnostics as JSON and CSV");
  met->add_option("--run", ma.run, "Run directory")->required()->check(CLI::ExistingDirectory);
  met->add_option("--metrics", ma.metrics, "cone,entropy,lilliefors,featuresum,svd,rank,norms,qkdecomp or all")
      ->capture_default_str();
  met->add_option("--out", ma.out, "Output directory")->required();

  VerifyArgs va;
  auto* ver = app.add_subcommand("verify", "Check the algebraic invariants");
  ver->add_option("--run", va.run, "Run directory")->check(CLI::ExistingDirectory);
  ver->add_flag("--seeded-suite", va.seeded, "Run the seeded property suite");
  ver->add_option("--config", va.config, "Encoder config JSON for the seeded suite")->check(CLI::ExistingFile);
  ver->add_option("--seed", va.seed, "Seed for the seeded suite (ATTNSCOPE_SEED overrides)");
  ver->add_option("--out", va.out, "Report JSON");

  std::vector<std::string> storage = {"attnscope"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (enc->parsed()) return cmd_encode(ea, *enc, out);
    if (cls->parsed()) return cmd_classify(ca, out);
    if (gen->parsed()) return cmd_generate(ga, out);
    if (met->parsed()) return cmd_metrics(ma, out);
    if (ver->parsed()) return cmd_verify(va, *ver, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace attnscope::cli
