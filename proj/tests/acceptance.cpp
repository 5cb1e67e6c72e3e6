// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "prunelab/prunelab.hpp"

namespace {

using namespace prunelab;
namespace fs = std::filesystem;
using nlohmann::json;

Matrix gaussian_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.gaussian();
  return m;
}

Matrix product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += a(i, k) * b(k, j);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("prunelab_accept_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

RunContext context(const fs::path& dir) {
  RunContext ctx;
  ctx.out_dir = dir;
  return ctx;
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("[%s] %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

// Run directories written by pipeline runs, for the exactness sweep.
std::vector<fs::path> pipeline_outputs;

json tiny_pipeline() {
  return json{{"model", {{"d_model", 8}, {"n_layers", 2}, {"n_heads", 2}, {"d_ffn", 16}, {"seed", 11}}},
              {"languages", {{"vocab", 16}}},
              {"calibration", {{"budget", 8}, {"seq_len", 12}, {"seeds", {1, 2}}, {"plans", {{"L1"}, {"L2"}, {"L3"}, {"L1", "L2", "L3"}}}}},
              {"validation", {{"samples", 6}, {"seq_len", 10}}},
              {"analysis", {{"lape_group_fraction", 0.1}}}};
}

Outcome wanda_is_magnitude() {
  int same = 0;
  const int n = 120;
  for (int s = 0; s < n; ++s) {
    const std::size_t rows = 4 + s % 5, cols = 8 + 2 * (s % 7);
    const Matrix w = gaussian_matrix(rows, cols, 1000 + s);
    Matrix x = gaussian_matrix(cols, 20, 5000 + s);
    for (std::size_t j = 0; j < cols; ++j) {
      double norm = 0;
      for (double v : x.row(j)) norm += v * v;
      norm = std::sqrt(norm);
      for (double& v : x.row(j)) v *= 3.0 / norm;
    }
    const auto spec = SparsitySpec::unstructured(0.5);
    same += prune_wanda(w, x, spec).keep == prune_magnitude(w, spec).keep ? 1 : 0;
  }
  return {same == n, std::to_string(same) + "/" + std::to_string(n) + " masks identical"};
}

Outcome wanda_oracle() {
  int match = 0;
  for (int s = 0; s < 100; ++s) {
    const Matrix w = gaussian_matrix(8, 16, 20000 + s);
    const Matrix x = gaussian_matrix(16, 24, 30000 + s);
    std::vector<double> norm(16, 0.0);
    for (std::size_t j = 0; j < 16; ++j) {
      for (double v : x.row(j)) norm[j] += v * v;
      norm[j] = std::sqrt(norm[j]);
    }
    const PruningMask mask = prune_wanda(w, x, SparsitySpec::unstructured(0.5));
    bool ok = true;
    for (std::size_t r = 0; r < 8; ++r) {
      // Rank of each entry: number of entries with a smaller score (ties by column).
      for (std::size_t c = 0; c < 16; ++c) {
        const double sc = std::abs(w(r, c)) * norm[c];
        std::size_t below = 0;
        for (std::size_t o = 0; o < 16; ++o) {
          const double so = std::abs(w(r, o)) * norm[o];
          below += (so < sc || (so == sc && o < c)) ? 1 : 0;
        }
        ok = ok && (mask.keep(r, c) == (below >= 8));
      }
    }
    match += ok ? 1 : 0;
  }
  return {match == 100, std::to_string(match) + "/100 exact matches"};
}

Outcome sparsegpt_dominance() {
  auto rate = [](bool scaled) {
    int wins = 0;
    for (int s = 0; s < 100; ++s) {
      const Matrix w = gaussian_matrix(4, 8, 40000 + s);
      Matrix x = gaussian_matrix(8, 64, 50000 + s);
      if (scaled) {
        Rng rng(60000 + s);
        for (std::size_t j = 0; j < 8; ++j) {
          const double f = std::exp(rng.gaussian());
          for (double& v : x.row(j)) v *= f;
        }
      }
      const auto spec = SparsitySpec::unstructured(0.5);
      const Matrix ref = product(w, x);
      const double e_sgpt = frobenius_norm(ref - product(prune_sparsegpt(w, x, spec).weights, x));
      const double e_mag = frobenius_norm(ref - product(apply_mask(w, prune_magnitude(w, spec)), x));
      wins += e_sgpt <= e_mag ? 1 : 0;
    }
    return wins;
  };
  const int wins = rate(true);
  const int iso = rate(false);
  return {wins >= 95, std::to_string(wins) + "/100 with per-feature scaled X (isotropic X: " +
                          std::to_string(iso) + "/100, informational)"};
}

// Zero counts recounted from the raw keep bits.
bool counts_exact(const PruningMask& m) {
  const auto& s = m.spec;
  if (s.kind == SparsityKind::kNM) {
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t g = 0; g + s.m <= m.cols(); g += s.m) {
        std::size_t z = 0;
        for (std::size_t c = g; c < g + s.m; ++c) z += m.keep(r, c) ? 0 : 1;
        if (z != s.m - s.n) return false;
      }
    return m.cols() % s.m == 0;
  }
  if (s.group == ComparisonGroup::kWholeMatrix) {
    const auto want = static_cast<std::size_t>(std::floor(s.ratio * double(m.rows() * m.cols()) + 1e-9));
    std::size_t z = 0;
    for (std::size_t i = 0; i < m.keep.size(); ++i) z += m.keep.at(i) ? 0 : 1;
    return z == want;
  }
  const auto want = static_cast<std::size_t>(std::floor(s.ratio * double(m.cols()) + 1e-9));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::size_t z = 0;
    for (std::size_t c = 0; c < m.cols(); ++c) z += m.keep(r, c) ? 0 : 1;
    if (z != want) return false;
  }
  return true;
}

Outcome sparsity_exactness() {
  // Extra pipelines covering the other methods and groupings.
  const std::vector<json> variants{
      {{"method", "sparsegpt"}, {"sparsity", {{"kind", "unstructured"}, {"ratio", 0.5}}}},
      {{"method", "sparsegpt"}, {"sparsity", {{"kind", "nm"}, {"n", 2}, {"m", 4}}}},
      {{"method", "wanda"}, {"sparsity", {{"kind", "nm"}, {"n", 2}, {"m", 4}}}},
      {{"method", "magnitude"}, {"sparsity", {{"kind", "unstructured"}, {"ratio", 0.3}, {"group", "matrix"}}}},
      {{"method", "wanda"}, {"sparsity", {{"kind", "unstructured"}, {"ratio", 0.7}}}},
  };
  for (std::size_t v = 0; v < variants.size(); ++v) {
    json j = tiny_pipeline();
    j["pruning"] = variants[v];
    const ExperimentConfig cfg = parse_config(j);
    const fs::path dir = scratch("exact" + std::to_string(v));
    cmd_gen(cfg, context(dir));
    cmd_prune(cfg, context(dir));
    pipeline_outputs.push_back(dir);
  }
  std::size_t checked = 0, bad = 0, runs = 0;
  for (const auto& out : pipeline_outputs) {
    for (const auto& entry : fs::recursive_directory_iterator(out / "pruned")) {
      if (entry.path().filename() != "masks.bin") continue;
      ++runs;
      const auto masks = load_mask_bundle(entry.path().string());
      const ToyModel model = load_model((entry.path().parent_path() / "model.bin").string());
      for (const auto& nm : masks) {
        ++checked;
        // The mask is over (out, in); the stored weight is its transpose.
        const std::size_t layer = std::stoul(nm.name.substr(7));
        const Block& b = model.blocks[layer];
        const std::string kind = nm.name.substr(nm.name.find('.', 7) + 1);
        const Matrix* w = kind == "q" ? &b.wq : kind == "k" ? &b.wk : kind == "v" ? &b.wv
                        : kind == "attn.out" ? &b.wo : kind == "ffn.gate" ? &b.w_gate
                        : kind == "ffn.up" ? &b.w_up : &b.w_down;
        bool zero_where_dropped = true;
        for (std::size_t r = 0; r < nm.mask.rows(); ++r)
          for (std::size_t c = 0; c < nm.mask.cols(); ++c)
            if (!nm.mask.keep(r, c) && (*w)(c, r) != 0.0) zero_where_dropped = false;
        if (!counts_exact(nm.mask) || !zero_where_dropped) ++bad;
      }
    }
  }
  return {bad == 0 && checked > 0, std::to_string(checked) + " matrices over " + std::to_string(runs) +
                                       " pruning runs, " + std::to_string(bad) + " inexact"};
}

Outcome metric_closed_forms() {
  ModelConfig mc;
  mc.vocab_size = 17;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.d_ffn = 8;
  mc.n_layers = 2;
  mc.max_seq = 12;
  mc.seed = 5;
  ToyModel zero = init_model(mc);
  for (double& v : zero.embedding.data()) v = 0.0;
  const double ppl = perplexity(zero, {{0, 1, 2, 3, 16}, {0, 5, 5}});
  const bool ppl_ok = std::abs(ppl / 17.0 - 1.0) <= 1e-6;

  const ToyModel m = init_model(mc);
  const Sequence input{0, 3, 9, 4, 1, 7};
  const HiddenTrace full = forward(m, input).trace;
  double worst_db = 0.0;
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    HiddenTrace p = full;
    for (auto& h : p.hidden) h = (1.0 + eps) * h;
    const auto r = snr(full, p);
    worst_db = std::max(worst_db, std::abs(r.model_average + 20.0 * std::log10(eps)));
    for (const auto& l : r.layers) worst_db = std::max(worst_db, std::abs(l.value + 20.0 * std::log10(eps)));
  }
  bool zero_err = true;
  for (const auto& e : pruning_error(full, full)) zero_err = zero_err && e.value == 0.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "ppl/V-1=%.2e, max SNR deviation %.2e dB, identical-trace error zero=%s",
                ppl / 17.0 - 1.0, worst_db, zero_err ? "yes" : "no");
  return {ppl_ok && worst_db <= 0.01 && zero_err, buf};
}

Outcome lsar_invariants() {
  double orth = 0, perp = 0, recon = 0;
  bool ok = true;
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 8 + t % 24, langs = 2 + t % 6, r = 1 + t % (langs - 1);
    const Matrix m = gaussian_matrix(d, langs, 70000 + t);
    const LsarBasis b = lsar_fit(m, r);
    const Matrix gram = product(transpose(b.m_s), b.m_s);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) orth = std::max(orth, std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)));
    double mu_norm = norm2(b.mu), worst = 0;
    for (std::size_t c = 0; c < r; ++c) worst = std::max(worst, std::abs(dot(b.mu, b.m_s.col(c))));
    perp = std::max(perp, worst / mu_norm);
    ok = ok && worst <= 1e-8 * mu_norm;
    const Vector e = gaussian_matrix(d, 1, 80000 + t).col(0);
    const LsarSplit s = lsar_split(e, b);
    for (std::size_t i = 0; i < d; ++i) recon = std::max(recon, std::abs(s.agnostic[i] + s.specific[i] - e[i]));
  }
  ok = ok && orth <= 1e-8 && recon <= 1e-12;
  char buf[160];
  std::snprintf(buf, sizeof buf, "50 fits: max|MsᵀMs-I|=%.1e, max|μᵀMs|/‖μ‖=%.1e, max recon=%.1e", orth, perp,
                recon);
  return {ok, buf};
}

Outcome lape_anchors() {
  const bool onehot = lape(std::vector<double>{0.0, 0.0, 0.8, 0.0}) == 0.0;
  const bool uniform = std::abs(*lape(std::vector<double>(6, 0.25)) - std::log(6.0)) <= 1e-12;
  bool bounded = true;
  Rng rng(90000);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> p(2 + t % 8);
    for (double& v : p) v = rng.uniform();
    const double h = *lape(p);
    bounded = bounded && h >= 0.0 && h <= std::log(double(p.size())) + 1e-12;
  }
  std::vector<ActivationProbabilities> probs;
  for (int k = 0; k < 3; ++k) {
    ActivationProbabilities a{"L" + std::to_string(k), Matrix(2, 10)};
    for (std::size_t i = 0; i < 20; ++i) a.p.data()[i] = i % 4 == 0 ? 0.0 : rng.uniform();
    probs.push_back(std::move(a));
  }
  const LapeGroups g = lape_groups(build_lape_table(probs), 0.2);
  std::size_t scored = 0;
  bool never_ok = g.never_active.size() == 5;
  for (const auto& grp : g.groups)
    for (const auto& id : grp) {
      ++scored;
      never_ok = never_ok && (id.layer * 10 + id.index) % 4 != 0;
    }
  never_ok = never_ok && scored == 15;
  return {onehot && uniform && bounded && never_ok,
          std::string("one-hot=0 ") + (onehot ? "ok" : "bad") + ", uniform=ln6 " + (uniform ? "ok" : "bad") +
              ", bounds " + (bounded ? "ok" : "bad") + ", never-active bucket " + (never_ok ? "ok" : "bad")};
}

Outcome iou_algebra() {
  auto range = [](std::size_t lo, std::size_t hi) {
    IndexSet s(1, 300);
    for (std::size_t i = lo; i < hi; ++i) s.insert(i);
    return s;
  };
  const IndexSet a = range(0, 100), b = range(50, 150), c = range(200, 210), d = range(210, 220);
  const bool third = mask_iou(a, b) == 1.0 / 3.0;
  const bool sym = mask_iou(a, b) == mask_iou(b, a) && mask_iou(c, a) == mask_iou(a, c);
  const bool ident = mask_iou(a, a) == 1.0 && mask_iou(c, c) == 1.0;
  const bool disjoint = mask_iou(c, d) == 0.0;
  return {third && sym && ident && disjoint, std::string("1/3 case ") + (third ? "ok" : "bad") + ", symmetry " +
                                                 (sym ? "ok" : "bad") + ", identity " + (ident ? "ok" : "bad") +
                                                 ", disjoint " + (disjoint ? "ok" : "bad")};
}

Outcome diagonal_pattern() {
  std::vector<int> matches;
  std::string grid_text;
  for (std::uint64_t run = 0; run < 5; ++run) {
    const json j{{"model", {{"d_model", 32}, {"n_layers", 4}, {"n_heads", 4}, {"d_ffn", 64}}},
                 {"languages", {{"concentration", 0.1}}},
                 {"calibration", {{"budget", 128}, {"seq_len", 64}}},
                 {"validation", {{"samples", 32}, {"seq_len", 64}}},
                 {"pruning", {{"method", "wanda"}, {"sparsity", {{"kind", "unstructured"}, {"ratio", 0.5}}}}},
                 {"analysis", {{"lsar", false}, {"iou", false}, {"lape", false}}}};
    ExperimentConfig cfg = parse_config(j);
    apply_seed_offset(cfg, run * 1000);
    finalize_config(cfg);
    const fs::path dir = scratch("diag" + std::to_string(run));
    cmd_gen(cfg, context(dir));
    cmd_prune(cfg, context(dir));
    cmd_eval(cfg, context(dir));
    pipeline_outputs.push_back(dir);
    std::ifstream is(dir / "reports" / "metrics.json");
    const json r = json::parse(is);
    int match = 0;
    for (const auto& eval : cfg.languages.tags) {
      std::string best;
      double best_err = INFINITY;
      for (const auto& plan : r["calibration_plans"]) {
        const double e = r["grid"][plan.get<std::string>()][eval]["pruning_error"];
        if (e < best_err) {
          best_err = e;
          best = plan;
        }
      }
      match += best == eval ? 1 : 0;
    }
    matches.push_back(match);
  }
  std::vector<int> sorted = matches;
  std::sort(sorted.begin(), sorted.end());
  std::string per_run;
  for (int m : matches) per_run += std::to_string(m);
  return {sorted[2] >= 2, "matching-language argmin per run [" + per_run + "] of 3, median " +
                              std::to_string(sorted[2])};
}

Outcome determinism() {
  const ExperimentConfig cfg = parse_config(tiny_pipeline());
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  cmd_all(cfg, context(a));
  RunContext ctx = context(b);
  ctx.jobs = 2;
  cmd_all(cfg, ctx);
  pipeline_outputs.push_back(a);
  int same = 0;
  for (const char* f : {"metrics.csv", "metrics.json", "analysis.json"})
    same += slurp(a / "reports" / f) == slurp(b / "reports" / f) && !slurp(a / "reports" / f).empty() ? 1 : 0;
  return {same == 3, std::to_string(same) + "/3 reports byte-identical"};
}

}  // namespace

int main() {
  report(10, "determinism", determinism);
  report(1, "wanda reduces to magnitude", wanda_is_magnitude);
  report(2, "wanda oracle equivalence", wanda_oracle);
  report(3, "sparsegpt dominance", sparsegpt_dominance);
  report(5, "metric closed forms", metric_closed_forms);
  report(6, "lsar invariants", lsar_invariants);
  report(7, "lape bounds and anchors", lape_anchors);
  report(8, "iou algebra", iou_algebra);
  report(9, "diagonal pattern", diagonal_pattern);
  report(4, "sparsity exactness", sparsity_exactness);
  fs::remove_all(fs::temp_directory_path() / ("prunelab_accept_" + std::to_string(::getpid())));
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
