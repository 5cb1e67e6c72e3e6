// Copyright 2026 The Prunelab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Batch pipeline behind the prunelab CLI: gen -> prune -> eval -> analyze.
//
// Output directory layout:
//   manifest.json                      config + config hash, written by gen
//   corpora/<tag>.calib.txt            repeats × budget calibration draws
//   corpora/<tag>.valid.txt            held-out validation sequences
//   models/base.bin                    unpruned model
//   pruned/<plan>/seed<k>/model.bin    pruned model per plan × repeat
//   pruned/<plan>/seed<k>/masks.bin    mask bundle
//   reports/metrics.csv, reports/metrics.json, reports/analysis.json

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "prunelab/analysis.hpp"
#include "prunelab/corpus.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/pruner.hpp"
#include "prunelab/toymodel.hpp"

namespace prunelab {

/// Invalid or inconsistent experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required input artifact is absent or belongs to another config (exit 3).
class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  ModelConfig model;  // vocab_size and max_seq are derived from the corpora

  struct Languages {
    std::vector<std::string> tags{"L1", "L2", "L3"};
    std::vector<std::uint64_t> seeds{101, 102, 103};
    std::size_t vocab = 64;
    double concentration = 0.1;
  } languages;

  struct Calibration {
    std::vector<std::vector<std::string>> plans{{"L1"}, {"L2"}, {"L3"}};
    std::size_t budget = 128;
    std::size_t seq_len = 256;
    std::vector<std::uint64_t> seeds{1, 2, 3};  // one pruning run per seed
  } calibration;

  struct Validation {
    std::size_t samples = 32;
    std::size_t seq_len = 64;
    std::uint64_t seed = 1000;
  } validation;

  struct Pruning {
    PruneMethod method = PruneMethod::kWanda;
    SparsitySpec spec = SparsitySpec::unstructured(0.5);
    SparseGptOptions sparsegpt;
  } pruning;

  struct Analysis {
    bool lsar = true;
    bool iou = true;
    bool lape = true;
    std::optional<std::size_t> lsar_rank;  // default L − 1
    double lape_group_fraction = 0.02;
    ActivationSignal signal = ActivationSignal::kUp;
  } analysis;

  std::string output_dir = "out";
};

inline std::string plan_name(const std::vector<std::string>& tags) {
  std::string s;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (i) s += '+';
    s += tags[i];
  }
  return s;
}

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& where,
                           std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

/// Validates cross-field constraints and fills derived model fields.
inline void finalize_config(ExperimentConfig& cfg) {
  auto& L = cfg.languages;
  if (L.tags.empty()) throw ConfigError("languages.tags: at least one language required");
  if (L.seeds.size() != L.tags.size())
    throw ConfigError("languages.seeds: need exactly one seed per tag");
  std::set<std::string> tags(L.tags.begin(), L.tags.end());
  if (tags.size() != L.tags.size()) throw ConfigError("languages.tags: duplicate tag");
  for (const auto& t : L.tags)
    if (t.empty() || t.find_first_of("+/ ,=") != std::string::npos)
      throw ConfigError("languages.tags: invalid tag '" + t + "'");
  if (L.vocab < 2) throw ConfigError("languages.vocab must be >= 2");
  if (!(L.concentration > 0.0)) throw ConfigError("languages.concentration must be > 0");

  auto& C = cfg.calibration;
  if (C.plans.empty()) throw ConfigError("calibration.plans: at least one plan required");
  for (const auto& p : C.plans) {
    if (p.empty()) throw ConfigError("calibration.plans: empty plan");
    for (const auto& t : p)
      if (!tags.count(t)) throw ConfigError("calibration.plans: unknown language '" + t + "'");
    if (C.budget < p.size()) throw ConfigError("calibration.budget smaller than plan size");
  }
  if (C.seeds.empty()) throw ConfigError("calibration.seeds: at least one repeat seed required");
  if (C.seq_len < 1 || C.budget < 1) throw ConfigError("calibration: budget and seq_len must be >= 1");
  for (auto s : C.seeds)
    if (s == cfg.validation.seed)
      throw ConfigError("validation.seed collides with a calibration seed");
  if (std::set<std::uint64_t>(C.seeds.begin(), C.seeds.end()).size() != C.seeds.size())
    throw ConfigError("calibration.seeds: duplicate seed");
  if (cfg.validation.samples < 1 || cfg.validation.seq_len < 1)
    throw ConfigError("validation: samples and seq_len must be >= 1");

  const auto vocab = static_cast<std::uint32_t>(L.vocab + 1);
  if (cfg.model.vocab_size != 0 && cfg.model.vocab_size != vocab)
    throw ConfigError("model.vocab_size must equal languages.vocab + 1");
  cfg.model.vocab_size = vocab;
  const auto needed = static_cast<std::uint32_t>(std::max(C.seq_len, cfg.validation.seq_len) + 1);
  if (cfg.model.max_seq == 0) cfg.model.max_seq = needed;
  if (cfg.model.max_seq < needed) throw ConfigError("model.max_seq shorter than seq_len + 1");
  try {
    cfg.model.validate();
    cfg.pruning.spec.validate();
    if (cfg.pruning.spec.kind == SparsityKind::kNM)
      for (std::size_t cols : {std::size_t{cfg.model.d_model}, std::size_t{cfg.model.d_ffn}})
        cfg.pruning.spec.validate_for(0, cols);
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (cfg.pruning.sparsegpt.block_size < 1) throw ConfigError("pruning.block_size must be >= 1");
  if (!(cfg.pruning.sparsegpt.damping_frac >= 0.0)) throw ConfigError("pruning.damping_frac < 0");
  const double f = cfg.analysis.lape_group_fraction;
  if (!(f > 0.0 && f <= 1.0)) throw ConfigError("analysis.lape_group_fraction must be in (0, 1]");
  if (cfg.analysis.lsar_rank && *cfg.analysis.lsar_rank < 1)
    throw ConfigError("analysis.lsar_rank must be >= 1");
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::read_opt;
  using detail::reject_unknown;
  ExperimentConfig cfg;
  cfg.model.vocab_size = 0;
  cfg.model.max_seq = 0;
  reject_unknown(j, "config",
                 {"model", "languages", "calibration", "validation", "pruning", "analysis", "output_dir"});
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m, "model", {"vocab_size", "d_model", "n_layers", "n_heads", "d_ffn", "max_seq", "seed"});
    read_opt(m, "vocab_size", cfg.model.vocab_size, "model");
    read_opt(m, "d_model", cfg.model.d_model, "model");
    read_opt(m, "n_layers", cfg.model.n_layers, "model");
    read_opt(m, "n_heads", cfg.model.n_heads, "model");
    read_opt(m, "d_ffn", cfg.model.d_ffn, "model");
    read_opt(m, "max_seq", cfg.model.max_seq, "model");
    read_opt(m, "seed", cfg.model.seed, "model");
  }
  if (j.contains("languages")) {
    const auto& l = j.at("languages");
    reject_unknown(l, "languages", {"tags", "seeds", "vocab", "concentration"});
    read_opt(l, "tags", cfg.languages.tags, "languages");
    read_opt(l, "seeds", cfg.languages.seeds, "languages");
    read_opt(l, "vocab", cfg.languages.vocab, "languages");
    read_opt(l, "concentration", cfg.languages.concentration, "languages");
  }
  if (j.contains("calibration")) {
    const auto& c = j.at("calibration");
    reject_unknown(c, "calibration", {"plans", "budget", "seq_len", "seeds"});
    read_opt(c, "plans", cfg.calibration.plans, "calibration");
    read_opt(c, "budget", cfg.calibration.budget, "calibration");
    read_opt(c, "seq_len", cfg.calibration.seq_len, "calibration");
    read_opt(c, "seeds", cfg.calibration.seeds, "calibration");
  }
  if (j.contains("validation")) {
    const auto& v = j.at("validation");
    reject_unknown(v, "validation", {"samples", "seq_len", "seed"});
    read_opt(v, "samples", cfg.validation.samples, "validation");
    read_opt(v, "seq_len", cfg.validation.seq_len, "validation");
    read_opt(v, "seed", cfg.validation.seed, "validation");
  }
  if (j.contains("pruning")) {
    const auto& p = j.at("pruning");
    reject_unknown(p, "pruning", {"method", "sparsity", "damping_frac", "block_size"});
    std::string method = "wanda";
    read_opt(p, "method", method, "pruning");
    const auto parsed = parse_method(method);
    if (!parsed) throw ConfigError("pruning.method: unknown method '" + method + "'");
    cfg.pruning.method = *parsed;
    read_opt(p, "damping_frac", cfg.pruning.sparsegpt.damping_frac, "pruning");
    read_opt(p, "block_size", cfg.pruning.sparsegpt.block_size, "pruning");
    if (p.contains("sparsity")) {
      const auto& s = p.at("sparsity");
      reject_unknown(s, "pruning.sparsity", {"kind", "ratio", "group", "n", "m"});
      std::string kind = "unstructured";
      std::string group = "row";
      read_opt(s, "kind", kind, "pruning.sparsity");
      read_opt(s, "group", group, "pruning.sparsity");
      auto& spec = cfg.pruning.spec;
      if (kind == "unstructured") {
        spec.kind = SparsityKind::kUnstructured;
        read_opt(s, "ratio", spec.ratio, "pruning.sparsity");
      } else if (kind == "nm") {
        spec.kind = SparsityKind::kNM;
        spec.ratio = 0.0;
        read_opt(s, "n", spec.n, "pruning.sparsity");
        read_opt(s, "m", spec.m, "pruning.sparsity");
      } else {
        throw ConfigError("pruning.sparsity.kind: expected 'unstructured' or 'nm'");
      }
      if (group == "row")
        spec.group = ComparisonGroup::kPerRow;
      else if (group == "matrix")
        spec.group = ComparisonGroup::kWholeMatrix;
      else
        throw ConfigError("pruning.sparsity.group: expected 'row' or 'matrix'");
    }
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    reject_unknown(a, "analysis",
                   {"lsar", "iou", "lape", "lsar_rank", "lape_group_fraction", "activation_signal"});
    read_opt(a, "lsar", cfg.analysis.lsar, "analysis");
    read_opt(a, "iou", cfg.analysis.iou, "analysis");
    read_opt(a, "lape", cfg.analysis.lape, "analysis");
    if (a.contains("lsar_rank") && !a.at("lsar_rank").is_null()) {
      std::size_t r = 0;
      read_opt(a, "lsar_rank", r, "analysis");
      cfg.analysis.lsar_rank = r;
    }
    read_opt(a, "lape_group_fraction", cfg.analysis.lape_group_fraction, "analysis");
    std::string signal = "up";
    read_opt(a, "activation_signal", signal, "analysis");
    if (signal == "up")
      cfg.analysis.signal = ActivationSignal::kUp;
    else if (signal == "gated")
      cfg.analysis.signal = ActivationSignal::kGated;
    else
      throw ConfigError("analysis.activation_signal: expected 'up' or 'gated'");
  }
  read_opt(j, "output_dir", cfg.output_dir, "config");
  finalize_config(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return parse_config(j);
}

/// Canonical JSON of everything that influences results (output_dir excluded).
inline nlohmann::json canonical_json(const ExperimentConfig& cfg) {
  using nlohmann::json;
  const auto& s = cfg.pruning.spec;
  json sparsity = {{"kind", s.kind == SparsityKind::kNM ? "nm" : "unstructured"},
                   {"group", s.group == ComparisonGroup::kPerRow ? "row" : "matrix"}};
  if (s.kind == SparsityKind::kNM) {
    sparsity["n"] = s.n;
    sparsity["m"] = s.m;
  } else {
    sparsity["ratio"] = s.ratio;
  }
  return json{
      {"model",
       {{"vocab_size", cfg.model.vocab_size},
        {"d_model", cfg.model.d_model},
        {"n_layers", cfg.model.n_layers},
        {"n_heads", cfg.model.n_heads},
        {"d_ffn", cfg.model.d_ffn},
        {"max_seq", cfg.model.max_seq},
        {"seed", cfg.model.seed}}},
      {"languages",
       {{"tags", cfg.languages.tags},
        {"seeds", cfg.languages.seeds},
        {"vocab", cfg.languages.vocab},
        {"concentration", cfg.languages.concentration}}},
      {"calibration",
       {{"plans", cfg.calibration.plans},
        {"budget", cfg.calibration.budget},
        {"seq_len", cfg.calibration.seq_len},
        {"seeds", cfg.calibration.seeds}}},
      {"validation",
       {{"samples", cfg.validation.samples},
        {"seq_len", cfg.validation.seq_len},
        {"seed", cfg.validation.seed}}},
      {"pruning",
       {{"method", std::string(method_name(cfg.pruning.method))},
        {"sparsity", sparsity},
        {"damping_frac", cfg.pruning.sparsegpt.damping_frac},
        {"block_size", cfg.pruning.sparsegpt.block_size}}},
      {"analysis",
       {{"lsar", cfg.analysis.lsar},
        {"iou", cfg.analysis.iou},
        {"lape", cfg.analysis.lape},
        {"lsar_rank", cfg.analysis.lsar_rank ? json(*cfg.analysis.lsar_rank) : json(nullptr)},
        {"lape_group_fraction", cfg.analysis.lape_group_fraction},
        {"activation_signal", cfg.analysis.signal == ActivationSignal::kUp ? "up" : "gated"}}},
  };
}

/// 16 hex digits of FNV-1a 64 over the canonical config dump.
inline std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = canonical_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Shifts every seed by `offset` (the CLI's --seed-offset).
inline void apply_seed_offset(ExperimentConfig& cfg, std::uint64_t offset) {
  if (offset == 0) return;
  cfg.model.seed = static_cast<std::uint32_t>(cfg.model.seed + offset);
  for (auto& s : cfg.languages.seeds) s += offset;
  for (auto& s : cfg.calibration.seeds) s += offset;
  cfg.validation.seed += offset;
}

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

struct RunContext {
  std::filesystem::path out_dir;
  unsigned jobs = 1;
  std::function<void(LogLevel, const std::string&)> log = [](LogLevel, const std::string&) {};
};

namespace detail {

namespace fs = std::filesystem;

inline fs::path calib_path(const RunContext& ctx, const std::string& tag) {
  return ctx.out_dir / "corpora" / (tag + ".calib.txt");
}
inline fs::path valid_path(const RunContext& ctx, const std::string& tag) {
  return ctx.out_dir / "corpora" / (tag + ".valid.txt");
}
inline fs::path base_model_path(const RunContext& ctx) { return ctx.out_dir / "models" / "base.bin"; }
inline fs::path run_dir(const RunContext& ctx, const std::string& plan, std::size_t seed_index) {
  return ctx.out_dir / "pruned" / plan / ("seed" + std::to_string(seed_index));
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw FormatError("cannot create directory " + p.string() + ": " + ec.message());
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + p.string());
  os << text;
  if (!os) throw FormatError("write failed: " + p.string());
}

inline void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifactError("missing artifact: " + p.string());
}

inline void check_manifest(const ExperimentConfig& cfg, const RunContext& ctx) {
  const fs::path p = ctx.out_dir / "manifest.json";
  require_file(p);
  std::ifstream is(p);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception&) {
    throw MissingArtifactError("unreadable manifest: " + p.string());
  }
  if (m.value("config_hash", std::string()) != config_hash(cfg))
    throw MissingArtifactError("artifacts in " + ctx.out_dir.string() +
                               " were produced by a different config (hash " +
                               m.value("config_hash", std::string("?")) + ")");
}

inline CorpusFile load_checked_corpus(const fs::path& p, const ExperimentConfig& cfg) {
  require_file(p);
  CorpusFile c;
  try {
    c = load_corpus(p.string());
  } catch (const FormatError& e) {
    throw MissingArtifactError("corrupt corpus " + p.string() + ": " + e.what());
  }
  if (c.config_hash != config_hash(cfg))
    throw MissingArtifactError("corpus " + p.string() + " belongs to a different config");
  return c;
}

inline std::size_t tag_index(const ExperimentConfig& cfg, const std::string& tag) {
  const auto& t = cfg.languages.tags;
  return static_cast<std::size_t>(std::find(t.begin(), t.end(), tag) - t.begin());
}

inline std::vector<Sequence> validation_inputs(const ExperimentConfig& cfg, const RunContext& ctx,
                                               const std::string& tag) {
  const CorpusFile c = load_checked_corpus(valid_path(ctx, tag), cfg);
  std::vector<Sequence> out;
  for (const auto& s : c.sequences) out.push_back(to_model_input(s));
  return out;
}

inline ToyModel load_checked_model(const fs::path& p) {
  require_file(p);
  try {
    return load_model(p.string());
  } catch (const FormatError& e) {
    throw MissingArtifactError("corrupt model " + p.string() + ": " + e.what());
  }
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> workers;
  for (unsigned w = 0; w < std::min<std::size_t>(jobs, n); ++w)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  workers.clear();
  if (failure) std::rethrow_exception(failure);
}

inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json box_json(const BoxStats& b) {
  return {{"count", b.count}, {"min", b.min}, {"q1", b.q1}, {"median", b.median},
          {"q3", b.q3}, {"max", b.max}};
}

}  // namespace detail

inline std::vector<LanguageSpec> make_languages(const ExperimentConfig& cfg) {
  std::vector<LanguageSpec> out;
  for (std::size_t i = 0; i < cfg.languages.tags.size(); ++i)
    out.push_back(make_language(cfg.languages.vocab, cfg.languages.concentration,
                                cfg.languages.seeds[i], cfg.languages.tags[i]));
  return out;
}

/// Writes calibration and validation corpora for every language plus the
/// manifest. Calibration file of language i holds `budget` draws for each
/// repeat seed k (sequence j seeded by mix(mix(seed_k, i), j)).
inline void cmd_gen(const ExperimentConfig& cfg, const RunContext& ctx) {
  namespace fs = std::filesystem;
  detail::ensure_dir(ctx.out_dir / "corpora");
  const std::string hash = config_hash(cfg);
  const auto langs = make_languages(cfg);
  for (std::size_t i = 0; i < langs.size(); ++i) {
    CorpusFile calib{langs[i].tag, cfg.calibration.seeds.front(), cfg.calibration.seq_len, hash, {}};
    for (std::uint64_t seed : cfg.calibration.seeds) {
      const std::uint64_t lang_seed = mix_seed(seed, i);
      for (std::size_t j = 0; j < cfg.calibration.budget; ++j)
        calib.sequences.push_back(
            sample_corpus(langs[i], cfg.calibration.seq_len, mix_seed(lang_seed, j)));
    }
    save_corpus(detail::calib_path(ctx, langs[i].tag).string(), calib);

    CorpusFile valid{langs[i].tag, cfg.validation.seed, cfg.validation.seq_len, hash, {}};
    const std::uint64_t lang_seed = mix_seed(cfg.validation.seed, i);
    for (std::size_t j = 0; j < cfg.validation.samples; ++j)
      valid.sequences.push_back(
          sample_corpus(langs[i], cfg.validation.seq_len, mix_seed(lang_seed, j)));
    save_corpus(detail::valid_path(ctx, langs[i].tag).string(), valid);
    ctx.log(LogLevel::kDebug, "wrote corpora for " + langs[i].tag);
  }
  nlohmann::json manifest = {{"config_hash", hash}, {"config", canonical_json(cfg)}};
  detail::write_text(ctx.out_dir / "manifest.json", manifest.dump(2) + "\n");
  ctx.log(LogLevel::kInfo, "gen: " + std::to_string(2 * langs.size()) + " corpus files");
}

/// Calibration set of `plan` for repeat `seed_index`, drawn from the
/// generated calibration corpora with equal shares.
inline CalibrationSet load_calibration_set(const ExperimentConfig& cfg, const RunContext& ctx,
                                           const std::vector<std::string>& plan,
                                           std::size_t seed_index) {
  const auto shares = calibration_shares(plan.size(), cfg.calibration.budget);
  CalibrationSet set;
  set.seq_len = cfg.calibration.seq_len;
  set.budget = cfg.calibration.budget;
  for (std::size_t t = 0; t < plan.size(); ++t) {
    const CorpusFile c = detail::load_checked_corpus(detail::calib_path(ctx, plan[t]), cfg);
    const std::size_t start = seed_index * cfg.calibration.budget;
    if (c.sequences.size() < start + shares[t] || c.len != cfg.calibration.seq_len)
      throw MissingArtifactError("calibration corpus for " + plan[t] + " is too short");
    for (std::size_t j = 0; j < shares[t]; ++j) {
      set.samples.push_back(c.sequences[start + j]);
      set.labels.push_back(plan[t]);
    }
  }
  return set;
}

/// Writes the base model and one pruned model + mask bundle per
/// (plan, repeat seed).
inline void cmd_prune(const ExperimentConfig& cfg, const RunContext& ctx) {
  detail::check_manifest(cfg, ctx);
  for (const auto& tag : cfg.languages.tags) detail::require_file(detail::calib_path(ctx, tag));
  detail::ensure_dir(ctx.out_dir / "models");
  const ToyModel base = init_model(cfg.model);
  save_model(detail::base_model_path(ctx).string(), base);
  const std::string hash = config_hash(cfg);

  struct Job {
    std::size_t plan;
    std::size_t seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < cfg.calibration.plans.size(); ++p)
    for (std::size_t k = 0; k < cfg.calibration.seeds.size(); ++k) jobs.push_back({p, k});

  detail::parallel_for(jobs.size(), ctx.jobs, [&](std::size_t i) {
    const auto& plan = cfg.calibration.plans[jobs[i].plan];
    const std::size_t k = jobs[i].seed_index;
    const CalibrationSet calib = load_calibration_set(cfg, ctx, plan, k);
    const MaskProvenance prov{plan, cfg.calibration.seeds[k], hash};
    const PrunedModel pruned =
        prune_model(base, calib, cfg.pruning.method, cfg.pruning.spec, prov, cfg.pruning.sparsegpt);
    for (const auto& nm : pruned.masks)
      if (!mask_is_exact(nm.mask)) throw NumericError("inexact sparsity in " + nm.name);
    const auto dir = detail::run_dir(ctx, plan_name(plan), k);
    detail::ensure_dir(dir);
    save_model((dir / "model.bin").string(), pruned.model);
    save_mask_bundle((dir / "masks.bin").string(), pruned.masks);
    ctx.log(LogLevel::kDebug, "pruned " + plan_name(plan) + " seed" + std::to_string(k));
  });
  ctx.log(LogLevel::kInfo, "prune: " + std::to_string(jobs.size()) + " pruned models");
}

namespace detail {

struct EvalCell {
  double perplexity = 0.0;
  std::vector<LayerMetric> pruning_error;
  SnrResult snr;
};

inline std::vector<HiddenTrace> traces_of(const ToyModel& model, const std::vector<Sequence>& seqs) {
  std::vector<HiddenTrace> out;
  for (const auto& s : seqs) out.push_back(forward(model, s).trace);
  return out;
}

inline EvalCell evaluate_cell(const ToyModel& model, const std::vector<Sequence>& seqs,
                              const HiddenTrace& full) {
  EvalCell cell;
  cell.perplexity = perplexity(model, seqs);
  const auto traces = traces_of(model, seqs);
  const HiddenTrace pruned = concat_traces(traces);
  cell.pruning_error = pruning_error(full, pruned);
  cell.snr = snr(full, pruned);
  return cell;
}

inline void append_cell_rows(std::vector<MetricRow>& rows, const std::string& run_id,
                             const EvalCell& cell) {
  rows.push_back({run_id, -1, "perplexity", cell.perplexity});
  for (const auto& m : cell.pruning_error)
    rows.push_back({run_id, static_cast<long>(m.layer), "pruning_error", m.value});
  rows.push_back({run_id, -1, "pruning_error", mean_value(cell.pruning_error)});
  for (const auto& m : cell.snr.layers)
    rows.push_back({run_id, static_cast<long>(m.layer), "snr_db", m.value});
  rows.push_back({run_id, -1, "snr_db", cell.snr.model_average});
}

}  // namespace detail

/// Perplexity, pruning error and SNR for every calibration plan × evaluation
/// language, plus the unpruned baseline row.
inline void cmd_eval(const ExperimentConfig& cfg, const RunContext& ctx) {
  using nlohmann::json;
  detail::check_manifest(cfg, ctx);
  const ToyModel base = detail::load_checked_model(detail::base_model_path(ctx));
  const std::string hash = config_hash(cfg);
  const auto& tags = cfg.languages.tags;
  const auto& plans = cfg.calibration.plans;
  const std::size_t n_seeds = cfg.calibration.seeds.size();

  std::vector<std::vector<Sequence>> valid;
  std::vector<HiddenTrace> full;
  for (const auto& tag : tags) {
    valid.push_back(detail::validation_inputs(cfg, ctx, tag));
    full.push_back(concat_traces(detail::traces_of(base, valid.back())));
  }
  for (const auto& plan : plans)
    for (std::size_t k = 0; k < n_seeds; ++k)
      detail::require_file(detail::run_dir(ctx, plan_name(plan), k) / "model.bin");

  // cells[p][k][e]
  std::vector<std::vector<std::vector<detail::EvalCell>>> cells(
      plans.size(), std::vector<std::vector<detail::EvalCell>>(n_seeds));
  detail::parallel_for(plans.size() * n_seeds, ctx.jobs, [&](std::size_t i) {
    const std::size_t p = i / n_seeds;
    const std::size_t k = i % n_seeds;
    const ToyModel model =
        detail::load_checked_model(detail::run_dir(ctx, plan_name(plans[p]), k) / "model.bin");
    for (std::size_t e = 0; e < tags.size(); ++e)
      cells[p][k].push_back(detail::evaluate_cell(model, valid[e], full[e]));
  });

  std::vector<MetricRow> rows;
  json report = {{"config_hash", hash},
                 {"evaluation_languages", tags},
                 {"calibration_plans", json::array()},
                 {"baseline", json::object()},
                 {"grid", json::object()}};
  for (std::size_t e = 0; e < tags.size(); ++e) {
    const detail::EvalCell cell = detail::evaluate_cell(base, valid[e], full[e]);
    detail::append_cell_rows(rows, "baseline/" + tags[e], cell);
    report["baseline"][tags[e]] = {{"perplexity", cell.perplexity},
                                   {"pruning_error", mean_value(cell.pruning_error)},
                                   {"snr_db", detail::number_or_null(cell.snr.model_average)}};
  }
  for (std::size_t p = 0; p < plans.size(); ++p) {
    const std::string name = plan_name(plans[p]);
    report["calibration_plans"].push_back(name);
    json row = json::object();
    for (std::size_t e = 0; e < tags.size(); ++e) {
      double ppl = 0.0, pe = 0.0, sn = 0.0;
      json per_seed = json::array();
      for (std::size_t k = 0; k < n_seeds; ++k) {
        const auto& cell = cells[p][k][e];
        detail::append_cell_rows(rows, name + "/seed" + std::to_string(k) + "/" + tags[e], cell);
        const double cell_pe = mean_value(cell.pruning_error);
        ppl += cell.perplexity;
        pe += cell_pe;
        sn += cell.snr.model_average;
        json layers_pe = json::array();
        for (const auto& m : cell.pruning_error) layers_pe.push_back(m.value);
        json layers_snr = json::array();
        for (const auto& m : cell.snr.layers) layers_snr.push_back(detail::number_or_null(m.value));
        per_seed.push_back({{"seed", cfg.calibration.seeds[k]},
                            {"perplexity", cell.perplexity},
                            {"pruning_error", cell_pe},
                            {"snr_db", detail::number_or_null(cell.snr.model_average)},
                            {"pruning_error_layers", layers_pe},
                            {"snr_db_layers", layers_snr}});
      }
      const double n = static_cast<double>(n_seeds);
      row[tags[e]] = {{"perplexity", ppl / n},
                      {"pruning_error", pe / n},
                      {"snr_db", detail::number_or_null(sn / n)},
                      {"runs", per_seed}};
    }
    report["grid"][name] = row;
  }

  detail::ensure_dir(ctx.out_dir / "reports");
  std::ostringstream csv;
  write_metrics_csv(csv, rows, hash);
  detail::write_text(ctx.out_dir / "reports" / "metrics.csv", csv.str());
  detail::write_text(ctx.out_dir / "reports" / "metrics.json", report.dump(2) + "\n");
  ctx.log(LogLevel::kInfo, "eval: " + std::to_string(rows.size()) + " metric rows");
}

namespace detail {

inline std::vector<NamedMask> load_checked_masks(const fs::path& p, const std::string& hash) {
  require_file(p);
  std::vector<NamedMask> masks;
  try {
    masks = load_mask_bundle(p.string());
  } catch (const FormatError& e) {
    throw MissingArtifactError("corrupt mask bundle " + p.string() + ": " + e.what());
  }
  for (const auto& m : masks)
    if (m.mask.provenance.config_hash != hash)
      throw MissingArtifactError("mask bundle " + p.string() + " belongs to a different config");
  return masks;
}

// embeddings[layer][sample]
inline std::vector<std::vector<Vector>> sentence_embeddings(const ToyModel& model,
                                                            const std::vector<Sequence>& seqs) {
  std::vector<std::vector<Vector>> out(model.config.n_layers);
  for (const auto& s : seqs) {
    const auto trace = forward(model, s).trace;
    for (std::size_t l = 0; l < out.size(); ++l) out[l].push_back(sentence_embedding(trace, l));
  }
  return out;
}

}  // namespace detail

/// LSAR Δ magnitudes, within/between-language mask IoU and LAPE group
/// statistics.
inline void cmd_analyze(const ExperimentConfig& cfg, const RunContext& ctx) {
  using nlohmann::json;
  detail::check_manifest(cfg, ctx);
  const std::string hash = config_hash(cfg);
  const ToyModel base = detail::load_checked_model(detail::base_model_path(ctx));
  const auto& tags = cfg.languages.tags;
  const auto& plans = cfg.calibration.plans;
  const std::size_t n_seeds = cfg.calibration.seeds.size();
  const std::size_t n_layers = base.config.n_layers;

  std::vector<std::vector<Sequence>> valid;
  for (const auto& tag : tags) valid.push_back(detail::validation_inputs(cfg, ctx, tag));
  std::vector<std::vector<ToyModel>> pruned(plans.size());
  for (std::size_t p = 0; p < plans.size(); ++p)
    for (std::size_t k = 0; k < n_seeds; ++k)
      pruned[p].push_back(
          detail::load_checked_model(detail::run_dir(ctx, plan_name(plans[p]), k) / "model.bin"));

  json report = {{"config_hash", hash}, {"warnings", json::array()}};
  auto warn = [&](const std::string& msg) {
    report["warnings"].push_back(msg);
    ctx.log(LogLevel::kWarn, msg);
  };

  // Subspace level.
  if (cfg.analysis.lsar && tags.size() >= 2) {
    const std::size_t rank = cfg.analysis.lsar_rank.value_or(tags.size() - 1);
    std::vector<std::vector<std::vector<Vector>>> full_emb;  // [lang][layer][sample]
    for (const auto& v : valid) full_emb.push_back(detail::sentence_embeddings(base, v));
    std::vector<LsarBasis> bases;
    for (std::size_t l = 0; l < n_layers; ++l) {
      Matrix m(base.config.d_model, tags.size());
      for (std::size_t e = 0; e < tags.size(); ++e) {
        const auto& samples = full_emb[e][l];
        for (const auto& s : samples)
          for (std::size_t i = 0; i < s.size(); ++i)
            m(i, e) += s[i] / static_cast<double>(samples.size());
      }
      bases.push_back(lsar_fit(m, rank));
    }
    json deltas = json::object();
    for (std::size_t p = 0; p < plans.size(); ++p) {
      // [component][lang][layer], averaged over seeds
      std::vector<std::vector<std::vector<double>>> acc(
          2, std::vector<std::vector<double>>(tags.size(), std::vector<double>(n_layers, 0.0)));
      for (std::size_t k = 0; k < n_seeds; ++k)
        for (std::size_t e = 0; e < tags.size(); ++e) {
          const auto emb = detail::sentence_embeddings(pruned[p][k], valid[e]);
          for (std::size_t l = 0; l < n_layers; ++l) {
            acc[0][e][l] += delta_magnitude(full_emb[e][l], emb[l], bases[l], LsarComponent::kAgnostic) /
                            static_cast<double>(n_seeds);
            acc[1][e][l] += delta_magnitude(full_emb[e][l], emb[l], bases[l], LsarComponent::kSpecific) /
                            static_cast<double>(n_seeds);
          }
        }
      json entry = {{"agnostic", json::object()}, {"specific", json::object()}};
      for (std::size_t e = 0; e < tags.size(); ++e) {
        entry["agnostic"][tags[e]] = acc[0][e];
        entry["specific"][tags[e]] = acc[1][e];
      }
      deltas[plan_name(plans[p])] = entry;
    }
    report["lsar"] = {{"rank", rank}, {"layers", n_layers}, {"delta", deltas}};
  } else if (cfg.analysis.lsar) {
    warn("lsar skipped: needs at least 2 languages");
  }

  // Matrix level: masks of monolingual plans.
  if (cfg.analysis.iou) {
    if (n_seeds < 2)
      warn("fewer than 2 calibration seeds: IoU uses single-seed mask sets instead of intersections");
    std::vector<std::string> mono_tags;
    std::vector<std::vector<std::vector<NamedMask>>> mono_masks;  // [lang][seed][matrix]
    for (const auto& plan : plans) {
      if (plan.size() != 1) continue;
      mono_tags.push_back(plan[0]);
      std::vector<std::vector<NamedMask>> per_seed;
      for (std::size_t k = 0; k < n_seeds; ++k)
        per_seed.push_back(
            detail::load_checked_masks(detail::run_dir(ctx, plan_name(plan), k) / "masks.bin", hash));
      mono_masks.push_back(std::move(per_seed));
    }
    // sets[lang][matrix]
    std::vector<std::vector<MaskSet>> sets(mono_tags.size());
    for (std::size_t t = 0; t < mono_tags.size(); ++t) {
      const std::size_t n_matrices = mono_masks[t][0].size();
      for (std::size_t i = 0; i < n_matrices; ++i) {
        std::vector<IndexSet> per_seed;
        for (std::size_t k = 0; k < n_seeds; ++k)
          per_seed.push_back(IndexSet::pruned_of(mono_masks[t][k][i].mask));
        sets[t].push_back(MaskSet::from(std::move(per_seed)));
      }
    }
    auto per_component = [&](auto&& value_at) {
      json obj = json::object();
      for (std::size_t c = 0; c < kAllLinears.size(); ++c) {
        json arr = json::array();
        for (std::size_t l = 0; l < n_layers; ++l) arr.push_back(value_at(l * kAllLinears.size() + c));
        obj[std::string(linear_name(kAllLinears[c]))] = arr;
      }
      return obj;
    };
    json within = json::object();
    for (std::size_t t = 0; t < mono_tags.size(); ++t)
      within[mono_tags[t]] = per_component([&](std::size_t i) {
        const auto& s = sets[t][i];
        return s.union_set.empty() ? json(nullptr) : json(s.stability());
      });
    json between = json::object();
    for (std::size_t a = 0; a < mono_tags.size(); ++a)
      for (std::size_t b = a + 1; b < mono_tags.size(); ++b)
        between[mono_tags[a] + "|" + mono_tags[b]] = per_component([&](std::size_t i) {
          const auto& x = sets[a][i].intersection;
          const auto& y = sets[b][i].intersection;
          return (x | y).empty() ? json(nullptr) : json(mask_iou(x, y));
        });
    if (mono_tags.empty()) warn("iou: no monolingual calibration plans");
    report["iou"] = {{"within", within}, {"between", between}};
  }

  // Neuron level.
  if (cfg.analysis.lape && tags.size() >= 2) {
    auto table_of = [&](const ToyModel& model) {
      std::vector<ActivationProbabilities> probs;
      for (std::size_t e = 0; e < tags.size(); ++e)
        probs.push_back(activation_probability(model, valid[e], tags[e], cfg.analysis.signal));
      return build_lape_table(probs);
    };
    const LapeTable full_table = table_of(base);
    const LapeGroups groups = lape_groups(full_table, cfg.analysis.lape_group_fraction);
    const std::size_t d_ffn = base.config.d_ffn;
    const auto full_stats = group_statistics(groups, full_table, d_ffn);
    // pruned_stats[p][k][g]
    std::vector<std::vector<std::vector<BoxStats>>> pruned_stats(plans.size());
    for (std::size_t p = 0; p < plans.size(); ++p)
      for (std::size_t k = 0; k < n_seeds; ++k)
        pruned_stats[p].push_back(group_statistics(groups, table_of(pruned[p][k]), d_ffn));
    json gj = json::array();
    for (std::size_t g = 0; g < groups.groups.size(); ++g) {
      json per_plan = json::object();
      for (std::size_t p = 0; p < plans.size(); ++p) {
        json per_seed = json::object();
        for (std::size_t k = 0; k < n_seeds; ++k)
          per_seed["seed" + std::to_string(k)] = detail::box_json(pruned_stats[p][k][g]);
        per_plan[plan_name(plans[p])] = per_seed;
      }
      gj.push_back({{"index", g},
                    {"size", groups.groups[g].size()},
                    {"full", detail::box_json(full_stats[g])},
                    {"pruned", per_plan}});
    }
    json never = json::array();
    for (const auto& id : groups.never_active) never.push_back({{"layer", id.layer}, {"index", id.index}});
    std::size_t scored = 0;
    for (const auto& g : groups.groups) scored += g.size();
    report["lape"] = {{"signal", cfg.analysis.signal == ActivationSignal::kUp ? "up" : "gated"},
                      {"group_fraction", cfg.analysis.lape_group_fraction},
                      {"group_size", groups.group_size},
                      {"scored_neurons", scored},
                      {"groups", gj}};
    report["never_active"] = never;
    if (!never.empty()) warn(std::to_string(never.size()) + " never-active neurons excluded from LAPE");
  } else if (cfg.analysis.lape) {
    warn("lape skipped: needs at least 2 languages");
  }

  detail::ensure_dir(ctx.out_dir / "reports");
  detail::write_text(ctx.out_dir / "reports" / "analysis.json", report.dump(2) + "\n");
  ctx.log(LogLevel::kInfo, "analyze: report written");
}

inline void cmd_all(const ExperimentConfig& cfg, const RunContext& ctx) {
  cmd_gen(cfg, ctx);
  cmd_prune(cfg, ctx);
  cmd_eval(cfg, ctx);
  cmd_analyze(cfg, ctx);
}

}  // namespace prunelab
