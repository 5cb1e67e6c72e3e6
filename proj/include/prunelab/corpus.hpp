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

// Synthetic languages (first-order Markov sources over a shared alphabet)
// and equal-share calibration set construction.
//
// A language emits symbols 0..V-1. The model sees them shifted by one with
// BOS (id 0) in front; see to_model_input().

#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "prunelab/binary_io.hpp"
#include "prunelab/numerics.hpp"
#include "prunelab/random.hpp"
#include "prunelab/toymodel.hpp"

namespace prunelab {

struct LanguageSpec {
  std::string tag;
  Matrix transition;  // row-stochastic, vocab × vocab
  Vector initial;     // distribution of the first symbol
  std::uint64_t seed = 0;

  std::size_t vocab_size() const { return initial.size(); }
};

/// Rows of the transition matrix are Dirichlet(concentration) draws.
/// Small concentration gives peaky, mutually distinct languages.
inline LanguageSpec make_language(std::size_t vocab_size, double concentration, std::uint64_t seed,
                                  std::string tag = "L") {
  if (vocab_size < 2) throw ArgumentError("make_language: vocab_size must be >= 2");
  if (!(concentration > 0.0) || !std::isfinite(concentration))
    throw ArgumentError("make_language: concentration must be > 0");
  Rng rng(seed);
  LanguageSpec lang;
  lang.tag = std::move(tag);
  lang.seed = seed;
  lang.transition = Matrix(vocab_size, vocab_size);
  for (std::size_t r = 0; r < vocab_size; ++r) {
    auto row = lang.transition.row(r);
    double total = 0.0;
    for (double& p : row) {
      p = rng.gamma(concentration);
      total += p;
    }
    for (double& p : row) p /= total;
  }
  lang.initial.assign(vocab_size, 1.0 / static_cast<double>(vocab_size));
  return lang;
}

/// Markov-chain sample of n_tokens symbols.
inline Sequence sample_corpus(const LanguageSpec& lang, std::size_t n_tokens, std::uint64_t seed) {
  if (n_tokens < 1) throw ArgumentError("sample_corpus: n_tokens must be >= 1");
  Rng rng(seed);
  Sequence out;
  out.reserve(n_tokens);
  std::size_t state = rng.categorical(lang.initial);
  out.push_back(static_cast<Token>(state));
  while (out.size() < n_tokens) {
    state = rng.categorical(lang.transition.row(state));
    out.push_back(static_cast<Token>(state));
  }
  return out;
}

/// BOS followed by the symbols shifted past the special id.
inline Sequence to_model_input(const Sequence& symbols) {
  Sequence out;
  out.reserve(symbols.size() + 1);
  out.push_back(kBosToken);
  for (Token s : symbols) out.push_back(s + 1);
  return out;
}

struct CalibrationSet {
  std::vector<Sequence> samples;  // symbols, each seq_len long
  std::vector<std::string> labels;
  std::size_t seq_len = 0;
  std::size_t budget = 0;
};

/// Equal shares of `budget` across n languages; the remainder goes to the
/// earliest languages in declared order.
inline std::vector<std::size_t> calibration_shares(std::size_t n_langs, std::size_t budget) {
  if (n_langs == 0) throw ArgumentError("calibration_shares: empty language list");
  if (budget < n_langs) throw ArgumentError("calibration_shares: budget smaller than language count");
  std::vector<std::size_t> shares(n_langs, budget / n_langs);
  for (std::size_t i = 0; i < budget % n_langs; ++i) ++shares[i];
  return shares;
}

inline CalibrationSet build_calibration_set(const std::vector<LanguageSpec>& langs,
                                            std::size_t budget, std::size_t seq_len,
                                            std::uint64_t seed) {
  if (langs.empty()) throw ArgumentError("build_calibration_set: empty language list");
  const auto shares = calibration_shares(langs.size(), budget);
  CalibrationSet set;
  set.seq_len = seq_len;
  set.budget = budget;
  for (std::size_t i = 0; i < langs.size(); ++i) {
    const std::uint64_t lang_seed = mix_seed(seed, i);
    for (std::size_t j = 0; j < shares[i]; ++j) {
      set.samples.push_back(sample_corpus(langs[i], seq_len, mix_seed(lang_seed, j)));
      set.labels.push_back(langs[i].tag);
    }
  }
  return set;
}

// Corpus file: header `#lang=<tag> seed=<n> len=<n>` (optionally followed by
// ` config=<hash>`), then one sequence per line as space-separated ids.

struct CorpusFile {
  std::string tag;
  std::uint64_t seed = 0;
  std::size_t len = 0;
  std::optional<std::string> config_hash;
  std::vector<Sequence> sequences;
};

inline void write_corpus(std::ostream& os, const CorpusFile& corpus) {
  os << "#lang=" << corpus.tag << " seed=" << corpus.seed << " len=" << corpus.len;
  if (corpus.config_hash) os << " config=" << *corpus.config_hash;
  os << '\n';
  for (const auto& seq : corpus.sequences) {
    if (seq.size() != corpus.len) throw ArgumentError("write_corpus: sequence length != len");
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) os << ' ';
      os << seq[i];
    }
    os << '\n';
  }
}

inline CorpusFile read_corpus(std::istream& is) {
  CorpusFile out;
  std::string line;
  if (!std::getline(is, line) || line.rfind("#lang=", 0) != 0)
    throw FormatError("corpus file: missing '#lang=' header");
  std::istringstream hs(line.substr(1));
  std::string field;
  bool have_seed = false;
  bool have_len = false;
  while (hs >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw FormatError("corpus file: bad header field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    try {
      if (key == "lang") {
        out.tag = value;
      } else if (key == "seed") {
        out.seed = std::stoull(value);
        have_seed = true;
      } else if (key == "len") {
        out.len = std::stoull(value);
        have_len = true;
      } else if (key == "config") {
        out.config_hash = value;
      }
    } catch (const std::logic_error&) {
      throw FormatError("corpus file: bad header value '" + field + "'");
    }
  }
  if (out.tag.empty() || !have_seed || !have_len) throw FormatError("corpus file: incomplete header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Sequence seq;
    long long id;
    while (ls >> id) {
      if (id < 0 || id > static_cast<long long>(UINT32_MAX)) throw FormatError("corpus file: bad id");
      seq.push_back(static_cast<Token>(id));
    }
    if (!ls.eof()) throw FormatError("corpus file: non-numeric token");
    if (seq.size() != out.len)
      throw FormatError("corpus file: line has " + std::to_string(seq.size()) + " ids, expected " +
                        std::to_string(out.len));
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

inline void save_corpus(const std::string& path, const CorpusFile& corpus) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + path);
  write_corpus(os, corpus);
  if (!os) throw FormatError("write failed: " + path);
}

inline CorpusFile load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  return read_corpus(is);
}

}  // namespace prunelab
