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

// Internal analyses of pruned models at three levels:
//   subspace  - low-rank language subspace (LSAR) and Δ magnitudes,
//   matrix    - IoU of pruned-index sets across seeds and languages,
//   neuron    - language activation probability entropy (LAPE).

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prunelab/numerics.hpp"
#include "prunelab/pruner.hpp"
#include "prunelab/toymodel.hpp"

namespace prunelab {

// ---------------------------------------------------------------------------
// LSAR
// ---------------------------------------------------------------------------

struct LsarBasis {
  Matrix m_s;    // d × r, orthonormal columns spanning the language-specific subspace
  Vector mu;     // d, shared component, orthogonal to span(m_s)
  Matrix gamma;  // L × r, per-language coordinates (scaled by singular values)
  std::size_t rank = 0;
};

/// Fits the language subspace of a d × L matrix of per-language mean
/// embeddings.
///
/// Step one centers M on its column mean μ' and keeps the top-r SVD,
/// giving M' = μ'1ᵀ + U·diag(s)·Vᵀ. Step two picks the shared vector
/// μ = x/‖x‖² with x = (M'ᵀ)⁺·1, so that every column of M' − μ1ᵀ is
/// orthogonal to μ, and takes the top-r SVD of that re-centered matrix.
inline LsarBasis lsar_fit(const Matrix& mean_embeddings, std::size_t r) {
  const Matrix& m = mean_embeddings;
  const std::size_t d = m.rows();
  const std::size_t langs = m.cols();
  if (langs < 2) throw ArgumentError("lsar_fit: need at least 2 languages");
  if (r < 1 || r > std::min(d, langs - 1))
    throw ArgumentError("lsar_fit: rank " + std::to_string(r) + " outside [1, " +
                        std::to_string(std::min(d, langs - 1)) + "]");
  const double scale = frobenius_norm(m);
  const double degenerate_tol = 1e-10 * scale;

  Vector center(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t l = 0; l < langs; ++l) center[i] += m(i, l);
    center[i] /= static_cast<double>(langs);
  }
  Matrix centered = m;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t l = 0; l < langs; ++l) centered(i, l) -= center[i];

  const SvdResult first = svd_top_r(centered, r);
  if (!(first.s[r - 1] > degenerate_tol))
    throw NumericError("lsar_fit: centered embeddings have rank < " + std::to_string(r));

  Matrix approx = reconstruct(first);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t l = 0; l < langs; ++l) approx(i, l) += center[i];

  const Matrix pinv_t = pseudo_inverse(transpose(approx));  // d × L
  Vector x(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t l = 0; l < langs; ++l) x[i] += pinv_t(i, l);
  const double xx = dot(x, x);
  if (!(xx > 0.0)) throw NumericError("lsar_fit: shared component vanished");

  LsarBasis basis;
  basis.rank = r;
  basis.mu.resize(d);
  for (std::size_t i = 0; i < d; ++i) basis.mu[i] = x[i] / xx;

  Matrix recentered = approx;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t l = 0; l < langs; ++l) recentered(i, l) -= basis.mu[i];
  const SvdResult second = svd_top_r(recentered, r);
  if (!(second.s[r - 1] > degenerate_tol))
    throw NumericError("lsar_fit: re-centered embeddings have rank < " + std::to_string(r));

  basis.m_s = second.u;
  basis.gamma = second.v;
  for (std::size_t l = 0; l < langs; ++l)
    for (std::size_t c = 0; c < r; ++c) basis.gamma(l, c) *= second.s[c];
  return basis;
}

struct LsarSplit {
  Vector agnostic;
  Vector specific;
};

/// specific = M_s·M_sᵀ·e, agnostic = e − specific.
inline LsarSplit lsar_split(std::span<const double> e, const LsarBasis& basis) {
  if (e.size() != basis.m_s.rows())
    throw ArgumentError("lsar_split: embedding has " + std::to_string(e.size()) +
                        " dims, basis has " + std::to_string(basis.m_s.rows()));
  const std::size_t d = e.size();
  const std::size_t r = basis.m_s.cols();
  Vector coords(r, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t c = 0; c < r; ++c) coords[c] += basis.m_s(i, c) * e[i];
  LsarSplit out{Vector(d), Vector(d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t c = 0; c < r; ++c) out.specific[i] += basis.m_s(i, c) * coords[c];
    out.agnostic[i] = e[i] - out.specific[i];
  }
  return out;
}

enum class LsarComponent : std::uint8_t { kAgnostic, kSpecific };

/// Mean over samples of ‖component(full_i) − component(pruned_i)‖₂.
inline double delta_magnitude(const std::vector<Vector>& full, const std::vector<Vector>& pruned,
                              const LsarBasis& basis, LsarComponent component) {
  if (full.size() != pruned.size())
    throw ArgumentError("delta_magnitude: " + std::to_string(full.size()) + " full vs " +
                        std::to_string(pruned.size()) + " pruned samples");
  if (full.empty()) throw ArgumentError("delta_magnitude: no samples");
  double total = 0.0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    const LsarSplit a = lsar_split(full[i], basis);
    const LsarSplit b = lsar_split(pruned[i], basis);
    const Vector& x = component == LsarComponent::kAgnostic ? a.agnostic : a.specific;
    const Vector& y = component == LsarComponent::kAgnostic ? b.agnostic : b.specific;
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += (x[j] - y[j]) * (x[j] - y[j]);
    total += std::sqrt(s);
  }
  return total / static_cast<double>(full.size());
}

// ---------------------------------------------------------------------------
// Mask IoU
// ---------------------------------------------------------------------------

/// Set of flat (row-major) weight indices over a fixed matrix shape.
class IndexSet {
 public:
  IndexSet() = default;
  IndexSet(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), words_((rows * cols + 63) / 64, 0) {}

  /// The pruned (keep == false) positions of a mask.
  static IndexSet pruned_of(const PruningMask& mask) {
    IndexSet s(mask.rows(), mask.cols());
    for (std::size_t i = 0; i < mask.keep.size(); ++i)
      if (!mask.keep.at(i)) s.insert(i);
    return s;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool same_shape(const IndexSet& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void insert(std::size_t flat) { words_[flat / 64] |= std::uint64_t{1} << (flat % 64); }
  bool contains(std::size_t flat) const { return (words_[flat / 64] >> (flat % 64)) & 1u; }

  std::size_t size() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  bool empty() const { return size() == 0; }

  IndexSet& operator&=(const IndexSet& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
    return *this;
  }
  IndexSet& operator|=(const IndexSet& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
    return *this;
  }
  friend IndexSet operator&(IndexSet a, const IndexSet& b) { return a &= b; }
  friend IndexSet operator|(IndexSet a, const IndexSet& b) { return a |= b; }

  bool subset_of(const IndexSet& o) const {
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (words_[i] & ~o.words_[i]) return false;
    return true;
  }

  bool operator==(const IndexSet&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint64_t> words_;
};

struct MaskIntersection {
  IndexSet intersection;
  IndexSet union_set;
};

inline MaskIntersection mask_intersection(std::span<const IndexSet> masks) {
  if (masks.empty()) throw ArgumentError("mask_intersection: no masks");
  MaskIntersection out{masks.front(), masks.front()};
  for (const auto& m : masks.subspan(1)) {
    if (!m.same_shape(masks.front())) throw ArgumentError("mask_intersection: shape mismatch");
    out.intersection &= m;
    out.union_set |= m;
  }
  return out;
}

/// |a ∩ b| / |a ∪ b|.
inline double mask_iou(const IndexSet& a, const IndexSet& b) {
  if (!a.same_shape(b)) throw ArgumentError("mask_iou: shape mismatch");
  const std::size_t uni = (a | b).size();
  if (uni == 0) throw ArgumentError("mask_iou: both sets empty, IoU undefined");
  return static_cast<double>((a & b).size()) / static_cast<double>(uni);
}

/// Pruned-index sets of one matrix across repeat seeds of one calibration
/// language, with their intersection and union.
struct MaskSet {
  std::vector<IndexSet> per_seed;
  IndexSet intersection;
  IndexSet union_set;

  static MaskSet from(std::vector<IndexSet> per_seed) {
    auto iu = mask_intersection(per_seed);
    return {std::move(per_seed), std::move(iu.intersection), std::move(iu.union_set)};
  }

  /// Share of all pruned indices that every seed agrees on.
  double stability() const {
    const std::size_t u = union_set.size();
    return u == 0 ? 1.0 : static_cast<double>(intersection.size()) / static_cast<double>(u);
  }
};

// ---------------------------------------------------------------------------
// LAPE
// ---------------------------------------------------------------------------

/// Activation probability of every FFN neuron (n_layers × d_ffn) for one
/// language: the fraction of token positions at which its activation event
/// fires.
struct ActivationProbabilities {
  std::string language;
  Matrix p;
};

inline ActivationProbabilities activation_probability(const ToyModel& model,
                                                      const std::vector<Sequence>& corpus,
                                                      const std::string& language,
                                                      ActivationSignal signal = ActivationSignal::kUp) {
  if (corpus.empty()) throw ArgumentError("activation_probability: empty corpus");
  const auto& cfg = model.config;
  Matrix counts(cfg.n_layers, cfg.d_ffn);
  std::size_t positions = 0;
  ForwardOptions opts{.capture_hidden = false, .capture_activations = true, .signal = signal};
  for (const auto& seq : corpus) {
    const auto fr = forward(model, seq, opts);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const BoolMatrix& bits = fr.trace.active[l];
      for (std::size_t t = 0; t < bits.rows(); ++t)
        for (std::size_t j = 0; j < bits.cols(); ++j) counts(l, j) += bits(t, j) ? 1.0 : 0.0;
    }
    positions += seq.size();
  }
  for (double& v : counts.data()) v /= static_cast<double>(positions);
  return {language, std::move(counts)};
}

/// Entropy −Σ p̃ ln p̃ of the L1-normalized per-language probabilities, with
/// 0·ln 0 = 0. Low values mean language-specific neurons. Returns nullopt for
/// a never-active neuron (all p = 0).
inline std::optional<double> lape(std::span<const double> probabilities) {
  if (probabilities.size() < 2) throw ArgumentError("lape: need at least 2 languages");
  double total = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("lape: probability outside [0, 1]");
    total += p;
  }
  if (total == 0.0) return std::nullopt;
  double h = 0.0;
  for (double p : probabilities) {
    if (p == 0.0) continue;
    const double q = p / total;
    h -= q * std::log(q);
  }
  return std::max(0.0, h);
}

struct NeuronId {
  std::size_t layer = 0;
  std::size_t index = 0;
  bool operator==(const NeuronId&) const = default;
};

struct LapeEntry {
  NeuronId neuron;
  Vector probabilities;          // per language, declared order
  std::optional<double> score;   // empty for never-active neurons
};

struct LapeTable {
  std::vector<std::string> languages;
  std::vector<LapeEntry> entries;  // layer-major

  const LapeEntry& at(const NeuronId& id, std::size_t d_ffn) const {
    return entries.at(id.layer * d_ffn + id.index);
  }
};

inline LapeTable build_lape_table(const std::vector<ActivationProbabilities>& per_language) {
  if (per_language.size() < 2) throw ArgumentError("build_lape_table: need at least 2 languages");
  const Matrix& first = per_language.front().p;
  LapeTable table;
  for (const auto& a : per_language) {
    if (a.p.rows() != first.rows() || a.p.cols() != first.cols())
      throw ArgumentError("build_lape_table: shape mismatch");
    table.languages.push_back(a.language);
  }
  Vector probs(per_language.size());
  for (std::size_t l = 0; l < first.rows(); ++l)
    for (std::size_t j = 0; j < first.cols(); ++j) {
      for (std::size_t k = 0; k < per_language.size(); ++k) probs[k] = per_language[k].p(l, j);
      table.entries.push_back({{l, j}, probs, lape(probs)});
    }
  return table;
}

struct LapeGroups {
  std::size_t group_size = 0;
  std::vector<std::vector<NeuronId>> groups;  // ascending LAPE
  std::vector<NeuronId> never_active;
};

/// Sorts scored neurons by ascending LAPE (ties by layer, then index) and
/// cuts them into consecutive groups of ⌈fraction·n⌉.
inline LapeGroups lape_groups(const LapeTable& table, double group_fraction) {
  if (!(group_fraction > 0.0 && group_fraction <= 1.0))
    throw ArgumentError("lape_groups: group_fraction must be in (0, 1]");
  if (table.entries.empty()) throw ArgumentError("lape_groups: empty table");
  LapeGroups out;
  std::vector<const LapeEntry*> scored;
  for (const auto& e : table.entries) {
    if (e.score)
      scored.push_back(&e);
    else
      out.never_active.push_back(e.neuron);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const LapeEntry* a, const LapeEntry* b) {
    if (*a->score != *b->score) return *a->score < *b->score;
    if (a->neuron.layer != b->neuron.layer) return a->neuron.layer < b->neuron.layer;
    return a->neuron.index < b->neuron.index;
  });
  if (scored.empty()) return out;
  out.group_size = static_cast<std::size_t>(
      std::ceil(group_fraction * static_cast<double>(scored.size()) - 1e-9));
  out.group_size = std::max<std::size_t>(out.group_size, 1);
  for (std::size_t i = 0; i < scored.size(); i += out.group_size) {
    std::vector<NeuronId> g;
    for (std::size_t k = i; k < std::min(i + out.group_size, scored.size()); ++k)
      g.push_back(scored[k]->neuron);
    out.groups.push_back(std::move(g));
  }
  return out;
}

struct BoxStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

/// Five-number summary with linearly interpolated quartiles.
inline BoxStats box_stats(std::vector<double> values) {
  BoxStats b;
  b.count = values.size();
  if (values.empty()) return b;
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  b.min = values.front();
  b.q1 = quantile(0.25);
  b.median = quantile(0.5);
  b.q3 = quantile(0.75);
  b.max = values.back();
  return b;
}

/// LAPE statistics of each group, read from `table` (which may come from a
/// pruned model). Neurons never active in `table` are skipped.
inline std::vector<BoxStats> group_statistics(const LapeGroups& groups, const LapeTable& table,
                                              std::size_t d_ffn) {
  std::vector<BoxStats> out;
  for (const auto& g : groups.groups) {
    std::vector<double> vals;
    for (const auto& id : g)
      if (const auto& e = table.at(id, d_ffn); e.score) vals.push_back(*e.score);
    out.push_back(box_stats(std::move(vals)));
  }
  return out;
}

}  // namespace prunelab
