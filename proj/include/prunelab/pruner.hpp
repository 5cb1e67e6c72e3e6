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

// Post-training pruning: magnitude, Wanda and SparseGPT under unstructured
// or N:M sparsity.
//
// All functions here take weights in pruning orientation, out_features ×
// in_features, so that a "row" is one output neuron and column j is fed by
// input feature j. Calibration inputs X are in_features × n_tokens.
// ToyModel stores x·W (in × out) matrices; prune_model() handles the
// transposition.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "prunelab/binary_io.hpp"
#include "prunelab/corpus.hpp"
#include "prunelab/numerics.hpp"
#include "prunelab/toymodel.hpp"

namespace prunelab {

enum class SparsityKind : std::uint8_t { kUnstructured = 0, kNM = 1 };
enum class ComparisonGroup : std::uint8_t { kPerRow = 0, kWholeMatrix = 1 };

struct SparsitySpec {
  SparsityKind kind = SparsityKind::kUnstructured;
  double ratio = 0.5;  // unstructured only
  std::uint32_t n = 2;  // N:M only: kept weights per group
  std::uint32_t m = 4;  // N:M only: group width
  ComparisonGroup group = ComparisonGroup::kPerRow;

  static SparsitySpec unstructured(double ratio, ComparisonGroup group = ComparisonGroup::kPerRow) {
    SparsitySpec s;
    s.kind = SparsityKind::kUnstructured;
    s.ratio = ratio;
    s.group = group;
    s.validate();
    return s;
  }
  static SparsitySpec n_of_m(std::uint32_t n, std::uint32_t m) {
    SparsitySpec s;
    s.kind = SparsityKind::kNM;
    s.ratio = 0.0;
    s.n = n;
    s.m = m;
    s.validate();
    return s;
  }

  void validate() const {
    if (kind == SparsityKind::kUnstructured) {
      if (!(ratio >= 0.0 && ratio <= 1.0)) throw ArgumentError("SparsitySpec: ratio outside [0, 1]");
    } else if (m < 1 || n >= m) {
      throw ArgumentError("SparsitySpec: N:M requires N < M");
    }
  }

  void validate_for(std::size_t /*rows*/, std::size_t cols) const {
    validate();
    if (kind == SparsityKind::kNM && cols % m != 0)
      throw ArgumentError("SparsitySpec: M=" + std::to_string(m) + " does not divide column count " +
                          std::to_string(cols));
  }

  std::string describe() const {
    if (kind == SparsityKind::kNM) return std::to_string(n) + ":" + std::to_string(m);
    std::ostringstream os;
    os << "unstructured(" << ratio << ","
       << (group == ComparisonGroup::kPerRow ? "row" : "matrix") << ")";
    return os.str();
  }

  bool operator==(const SparsitySpec&) const = default;
};

/// Number of entries to drop from a group of `group_size`: floor(ratio·size).
/// The guard absorbs binary rounding, e.g. 0.29·100 = 28.999999999999996.
inline std::size_t pruned_count(double ratio, std::size_t group_size) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(group_size) + 1e-9));
}

struct MaskProvenance {
  std::vector<std::string> languages;
  std::uint64_t seed = 0;
  std::string config_hash;

  bool operator==(const MaskProvenance&) const = default;
};

struct PruningMask {
  BoolMatrix keep;  // true = weight survives
  SparsitySpec spec;
  MaskProvenance provenance;

  std::size_t rows() const { return keep.rows(); }
  std::size_t cols() const { return keep.cols(); }
  std::size_t dropped() const { return keep.size() - keep.count(); }

  bool operator==(const PruningMask&) const = default;
};

/// True when the mask drops exactly the number of weights its spec demands
/// in every comparison group.
inline bool mask_is_exact(const PruningMask& mask) {
  const auto& s = mask.spec;
  const std::size_t rows = mask.rows();
  const std::size_t cols = mask.cols();
  if (s.kind == SparsityKind::kNM) {
    if (cols % s.m != 0) return false;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t g = 0; g < cols; g += s.m) {
        std::size_t zeros = 0;
        for (std::size_t c = g; c < g + s.m; ++c) zeros += mask.keep(r, c) ? 0 : 1;
        if (zeros != s.m - s.n) return false;
      }
    return true;
  }
  if (s.group == ComparisonGroup::kWholeMatrix) return mask.dropped() == pruned_count(s.ratio, rows * cols);
  const std::size_t want = pruned_count(s.ratio, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t zeros = 0;
    for (std::size_t c = 0; c < cols; ++c) zeros += mask.keep(r, c) ? 0 : 1;
    if (zeros != want) return false;
  }
  return true;
}

namespace detail {

// Drops the lowest-scoring entries of `scores` according to `spec`.
// Ties: lower column index dropped first, then lower row index.
inline BoolMatrix select_keep(const Matrix& scores, const SparsitySpec& spec) {
  const std::size_t rows = scores.rows();
  const std::size_t cols = scores.cols();
  spec.validate_for(rows, cols);
  BoolMatrix keep(rows, cols, true);
  std::vector<std::size_t> idx;

  if (spec.kind == SparsityKind::kNM) {
    const std::size_t drop = spec.m - spec.n;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t g = 0; g < cols; g += spec.m) {
        idx.resize(spec.m);
        std::iota(idx.begin(), idx.end(), g);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return scores(r, a) < scores(r, b); });
        for (std::size_t k = 0; k < drop; ++k) keep.set(r, idx[k], false);
      }
    return keep;
  }

  if (spec.group == ComparisonGroup::kPerRow) {
    const std::size_t drop = pruned_count(spec.ratio, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      idx.resize(cols);
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return scores(r, a) < scores(r, b); });
      for (std::size_t k = 0; k < drop; ++k) keep.set(r, idx[k], false);
    }
    return keep;
  }

  // Whole matrix: enumerate column-major so the stable sort breaks ties by
  // column, then row.
  const std::size_t drop = pruned_count(spec.ratio, rows * cols);
  idx.resize(rows * cols);
  for (std::size_t c = 0, k = 0; c < cols; ++c)
    for (std::size_t r = 0; r < rows; ++r) idx[k++] = r * cols + c;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores.data()[a] < scores.data()[b];
  });
  for (std::size_t k = 0; k < drop; ++k) keep.set_flat(idx[k], false);
  return keep;
}

}  // namespace detail

inline PruningMask prune_magnitude(const Matrix& w, const SparsitySpec& spec) {
  Matrix scores(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.size(); ++i) scores.data()[i] = std::abs(w.data()[i]);
  return {detail::select_keep(scores, spec), spec, {}};
}

/// Euclidean norm of every row of x (one per input feature).
inline Vector feature_norms(const Matrix& x) {
  Vector norms(x.rows());
  for (std::size_t j = 0; j < x.rows(); ++j) norms[j] = norm2(x.row(j));
  return norms;
}

/// Wanda: importance |w_ij|·‖x_j‖₂.
inline PruningMask prune_wanda(const Matrix& w, const Matrix& x, const SparsitySpec& spec) {
  if (x.rows() != w.cols())
    throw ArgumentError("prune_wanda: x has " + std::to_string(x.rows()) + " features, w has " +
                        std::to_string(w.cols()) + " inputs");
  const Vector norms = feature_norms(x);
  Matrix scores(w.rows(), w.cols());
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) scores(r, c) = std::abs(w(r, c)) * norms[c];
  return {detail::select_keep(scores, spec), spec, {}};
}

struct SparseGptOptions {
  double damping_frac = 0.01;
  std::size_t block_size = 16;
};

struct SparseGptResult {
  PruningMask mask;
  Matrix weights;  // pruned entries are exactly zero; survivors carry the OBS updates
};

/// SparseGPT: column-blocked OBS pruning with error compensation.
///
/// H = X·Xᵀ + λI with λ = damping_frac·mean(diag(X·Xᵀ)). With U the upper
/// Cholesky factor of H⁻¹, column c has saliency w²/U_cc² (U_cc² is the
/// inverse-Hessian diagonal of the still-unpruned columns) and the dropped
/// error is pushed onto later columns along row c of U.
///
/// Unstructured masks are chosen per block against a fixed drop budget of
/// floor(ρ·group): at each block all remaining columns are ranked with the
/// updated weights and the block drops its own columns among the lowest
/// `budget` entries, so totals stay exact.
/// N:M groups are chosen when their first column is reached; block_size is
/// rounded up to a multiple of M.
inline SparseGptResult prune_sparsegpt(const Matrix& w, const Matrix& x, const SparsitySpec& spec,
                                       const SparseGptOptions& opts = {}) {
  if (x.rows() != w.cols())
    throw ArgumentError("prune_sparsegpt: x has " + std::to_string(x.rows()) +
                        " features, w has " + std::to_string(w.cols()) + " inputs");
  if (!(opts.damping_frac >= 0.0)) throw ArgumentError("prune_sparsegpt: damping_frac < 0");
  if (opts.block_size < 1) throw ArgumentError("prune_sparsegpt: block_size < 1");
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  spec.validate_for(rows, cols);

  const Matrix h = matmul_transposed(x, x);
  double mean_diag = 0.0;
  for (std::size_t i = 0; i < cols; ++i) mean_diag += h(i, i);
  mean_diag /= static_cast<double>(cols);
  const Matrix hinv = cholesky_inverse(h, opts.damping_frac * mean_diag);
  const Matrix upper = transpose(cholesky_factor(hinv));

  std::size_t block = opts.block_size;
  if (spec.kind == SparsityKind::kNM && block % spec.m != 0) block += spec.m - block % spec.m;

  Matrix work = w;
  BoolMatrix keep(rows, cols, true);
  std::vector<std::size_t> idx;
  // Weights still to drop: per row, or a single entry for the whole matrix.
  std::vector<std::size_t> budget =
      spec.group == ComparisonGroup::kPerRow
          ? std::vector<std::size_t>(rows, pruned_count(spec.ratio, cols))
          : std::vector<std::size_t>{pruned_count(spec.ratio, rows * cols)};

  for (std::size_t b0 = 0; b0 < cols; b0 += block) {
    const std::size_t b1 = std::min(b0 + block, cols);
    const std::size_t width = b1 - b0;
    Matrix err(rows, width);

    auto saliency = [&](std::size_t r, std::size_t c) {
      const double d = upper(c, c);
      return work(r, c) * work(r, c) / (d * d);
    };

    if (spec.kind == SparsityKind::kUnstructured) {
      // Rank every not-yet-processed column with the current weights; the
      // block drops those of its own columns that fall inside the remaining
      // budget. The last block takes whatever budget is left.
      if (spec.group == ComparisonGroup::kPerRow) {
        for (std::size_t r = 0; r < rows; ++r) {
          idx.resize(cols - b0);
          std::iota(idx.begin(), idx.end(), b0);
          std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t c) {
            return saliency(r, a) < saliency(r, c);
          });
          for (std::size_t k = 0; k < budget[r]; ++k)
            if (idx[k] < b1) keep.set(r, idx[k], false);
        }
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = b0; c < b1; ++c) budget[r] -= keep(r, c) ? 0 : 1;
      } else {
        idx.clear();
        for (std::size_t c = b0; c < cols; ++c)
          for (std::size_t r = 0; r < rows; ++r) idx.push_back(r * cols + c);
        std::vector<double> sal(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) sal[k] = saliency(idx[k] / cols, idx[k] % cols);
        std::vector<std::size_t> order(idx.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t c) { return sal[a] < sal[c]; });
        const std::size_t limit = budget[0];
        for (std::size_t k = 0; k < limit; ++k) {
          const std::size_t flat = idx[order[k]];
          if (flat % cols < b1) {
            keep.set_flat(flat, false);
            --budget[0];
          }
        }
      }
    }

    for (std::size_t c = b0; c < b1; ++c) {
      if (spec.kind == SparsityKind::kNM && (c - b0) % spec.m == 0) {
        for (std::size_t r = 0; r < rows; ++r) {
          idx.resize(spec.m);
          std::iota(idx.begin(), idx.end(), c);
          std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t e) {
            return saliency(r, a) < saliency(r, e);
          });
          for (std::size_t k = 0; k < spec.m - spec.n; ++k) keep.set(r, idx[k], false);
        }
      }
      const double d = upper(c, c);
      for (std::size_t r = 0; r < rows; ++r) {
        if (keep(r, c)) continue;
        const double e = work(r, c) / d;
        // Update the rest of the block; later blocks get the accumulated error.
        for (std::size_t k = c; k < b1; ++k) work(r, k) -= e * upper(c, k);
        work(r, c) = 0.0;
        err(r, c - b0) = e;
      }
    }

    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = b0; c < b1; ++c) {
        const double e = err(r, c - b0);
        if (e == 0.0) continue;
        for (std::size_t k = b1; k < cols; ++k) work(r, k) -= e * upper(c, k);
      }
  }
  return {PruningMask{std::move(keep), spec, {}}, std::move(work)};
}

inline Matrix apply_mask(const Matrix& w, const PruningMask& mask) {
  if (w.rows() != mask.rows() || w.cols() != mask.cols())
    throw ArgumentError("apply_mask: shape mismatch");
  Matrix out = w;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!mask.keep.at(i)) out.data()[i] = 0.0;
  return out;
}

/// Calibration inputs of every prunable matrix, features × tokens.
struct LayerInputs {
  std::vector<BlockInputs> layers;

  const Matrix& x(std::size_t layer, Linear l) const { return layers.at(layer).for_linear(l); }
};

namespace detail {

struct InputStacker {
  std::size_t total_tokens;
  std::size_t row = 0;
  BlockInputs rows;  // tokens × features, filled row by row

  void init(const ModelConfig& c) {
    rows.attn_in = Matrix(total_tokens, c.d_model);
    rows.attn_ctx = Matrix(total_tokens, c.d_model);
    rows.ffn_in = Matrix(total_tokens, c.d_model);
    rows.ffn_act = Matrix(total_tokens, c.d_ffn);
  }

  void append(const BlockInputs& taps) {
    auto copy = [&](const Matrix& src, Matrix& dst) {
      for (std::size_t t = 0; t < src.rows(); ++t)
        std::copy(src.row(t).begin(), src.row(t).end(), dst.row(row + t).begin());
    };
    copy(taps.attn_in, rows.attn_in);
    copy(taps.attn_ctx, rows.attn_ctx);
    copy(taps.ffn_in, rows.ffn_in);
    copy(taps.ffn_act, rows.ffn_act);
    row += taps.attn_in.rows();
  }

  BlockInputs finish() const {
    return {transpose(rows.attn_in), transpose(rows.attn_ctx), transpose(rows.ffn_in),
            transpose(rows.ffn_act)};
  }
};

inline std::vector<Sequence> model_inputs(const CalibrationSet& calib) {
  std::vector<Sequence> out;
  out.reserve(calib.samples.size());
  for (const auto& s : calib.samples) out.push_back(to_model_input(s));
  return out;
}

inline std::size_t total_tokens(const std::vector<Sequence>& seqs) {
  std::size_t n = 0;
  for (const auto& s : seqs) n += s.size();
  return n;
}

}  // namespace detail

/// Inputs of every linear map while running the calibration set through the
/// (unmodified) model.
inline LayerInputs collect_layer_inputs(const ToyModel& model, const CalibrationSet& calib) {
  if (calib.samples.empty()) throw ArgumentError("collect_layer_inputs: empty calibration set");
  const auto seqs = detail::model_inputs(calib);
  std::vector<detail::InputStacker> stackers(model.blocks.size(),
                                             detail::InputStacker{detail::total_tokens(seqs), 0, {}});
  for (auto& s : stackers) s.init(model.config);
  for (const auto& seq : seqs) {
    Matrix h = embed(model, seq);
    for (std::size_t l = 0; l < model.blocks.size(); ++l) {
      BlockInputs taps;
      run_block(model, l, h, &taps);
      stackers[l].append(taps);
    }
  }
  LayerInputs out;
  for (const auto& s : stackers) out.layers.push_back(s.finish());
  return out;
}

enum class PruneMethod : std::uint8_t { kMagnitude, kWanda, kSparseGpt };

inline std::string_view method_name(PruneMethod m) {
  switch (m) {
    case PruneMethod::kMagnitude: return "magnitude";
    case PruneMethod::kWanda: return "wanda";
    case PruneMethod::kSparseGpt: return "sparsegpt";
  }
  return "?";
}

inline std::optional<PruneMethod> parse_method(std::string_view s) {
  if (s == "magnitude") return PruneMethod::kMagnitude;
  if (s == "wanda") return PruneMethod::kWanda;
  if (s == "sparsegpt") return PruneMethod::kSparseGpt;
  return std::nullopt;
}

/// Mask name of a block's linear map, e.g. "layers.2.ffn.up".
inline std::string mask_name(std::size_t layer, Linear l) {
  return "layers." + std::to_string(layer) + "." + std::string(linear_name(l));
}

struct NamedMask {
  std::string name;
  PruningMask mask;

  bool operator==(const NamedMask&) const = default;
};

struct PrunedModel {
  ToyModel model;
  std::vector<NamedMask> masks;  // layer-major, kAllLinears order within a layer
};

/// Prunes every attention and FFN matrix; embeddings and norms are left
/// alone. Activation-aware methods walk the layers in order: the inputs of
/// layer k are gathered after layers < k have been pruned.
inline PrunedModel prune_model(const ToyModel& model, const CalibrationSet& calib,
                               PruneMethod method, const SparsitySpec& spec,
                               const MaskProvenance& provenance = {},
                               const SparseGptOptions& sgpt = {}) {
  if (method != PruneMethod::kMagnitude && calib.samples.empty())
    throw ArgumentError("prune_model: empty calibration set");
  PrunedModel out{model, {}};
  const auto seqs = detail::model_inputs(calib);
  std::vector<Matrix> hidden;
  if (method != PruneMethod::kMagnitude) {
    hidden.reserve(seqs.size());
    for (const auto& s : seqs) hidden.push_back(embed(model, s));
  }

  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    BlockInputs inputs;
    if (method != PruneMethod::kMagnitude) {
      detail::InputStacker stacker{detail::total_tokens(seqs), 0, {}};
      stacker.init(model.config);
      for (const auto& h : hidden) {
        Matrix copy = h;
        BlockInputs taps;
        run_block(out.model, l, copy, &taps);
        stacker.append(taps);
      }
      inputs = stacker.finish();
    }
    Block& block = out.model.blocks[l];
    for (Linear lin : kAllLinears) {
      const Matrix w = transpose(block.linear(lin));
      PruningMask mask;
      Matrix pruned;
      switch (method) {
        case PruneMethod::kMagnitude:
          mask = prune_magnitude(w, spec);
          pruned = apply_mask(w, mask);
          break;
        case PruneMethod::kWanda:
          mask = prune_wanda(w, inputs.for_linear(lin), spec);
          pruned = apply_mask(w, mask);
          break;
        case PruneMethod::kSparseGpt: {
          auto res = prune_sparsegpt(w, inputs.for_linear(lin), spec, sgpt);
          mask = std::move(res.mask);
          pruned = std::move(res.weights);
          break;
        }
      }
      mask.provenance = provenance;
      block.linear(lin) = transpose(pruned);
      out.masks.push_back({mask_name(l, lin), std::move(mask)});
    }
    if (method != PruneMethod::kMagnitude)
      for (auto& h : hidden) run_block(out.model, l, h);
  }
  return out;
}

// Mask record: name, u32 rows, u32 cols, u8 kind, f64 ratio, u32 n, u32 m,
// u8 group, provenance (languages joined by ',', u64 seed, config hash),
// then ceil(rows·cols/8) bytes of keep flags, row-major, LSB first.
// A single-mask file is "PLMK" + u32 version + one record; a bundle is
// "PLMB" + u32 version + u32 count + records.

inline constexpr std::uint32_t kMaskFileVersion = 1;

namespace detail {

inline void write_mask_record(std::ostream& os, const NamedMask& nm) {
  const PruningMask& m = nm.mask;
  io::put_string(os, nm.name);
  io::put_u32(os, static_cast<std::uint32_t>(m.rows()));
  io::put_u32(os, static_cast<std::uint32_t>(m.cols()));
  io::put_u8(os, static_cast<std::uint8_t>(m.spec.kind));
  io::put_f64(os, m.spec.ratio);
  io::put_u32(os, m.spec.n);
  io::put_u32(os, m.spec.m);
  io::put_u8(os, static_cast<std::uint8_t>(m.spec.group));
  std::string langs;
  for (std::size_t i = 0; i < m.provenance.languages.size(); ++i) {
    if (i) langs += ',';
    langs += m.provenance.languages[i];
  }
  io::put_string(os, langs);
  io::put_u64(os, m.provenance.seed);
  io::put_string(os, m.provenance.config_hash);
  std::vector<char> packed((m.keep.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < m.keep.size(); ++i)
    if (m.keep.at(i)) packed[i / 8] = static_cast<char>(packed[i / 8] | (1 << (i % 8)));
  os.write(packed.data(), static_cast<std::streamsize>(packed.size()));
}

inline NamedMask read_mask_record(std::istream& is) {
  NamedMask nm;
  nm.name = io::get_string(is);
  const std::uint32_t rows = io::get_u32(is);
  const std::uint32_t cols = io::get_u32(is);
  const std::uint8_t kind = io::get_u8(is);
  if (kind > 1) throw FormatError("mask file: bad sparsity kind");
  nm.mask.spec.kind = static_cast<SparsityKind>(kind);
  nm.mask.spec.ratio = io::get_f64(is);
  nm.mask.spec.n = io::get_u32(is);
  nm.mask.spec.m = io::get_u32(is);
  const std::uint8_t group = io::get_u8(is);
  if (group > 1) throw FormatError("mask file: bad comparison group");
  nm.mask.spec.group = static_cast<ComparisonGroup>(group);
  const std::string langs = io::get_string(is);
  std::size_t start = 0;
  while (!langs.empty() && start <= langs.size()) {
    const auto comma = langs.find(',', start);
    nm.mask.provenance.languages.push_back(langs.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  nm.mask.provenance.seed = io::get_u64(is);
  nm.mask.provenance.config_hash = io::get_string(is);
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  std::vector<char> packed((n + 7) / 8);
  io::read_exact(is, packed.data(), packed.size());
  nm.mask.keep = BoolMatrix(rows, cols);
  for (std::size_t i = 0; i < n; ++i)
    nm.mask.keep.set_flat(i, (static_cast<unsigned char>(packed[i / 8]) >> (i % 8)) & 1u);
  return nm;
}

}  // namespace detail

inline void write_mask(std::ostream& os, const NamedMask& mask) {
  os.write("PLMK", 4);
  io::put_u32(os, kMaskFileVersion);
  detail::write_mask_record(os, mask);
}

inline NamedMask read_mask(std::istream& is) {
  io::expect_magic(is, "PLMK");
  if (io::get_u32(is) != kMaskFileVersion) throw FormatError("mask file: unsupported version");
  return detail::read_mask_record(is);
}

inline void write_mask_bundle(std::ostream& os, const std::vector<NamedMask>& masks) {
  os.write("PLMB", 4);
  io::put_u32(os, kMaskFileVersion);
  io::put_u32(os, static_cast<std::uint32_t>(masks.size()));
  for (const auto& m : masks) detail::write_mask_record(os, m);
}

inline std::vector<NamedMask> read_mask_bundle(std::istream& is) {
  io::expect_magic(is, "PLMB");
  if (io::get_u32(is) != kMaskFileVersion) throw FormatError("mask bundle: unsupported version");
  const std::uint32_t count = io::get_u32(is);
  std::vector<NamedMask> out;
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(detail::read_mask_record(is));
  return out;
}

inline void save_mask_bundle(const std::string& path, const std::vector<NamedMask>& masks) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + path);
  write_mask_bundle(os, masks);
  if (!os) throw FormatError("write failed: " + path);
}

inline std::vector<NamedMask> load_mask_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  return read_mask_bundle(is);
}

}  // namespace prunelab
