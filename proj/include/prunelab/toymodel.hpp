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

// A small decoder-only transformer with Llama-style blocks: pre-RMSNorm,
// causal multi-head attention, SwiGLU feed-forward, learned absolute
// positions and an output projection tied to the token embedding.
//
// Linear weights are stored input-major (in_features × out_features) and
// applied as x·W.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prunelab/binary_io.hpp"
#include "prunelab/numerics.hpp"
#include "prunelab/random.hpp"

namespace prunelab {

using Token = std::uint32_t;
using Sequence = std::vector<Token>;

/// Beginning-of-sequence id; the only special token.
inline constexpr Token kBosToken = 0;

struct ModelConfig {
  std::uint32_t vocab_size = 65;
  std::uint32_t d_model = 32;
  std::uint32_t n_layers = 4;
  std::uint32_t n_heads = 4;
  std::uint32_t d_ffn = 64;
  std::uint32_t max_seq = 65;
  std::uint32_t seed = 0;

  std::uint32_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_ffn < 1 || max_seq < 1)
      throw ArgumentError("ModelConfig: all counts must be >= 1");
    if (d_model % n_heads != 0) throw ArgumentError("ModelConfig: d_model not divisible by n_heads");
    if (d_ffn < d_model) throw ArgumentError("ModelConfig: d_ffn must be >= d_model");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// The seven prunable linear maps of a block.
enum class Linear : std::uint8_t { kQuery, kKey, kValue, kAttnOut, kFfnGate, kFfnUp, kFfnDown };

inline constexpr std::array<Linear, 7> kAllLinears = {
    Linear::kQuery,   Linear::kKey,   Linear::kValue,  Linear::kAttnOut,
    Linear::kFfnGate, Linear::kFfnUp, Linear::kFfnDown};

/// Sub-component names used in mask files and analysis reports.
inline constexpr std::string_view linear_name(Linear l) {
  switch (l) {
    case Linear::kQuery: return "q";
    case Linear::kKey: return "k";
    case Linear::kValue: return "v";
    case Linear::kAttnOut: return "attn.out";
    case Linear::kFfnGate: return "ffn.gate";
    case Linear::kFfnUp: return "ffn.up";
    case Linear::kFfnDown: return "ffn.down";
  }
  return "?";
}

struct Block {
  Vector attn_norm;
  Matrix wq, wk, wv, wo;  // d_model × d_model
  Vector ffn_norm;
  Matrix w_gate, w_up;    // d_model × d_ffn
  Matrix w_down;          // d_ffn × d_model

  Matrix& linear(Linear l) {
    switch (l) {
      case Linear::kQuery: return wq;
      case Linear::kKey: return wk;
      case Linear::kValue: return wv;
      case Linear::kAttnOut: return wo;
      case Linear::kFfnGate: return w_gate;
      case Linear::kFfnUp: return w_up;
      case Linear::kFfnDown: return w_down;
    }
    return wq;
  }
  const Matrix& linear(Linear l) const { return const_cast<Block*>(this)->linear(l); }

  bool operator==(const Block&) const = default;
};

struct ToyModel {
  ModelConfig config;
  Matrix embedding;  // vocab × d_model; also the output projection
  Matrix position;   // max_seq × d_model
  std::vector<Block> blocks;
  Vector final_norm;

  bool operator==(const ToyModel&) const = default;
};

/// Which quantity defines a neuron "activation event" in the FFN.
enum class ActivationSignal : std::uint8_t {
  kUp,     // SiLU(x·W_up) > 0
  kGated,  // SiLU(x·W_gate) ⊙ (x·W_up) > 0
};

struct ForwardOptions {
  bool capture_hidden = true;
  bool capture_activations = false;
  ActivationSignal signal = ActivationSignal::kUp;
};

/// Per-layer hidden states (output of each block) and FFN activation bits
/// for a single forward pass.
struct HiddenTrace {
  std::vector<Matrix> hidden;        // n_layers × (tokens × d_model)
  std::vector<BoolMatrix> active;    // n_layers × (tokens × d_ffn), when captured
  std::vector<bool> special;         // per position

  std::size_t tokens() const { return special.size(); }
};

/// The exact operands entering each linear map of one block.
struct BlockInputs {
  Matrix attn_in;   // normed residual; input of q, k, v
  Matrix attn_ctx;  // attention context; input of attn.out
  Matrix ffn_in;    // normed residual; input of ffn.gate, ffn.up
  Matrix ffn_act;   // SiLU(gate) ⊙ up; input of ffn.down

  const Matrix& for_linear(Linear l) const {
    switch (l) {
      case Linear::kQuery:
      case Linear::kKey:
      case Linear::kValue: return attn_in;
      case Linear::kAttnOut: return attn_ctx;
      case Linear::kFfnGate:
      case Linear::kFfnUp: return ffn_in;
      case Linear::kFfnDown: return ffn_act;
    }
    return attn_in;
  }
};

inline ToyModel init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  auto gaussian = [&](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = 0.02 * rng.gaussian();
    return m;
  };
  const std::size_t d = config.d_model;
  const std::size_t f = config.d_ffn;
  ToyModel model;
  model.config = config;
  model.embedding = gaussian(config.vocab_size, d);
  model.position = gaussian(config.max_seq, d);
  for (std::uint32_t l = 0; l < config.n_layers; ++l) {
    Block b;
    b.attn_norm.assign(d, 1.0);
    b.wq = gaussian(d, d);
    b.wk = gaussian(d, d);
    b.wv = gaussian(d, d);
    b.wo = gaussian(d, d);
    b.ffn_norm.assign(d, 1.0);
    b.w_gate = gaussian(d, f);
    b.w_up = gaussian(d, f);
    b.w_down = gaussian(f, d);
    model.blocks.push_back(std::move(b));
  }
  model.final_norm.assign(d, 1.0);
  return model;
}

namespace detail {

inline constexpr double kRmsEps = 1e-6;

inline Matrix rms_norm(const Matrix& x, std::span<const double> scale) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto in = x.row(t);
    double ms = 0.0;
    for (double v : in) ms += v * v;
    ms /= static_cast<double>(in.size());
    const double inv = 1.0 / std::sqrt(ms + kRmsEps);
    auto o = out.row(t);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] * inv * scale[j];
  }
  return out;
}

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }

inline Matrix causal_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                               std::size_t n_heads) {
  const std::size_t t = q.rows();
  const std::size_t d = q.cols();
  const std::size_t hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix ctx(t, d);
  Vector weights(t);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < t; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) s += q(i, off + c) * k(j, off + c);
        weights[j] = s * scale;
        mx = std::max(mx, weights[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        weights[j] = std::exp(weights[j] - mx);
        z += weights[j];
      }
      for (std::size_t j = 0; j <= i; ++j) {
        const double w = weights[j] / z;
        for (std::size_t c = 0; c < hd; ++c) ctx(i, off + c) += w * v(j, off + c);
      }
    }
  }
  return ctx;
}

inline void add_in_place(Matrix& acc, const Matrix& delta) {
  auto a = acc.data();
  auto b = delta.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace detail

/// Token + position embedding of a sequence (tokens × d_model).
inline Matrix embed(const ToyModel& model, std::span<const Token> tokens) {
  const auto& cfg = model.config;
  if (tokens.empty()) throw ArgumentError("forward: empty token sequence");
  if (tokens.size() > cfg.max_seq)
    throw ArgumentError("forward: sequence length " + std::to_string(tokens.size()) +
                        " exceeds max_seq " + std::to_string(cfg.max_seq));
  Matrix h(tokens.size(), cfg.d_model);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= cfg.vocab_size)
      throw ArgumentError("forward: token id " + std::to_string(tokens[t]) + " >= vocab_size " +
                          std::to_string(cfg.vocab_size));
    auto e = model.embedding.row(tokens[t]);
    auto p = model.position.row(t);
    auto o = h.row(t);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] = e[j] + p[j];
  }
  return h;
}

/// Runs block `layer` on the residual stream `h` in place. Optionally records
/// the inputs of every linear map and the FFN activation events.
inline void run_block(const ToyModel& model, std::size_t layer, Matrix& h,
                      BlockInputs* taps = nullptr, BoolMatrix* active = nullptr,
                      ActivationSignal signal = ActivationSignal::kUp) {
  const Block& b = model.blocks.at(layer);
  Matrix a = detail::rms_norm(h, b.attn_norm);
  const Matrix q = matmul(a, b.wq);
  const Matrix k = matmul(a, b.wk);
  const Matrix v = matmul(a, b.wv);
  Matrix ctx = detail::causal_attention(q, k, v, model.config.n_heads);
  detail::add_in_place(h, matmul(ctx, b.wo));

  Matrix f = detail::rms_norm(h, b.ffn_norm);
  const Matrix gate = matmul(f, b.w_gate);
  const Matrix up = matmul(f, b.w_up);
  Matrix act(gate.rows(), gate.cols());
  for (std::size_t t = 0; t < act.rows(); ++t)
    for (std::size_t j = 0; j < act.cols(); ++j)
      act(t, j) = detail::silu(gate(t, j)) * up(t, j);
  if (active != nullptr) {
    *active = BoolMatrix(act.rows(), act.cols());
    for (std::size_t t = 0; t < act.rows(); ++t)
      for (std::size_t j = 0; j < act.cols(); ++j) {
        const double s = signal == ActivationSignal::kUp ? detail::silu(up(t, j)) : act(t, j);
        active->set(t, j, s > 0.0);
      }
  }
  detail::add_in_place(h, matmul(act, b.w_down));

  if (taps != nullptr) {
    taps->attn_in = std::move(a);
    taps->attn_ctx = std::move(ctx);
    taps->ffn_in = std::move(f);
    taps->ffn_act = std::move(act);
  }
}

/// Final norm followed by the tied output projection.
inline Matrix output_logits(const ToyModel& model, const Matrix& h) {
  return matmul_transposed(detail::rms_norm(h, model.final_norm), model.embedding);
}

struct ForwardResult {
  Matrix logits;  // tokens × vocab
  HiddenTrace trace;
};

inline ForwardResult forward(const ToyModel& model, std::span<const Token> tokens,
                             const ForwardOptions& options = {}) {
  Matrix h = embed(model, tokens);
  ForwardResult out;
  out.trace.special.resize(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) out.trace.special[t] = tokens[t] == kBosToken;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    BoolMatrix bits;
    run_block(model, l, h, nullptr, options.capture_activations ? &bits : nullptr, options.signal);
    if (options.capture_hidden) out.trace.hidden.push_back(h);
    if (options.capture_activations) out.trace.active.push_back(std::move(bits));
  }
  out.logits = output_logits(model, h);
  return out;
}

/// Mean hidden state of `layer` over non-special positions.
inline Vector sentence_embedding(const HiddenTrace& trace, std::size_t layer) {
  if (layer >= trace.hidden.size())
    throw ArgumentError("sentence_embedding: layer " + std::to_string(layer) + " out of range");
  const Matrix& h = trace.hidden[layer];
  Vector sum(h.cols(), 0.0);
  std::size_t n = 0;
  for (std::size_t t = 0; t < h.rows(); ++t) {
    if (trace.special[t]) continue;
    auto r = h.row(t);
    for (std::size_t j = 0; j < r.size(); ++j) sum[j] += r[j];
    ++n;
  }
  if (n == 0) throw ArgumentError("sentence_embedding: every position is a special token");
  for (double& v : sum) v /= static_cast<double>(n);
  return sum;
}

/// Natural-log NLL of each next token; length tokens.size() − 1.
inline Vector negative_log_likelihood(const ToyModel& model, std::span<const Token> tokens) {
  if (tokens.size() < 2) throw ArgumentError("negative_log_likelihood: need at least 2 tokens");
  const ForwardResult fr = forward(model, tokens, {.capture_hidden = false});
  Vector nll(tokens.size() - 1);
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    auto row = fr.logits.row(t);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    nll[t] = std::max(0.0, mx + std::log(z) - row[tokens[t + 1]]);
  }
  return nll;
}

/// Stacks the traces of several sequences along the token axis.
inline HiddenTrace concat_traces(std::span<const HiddenTrace> traces) {
  HiddenTrace out;
  if (traces.empty()) return out;
  const std::size_t layers = traces.front().hidden.size();
  std::size_t total = 0;
  for (const auto& t : traces) {
    if (t.hidden.size() != layers) throw ArgumentError("concat_traces: layer count mismatch");
    total += t.tokens();
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t d = traces.front().hidden[l].cols();
    Matrix m(total, d);
    std::size_t row = 0;
    for (const auto& t : traces) {
      const Matrix& h = t.hidden[l];
      for (std::size_t r = 0; r < h.rows(); ++r, ++row)
        std::copy(h.row(r).begin(), h.row(r).end(), m.row(row).begin());
    }
    out.hidden.push_back(std::move(m));
  }
  for (const auto& t : traces) out.special.insert(out.special.end(), t.special.begin(), t.special.end());
  return out;
}

// Model file: "PLAB", u32 version, seven u32 config fields, then every
// tensor as little-endian f64 in declaration order.

inline constexpr std::uint32_t kModelFileVersion = 1;

inline void write_model(std::ostream& os, const ToyModel& m) {
  os.write("PLAB", 4);
  io::put_u32(os, kModelFileVersion);
  const auto& c = m.config;
  for (std::uint32_t v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ffn, c.max_seq, c.seed})
    io::put_u32(os, v);
  auto put = [&](std::span<const double> xs) {
    for (double v : xs) io::put_f64(os, v);
  };
  put(m.embedding.data());
  put(m.position.data());
  for (const Block& b : m.blocks) {
    put(b.attn_norm);
    put(b.wq.data());
    put(b.wk.data());
    put(b.wv.data());
    put(b.wo.data());
    put(b.ffn_norm);
    put(b.w_gate.data());
    put(b.w_up.data());
    put(b.w_down.data());
  }
  put(m.final_norm);
}

inline ToyModel read_model(std::istream& is) {
  io::expect_magic(is, "PLAB");
  const std::uint32_t version = io::get_u32(is);
  if (version != kModelFileVersion)
    throw FormatError("model file: unsupported version " + std::to_string(version));
  ModelConfig c;
  c.vocab_size = io::get_u32(is);
  c.d_model = io::get_u32(is);
  c.n_layers = io::get_u32(is);
  c.n_heads = io::get_u32(is);
  c.d_ffn = io::get_u32(is);
  c.max_seq = io::get_u32(is);
  c.seed = io::get_u32(is);
  try {
    c.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  auto vec = [&](std::size_t n) {
    Vector v(n);
    for (double& x : v) x = io::get_f64(is);
    return v;
  };
  auto mat = [&](std::size_t r, std::size_t cols) {
    try {
      return Matrix(r, cols, vec(r * cols));
    } catch (const ArgumentError& e) {
      throw FormatError(std::string("model file: ") + e.what());
    }
  };
  ToyModel m;
  m.config = c;
  m.embedding = mat(c.vocab_size, c.d_model);
  m.position = mat(c.max_seq, c.d_model);
  for (std::uint32_t l = 0; l < c.n_layers; ++l) {
    Block b;
    b.attn_norm = vec(c.d_model);
    b.wq = mat(c.d_model, c.d_model);
    b.wk = mat(c.d_model, c.d_model);
    b.wv = mat(c.d_model, c.d_model);
    b.wo = mat(c.d_model, c.d_model);
    b.ffn_norm = vec(c.d_model);
    b.w_gate = mat(c.d_model, c.d_ffn);
    b.w_up = mat(c.d_model, c.d_ffn);
    b.w_down = mat(c.d_ffn, c.d_model);
    m.blocks.push_back(std::move(b));
  }
  m.final_norm = vec(c.d_model);
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("model file: trailing bytes");
  return m;
}

inline void save_model(const std::string& path, const ToyModel& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + path);
  write_model(os, m);
  if (!os) throw FormatError("write failed: " + path);
}

inline ToyModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  return read_model(is);
}

}  // namespace prunelab
