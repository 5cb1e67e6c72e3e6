#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "prunelab/toymodel.hpp"
#include "test_support.hpp"

namespace prunelab {
namespace {

using Ld = long double;
using LdMat = std::vector<std::vector<Ld>>;

ModelConfig small_config(std::uint32_t seed = 1) {
  ModelConfig c;
  c.vocab_size = 11;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ffn = 12;
  c.max_seq = 10;
  c.seed = seed;
  return c;
}

// Reference forward pass written directly from the block definition, in
// long double. Returns logits; `up_signal` receives SiLU(f·W_up) per layer.
struct Reference {
  LdMat logits;
  std::vector<LdMat> hidden;
  std::vector<LdMat> up_signal;
};

LdMat ld_mul(const LdMat& a, const Matrix& w) {
  LdMat out(a.size(), std::vector<Ld>(w.cols(), 0.0L));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < w.rows(); ++k)
      for (std::size_t j = 0; j < w.cols(); ++j) out[i][j] += a[i][k] * w(k, j);
  return out;
}

LdMat ld_rms(const LdMat& x, const Vector& g) {
  LdMat out = x;
  for (auto& row : out) {
    Ld ss = 0;
    for (Ld v : row) ss += v * v;
    const Ld inv = 1.0L / std::sqrt(ss / row.size() + 1e-6L);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = row[j] * inv * g[j];
  }
  return out;
}

Ld ld_silu(Ld z) { return z / (1.0L + std::exp(-z)); }

Reference reference_forward(const ToyModel& m, const Sequence& toks) {
  const auto& c = m.config;
  const std::size_t n = toks.size(), d = c.d_model, hd = c.head_dim();
  LdMat h(n, std::vector<Ld>(d));
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j) h[t][j] = Ld(m.embedding(toks[t], j)) + m.position(t, j);
  Reference ref;
  for (const Block& b : m.blocks) {
    const LdMat a = ld_rms(h, b.attn_norm);
    const LdMat q = ld_mul(a, b.wq), k = ld_mul(a, b.wk), v = ld_mul(a, b.wv);
    LdMat ctx(n, std::vector<Ld>(d, 0.0L));
    for (std::size_t head = 0; head < c.n_heads; ++head) {
      const std::size_t o = head * hd;
      for (std::size_t t = 0; t < n; ++t) {
        std::vector<Ld> s(t + 1);
        Ld mx = -1e300L;
        for (std::size_t u = 0; u <= t; ++u) {
          Ld dotp = 0;
          for (std::size_t j = 0; j < hd; ++j) dotp += q[t][o + j] * k[u][o + j];
          s[u] = dotp / std::sqrt(Ld(hd));
          mx = std::max(mx, s[u]);
        }
        Ld z = 0;
        for (auto& x : s) z += (x = std::exp(x - mx));
        for (std::size_t u = 0; u <= t; ++u)
          for (std::size_t j = 0; j < hd; ++j) ctx[t][o + j] += s[u] / z * v[u][o + j];
      }
    }
    const LdMat attn = ld_mul(ctx, b.wo);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < d; ++j) h[t][j] += attn[t][j];
    const LdMat f = ld_rms(h, b.ffn_norm);
    const LdMat gate = ld_mul(f, b.w_gate), up = ld_mul(f, b.w_up);
    LdMat act = gate, sig = up;
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < c.d_ffn; ++j) {
        act[t][j] = ld_silu(gate[t][j]) * up[t][j];
        sig[t][j] = ld_silu(up[t][j]);
      }
    const LdMat down = ld_mul(act, b.w_down);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < d; ++j) h[t][j] += down[t][j];
    ref.hidden.push_back(h);
    ref.up_signal.push_back(sig);
  }
  const LdMat fin = ld_rms(h, m.final_norm);
  ref.logits.assign(n, std::vector<Ld>(c.vocab_size, 0.0L));
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t v = 0; v < c.vocab_size; ++v)
      for (std::size_t j = 0; j < d; ++j) ref.logits[t][v] += fin[t][j] * m.embedding(v, j);
  return ref;
}

ToyModel zero_model(const ModelConfig& c) {
  ToyModel m = init_model(c);
  for (double& v : m.embedding.data()) v = 0.0;
  for (double& v : m.position.data()) v = 0.0;
  for (auto& b : m.blocks)
    for (Linear l : kAllLinears)
      for (double& v : b.linear(l).data()) v = 0.0;
  return m;
}

TEST(InitModel, DeterministicForFixedSeed) {
  EXPECT_EQ(init_model(small_config(3)), init_model(small_config(3)));
}

TEST(InitModel, HeadDimension) {
  ModelConfig c = small_config();
  c.d_model = 8;
  c.n_heads = 2;
  EXPECT_EQ(c.head_dim(), 4u);
}

TEST(InitModel, SeedsGiveDifferentWeights) {
  const ToyModel a = init_model(small_config(1));
  const ToyModel b = init_model(small_config(2));
  EXPECT_GT(frobenius_norm(a.blocks[0].wq - b.blocks[0].wq), 0.0);
}

TEST(InitModel, ConfigValidation) {
  ModelConfig c = small_config();
  c.n_heads = 3;
  EXPECT_THROW(init_model(c), ArgumentError);
  c = small_config();
  c.d_ffn = 4;
  EXPECT_THROW(init_model(c), ArgumentError);
  c = small_config();
  c.n_layers = 0;
  EXPECT_THROW(init_model(c), ArgumentError);
}

TEST(Forward, SingleBosToken) {
  const ToyModel m = init_model(small_config());
  const Sequence s{kBosToken};
  const ForwardResult r = forward(m, s);
  EXPECT_EQ(r.logits.rows(), 1u);
  EXPECT_EQ(r.logits.cols(), 11u);
  EXPECT_EQ(r.trace.tokens(), 1u);
  EXPECT_EQ(r.trace.hidden.size(), 2u);
  EXPECT_TRUE(r.trace.special[0]);
}

TEST(Forward, CausalPrefixUnchanged) {
  const ToyModel m = init_model(small_config());
  const Sequence a{0, 3, 4, 5, 6};
  const Sequence b{0, 3, 4, 5, 9};
  const auto ra = forward(m, a).trace;
  const auto rb = forward(m, b).trace;
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(ra.hidden[l](t, j), rb.hidden[l](t, j));
  bool last_differs = false;
  for (std::size_t j = 0; j < 8; ++j) last_differs |= ra.hidden[1](4, j) != rb.hidden[1](4, j);
  EXPECT_TRUE(last_differs);
}

TEST(Forward, MatchesExtendedPrecisionReference) {
  for (std::uint32_t seed = 1; seed <= 3; ++seed) {
    ToyModel m = init_model(small_config(seed));
    // Larger weights so attention and the FFN are far from linear.
    for (auto& b : m.blocks)
      for (Linear l : kAllLinears)
        for (double& v : b.linear(l).data()) v *= 20.0;
    const Sequence s{0, 1, 7, 3, 10, 2, 2};
    const ForwardResult r = forward(m, s, {.capture_hidden = true, .capture_activations = true});
    const Reference ref = reference_forward(m, s);
    for (std::size_t t = 0; t < s.size(); ++t)
      for (std::size_t v = 0; v < 11; ++v) EXPECT_NEAR(r.logits(t, v), double(ref.logits[t][v]), 1e-10);
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t t = 0; t < s.size(); ++t) {
        for (std::size_t j = 0; j < 8; ++j)
          EXPECT_NEAR(r.trace.hidden[l](t, j), double(ref.hidden[l][t][j]), 1e-10);
        for (std::size_t j = 0; j < 12; ++j)
          EXPECT_EQ(r.trace.active[l](t, j), ref.up_signal[l][t][j] > 0) << l << "," << t << "," << j;
      }
  }
}

TEST(Forward, GatedSignalMatchesProductSign) {
  const ToyModel m = init_model(small_config(5));
  const Sequence s{0, 4, 4, 1};
  const auto r = forward(m, s, {.capture_activations = true, .signal = ActivationSignal::kGated});
  Matrix h = embed(m, s);
  BlockInputs taps;
  run_block(m, 0, h, &taps);
  for (std::size_t t = 0; t < s.size(); ++t)
    for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(r.trace.active[0](t, j), taps.ffn_act(t, j) > 0.0);
}

TEST(Forward, RejectsBadInput) {
  const ToyModel m = init_model(small_config());
  EXPECT_THROW(forward(m, Sequence{0, 11}), ArgumentError);
  EXPECT_THROW(forward(m, Sequence(11, 1)), ArgumentError);
  EXPECT_THROW(forward(m, Sequence{}), ArgumentError);
}

TEST(Forward, NeuronPermutationSymmetry) {
  const ToyModel m = init_model(small_config(4));
  ToyModel p = m;
  const std::vector<std::size_t> perm{3, 0, 11, 5, 1, 2, 9, 4, 6, 10, 7, 8};
  for (std::size_t l = 0; l < 2; ++l) {
    const Block& src = m.blocks[l];
    Block& dst = p.blocks[l];
    for (std::size_t j = 0; j < 12; ++j) {
      for (std::size_t i = 0; i < 8; ++i) {
        dst.w_gate(i, j) = src.w_gate(i, perm[j]);
        dst.w_up(i, j) = src.w_up(i, perm[j]);
        dst.w_down(j, i) = src.w_down(perm[j], i);
      }
    }
  }
  const Sequence s{0, 2, 5, 8};
  EXPECT_LT(testing::max_diff(forward(m, s).logits, forward(p, s).logits), 1e-14);
}

TEST(SentenceEmbedding, SingleNonSpecialToken) {
  HiddenTrace tr;
  tr.hidden.push_back(Matrix(2, 3, std::vector<double>{9, 9, 9, 1, 2, 3}));
  tr.special = {true, false};
  EXPECT_EQ(sentence_embedding(tr, 0), (Vector{1, 2, 3}));
}

TEST(SentenceEmbedding, OppositeStatesCancel) {
  HiddenTrace tr;
  tr.hidden.push_back(Matrix(2, 2, std::vector<double>{0.5, -1.5, -0.5, 1.5}));
  tr.special = {false, false};
  EXPECT_EQ(sentence_embedding(tr, 0), (Vector{0, 0}));
}

TEST(SentenceEmbedding, MeanOverFiveTokens) {
  const Matrix h = testing::random_matrix(6, 4, 77);
  HiddenTrace tr;
  tr.hidden.push_back(h);
  tr.special = {true, false, false, false, false, false};
  const Vector e = sentence_embedding(tr, 0);
  for (std::size_t j = 0; j < 4; ++j) {
    Ld s = 0;
    for (std::size_t t = 1; t < 6; ++t) s += h(t, j);
    EXPECT_NEAR(e[j], double(s / 5), 1e-15);
  }
}

TEST(SentenceEmbedding, AllSpecialRejected) {
  HiddenTrace tr;
  tr.hidden.push_back(Matrix(1, 2));
  tr.special = {true};
  EXPECT_THROW(sentence_embedding(tr, 0), ArgumentError);
  EXPECT_THROW(sentence_embedding(tr, 1), ArgumentError);
}

TEST(NegativeLogLikelihood, UniformLogitsGiveLogVocab) {
  const ToyModel m = zero_model(small_config());
  const Vector nll = negative_log_likelihood(m, Sequence{0, 1, 2, 3, 9});
  ASSERT_EQ(nll.size(), 4u);
  for (double v : nll) EXPECT_NEAR(v, std::log(11.0), 1e-14);
}

TEST(NegativeLogLikelihood, MatchesExtendedPrecisionSoftmax) {
  ToyModel m = init_model(small_config(8));
  for (double& v : m.embedding.data()) v *= 50.0;
  const Sequence s{0, 4, 1, 1, 10, 6};
  const Vector nll = negative_log_likelihood(m, s);
  const Reference ref = reference_forward(m, s);
  for (std::size_t t = 0; t + 1 < s.size(); ++t) {
    Ld z = 0;
    for (Ld v : ref.logits[t]) z += std::exp(v);
    const Ld expected = -std::log(std::exp(ref.logits[t][s[t + 1]]) / z);
    EXPECT_NEAR(nll[t], double(expected), 1e-10);
    EXPECT_GE(nll[t], 0.0);
  }
  EXPECT_THROW(negative_log_likelihood(m, Sequence{0}), ArgumentError);
}

TEST(ModelFile, RoundTripIsBitExact) {
  const ToyModel m = init_model(small_config(12));
  std::stringstream ss;
  write_model(ss, m);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "PLAB");
  const ToyModel back = read_model(ss);
  EXPECT_EQ(back, m);
  std::stringstream again;
  write_model(again, back);
  EXPECT_EQ(again.str(), bytes);
}

TEST(ModelFile, RejectsCorruption) {
  const ToyModel m = init_model(small_config());
  std::stringstream ss;
  write_model(ss, m);
  const std::string bytes = ss.str();
  {
    std::stringstream bad(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_model(bad), FormatError);
  }
  {
    std::string b = bytes;
    b[0] = 'X';
    std::stringstream bad(b);
    EXPECT_THROW(read_model(bad), FormatError);
  }
  {
    std::stringstream bad(bytes + "x");
    EXPECT_THROW(read_model(bad), FormatError);
  }
}

TEST(ConcatTraces, StacksTokens) {
  const ToyModel m = init_model(small_config());
  const auto a = forward(m, Sequence{0, 1, 2}).trace;
  const auto b = forward(m, Sequence{0, 5}).trace;
  const std::vector<HiddenTrace> both{a, b};
  const HiddenTrace c = concat_traces(both);
  EXPECT_EQ(c.tokens(), 5u);
  EXPECT_EQ(c.hidden[1](3, 2), b.hidden[1](0, 2));
  EXPECT_TRUE(c.special[3]);
}

}  // namespace
}  // namespace prunelab
