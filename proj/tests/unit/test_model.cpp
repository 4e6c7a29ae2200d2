/* Copyright 2026 The lmembed-nmt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <doctest.h>

#include <map>

#include <cmath>

#include "nmt/adam.hpp"
#include "nmt/checkpoint.hpp"
#include "nmt/error.hpp"
#include "nmt/model.hpp"
#include "nmt/vocab.hpp"
#include "support/gradcheck.hpp"
#include "support/toy.hpp"

using namespace nmt;
using namespace nmt::testing;

namespace {

const ForwardMode kEval{false, 0.0f, nullptr};

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.data()[i * t.dim(1) + j];
  }
  return m;
}

Matrix linear(const Matrix& x, const Linear& l) {
  const Matrix w = to_matrix(l.weight);
  Matrix y(x.size(), std::vector<double>(w[0].size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < w[0].size(); ++j) {
      double s = l.bias.data()[j];
      for (std::size_t k = 0; k < w.size(); ++k) s += x[i][k] * w[k][j];
      y[i][j] = s;
    }
  }
  return y;
}

Matrix norm(const Matrix& x, const LayerNorm& ln) {
  Matrix y = x;
  for (auto& row : y) {
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = (row[j] - mu) / std::sqrt(var + kLayerNormEps) * ln.gain.data()[j] + ln.bias.data()[j];
    }
  }
  return y;
}

Matrix plus(const Matrix& a, const Matrix& b) {
  Matrix c = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) c[i][j] += b[i][j];
  }
  return c;
}

// Single-sequence multi-head self-attention written out loop by loop.
Matrix reference_attention(const Matrix& x, const Attention& att, const std::vector<bool>& valid) {
  const Matrix q = linear(x, att.q), k = linear(x, att.k), v = linear(x, att.v);
  const std::size_t T = x.size(), D = x[0].size(), dh = D / att.heads;
  Matrix out(T, std::vector<double>(D, 0.0));
  for (std::size_t h = 0; h < att.heads; ++h) {
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> w(T, 0.0);
      double mx = -1e300;
      for (std::size_t j = 0; j < T; ++j) {
        if (!valid[j]) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
        w[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, w[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < T; ++j) {
        if (valid[j]) z += (w[j] = std::exp(w[j] - mx));
      }
      for (std::size_t j = 0; j < T; ++j) {
        if (!valid[j]) continue;
        for (std::size_t c = 0; c < dh; ++c) out[i][h * dh + c] += w[j] / z * v[j][h * dh + c];
      }
    }
  }
  return linear(out, att.o);
}

Matrix reference_encoder(Matrix x, const std::vector<EncoderLayer>& layers, const LayerNorm& final_norm,
                         const std::vector<bool>& valid) {
  for (const auto& layer : layers) {
    x = plus(x, reference_attention(norm(x, layer.norm1), layer.self_attention, valid));
    Matrix hidden = linear(norm(x, layer.norm2), layer.feed_forward.in);
    for (auto& row : hidden) {
      for (double& v : row) v = std::max(v, 0.0);
    }
    x = plus(x, linear(hidden, layer.feed_forward.out));
  }
  return norm(x, final_norm);
}

// Whole-model reference driven by parameter names, for one sentence pair.
class ReferenceTransformer {
 public:
  explicit ReferenceTransformer(const Transformer& model) : config_(model.config()) {
    for (const auto& p : model.parameters()) params_[p.name] = p.tensor;
  }

  Matrix logits(const std::vector<int>& source, const std::vector<int>& target_inputs) const {
    std::vector<int> src = source;
    src.push_back(kEosId);
    const std::vector<bool> src_valid(src.size(), true);
    Matrix memory = embed("src_embed.table", src);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "encoder.layers." + std::to_string(l);
      memory = sublayer(memory, p + ".norm1", [&](const Matrix& in) {
        return attention(in, in, p + ".self_attn", src_valid, false);
      });
      memory = sublayer(memory, p + ".norm2", [&](const Matrix& in) { return ff(in, p + ".ff"); });
    }
    if (config_.norm == NormStyle::pre) memory = layer_norm(memory, "encoder.final_norm");

    Matrix x = embed("tgt_embed.table", target_inputs);
    const std::vector<bool> tgt_valid(target_inputs.size(), true);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "decoder.layers." + std::to_string(l);
      x = sublayer(x, p + ".norm1", [&](const Matrix& in) {
        return attention(in, in, p + ".self_attn", tgt_valid, true);
      });
      x = sublayer(x, p + ".norm2", [&](const Matrix& in) {
        return attention(in, memory, p + ".cross_attn", src_valid, false);
      });
      x = sublayer(x, p + ".norm3", [&](const Matrix& in) { return ff(in, p + ".ff"); });
    }
    if (config_.norm == NormStyle::pre) x = layer_norm(x, "decoder.final_norm");
    const Matrix table = to_matrix(params_.at("tgt_embed.table"));
    Matrix out(x.size(), std::vector<double>(table.size(), 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t v = 0; v < table.size(); ++v) {
        for (std::size_t c = 0; c < x[i].size(); ++c) out[i][v] += x[i][c] * table[v][c];
      }
    }
    return out;
  }

 private:
  Matrix embed(const std::string& table_name, const std::vector<int>& ids) const {
    const Matrix table = to_matrix(params_.at(table_name));
    const std::size_t d = config_.d_model;
    Matrix x(ids.size(), std::vector<double>(d));
    for (std::size_t t = 0; t < ids.size(); ++t) {
      for (std::size_t j = 0; j < d; ++j) {
        const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d));
        const double pe = j % 2 == 0 ? std::sin(static_cast<double>(t) * freq)
                                     : std::cos(static_cast<double>(t) * freq);
        x[t][j] = table[static_cast<std::size_t>(ids[t])][j] * std::sqrt(static_cast<double>(d)) + pe;
      }
    }
    return x;
  }

  Matrix affine(const Matrix& x, const std::string& name) const {
    const Matrix w = to_matrix(params_.at(name + ".weight"));
    const auto b = params_.at(name + ".bias").data();
    Matrix y(x.size(), std::vector<double>(w[0].size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t j = 0; j < w[0].size(); ++j) {
        double acc = b[j];
        for (std::size_t k = 0; k < w.size(); ++k) acc += x[i][k] * w[k][j];
        y[i][j] = acc;
      }
    }
    return y;
  }

  Matrix layer_norm(const Matrix& x, const std::string& name) const {
    const auto g = params_.at(name + ".gain").data();
    const auto b = params_.at(name + ".bias").data();
    Matrix y = x;
    for (auto& row : y) {
      double mu = 0.0, var = 0.0;
      for (double v : row) mu += v;
      mu /= static_cast<double>(row.size());
      for (double v : row) var += (v - mu) * (v - mu);
      var /= static_cast<double>(row.size());
      for (std::size_t j = 0; j < row.size(); ++j) {
        row[j] = (row[j] - mu) / std::sqrt(var + kLayerNormEps) * g[j] + b[j];
      }
    }
    return y;
  }

  template <typename F>
  Matrix sublayer(const Matrix& x, const std::string& norm_name, F f) const {
    if (config_.norm == NormStyle::pre) return plus(x, f(layer_norm(x, norm_name)));
    return layer_norm(plus(x, f(x)), norm_name);
  }

  Matrix ff(const Matrix& x, const std::string& name) const {
    Matrix h = affine(x, name + ".in");
    for (auto& row : h) {
      for (double& v : row) v = std::max(v, 0.0);
    }
    return affine(h, name + ".out");
  }

  Matrix attention(const Matrix& queries, const Matrix& keys, const std::string& name,
                   const std::vector<bool>& key_valid, bool causal) const {
    const Matrix q = affine(queries, name + ".q"), k = affine(keys, name + ".k"),
                 v = affine(keys, name + ".v");
    const std::size_t heads = config_.heads, dh = config_.d_model / heads;
    Matrix out(queries.size(), std::vector<double>(config_.d_model, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < queries.size(); ++i) {
        std::vector<double> w(keys.size(), 0.0);
        std::vector<bool> use(keys.size());
        double mx = -1e300;
        for (std::size_t j = 0; j < keys.size(); ++j) {
          use[j] = key_valid[j] && (!causal || j <= i);
          if (!use[j]) continue;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
          w[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, w[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < keys.size(); ++j) {
          if (use[j]) z += (w[j] = std::exp(w[j] - mx));
        }
        for (std::size_t j = 0; j < keys.size(); ++j) {
          if (!use[j]) continue;
          for (std::size_t c = 0; c < dh; ++c) out[i][h * dh + c] += w[j] / z * v[j][h * dh + c];
        }
      }
    }
    return affine(out, name + ".o");
  }

  ModelConfig config_;
  std::map<std::string, Tensor> params_;
};

TokenBatch source_batch(const std::vector<std::vector<int>>& sentences) {
  return make_token_batch(sentences, true);
}

TargetBatch target_batch(const std::vector<std::vector<int>>& sentences) {
  return make_target_batch(sentences);
}

std::shared_ptr<lm::LmModel> make_lm(const Vocabulary& vocab, std::size_t d_lm, std::uint64_t seed) {
  Rng rng(seed);
  return std::make_shared<lm::LmModel>(micro_lm_config(vocab.size(), d_lm), rng, vocab.hash());
}

Vocabulary toy_vocab(std::size_t extra) {
  std::vector<std::vector<std::string>> corpus(1);
  for (std::size_t i = 0; i < extra; ++i) corpus[0].push_back("w" + std::to_string(i));
  return Vocabulary::build(corpus, 100);
}

}  // namespace

TEST_CASE("sinusoidal positional encoding examples") {
  for (std::size_t i = 0; i < 16; i += 2) CHECK(sinusoidal_pe(0, i, 16) == 0.0);
  for (std::size_t i = 1; i < 16; i += 2) CHECK(sinusoidal_pe(0, i, 16) == 1.0);
  CHECK(sinusoidal_pe(1, 0, 4) == doctest::Approx(0.8415).epsilon(1e-4));
  CHECK(sinusoidal_pe(1, 1, 4) == doctest::Approx(0.5403).epsilon(1e-4));
  CHECK(sinusoidal_pe(3, 2, 4) == doctest::Approx(std::sin(3.0 / 100.0)).epsilon(1e-12));
}

TEST_CASE("lookup embedding with a zero table is the positional encoding") {
  Rng rng(1);
  Transformer model(micro_config(), rng);
  Tensor table = model.source_embeddings().table();
  std::fill(table.data().begin(), table.data().end(), 0.0f);
  const auto batch = source_batch({{5, 6, 7}});
  const Tensor x = model.embed_source(batch, kEval);
  for (std::size_t p = 0; p < 4; ++p) {
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(x.data()[p * 8 + i] == static_cast<float>(sinusoidal_pe(p, i, 8)));
    }
  }
}

TEST_CASE("eval-mode embeddings are deterministic for both providers") {
  const Vocabulary vocab = toy_vocab(6);
  Rng rng(2);
  ModelConfig frozen_cfg = micro_config(vocab.size());
  frozen_cfg.provider = ProviderKind::frozen_lm;
  frozen_cfg.dropout = 0.3f;
  Transformer frozen(frozen_cfg, rng, make_lm(vocab, 6, 3), vocab.hash());
  ModelConfig lookup_cfg = micro_config();
  lookup_cfg.dropout = 0.3f;
  Transformer lookup(lookup_cfg, rng);
  const auto batch = source_batch({{5, 6, 7, 8}});
  CHECK(bitwise_equal(frozen.embed_source(batch, kEval), frozen.embed_source(batch, kEval)));
  CHECK(bitwise_equal(lookup.embed_source(batch, kEval), lookup.embed_source(batch, kEval)));
}

TEST_CASE("encoder output is invariant to padding") {
  Rng rng(4);
  Transformer model(micro_config(), rng);
  const auto alone = model.encode(source_batch({{6}}), kEval);
  const auto padded = model.encode(source_batch({{6}, {5, 6, 7, 8, 5}}), kEval);
  const auto padded_first = model.encode(source_batch({{5, 6, 7, 8, 5}, {6}}), kEval);
  // {6} + EOS occupies rows 0..1 on its own and rows 0..1 / 6..7 when batched.
  CHECK(rows(alone, 0, 2) == rows(padded, 0, 2));
  CHECK(rows(alone, 0, 2) == rows(padded_first, 6, 2));
}

TEST_CASE("attention rows are distributions") {
  Rng rng(5);
  Attention att(8, 2, rng);
  const Tensor x = random_tensor({6, 8}, rng, -1, 1, false);
  std::vector<float> probs;
  const std::vector<std::uint8_t> valid{1, 1, 0, 1, 1, 1};
  att(x, x, AttentionShape{2, 3, 3, 1, false}, valid, &probs);
  for (std::size_t row = 0; row < probs.size() / 3; ++row) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) s += probs[row * 3 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(probs[2] == 0.0f);  // masked key of the first sequence
}

TEST_CASE("two-layer encoder matches a straight-line reference") {
  Rng rng(6);
  std::vector<EncoderLayer> layers;
  for (int i = 0; i < 2; ++i) layers.emplace_back(8, 2, 12, rng);
  LayerNorm final_norm(8);
  for (float& g : final_norm.gain.data()) g = uniform_range(rng, 0.5f, 1.5f);
  for (float& b : final_norm.bias.data()) b = uniform_range(rng, -0.5f, 0.5f);
  for (auto& layer : layers) {
    for (float& b : layer.feed_forward.in.bias.data()) b = uniform_range(rng, -0.5f, 0.5f);
    for (float& b : layer.self_attention.q.bias.data()) b = uniform_range(rng, -0.5f, 0.5f);
  }
  const Tensor x = random_tensor({5, 8}, rng, -1, 1, false);
  const std::vector<std::uint8_t> valid{1, 1, 1, 1, 0};
  const Tensor y = run_encoder(layers, final_norm, x, 1, 5, valid, NormStyle::pre, kEval);
  const Matrix expected =
      reference_encoder(to_matrix(x), layers, final_norm, {true, true, true, true, false});
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(std::fabs(y.data()[i * 8 + j] - expected[i][j]) <= 1e-4);
    }
  }
}

TEST_CASE("full encoder-decoder logits match a straight-line reference") {
  for (const NormStyle style : {NormStyle::pre, NormStyle::post}) {
    Rng rng(style == NormStyle::pre ? 31 : 32);
    auto config = micro_config();
    config.norm = style;
    Transformer model(config, rng);
    for (auto& p : model.parameters()) {
      for (float& v : p.tensor.data()) v += uniform_range(rng, -0.3f, 0.3f);
    }
    const ReferenceTransformer reference(model);
    for (int trial = 0; trial < 5; ++trial) {
      const auto src = random_sentence(rng, 9, 1, 6);
      auto tgt = random_sentence(rng, 8, 1, 6);
      tgt.insert(tgt.begin(), kBosId);
      const TokenBatch sb = source_batch({src});
      const TokenBatch tb = make_token_batch(std::vector<std::vector<int>>{tgt}, false);
      const Tensor memory = model.encode(sb, kEval);
      const Tensor logits = model.decode(memory, sb.len, sb.valid, tb, kEval);
      const Matrix expected = reference.logits(src, tgt);
      double worst = 0.0;
      for (std::size_t i = 0; i < expected.size(); ++i) {
        for (std::size_t v = 0; v < expected[i].size(); ++v) {
          worst = std::max(worst, std::fabs(logits.data()[i * expected[i].size() + v] - expected[i][v]));
        }
      }
      CHECK(worst <= 1e-4);
    }
  }
}

TEST_CASE("decoder is causal: future target tokens never change earlier logits") {
  Rng rng(7);
  Transformer model(micro_config(), rng);
  const auto src = source_batch({{5, 6, 7}});
  const Tensor memory = model.encode(src, kEval);
  for (int trial = 0; trial < 50; ++trial) {
    auto tgt = random_sentence(rng, 8, 6, 6);
    const auto before = model.decode(memory, src.len, src.valid, target_batch({tgt}).inputs, kEval);
    const std::size_t j = 1 + uniform_index(rng, 5);
    tgt[j] = kNumSpecials + static_cast<int>((tgt[j] - kNumSpecials + 1) % 3);
    const auto after = model.decode(memory, src.len, src.valid, target_batch({tgt}).inputs, kEval);
    // Input position j + 1 holds tgt[j]; rows 0..j are unaffected.
    CHECK(rows(before, 0, j + 1) == rows(after, 0, j + 1));
    CHECK(rows(before, j + 1, 1) != rows(after, j + 1, 1));
  }
}

TEST_CASE("full-sequence decode equals prefix-by-prefix decode") {
  Rng rng(8);
  Transformer model(micro_config(), rng);
  const auto src = source_batch({{5, 8, 6, 7}});
  const Tensor memory = model.encode(src, kEval);
  const std::vector<int> tgt{6, 7, 5, 7, 6};
  const auto full = model.decode(memory, src.len, src.valid, target_batch({tgt}).inputs, kEval);
  for (std::size_t t = 0; t <= tgt.size(); ++t) {
    const std::vector<int> prefix(tgt.begin(), tgt.begin() + static_cast<std::ptrdiff_t>(t));
    const auto inc = model.decode(memory, src.len, src.valid, target_batch({prefix}).inputs, kEval);
    CHECK(rows(inc, t, 1) == rows(full, t, 1));
  }
}

TEST_CASE("output projection is tied to the target embedding") {
  Rng rng(9);
  Transformer model(micro_config(), rng);
  const auto src = source_batch({{5, 6}});
  const auto tgt = target_batch({{6, 7}});
  const Tensor memory = model.encode(src, kEval);
  const Tensor logits = model.decode(memory, src.len, src.valid, tgt.inputs, kEval);
  const Tensor embedded = model.embed_target(tgt.inputs, kEval);

  int tied = 0;
  for (const auto& p : model.parameters()) tied += p.tensor.shares_storage_with(model.target_embedding());
  CHECK(tied == 1);

  Tensor table = model.target_embedding();
  table.data()[7 * 8 + 3] += 0.5f;  // row of token 7, which is both an input and an output
  const Tensor logits2 = model.decode(memory, src.len, src.valid, tgt.inputs, kEval);
  const Tensor embedded2 = model.embed_target(tgt.inputs, kEval);
  CHECK_FALSE(bitwise_equal(logits, logits2));
  CHECK_FALSE(bitwise_equal(embedded, embedded2));
  // Row 0 (BOS input) never looks at token 7's embedding, but its logit for 7 changes.
  CHECK(logits.data()[7] != logits2.data()[7]);
}

TEST_CASE("parameter count formula") {
  Rng rng(10);
  for (auto norm : {NormStyle::pre, NormStyle::post}) {
    ModelConfig c = micro_config(11, 13);
    c.norm = norm;
    Transformer model(c, rng);
    const auto count = model.parameter_count();
    const std::size_t d = 8, f = 12, L = 2;
    const std::size_t linear_dd = d * d + d;
    const std::size_t enc = 4 * linear_dd + (d * f + f) + (f * d + d) + 2 * 2 * d;
    const std::size_t dec = 8 * linear_dd + (d * f + f) + (f * d + d) + 3 * 2 * d;
    const std::size_t expected =
        11 * d + 13 * d + L * (enc + dec) + (norm == NormStyle::pre ? 4 * d : 0);
    CHECK(count.trainable == expected);
    CHECK(count.total == expected);
    CHECK(Transformer::formula_parameter_count(c, nullptr).trainable == expected);
  }

  const Vocabulary vocab = toy_vocab(6);
  ModelConfig c = micro_config(vocab.size(), 13);
  c.provider = ProviderKind::frozen_lm;
  const auto lm = make_lm(vocab, 6, 11);
  Transformer model(c, rng, lm, vocab.hash());
  const auto count = model.parameter_count();
  const auto lm_cfg = micro_lm_config(vocab.size(), 6);
  CHECK(count.total - count.trainable == lm->parameter_count());
  CHECK(lm->parameter_count() == lm::LmModel::formula_parameter_count(lm_cfg));
  const auto formula = Transformer::formula_parameter_count(c, &lm_cfg);
  CHECK(formula.trainable == count.trainable);
  CHECK(formula.total == count.total);
}

TEST_CASE("frozen LM provider: vocabulary coupling and no positional buffer") {
  const Vocabulary vocab = toy_vocab(6);
  const Vocabulary other = toy_vocab(7);
  Rng rng(12);
  ModelConfig c = micro_config(vocab.size());
  c.provider = ProviderKind::frozen_lm;
  CHECK_THROWS_AS(Transformer(c, rng, make_lm(vocab, 6, 1), other.hash()), ConfigError);
  CHECK_THROWS_AS(Transformer(c, rng, nullptr, vocab.hash()), ConfigError);
  Transformer model(c, rng, make_lm(vocab, 6, 1), vocab.hash());
  CHECK_FALSE(model.source_embeddings().positional_encoding().defined());
  Transformer lookup(micro_config(), rng);
  CHECK(lookup.source_embeddings().positional_encoding().defined());
  for (const auto& p : model.frozen_parameters()) CHECK_FALSE(p.tensor.requires_grad());
}

TEST_CASE("gradients reach every trainable parameter and never the frozen LM") {
  const Vocabulary vocab = toy_vocab(6);
  Rng rng(13);
  for (auto provider : {ProviderKind::lookup, ProviderKind::frozen_lm}) {
    ModelConfig c = micro_config(vocab.size());
    c.provider = provider;
    Transformer model(c, rng, make_lm(vocab, 6, 2), vocab.hash());
    const auto src = source_batch(random_sentences(rng, 3, vocab.size(), 2, 5));
    const auto tgt = target_batch(random_sentences(rng, 3, 8, 2, 5));
    Tensor loss = model.loss(src, tgt, 0.1f, kEval);
    loss.backward();
    for (const auto& p : model.parameters()) {
      CAPTURE(p.name);
      REQUIRE(p.tensor.has_grad());
      double n = 0.0;
      for (float g : p.tensor.grad()) n += static_cast<double>(g) * g;
      CHECK(n > 0.0);
    }
    for (const auto& p : model.frozen_parameters()) CHECK_FALSE(p.tensor.has_grad());
  }
}

TEST_CASE("training moves the resize layer but not the frozen LM") {
  const Vocabulary vocab = toy_vocab(6);
  Rng rng(14);
  ModelConfig c = micro_config(vocab.size());
  c.provider = ProviderKind::frozen_lm;
  c.dropout = 0.1f;
  Transformer model(c, rng, make_lm(vocab, 8, 3), vocab.hash());
  const std::string lm_before = parameter_checksum(model.frozen_parameters());
  ParameterList resize;
  model.source_embeddings().resize().collect("resize", resize);
  const std::string resize_before = parameter_checksum(resize);
  AdamConfig ac;
  ac.lr = 1e-3f;
  Adam adam(model.parameters(), ac);
  const ForwardMode train{true, c.dropout, &rng};
  for (int step = 0; step < 100; ++step) {
    const auto src = source_batch(random_sentences(rng, 4, vocab.size(), 2, 5));
    const auto tgt = target_batch(random_sentences(rng, 4, 8, 2, 5));
    Tensor loss = model.loss(src, tgt, 0.1f, train);
    loss.backward();
    adam.step();
    adam.zero_grad();
  }
  CHECK(parameter_checksum(model.frozen_parameters()) == lm_before);
  CHECK(parameter_checksum(resize) != resize_before);
}

TEST_CASE("positional encoding distinguishes permuted inputs") {
  Rng rng(15);
  Transformer model(micro_config(), rng);
  const auto a = source_batch({{5, 6, 7, 8}});
  const auto b = source_batch({{8, 7, 6, 5}});
  // Source row r of `a` holds the same token as row 3 - r of `b` (EOS stays at 4).
  auto permuted_rows_match = [&](const Tensor& ya, const Tensor& yb) {
    for (std::size_t r = 0; r < 4; ++r) {
      const auto ra = rows(ya, r, 1);
      const auto rb = rows(yb, 3 - r, 1);
      for (std::size_t i = 0; i < ra.size(); ++i) {
        if (std::fabs(ra[i] - rb[i]) > 1e-5f) return false;
      }
    }
    return true;
  };
  CHECK_FALSE(permuted_rows_match(model.encode(a, kEval), model.encode(b, kEval)));
  Tensor pe = model.source_embeddings().positional_encoding();
  std::fill(pe.data().begin(), pe.data().end(), 0.0f);
  CHECK(permuted_rows_match(model.encode(a, kEval), model.encode(b, kEval)));
}

TEST_CASE("eval forward is equivariant to batch order") {
  Rng rng(16);
  Transformer model(micro_config(), rng);
  const auto s1 = random_sentence(rng, 9, 2, 6);
  const auto s2 = random_sentence(rng, 9, 2, 6);
  const auto t1 = random_sentence(rng, 8, 2, 6);
  const auto t2 = random_sentence(rng, 8, 2, 6);
  auto logits_of = [&](const std::vector<std::vector<int>>& s, const std::vector<std::vector<int>>& t) {
    const auto src = source_batch(s);
    const auto tgt = target_batch(t);
    return std::make_pair(model.decode(model.encode(src, kEval), src.len, src.valid, tgt.inputs, kEval),
                          tgt.inputs.len);
  };
  const auto [ab, len_ab] = logits_of({s1, s2}, {t1, t2});
  const auto [ba, len_ba] = logits_of({s2, s1}, {t2, t1});
  REQUIRE(len_ab == len_ba);
  CHECK(rows(ab, 0, t1.size() + 1) == rows(ba, len_ba, t1.size() + 1));
  CHECK(rows(ab, len_ab, t2.size() + 1) == rows(ba, 0, t2.size() + 1));
}

TEST_CASE("micro encoder-decoder passes finite-difference checks") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 100);
    Transformer model(micro_config(), rng);
    const auto src = source_batch(random_sentences(rng, 2, 9, 2, 4));
    const auto tgt = target_batch(random_sentences(rng, 2, 8, 2, 4));
    std::vector<Tensor> inputs;
    for (const auto& p : model.parameters()) inputs.push_back(p.tensor);
    const auto result = check_gradients([&] { return model.loss(src, tgt, 0.1f, kEval); }, inputs,
                                        5e-3, rng, 6);
    CAPTURE(seed);
    CHECK(result.relative_error <= 1e-3);
    CHECK(result.coordinates >= 100);
  }
}

TEST_CASE("model config validation and round trip") {
  ModelConfig c = micro_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = micro_config();
  c.dropout = 1.0f;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = micro_config();
  c.norm = NormStyle::post;
  c.provider = ProviderKind::frozen_lm;
  ConfigReader reader(c.to_map(), "test");
  const ModelConfig back = ModelConfig::from_reader(reader);
  reader.finish();
  CHECK(back.to_map() == c.to_map());
}
