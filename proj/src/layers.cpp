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

#include "nmt/layers.hpp"

#include <cmath>
#include <map>

#include "nmt/error.hpp"

namespace nmt {

const char* to_string(NormStyle style) { return style == NormStyle::pre ? "pre" : "post"; }

NormStyle parse_norm_style(const std::string& text) {
  if (text == "pre") return NormStyle::pre;
  if (text == "post") return NormStyle::post;
  throw ConfigError("norm must be 'pre' or 'post', got '" + text + "'");
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  std::vector<float> values(fan_in * fan_out);
  for (float& v : values) v = uniform_range(rng, -limit, limit);
  return Tensor({fan_in, fan_out}, std::move(values), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(xavier_uniform(in, out, rng)), bias(Shape{out}, true) {}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t d)
    : gain(Shape{d}, std::vector<float>(d, 1.0f), true), bias(Shape{d}, true) {}

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

Tensor ForwardMode::apply_dropout(const Tensor& x) const {
  if (!train || dropout <= 0.0f) return x;
  if (rng == nullptr) throw ConfigError("training forward pass needs a random generator");
  return nmt::dropout(x, dropout, train, *rng);
}

Attention::Attention(std::size_t d_model, std::size_t heads_, Rng& rng)
    : q(d_model, d_model, rng),
      k(d_model, d_model, rng),
      v(d_model, d_model, rng),
      o(d_model, d_model, rng),
      heads(heads_) {}

Tensor Attention::operator()(const Tensor& queries, const Tensor& keys, const AttentionShape& shape,
                             std::span<const std::uint8_t> key_valid,
                             std::vector<float>* probs) const {
  AttentionShape s = shape;
  s.heads = heads;
  return o(multi_head_attention(q(queries), k(keys), v(keys), s, key_valid, probs));
}

Tensor Attention::attend(const Tensor& queries, const Tensor& keys, const Tensor& values,
                         const AttentionShape& shape, std::span<const std::uint8_t> key_valid) const {
  AttentionShape s = shape;
  s.heads = heads;
  return o(multi_head_attention(q(queries), keys, values, s, key_valid));
}

void Attention::collect(const std::string& prefix, ParameterList& out) const {
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
  o.collect(prefix + ".o", out);
}

FeedForward::FeedForward(std::size_t d_model, std::size_t d_ff, Rng& rng)
    : in(d_model, d_ff, rng), out(d_ff, d_model, rng) {}

void FeedForward::collect(const std::string& prefix, ParameterList& out_params) const {
  in.collect(prefix + ".in", out_params);
  out.collect(prefix + ".out", out_params);
}

namespace {

template <typename Sublayer>
Tensor residual(const Tensor& x, const LayerNorm& norm, NormStyle style, const ForwardMode& mode,
                Sublayer&& sublayer) {
  if (style == NormStyle::pre) return add(x, mode.apply_dropout(sublayer(norm(x))));
  return norm(add(x, mode.apply_dropout(sublayer(x))));
}

}  // namespace

EncoderLayer::EncoderLayer(std::size_t d_model, std::size_t heads, std::size_t d_ff, Rng& rng)
    : self_attention(d_model, heads, rng),
      feed_forward(d_model, d_ff, rng),
      norm1(d_model),
      norm2(d_model) {}

Tensor EncoderLayer::operator()(const Tensor& x, std::size_t batch, std::size_t len,
                                std::span<const std::uint8_t> valid, NormStyle style,
                                const ForwardMode& mode) const {
  const AttentionShape shape{batch, len, len, 1, false};
  Tensor h = residual(x, norm1, style, mode, [&](const Tensor& in) {
    return self_attention(in, in, shape, valid);
  });
  return residual(h, norm2, style, mode, [&](const Tensor& in) { return feed_forward(in); });
}

void EncoderLayer::collect(const std::string& prefix, ParameterList& out) const {
  self_attention.collect(prefix + ".self_attn", out);
  feed_forward.collect(prefix + ".ff", out);
  norm1.collect(prefix + ".norm1", out);
  norm2.collect(prefix + ".norm2", out);
}

DecoderLayer::DecoderLayer(std::size_t d_model, std::size_t heads, std::size_t d_ff, Rng& rng)
    : self_attention(d_model, heads, rng),
      cross_attention(d_model, heads, rng),
      feed_forward(d_model, d_ff, rng),
      norm1(d_model),
      norm2(d_model),
      norm3(d_model) {}

Tensor DecoderLayer::operator()(const Tensor& x, std::size_t batch, std::size_t len,
                                std::span<const std::uint8_t> valid, const Tensor& memory,
                                std::size_t memory_len, std::span<const std::uint8_t> memory_valid,
                                NormStyle style, const ForwardMode& mode) const {
  const AttentionShape self_shape{batch, len, len, 1, true};
  const AttentionShape cross_shape{batch, len, memory_len, 1, false};
  Tensor h = residual(x, norm1, style, mode, [&](const Tensor& in) {
    return self_attention(in, in, self_shape, valid);
  });
  h = residual(h, norm2, style, mode, [&](const Tensor& in) {
    return cross_attention(in, memory, cross_shape, memory_valid);
  });
  return residual(h, norm3, style, mode, [&](const Tensor& in) { return feed_forward(in); });
}

namespace {

// Rows of `cache` ([hyps*len x d]) with one row of `fresh` ([hyps x d])
// appended to each hypothesis block.
Tensor append_rows(const Tensor& cache, const Tensor& fresh, std::size_t hyps, std::size_t len) {
  if (len == 0) return fresh;
  const std::vector<Tensor> parts{cache, fresh};
  const Tensor both = concat(parts, 0);
  std::vector<int> order;
  order.reserve(hyps * (len + 1));
  for (std::size_t h = 0; h < hyps; ++h) {
    for (std::size_t j = 0; j < len; ++j) order.push_back(static_cast<int>(h * len + j));
    order.push_back(static_cast<int>(hyps * len + h));
  }
  return embedding(both, order);
}

}  // namespace

Tensor DecoderLayer::step(const Tensor& x, std::size_t hyps, std::size_t len, Tensor& self_keys,
                          Tensor& self_values, const Tensor& memory_keys,
                          const Tensor& memory_values, std::size_t memory_len,
                          std::span<const std::uint8_t> memory_valid, NormStyle style) const {
  const ForwardMode eval;
  const AttentionShape self_shape{hyps, 1, len + 1, 1, false};
  const AttentionShape cross_shape{hyps, 1, memory_len, 1, false};
  const std::vector<std::uint8_t> all_valid(hyps * (len + 1), 1);
  Tensor h = residual(x, norm1, style, eval, [&](const Tensor& in) {
    self_keys = append_rows(self_keys, self_attention.k(in), hyps, len);
    self_values = append_rows(self_values, self_attention.v(in), hyps, len);
    return self_attention.attend(in, self_keys, self_values, self_shape, all_valid);
  });
  h = residual(h, norm2, style, eval, [&](const Tensor& in) {
    return cross_attention.attend(in, memory_keys, memory_values, cross_shape, memory_valid);
  });
  return residual(h, norm3, style, eval, [&](const Tensor& in) { return feed_forward(in); });
}

void DecoderLayer::collect(const std::string& prefix, ParameterList& out) const {
  self_attention.collect(prefix + ".self_attn", out);
  cross_attention.collect(prefix + ".cross_attn", out);
  feed_forward.collect(prefix + ".ff", out);
  norm1.collect(prefix + ".norm1", out);
  norm2.collect(prefix + ".norm2", out);
  norm3.collect(prefix + ".norm3", out);
}

Tensor run_encoder(std::span<const EncoderLayer> layers, const LayerNorm& final_norm,
                   const Tensor& x, std::size_t batch, std::size_t len,
                   std::span<const std::uint8_t> valid, NormStyle style, const ForwardMode& mode) {
  Tensor h = x;
  for (const auto& layer : layers) h = layer(h, batch, len, valid, style, mode);
  return style == NormStyle::pre ? final_norm(h) : h;
}

void assign_parameters(const ParameterList& target, const ParameterList& source,
                       const std::string& what) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& p : source) by_name[p.name] = &p.tensor;
  if (by_name.size() != target.size()) {
    throw IntegrityError(what + ": expected " + std::to_string(target.size()) + " tensors, found " +
                         std::to_string(by_name.size()));
  }
  for (const auto& p : target) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IntegrityError(what + ": missing tensor '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw IntegrityError(what + ": tensor '" + p.name + "' has shape " +
                           shape_str(it->second->shape()) + ", expected " +
                           shape_str(p.tensor.shape()));
    }
    Tensor handle = p.tensor;
    auto dst = handle.data();
    const auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace nmt
