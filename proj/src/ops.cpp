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

#include "nmt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "nmt/error.hpp"

namespace nmt {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

Tensor make_result(Shape shape, std::vector<float> values, std::vector<NodePtr> parents,
                   std::function<void(detail::Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.parents = std::move(parents);
    node.backward = std::move(backward);
  }
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    const float* arow = a + i * k;
    std::copy(crow, crow + n, acc.begin());
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::vector<float> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(a, bt.data(), c, m, k, n);
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    std::copy(crow, crow + n, acc.begin());
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<float> out(m * n, 0.0f);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](detail::Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) gemm_nt(self.grad.data(), pb->data.data(), pa->ensure_grad().data(), m, n, k);
    if (pb->requires_grad) gemm_tn(pa->data.data(), self.grad.data(), pb->ensure_grad().data(), k, m, n);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  }
  std::vector<float> out(m * n, 0.0f);
  gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](detail::Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    // dA = dC * B, dB = dC^T * A
    if (pa->requires_grad) gemm_nn(self.grad.data(), pb->data.data(), pa->ensure_grad().data(), m, n, k);
    if (pb->requires_grad) gemm_tn(self.grad.data(), pa->data.data(), pb->ensure_grad().data(), n, m, k);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node& self) {
    for (const auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& x, float factor) {
  std::vector<float> out(x.data().begin(), x.data().end());
  for (float& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x.node()}, [factor](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t d = x.shape().back();
  if (bias.numel() != d) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match last dimension of " + shape_str(x.shape()));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % d];
  return make_result(x.shape(), std::move(out), {x.node(), bias.node()}, [d](detail::Node& self) {
    const auto& px = self.parents[0];
    const auto& pb = self.parents[1];
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    }
  });
}

namespace {
thread_local ReluPatternRecorder* active_relu_recorder = nullptr;
}  // namespace

ReluPatternRecorder::ReluPatternRecorder() : previous_(active_relu_recorder) {
  active_relu_recorder = this;
}

ReluPatternRecorder::~ReluPatternRecorder() { active_relu_recorder = previous_; }

std::vector<std::uint8_t> ReluPatternRecorder::take() { return std::exchange(pattern_, {}); }

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.data().begin(), x.data().end());
  if (active_relu_recorder) {
    for (float v : out) active_relu_recorder->pattern_.push_back(v > 0.0f);
  }
  for (float& v : out) v = v > 0.0f ? v : 0.0f;
  return make_result(x.shape(), std::move(out), {x.node()}, [](detail::Node& self) {
    const auto& px = self.parents[0];
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (px->data[i] > 0.0f) g[i] += self.grad[i];
    }
  });
}

Tensor dropout(const Tensor& x, float p, bool train, Rng& rng) {
  if (!(p >= 0.0f && p < 1.0f)) {
    throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  if (!train || p == 0.0f) return x;
  const float keep_scale = 1.0f / (1.0f - p);
  std::vector<float> mask(x.numel());
  for (float& m : mask) m = uniform01(rng) < static_cast<double>(p) ? 0.0f : keep_scale;
  std::vector<float> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return make_result(x.shape(), std::move(out), {x.node()},
                     [mask = std::move(mask)](detail::Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  std::vector<float> out(x.numel());
  auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < s.inner; ++r) {
      const std::size_t base = o * s.len * s.inner + r;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(static_cast<double>(in[base + j * s.inner] - mx));
        out[base + j * s.inner] = static_cast<float>(e);
        total += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) {
        out[base + j * s.inner] = static_cast<float>(out[base + j * s.inner] / total);
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x.node()}, [s](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t r = 0; r < s.inner; ++r) {
        const std::size_t base = o * s.len * s.inner + r;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          dot += static_cast<double>(self.grad[idx]) * y[idx];
        }
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          g[idx] += static_cast<float>(y[idx] * (self.grad[idx] - dot));
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "log_softmax");
  std::vector<float> out(x.numel());
  auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < s.inner; ++r) {
      const std::size_t base = o * s.len * s.inner + r;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        total += std::exp(static_cast<double>(in[base + j * s.inner] - mx));
      }
      const double log_z = static_cast<double>(mx) + std::log(total);
      for (std::size_t j = 0; j < s.len; ++j) {
        out[base + j * s.inner] = static_cast<float>(in[base + j * s.inner] - log_z);
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x.node()}, [s](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t r = 0; r < s.inner; ++r) {
        const std::size_t base = o * s.len * s.inner + r;
        double total = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) total += self.grad[base + j * s.inner];
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          g[idx] += static_cast<float>(self.grad[idx] - std::exp(static_cast<double>(y[idx])) * total);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match last dimension of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<float> out(x.numel());
  std::vector<float> xhat(x.numel());
  std::vector<float> rstd(rows);
  auto in = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[r] = static_cast<float>(inv);
    for (std::size_t j = 0; j < d; ++j) {
      const float h = static_cast<float>((row[j] - mu) * inv);
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
        const auto& px = self.parents[0];
        const auto& pg = self.parents[1];
        const auto& pb = self.parents[2];
        if (pg->requires_grad) {
          auto& g = pg->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j] * xhat[r * d + j];
          }
        }
        if (pb->requires_grad) {
          auto& g = pb->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
          }
        }
        if (px->requires_grad) {
          auto& g = px->ensure_grad();
          const auto& gain_v = pg->data;
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0;
            double mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = static_cast<double>(self.grad[r * d + j]) * gain_v[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + j];
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = static_cast<double>(self.grad[r * d + j]) * gain_v[j];
              g[r * d + j] += static_cast<float>(rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h));
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  std::vector<int> rows(ids.begin(), ids.end());
  std::vector<float> out(rows.size() * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(rows[i]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(rows[i]) * d, d, out.data() + i * d);
  }
  Shape out_shape{rows.size(), d};
  return make_result(std::move(out_shape), std::move(out), {table.node()},
                     [d, rows = std::move(rows)](detail::Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < rows.size(); ++i) {
                         float* dst = g.data() + static_cast<std::size_t>(rows[i]) * d;
                         const float* src = self.grad.data() + i * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const AxisSplit s0 = split_axis(first, axis, "concat");
  std::vector<std::size_t> lens;
  std::size_t total_len = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != first.size()) {
      throw DimensionError("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(probe));
    }
    probe[axis] = first[axis];
    if (probe != first) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " vs " +
                           shape_str(p.shape()));
    }
    lens.push_back(p.shape()[axis]);
    total_len += p.shape()[axis];
    parents.push_back(p.node());
  }
  Shape out_shape = first;
  out_shape[axis] = total_len;
  std::vector<float> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t n = 0; n < parts.size(); ++n) {
    auto src = parts[n].data();
    const std::size_t chunk = lens[n] * s0.inner;
    for (std::size_t o = 0; o < s0.outer; ++o) {
      std::copy_n(src.data() + o * chunk, chunk, out.data() + o * total_len * s0.inner + offset);
    }
    offset += chunk;
  }
  const std::size_t inner = s0.inner, outer = s0.outer;
  return make_result(std::move(out_shape), std::move(out), std::move(parents),
                     [lens, total_len, inner, outer](detail::Node& self) {
                       std::size_t off = 0;
                       for (std::size_t n = 0; n < self.parents.size(); ++n) {
                         const std::size_t chunk = lens[n] * inner;
                         const auto& p = self.parents[n];
                         if (p->requires_grad) {
                           auto& g = p->ensure_grad();
                           for (std::size_t o = 0; o < outer; ++o) {
                             const float* src = self.grad.data() + o * total_len * inner + off;
                             for (std::size_t j = 0; j < chunk; ++j) g[o * chunk + j] += src[j];
                           }
                         }
                         off += chunk;
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x.node()}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<float> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  }
  return make_result({c, r}, std::move(out), {x.node()}, [r, c](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  return make_result({1}, {static_cast<float>(total)}, {x.node()}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (float& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  const double n = static_cast<double>(x.numel());
  return make_result({1}, {static_cast<float>(total / n)}, {x.node()}, [n](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const float share = static_cast<float>(self.grad[0] / n);
    for (float& v : g) v += share;
  });
}

Tensor cross_entropy_label_smoothed(const Tensor& logits, std::span<const int> targets,
                                    float epsilon, int pad_id) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " logit rows");
  }
  if (!(epsilon >= 0.0f && epsilon <= 1.0f)) {
    throw ConfigError("label smoothing must be in [0, 1], got " + std::to_string(epsilon));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::size_t counted = 0;
  for (int t : tgt) {
    if (t == pad_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("cross_entropy: target id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    ++counted;
  }
  // Per-row softmax probabilities are kept for the backward pass.
  std::vector<float> probs(rows * vocab, 0.0f);
  auto in = logits.data();
  const double eps = epsilon;
  const double uniform = eps / static_cast<double>(vocab);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] == pad_id) continue;
    const float* row = in.data() + r * vocab;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const double log_z = mx + std::log(z);
    double sum_logp = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double lp = row[j] - log_z;
      sum_logp += lp;
      probs[r * vocab + j] = static_cast<float>(std::exp(lp));
    }
    const double target_logp = row[tgt[r]] - log_z;
    total += -(1.0 - eps) * target_logp - uniform * sum_logp;
  }
  const double denom = counted ? static_cast<double>(counted) : 1.0;
  const float loss = static_cast<float>(total / denom);
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
  return make_result(
      {1}, {loss}, {logits.node()},
      [rows, vocab, pad_id, denom, eps, uniform, tgt = std::move(tgt),
       probs = std::move(probs)](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        const double upstream = self.grad[0] / denom;
        for (std::size_t r = 0; r < rows; ++r) {
          if (tgt[r] == pad_id) continue;
          for (std::size_t j = 0; j < vocab; ++j) {
            double target_mass = uniform;
            if (static_cast<int>(j) == tgt[r]) target_mass += 1.0 - eps;
            g[r * vocab + j] += static_cast<float>(upstream * (probs[r * vocab + j] - target_mass));
          }
        }
      });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionShape& shape, std::span<const std::uint8_t> key_valid,
                            std::vector<float>* probs_out) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  const std::size_t B = shape.batch, Tq = shape.query_len, Tk = shape.key_len, H = shape.heads;
  const std::size_t D = q.dim(1);
  if (H == 0 || D % H != 0) {
    throw DimensionError("attention: width " + std::to_string(D) + " not divisible by " +
                         std::to_string(H) + " heads");
  }
  if (q.dim(0) != B * Tq || k.dim(0) != B * Tk || v.dim(0) != B * Tk || k.dim(1) != D ||
      v.dim(1) != D) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()) + " inconsistent with batch " +
                         std::to_string(B) + ", query_len " + std::to_string(Tq) +
                         ", key_len " + std::to_string(Tk));
  }
  if (key_valid.size() != B * Tk) {
    throw DimensionError("attention: key mask has " + std::to_string(key_valid.size()) +
                         " entries, expected " + std::to_string(B * Tk));
  }
  if (shape.causal && Tk < Tq) throw DimensionError("attention: causal mask needs key_len >= query_len");

  const std::size_t dh = D / H;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  const std::size_t causal_offset = Tk - Tq;
  auto qv = q.data();
  auto kv = k.data();
  auto vv = v.data();

  std::vector<float> probs(B * H * Tq * Tk, 0.0f);
  std::vector<float> out(B * Tq * D, 0.0f);
  std::vector<float> scores(Tk);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < Tq; ++i) {
        const float* qi = qv.data() + (b * Tq + i) * D + h * dh;
        const std::size_t limit = shape.causal ? std::min(Tk, i + causal_offset + 1) : Tk;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
          if (!key_valid[b * Tk + j]) continue;
          const float* kj = kv.data() + (b * Tk + j) * D + h * dh;
          float dot = 0.0f;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        if (mx == -std::numeric_limits<float>::infinity()) continue;  // nothing to attend to
        float* prow = probs.data() + ((b * H + h) * Tq + i) * Tk;
        float total = 0.0f;
        for (std::size_t j = 0; j < limit; ++j) {
          if (!key_valid[b * Tk + j]) continue;
          prow[j] = std::exp(scores[j] - mx);
          total += prow[j];
        }
        float* oi = out.data() + (b * Tq + i) * D + h * dh;
        for (std::size_t j = 0; j < limit; ++j) {
          if (!key_valid[b * Tk + j]) continue;
          prow[j] /= total;
          const float* vj = vv.data() + (b * Tk + j) * D + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += prow[j] * vj[c];
        }
      }
    }
  }
  if (probs_out) *probs_out = probs;

  std::vector<std::uint8_t> valid(key_valid.begin(), key_valid.end());
  return make_result(
      {B * Tq, D}, std::move(out), {q.node(), k.node(), v.node()},
      [B, Tq, Tk, H, D, dh, inv_sqrt, causal = shape.causal, causal_offset,
       probs = std::move(probs), valid = std::move(valid)](detail::Node& self) {
        const auto& pq = self.parents[0];
        const auto& pk = self.parents[1];
        const auto& pv = self.parents[2];
        float* gq = pq->requires_grad ? pq->ensure_grad().data() : nullptr;
        float* gk = pk->requires_grad ? pk->ensure_grad().data() : nullptr;
        float* gv = pv->requires_grad ? pv->ensure_grad().data() : nullptr;
        std::vector<float> dscore(Tk);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < Tq; ++i) {
              const std::size_t limit = causal ? std::min(Tk, i + causal_offset + 1) : Tk;
              const float* prow = probs.data() + ((b * H + h) * Tq + i) * Tk;
              const float* dout = self.grad.data() + (b * Tq + i) * D + h * dh;
              double weighted = 0.0;
              for (std::size_t j = 0; j < limit; ++j) {
                if (!valid[b * Tk + j]) continue;
                const float* vj = pv->data.data() + (b * Tk + j) * D + h * dh;
                float dp = 0.0f;
                for (std::size_t c = 0; c < dh; ++c) dp += dout[c] * vj[c];
                dscore[j] = dp;
                weighted += static_cast<double>(prow[j]) * dp;
                if (gv) {
                  float* gvj = gv + (b * Tk + j) * D + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += prow[j] * dout[c];
                }
              }
              const float* qi = pq->data.data() + (b * Tq + i) * D + h * dh;
              float* gqi = gq ? gq + (b * Tq + i) * D + h * dh : nullptr;
              for (std::size_t j = 0; j < limit; ++j) {
                if (!valid[b * Tk + j]) continue;
                const float ds =
                    prow[j] * (dscore[j] - static_cast<float>(weighted)) * inv_sqrt;
                if (ds == 0.0f) continue;
                const float* kj = pk->data.data() + (b * Tk + j) * D + h * dh;
                if (gqi) {
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (gk) {
                  float* gkj = gk + (b * Tk + j) * D + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

void check_finite(const Tensor& x, const char* what) {
  auto v = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(what) + ": non-finite value at flat index " +
                         std::to_string(i) + " of " + shape_str(x.shape()));
    }
  }
}

}  // namespace nmt
