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

#include "nmt/adam.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nmt/error.hpp"

namespace nmt {

float scheduled_lr(const AdamConfig& config, std::uint64_t step) {
  if (config.warmup_steps == 0 || step >= config.warmup_steps) return config.lr;
  return config.lr * static_cast<float>(static_cast<double>(step) /
                                        static_cast<double>(config.warmup_steps));
}

void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m,
                 std::span<float> v, std::uint64_t step, const AdamConfig& config) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("adam_update: buffer sizes disagree");
  }
  if (step == 0) throw ConfigError("adam_update: step numbering starts at 1");
  const double lr = scheduled_lr(config, step);
  const double b1 = config.beta1, b2 = config.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
    v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g) * g);
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    double update = m_hat / (std::sqrt(v_hat) + config.eps);
    if (config.weight_decay > 0.0f) update += config.weight_decay * static_cast<double>(param[i]);
    param[i] = static_cast<float>(param[i] - lr * update);
  }
}

Adam::Adam(ParameterList params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0f);
    v_.emplace_back(p.tensor.numel(), 0.0f);
  }
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto grad = params_[i].tensor.grad();
    for (std::size_t j = 0; j < grad.size(); ++j) {
      if (!std::isfinite(grad[j])) {
        throw NumericError("non-finite gradient in parameter '" + params_[i].name +
                           "' at flat index " + std::to_string(j) + " (step " +
                           std::to_string(step_ + 1) + ")");
      }
    }
  }
  ++step_;
  std::vector<float> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    std::span<const float> grad = t.grad();
    if (grad.empty()) {
      zeros.assign(t.numel(), 0.0f);
      grad = zeros;
    }
    adam_update(t.data(), grad, m_[i], v_[i], step_, config_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

ParameterList Adam::export_state() const {
  ParameterList out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"adam.m." + params_[i].name, Tensor(params_[i].tensor.shape(), m_[i])});
    out.push_back({"adam.v." + params_[i].name, Tensor(params_[i].tensor.shape(), v_[i])});
  }
  return out;
}

void Adam::import_state(const ParameterList& state, std::uint64_t steps) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& s : state) {
      if (s.name == name) return s.tensor;
    }
    throw IntegrityError("optimizer state missing '" + name + "'");
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& m = find("adam.m." + params_[i].name);
    const Tensor& v = find("adam.v." + params_[i].name);
    if (m.shape() != params_[i].tensor.shape() || v.shape() != params_[i].tensor.shape()) {
      throw IntegrityError("optimizer state shape mismatch for '" + params_[i].name + "'");
    }
    m_[i].assign(m.data().begin(), m.data().end());
    v_[i].assign(v.data().begin(), v.data().end());
  }
  step_ = steps;
}

double global_grad_norm(const ParameterList& params) {
  double total = 0.0;
  for (const auto& p : params) {
    for (float g : p.tensor.grad()) total += static_cast<double>(g) * g;
  }
  return std::sqrt(total);
}

double clip_grad_norm(ParameterList& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const float factor = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (float& g : p.tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace nmt
