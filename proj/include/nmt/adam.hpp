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

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nmt/tensor.hpp"

namespace nmt {

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-6f;
  float weight_decay = 0.0f;
  // Linear ramp to lr over this many steps, constant afterwards. 0 disables.
  std::uint64_t warmup_steps = 0;
};

// Learning rate used for the update numbered `step` (1-based).
float scheduled_lr(const AdamConfig& config, std::uint64_t step);

// One bias-corrected Adam update of a single buffer with decoupled weight
// decay. `step` is the 1-based index of this update.
void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m,
                 std::span<float> v, std::uint64_t step, const AdamConfig& config);

class Adam {
 public:
  Adam(ParameterList params, AdamConfig config);

  // Applies one update from the accumulated gradients. Parameters without a
  // gradient buffer are treated as having zero gradient.
  void step();
  void zero_grad();

  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(float lr) { config_.lr = lr; }
  const ParameterList& parameters() const { return params_; }

  // Moment buffers as "adam.m.<param>" / "adam.v.<param>" for checkpoints.
  ParameterList export_state() const;
  void import_state(const ParameterList& state, std::uint64_t steps);

 private:
  ParameterList params_;
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

double global_grad_norm(const ParameterList& params);

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm measured before clipping.
double clip_grad_norm(ParameterList& params, double max_norm);

}  // namespace nmt
