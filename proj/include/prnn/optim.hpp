// SPDX-License-Identifier: Apache-2.0
//
// Adam with elementwise gradient clipping. Gradients are clipped to
// [-1, 1] by the caller before each adam_step; the step applies the
// standard bias-corrected update.

#pragma once

#include <cstdint>
#include <vector>

#include "prnn/tensor.hpp"

namespace prnn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates mirroring each parameter, plus the shared
// step counter. v entries stay >= 0 by construction.
struct AdamState {
  AdamConfig config;
  int64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState init(const std::vector<const Tensor*>& params, AdamConfig config = {});
};

// Clamp every gradient entry to [lo, hi]. lo > hi is a contract error.
void clip(std::vector<Tensor>& grads, double lo = -1.0, double hi = 1.0);

// One Adam update over all parameters; increments st.t, updates moments in
// place and writes new parameter values.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& st);

}  // namespace prnn
