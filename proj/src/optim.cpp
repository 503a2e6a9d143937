// SPDX-License-Identifier: Apache-2.0

#include "prnn/optim.hpp"

#include <algorithm>
#include <cmath>

namespace prnn {

AdamState AdamState::init(const std::vector<const Tensor*>& params, AdamConfig config) {
  AdamState st;
  st.config = config;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Tensor* p : params) {
    st.m.push_back(Tensor::zeros(p->shape()));
    st.v.push_back(Tensor::zeros(p->shape()));
  }
  return st;
}

void clip(std::vector<Tensor>& grads, double lo, double hi) {
  if (lo > hi) throw ContractError("clip bounds are inverted");
  for (Tensor& g : grads) {
    for (int64_t i = 0; i < g.size(); ++i) {
      double& x = g.data()[i];
      x = std::min(hi, std::max(lo, x));
    }
  }
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& st) {
  if (params.size() != grads.size() || params.size() != st.m.size()) {
    throw ContractError("adam_step: parameter/gradient/state counts differ");
  }
  st.t += 1;
  const double b1 = st.config.beta1, b2 = st.config.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& param = *params[p];
    const Tensor& g = grads[p];
    if (!param.same_shape(g)) {
      throw ShapeError("adam_step: gradient shape " + g.shape_str() +
                       " does not match parameter " + param.shape_str());
    }
    Tensor& m = st.m[p];
    Tensor& v = st.v[p];
    for (int64_t i = 0; i < param.size(); ++i) {
      const double gi = g.data()[i];
      m.data()[i] = b1 * m.data()[i] + (1.0 - b1) * gi;
      v.data()[i] = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
      const double m_hat = m.data()[i] / bc1;
      const double v_hat = v.data()[i] / bc2;
      param.data()[i] -= st.config.lr * m_hat / (std::sqrt(v_hat) + st.config.eps);
    }
  }
}

}  // namespace prnn
