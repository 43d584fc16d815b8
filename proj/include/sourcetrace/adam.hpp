// Copyright 2026  Sourcetrace Authors
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

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sourcetrace/error.hpp"
#include "sourcetrace/nn.hpp"

namespace sourcetrace::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction.  Parameters are presented as a list of chunks
// (one per weight matrix / bias vector); the moment accumulators mirror the
// chunk shapes exactly and a mismatch is rejected.
struct AdamState {
  AdamConfig cfg;
  long long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

inline AdamState init_adam(const std::vector<std::size_t>& chunk_sizes,
                           const AdamConfig& cfg) {
  AdamState state;
  state.cfg = cfg;
  for (std::size_t n : chunk_sizes) {
    state.m.emplace_back(n, 0.0);
    state.v.emplace_back(n, 0.0);
  }
  return state;
}

inline void adam_step(const std::vector<std::span<double>>& params,
                      const std::vector<std::span<const double>>& grads,
                      AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ContractViolation("adam_step: chunk count mismatch");
  }
  state.step += 1;
  const double b1 = state.cfg.beta1;
  const double b2 = state.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t c = 0; c < params.size(); ++c) {
    if (params[c].size() != grads[c].size() ||
        params[c].size() != state.m[c].size()) {
      throw ContractViolation("adam_step: chunk shape mismatch");
    }
    for (std::size_t i = 0; i < params[c].size(); ++i) {
      const double g = grads[c][i];
      state.m[c][i] = b1 * state.m[c][i] + (1.0 - b1) * g;
      state.v[c][i] = b2 * state.v[c][i] + (1.0 - b2) * g * g;
      const double m_hat = state.m[c][i] / bc1;
      const double v_hat = state.v[c][i] / bc2;
      params[c][i] -= state.cfg.lr * m_hat / (std::sqrt(v_hat) +
                                              state.cfg.epsilon);
    }
  }
}

// Chunk views over a net's parameters, in layer order: weight, bias,
// weight, bias, ...  The same order is used for gradients so the two line
// up chunk by chunk.
inline std::vector<std::span<double>> param_views(DenseNet& net) {
  std::vector<std::span<double>> views;
  for (DenseLayer& l : net.layers) {
    views.emplace_back(l.weight.data);
    views.emplace_back(l.bias);
  }
  return views;
}

inline std::vector<std::span<const double>> grad_views(const NetGrad& grad) {
  std::vector<std::span<const double>> views;
  for (const LayerGrad& lg : grad.layers) {
    views.emplace_back(lg.weight.data);
    views.emplace_back(lg.bias);
  }
  return views;
}

inline std::vector<std::size_t> chunk_sizes(
    const std::vector<std::span<double>>& views) {
  std::vector<std::size_t> sizes;
  sizes.reserve(views.size());
  for (const auto& v : views) sizes.push_back(v.size());
  return sizes;
}

}  // namespace sourcetrace::nn
