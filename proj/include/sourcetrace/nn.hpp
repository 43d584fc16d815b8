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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sourcetrace/error.hpp"
#include "sourcetrace/linalg.hpp"
#include "sourcetrace/rng.hpp"

namespace sourcetrace::nn {

enum class Activation { relu, identity };

inline std::string activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "identity";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ParseError(ParseError::Kind::malformed,
                   "unknown activation: " + s);
}

// One fully connected layer: y = act(W x + b).
struct DenseLayer {
  Matrix weight;             // out_dim x in_dim
  std::vector<double> bias;  // out_dim
  Activation act = Activation::identity;
};

// A stack of dense layers.  Plain value type: copying a net snapshots it.
struct DenseNet {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> layers;

  std::size_t output_dim() const {
    return layers.empty() ? input_dim : layers.back().weight.rows;
  }
};

inline void validate_net(const DenseNet& net) {
  if (net.input_dim == 0 || net.layers.empty()) {
    throw ContractViolation("DenseNet: needs input_dim > 0 and >= 1 layer");
  }
  std::size_t in = net.input_dim;
  for (const DenseLayer& l : net.layers) {
    if (l.weight.cols != in || l.weight.rows == 0 ||
        l.bias.size() != l.weight.rows) {
      throw ContractViolation("DenseNet: inconsistent layer shapes");
    }
    in = l.weight.rows;
  }
}

// Xavier-uniform initialization: weights drawn from
// U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))), biases zero.
// Same seed, same parameters, bit for bit.
inline DenseNet init_params(const std::vector<std::size_t>& dims,
                            const std::vector<Activation>& acts,
                            std::uint64_t seed) {
  if (dims.size() < 2) {
    throw ContractViolation("init_params: need at least input and output dim");
  }
  for (std::size_t d : dims) {
    if (d == 0) throw ContractViolation("init_params: zero dimension");
  }
  if (acts.size() != dims.size() - 1) {
    throw ContractViolation("init_params: one activation per layer required");
  }
  Rng rng(seed);
  DenseNet net;
  net.input_dim = dims.front();
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    DenseLayer layer;
    layer.weight = Matrix(dims[k + 1], dims[k]);
    const double bound =
        std::sqrt(6.0 / static_cast<double>(dims[k] + dims[k + 1]));
    for (double& v : layer.weight.data) v = rng.uniform(-bound, bound);
    layer.bias.assign(dims[k + 1], 0.0);
    layer.act = acts[k];
    net.layers.push_back(std::move(layer));
  }
  return net;
}

// Convenience: relu on hidden layers, identity on the output layer.
inline DenseNet init_params(const std::vector<std::size_t>& dims,
                            std::uint64_t seed) {
  if (dims.size() < 2) {
    throw ContractViolation("init_params: need at least input and output dim");
  }
  std::vector<Activation> acts(dims.size() - 1, Activation::relu);
  acts.back() = Activation::identity;
  return init_params(dims, acts, seed);
}

inline double apply_activation(Activation a, double x) {
  return a == Activation::relu ? (x > 0.0 ? x : 0.0) : x;
}

// Derivative w.r.t. the pre-activation; relu uses 0 at exactly 0.
inline double activation_derivative(Activation a, double pre) {
  return a == Activation::relu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0;
}

// Pure forward pass.  Repeated calls with the same inputs return
// bit-identical outputs; nothing is cached or mutated.
inline std::vector<double> forward(const DenseNet& net,
                                   std::span<const double> x) {
  validate_net(net);
  if (x.size() != net.input_dim) {
    throw ContractViolation("forward: input dimension mismatch");
  }
  if (!all_finite(x)) throw ContractViolation("forward: non-finite input");
  std::vector<double> cur(x.begin(), x.end());
  for (const DenseLayer& l : net.layers) {
    std::vector<double> pre = matvec(l.weight, cur);
    for (std::size_t i = 0; i < pre.size(); ++i) {
      pre[i] = apply_activation(l.act, pre[i] + l.bias[i]);
    }
    cur = std::move(pre);
  }
  return cur;
}

// Forward pass that records what backward() needs: the input, each layer's
// pre-activation, and each layer's output.
struct ForwardTrace {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;   // pre[k]: W x + b at layer k
  std::vector<std::vector<double>> post;  // post[k]: act(pre[k])

  const std::vector<double>& output() const { return post.back(); }
};

inline ForwardTrace forward_trace(const DenseNet& net,
                                  std::span<const double> x) {
  validate_net(net);
  if (x.size() != net.input_dim) {
    throw ContractViolation("forward_trace: input dimension mismatch");
  }
  if (!all_finite(x)) {
    throw ContractViolation("forward_trace: non-finite input");
  }
  ForwardTrace trace;
  trace.input.assign(x.begin(), x.end());
  const std::vector<double>* cur = &trace.input;
  for (const DenseLayer& l : net.layers) {
    std::vector<double> pre = matvec(l.weight, *cur);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += l.bias[i];
    std::vector<double> post(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) {
      post[i] = apply_activation(l.act, pre[i]);
    }
    trace.pre.push_back(std::move(pre));
    trace.post.push_back(std::move(post));
    cur = &trace.post.back();
  }
  return trace;
}

// Per-layer gradients, shaped exactly like the net's parameters.
struct LayerGrad {
  Matrix weight;
  std::vector<double> bias;
};

struct NetGrad {
  std::vector<LayerGrad> layers;

  static NetGrad zeros_like(const DenseNet& net) {
    NetGrad g;
    for (const DenseLayer& l : net.layers) {
      LayerGrad lg;
      lg.weight = Matrix(l.weight.rows, l.weight.cols);
      lg.bias.assign(l.bias.size(), 0.0);
      g.layers.push_back(std::move(lg));
    }
    return g;
  }

  void scale(double s) {
    for (LayerGrad& lg : layers) {
      for (double& v : lg.weight.data) v *= s;
      for (double& v : lg.bias) v *= s;
    }
  }
};

// Reverse pass for a scalar loss.  `output_grad` is dLoss/dOutput for the
// trace's recorded forward pass; parameter gradients are accumulated into
// `grad` (so shared-trunk uses can run backward twice), and dLoss/dInput is
// returned.  A trace that does not match the net is rejected: backward
// without a corresponding forward is a contract violation.
inline std::vector<double> backward(const DenseNet& net,
                                    const ForwardTrace& trace,
                                    std::span<const double> output_grad,
                                    NetGrad& grad) {
  validate_net(net);
  const std::size_t n_layers = net.layers.size();
  if (trace.pre.size() != n_layers || trace.post.size() != n_layers ||
      trace.input.size() != net.input_dim) {
    throw ContractViolation("backward: trace does not match net");
  }
  for (std::size_t k = 0; k < n_layers; ++k) {
    if (trace.pre[k].size() != net.layers[k].weight.rows) {
      throw ContractViolation("backward: trace does not match net");
    }
  }
  if (output_grad.size() != net.output_dim()) {
    throw ContractViolation("backward: output gradient dimension mismatch");
  }
  if (grad.layers.size() != n_layers) {
    throw ContractViolation("backward: gradient accumulator shape mismatch");
  }

  std::vector<double> g(output_grad.begin(), output_grad.end());
  for (std::size_t k = n_layers; k-- > 0;) {
    const DenseLayer& l = net.layers[k];
    LayerGrad& lg = grad.layers[k];
    if (!lg.weight.same_shape(l.weight) || lg.bias.size() != l.bias.size()) {
      throw ContractViolation("backward: gradient accumulator shape mismatch");
    }
    // d/d(pre) = d/d(post) * act'(pre)
    std::vector<double> gpre(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      gpre[i] = g[i] * activation_derivative(l.act, trace.pre[k][i]);
    }
    const std::vector<double>& layer_in =
        (k == 0) ? trace.input : trace.post[k - 1];
    add_outer(lg.weight, gpre, layer_in);
    for (std::size_t i = 0; i < gpre.size(); ++i) lg.bias[i] += gpre[i];
    g = matvec_transposed(l.weight, gpre);
  }
  return g;
}

}  // namespace sourcetrace::nn
