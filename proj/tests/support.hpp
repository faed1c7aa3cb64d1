#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fdlab/masks.hpp"
#include "fdlab/rng.hpp"
#include "fdlab/rnn_lm.hpp"
#include "fdlab/tensor.hpp"

namespace fdlab::testing {

inline Tensor randn(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up
/// to rounding from turning finite-difference noise into huge ratios.
inline double rel_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Builds a scalar loss on `tape` from leaves holding `inputs`.
using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Largest relative error between tape gradients and central differences
/// over every element of every input.
inline double max_grad_error(const LossFn& fn, std::vector<Tensor> inputs, double step = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
    const Var loss = fn(tape, leaves);
    tape.backward(loss);
    for (const Var& v : leaves) analytic.push_back(v.grad().empty() ? Tensor(v.shape()) : v.grad());
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    tape.set_grad_enabled(false);
    std::vector<Var> leaves;
    for (const Tensor& t : xs) leaves.push_back(tape.constant(t));
    return fn(tape, leaves).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k][i];
      inputs[k][i] = x + step;
      const double up = eval(inputs);
      inputs[k][i] = x - step;
      const double down = eval(inputs);
      inputs[k][i] = x;
      worst = std::max(worst, rel_error(analytic[k][i], (up - down) / (2 * step)));
    }
  }
  return worst;
}

/// Model parameters as tensors, in storage order.
inline std::vector<Tensor> parameter_values(const LmModel& model) {
  std::vector<Tensor> out;
  for (const Parameter& p : model.parameters()) out.push_back(p.value);
  return out;
}

/// BoundModel over caller-provided nodes (one per parameter, storage order),
/// with the weight-drop masks of `masks` applied; lets gradient checks treat
/// every parameter as a plain leaf.
inline BoundModel bind_nodes(const LmModel& model, const std::vector<Var>& nodes, const MaskSet& masks) {
  const LmConfig& cfg = model.config();
  Tape& tape = nodes.front().tape();
  BoundModel b;
  b.config = &cfg;
  std::size_t k = 0;
  b.embedding = nodes[k++];
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    BoundLayer layer{nodes[k], nodes[k + 1], nodes[k + 2]};
    k += 3;
    const MaskSet::Entry& wd = masks.entry(static_cast<int>(l), Site::weight);
    if (!wd.identity) layer.w_hh = mul(layer.w_hh, tape.constant(wd.masks.front()));
    b.layers.push_back(layer);
  }
  b.projection = cfg.tie_embeddings ? b.embedding : nodes[k++];
  b.projection_bias = nodes[k];
  return b;
}

}  // namespace fdlab::testing
