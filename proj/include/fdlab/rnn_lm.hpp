#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fdlab/masks.hpp"
#include "fdlab/tensor.hpp"

namespace fdlab {

/// Embedding + stacked LSTM + (optionally tied) output projection.
///
/// With tied embeddings the last LSTM layer emits `embed_dim` units so its
/// output can be projected through the transposed embedding matrix; the
/// other layers use `hidden_dim`.
struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 16;
  std::size_t num_layers = 1;
  bool tie_embeddings = true;

  DropScheme embedding{0.0, Granularity::embedding_row};  ///< whole-word dropout on the lookup
  DropScheme input{0.0, Granularity::per_sequence};       ///< embedded vectors entering layer 0
  DropScheme hidden{0.0, Granularity::per_sequence};      ///< between LSTM layers
  DropScheme output{0.0, Granularity::per_sequence};      ///< final LSTM output
  DropScheme weight{0.0, Granularity::weight_matrix};     ///< hidden-to-hidden DropConnect

  std::size_t layer_input_dim(std::size_t layer) const;
  std::size_t layer_output_dim(std::size_t layer) const;
  std::size_t final_dim() const { return layer_output_dim(num_layers - 1); }
  void validate() const;

  /// Stochastic sites for a batch of `batch` sequences.
  std::vector<SiteSpec> mask_layout(std::size_t batch) const;
  /// Copy with every dropout rate set to zero.
  LmConfig without_dropout() const;
  bool operator==(const LmConfig&) const = default;
};

/// Parameters of the language model.
class LmModel {
 public:
  LmModel() = default;
  /// Uniform(-1/sqrt(h), 1/sqrt(h)) for LSTM weights and biases,
  /// Uniform(-0.1, 0.1) for the embedding, zero projection bias.
  static LmModel initialize(const LmConfig& config, std::uint64_t seed);
  /// Takes ownership of already-shaped parameters (checkpoint loading).
  static LmModel from_parameters(const LmConfig& config, std::vector<Parameter> params);

  const LmConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;

  std::size_t parameter_count() const;
  void zero_grad();

  /// Expected parameter names and shapes for `config`, in storage order.
  static std::vector<std::pair<std::string, Shape>> parameter_shapes(const LmConfig& config);

 private:
  LmConfig config_;
  std::vector<Parameter> params_;
};

/// Recurrent state of one layer for a batch.
struct LayerState {
  Tensor h;  ///< [batch, out_dim]
  Tensor c;  ///< [batch, out_dim]
};

using Carry = std::vector<LayerState>;

Carry zero_carry(const LmConfig& config, std::size_t batch);

struct BoundLayer {
  Var w_ih;  ///< [in, 4*out], gate order i, f, g, o
  Var w_hh;  ///< [out, 4*out] after weight dropout
  Var bias;  ///< [4*out]
};

/// Parameters placed on a tape for one forward pass.
struct BoundModel {
  const LmConfig* config = nullptr;
  Var embedding;
  std::vector<BoundLayer> layers;
  Var projection;  ///< [final_dim, vocab] when untied
  Var projection_bias;
};

/// Binds `model` to `tape`, applying the weight-drop masks of `masks` to the
/// hidden-to-hidden matrices once for the whole window.
BoundModel bind(Tape& tape, LmModel& model, const MaskSet& masks);
/// Read-only binding: parameters enter the tape as constants (evaluation).
BoundModel bind(Tape& tape, const LmModel& model, const MaskSet& masks);

struct LstmStepResult {
  Var h;    ///< new hidden state (carried forward, undropped)
  Var c;    ///< new cell state
  Var out;  ///< h multiplied by the layer's output-site mask
};

/// One LSTM step of `layer` at time `step`.
LstmStepResult lstm_step(Var x, Var h, Var c, const BoundModel& bound, std::size_t layer, const MaskSet& masks,
                         std::size_t step);

/// Per-step outputs of a forward pass.
struct StepOutput {
  Var logits;         ///< [batch, vocab] pre-softmax predictions
  Var hidden;         ///< [batch, d] final-layer output before its dropout
  Var masked_hidden;  ///< [batch, d] final-layer output after its dropout
};

struct ForwardResult {
  std::vector<StepOutput> steps;
  Var initial_hidden;  ///< final-layer hidden state entering the window (constant)
  Carry carry;         ///< state after the last step, detached from the tape
};

/// Runs the model over `tokens` ([steps][batch]) starting from `carry`.
ForwardResult forward(const BoundModel& bound, const std::vector<std::vector<int>>& tokens, const MaskSet& masks,
                      const Carry& carry);

}  // namespace fdlab
