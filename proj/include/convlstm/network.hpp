#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "convlstm/autodiff.hpp"
#include "convlstm/kvfile.hpp"
#include "convlstm/rng.hpp"
#include "convlstm/tensor.hpp"

namespace convlstm {

enum class OutputNonlinearity { sigmoid, relu };
enum class DecodeMode { past, future_unconditioned, future_conditioned };
// Which weight stack a cell belongs to.
enum class Stack { encoder, past, future };

std::string to_string(OutputNonlinearity v);
std::string to_string(Stack s);

// Architecture description. The defaults suit small synthetic clips; a
// full-resolution setup would be frame_side 224, patch_factor 8, filter_size 5
// and three layers whose channel counts sum to 512.
struct NetworkConfig {
  std::size_t input_len = 5;
  std::size_t output_len = 5;
  std::size_t frame_side = 32;
  std::size_t patch_factor = 2;
  std::size_t filter_size = 5;
  std::vector<std::size_t> layer_channels{32, 16, 16};
  // Future decoder feeds back its previous output frame.
  bool conditioned = false;
  // false: future-only baseline without the past decoder.
  bool composite = true;
  OutputNonlinearity output_nonlinearity = OutputNonlinearity::sigmoid;

  void validate() const;

  std::size_t patch_channels() const { return patch_factor * patch_factor; }
  std::size_t patch_side() const { return frame_side / patch_factor; }
  std::size_t input_channels(std::size_t layer) const {
    return layer == 0 ? patch_channels() : layer_channels[layer - 1];
  }
  std::size_t total_hidden_channels() const;

  KeyValueList to_key_values() const;
  // Keys missing from the list keep their defaults; unknown keys are errors.
  static NetworkConfig from_key_values(const KeyValueList& kv);
  // Applies one key; returns false if the key is not a network key.
  bool set(const std::string& key, const std::string& value);

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Space-to-depth: frame [1,S,S] -> [k*k, S/k, S/k]; the patch at grid
// position (r, c) becomes channel r*k + c.
Tensor patchify(const Tensor& frame, std::size_t k);
Tensor unpatchify(const Tensor& patches, std::size_t k);

// Weights of one Conv-LSTM cell.
//   I = sig(Wxi*X + Whi*H + Wci.C_prev + bi)
//   F = sig(Wxf*X + Whf*H + Wcf.C_prev + bf)
//   C = F.C_prev + I.tanh(Wxc*X + Whc*H + bc)
//   O = sig(Wxo*X + Who*H + Wco.C + bo)
//   H = O.tanh(C)
// '*' is same-size convolution, '.' the Hadamard product.
struct ConvLSTMCellParams {
  Tensor w_xi, w_hi, w_xf, w_hf, w_xc, w_hc, w_xo, w_ho;
  Tensor w_ci, w_cf, w_co;
  Tensor b_i, b_f, b_c, b_o;
};

struct CellState {
  Tensor h;
  Tensor c;
};

CellState cell_step(const ConvLSTMCellParams& params, const Tensor& x, const CellState& prev);

// ---- tape-level building blocks ----

struct CellVars {
  Var w_xi, w_hi, w_xf, w_hf, w_xc, w_hc, w_xo, w_ho;
  Var w_ci, w_cf, w_co;
  Var b_i, b_f, b_c, b_o;
};

struct StateVars {
  Var h;
  Var c;
};

// x == nullopt means an all-zero input; the input convolutions are skipped.
StateVars cell_step(const CellVars& p, std::optional<Var> x, StateVars prev);

CellVars constant_cell(Tape& tape, const ConvLSTMCellParams& params);

class CompositeModel;

// Binds a model's parameters onto a tape and builds encoder/decoder graphs.
class ModelGraph {
 public:
  ModelGraph(Tape& tape, const CompositeModel& model);

  // frames: patchified inputs in chronological order.
  std::vector<StateVars> encode(std::span<const Var> frames);
  // Patch-space outputs in emission order (reverse chronological for past).
  std::vector<Var> decode(Stack stack, std::vector<StateVars> state, bool conditioned,
                          std::size_t steps);

  Tape& tape() { return tape_; }

 private:
  CellVars cell(Stack stack, std::size_t layer);

  Tape& tape_;
  const CompositeModel& model_;
};

// Config plus named parameters for the encoder, the past decoder (composite
// models only), the future decoder and one 1x1 output layer per decoder.
class CompositeModel {
 public:
  CompositeModel(NetworkConfig config, ParameterSet params);

  // Xavier-uniform kernels, zero peepholes and biases.
  static CompositeModel initialize(const NetworkConfig& config, Rng& rng);

  const NetworkConfig& config() const { return config_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }

  ConvLSTMCellParams cell_params(Stack stack, std::size_t layer) const;
  static std::string param_name(Stack stack, std::size_t layer, const char* field);
  static std::string output_name(Stack stack, const char* field);

  // Rounds every parameter to the nearest 32-bit float.
  void quantize_to_float();

  friend bool operator==(const CompositeModel&, const CompositeModel&) = default;

 private:
  NetworkConfig config_;
  ParameterSet params_;
};

// input_seq [T_in,1,S,S]; returns the final state of every layer.
std::vector<CellState> encode(const CompositeModel& model, const Tensor& input_seq);

// Returns frames [steps,1,S,S] in chronological order.
Tensor decode(const CompositeModel& model, std::span<const CellState> encoding, DecodeMode mode,
              std::size_t steps);

struct CompositeResult {
  Tensor reconstruction;  // [T_in,1,S,S]; empty for the baseline
  Tensor prediction;      // [T_out,1,S,S]
  double loss = 0.0;      // MSE over all target frames
  double reconstruction_loss = 0.0;
  double prediction_loss = 0.0;
};

CompositeResult forward_composite(const CompositeModel& model, const Tensor& input_seq,
                                  const Tensor& target_future);

struct LossAndGradients {
  CompositeResult result;
  Gradients grads;
};

LossAndGradients loss_and_gradients(const CompositeModel& model, const Tensor& input_seq,
                                    const Tensor& target_future);

}  // namespace convlstm
