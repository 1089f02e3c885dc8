#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "convlstm/tensor.hpp"

namespace convlstm {

// Ordered collection of named trainable tensors.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& value(std::size_t i) { return values_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }

  std::optional<std::size_t> find(std::string_view name) const;
  // Throws ConfigError when the name is unknown.
  std::size_t index(std::string_view name) const;

  std::size_t element_count() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

// One gradient tensor per ParameterSet slot, same order and shapes.
using Gradients = std::vector<Tensor>;

Gradients zero_gradients(const ParameterSet& params);
// a += b, element-wise over every slot.
void accumulate(Gradients& a, const Gradients& b);

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
};

enum class OpKind : std::uint8_t {
  constant,
  parameter,
  conv2d,
  add,
  sub,
  mul,
  scale,
  sigmoid,
  tanh,
  relu,
  concat,
  mse,
};

// Straight-line reverse-mode tape. Nodes are appended in evaluation order, so
// the node list is already a topological order of the computation DAG.
// A tape is used from a single thread; parameters are read through a const
// pointer and never modified.
class Tape {
 public:
  explicit Tape(const ParameterSet* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a parameter slot; repeated calls return the same node.
  Var parameter(std::size_t index);
  Var parameter(std::string_view name);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t node_count() const { return nodes_.size(); }

  // Gradient of a single-element loss w.r.t. every parameter slot.
  // Slots the loss does not depend on come back as exact zeros.
  Gradients backward(Var loss) const;

  Var push(OpKind op, std::vector<std::uint32_t> inputs, Tensor value, double scalar = 0.0);

 private:
  struct Node {
    OpKind op;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    double scalar = 0.0;  // scale factor for OpKind::scale
    std::int64_t param = -1;
  };

  void backprop_node(const Node& node, const Tensor& grad, std::vector<Tensor>& grads) const;

  const ParameterSet* params_;
  std::vector<Node> nodes_;
  std::vector<std::int64_t> param_nodes_;
};

namespace ad {

// x [Cin,H,W], k [Cout,Cin,kH,kW], optional bias [Cout].
Var conv2d_same(Var x, Var k, std::optional<Var> bias = std::nullopt);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
// Concatenate [Ci,H,W] tensors along the channel axis.
Var concat_channels(std::span<const Var> parts);
// Scalar [1] mean squared error.
Var mse(Var pred, Var target);

}  // namespace ad
}  // namespace convlstm
