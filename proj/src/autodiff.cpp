#include "convlstm/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "convlstm/errors.hpp"
#include "convlstm/ops.hpp"

namespace convlstm {

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t ParameterSet::index(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw ConfigError("unknown parameter: " + std::string(name));
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

Gradients zero_gradients(const ParameterSet& params) {
  Gradients g;
  g.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) g.emplace_back(params.value(i).shape());
  return g;
}

void accumulate(Gradients& a, const Gradients& b) {
  if (a.size() != b.size()) throw ConfigError("accumulate: gradient slot count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    require_same_shape(a[i], b[i], "accumulate");
    auto dst = a[i].data();
    auto src = b[i].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(OpKind op, std::vector<std::uint32_t> inputs, Tensor value, double scalar) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), scalar, -1});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) { return push(OpKind::constant, {}, std::move(value)); }

Var Tape::parameter(std::size_t index) {
  if (!params_ || index >= params_->size()) throw UsageError("tape has no parameter slot " +
                                                             std::to_string(index));
  if (param_nodes_.empty()) param_nodes_.assign(params_->size(), -1);
  if (param_nodes_[index] >= 0) return Var{this, static_cast<std::uint32_t>(param_nodes_[index])};
  Var v = push(OpKind::parameter, {}, params_->value(index));
  nodes_.back().param = static_cast<std::int64_t>(index);
  param_nodes_[index] = v.id;
  return v;
}

Var Tape::parameter(std::string_view name) {
  if (!params_) throw UsageError("tape has no parameters");
  return parameter(params_->index(name));
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this) throw UsageError("backward: loss belongs to another tape");
  const auto& out = nodes_.at(loss.id);
  if (out.value.size() != 1) throw UsageError("backward: loss must be a scalar, got shape " +
                                              shape_string(out.value.shape()));
  std::vector<Tensor> grads(nodes_.size());
  grads[loss.id] = Tensor(out.value.shape(), 1.0);
  Gradients result = params_ ? zero_gradients(*params_) : Gradients{};

  for (std::int64_t i = loss.id; i >= 0; --i) {
    const auto& node = nodes_[static_cast<std::size_t>(i)];
    Tensor& g = grads[static_cast<std::size_t>(i)];
    if (g.empty()) continue;
    if (node.op == OpKind::parameter) {
      result[static_cast<std::size_t>(node.param)] = std::move(g);
      continue;
    }
    backprop_node(node, g, grads);
    g = Tensor();  // release early
  }
  return result;
}

void Tape::backprop_node(const Node& node, const Tensor& grad, std::vector<Tensor>& grads) const {
  auto slot = [&](std::uint32_t id) -> Tensor& {
    Tensor& g = grads[id];
    if (g.empty()) g = Tensor(nodes_[id].value.shape());
    return g;
  };
  auto axpy = [](Tensor& dst, const Tensor& src, double s) {
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s * src[j];
  };
  const auto& in = node.inputs;
  switch (node.op) {
    case OpKind::constant:
    case OpKind::parameter:
      break;
    case OpKind::conv2d: {
      const Tensor& x = nodes_[in[0]].value;
      const Tensor& k = nodes_[in[1]].value;
      Tensor* gb = in.size() > 2 ? &slot(in[2]) : nullptr;
      // Constants never need gradients; skip their buffers.
      Tensor* gx = nodes_[in[0]].op == OpKind::constant ? nullptr : &slot(in[0]);
      Tensor* gk = nodes_[in[1]].op == OpKind::constant ? nullptr : &slot(in[1]);
      ops::conv2d_same_backward(x, k, grad, gx, gk, gb);
      break;
    }
    case OpKind::add:
      axpy(slot(in[0]), grad, 1.0);
      axpy(slot(in[1]), grad, 1.0);
      break;
    case OpKind::sub:
      axpy(slot(in[0]), grad, 1.0);
      axpy(slot(in[1]), grad, -1.0);
      break;
    case OpKind::mul: {
      const Tensor& a = nodes_[in[0]].value;
      const Tensor& b = nodes_[in[1]].value;
      Tensor& ga = slot(in[0]);
      for (std::size_t j = 0; j < grad.size(); ++j) ga[j] += grad[j] * b[j];
      Tensor& gb = slot(in[1]);
      for (std::size_t j = 0; j < grad.size(); ++j) gb[j] += grad[j] * a[j];
      break;
    }
    case OpKind::scale:
      axpy(slot(in[0]), grad, node.scalar);
      break;
    case OpKind::sigmoid: {
      Tensor& ga = slot(in[0]);
      const Tensor& y = node.value;
      for (std::size_t j = 0; j < grad.size(); ++j) ga[j] += grad[j] * y[j] * (1.0 - y[j]);
      break;
    }
    case OpKind::tanh: {
      Tensor& ga = slot(in[0]);
      const Tensor& y = node.value;
      for (std::size_t j = 0; j < grad.size(); ++j) ga[j] += grad[j] * (1.0 - y[j] * y[j]);
      break;
    }
    case OpKind::relu: {
      Tensor& ga = slot(in[0]);
      const Tensor& x = nodes_[in[0]].value;
      for (std::size_t j = 0; j < grad.size(); ++j)
        if (x[j] > 0) ga[j] += grad[j];
      break;
    }
    case OpKind::concat: {
      std::size_t offset = 0;
      for (auto id : in) {
        Tensor& gp = slot(id);
        for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += grad[offset + j];
        offset += gp.size();
      }
      break;
    }
    case OpKind::mse: {
      const Tensor& p = nodes_[in[0]].value;
      const Tensor& t = nodes_[in[1]].value;
      const double c = 2.0 * grad[0] / static_cast<double>(p.size());
      Tensor& gp = slot(in[0]);
      for (std::size_t j = 0; j < p.size(); ++j) gp[j] += c * (p[j] - t[j]);
      if (nodes_[in[1]].op != OpKind::constant) {
        Tensor& gt = slot(in[1]);
        for (std::size_t j = 0; j < p.size(); ++j) gt[j] -= c * (p[j] - t[j]);
      }
      break;
    }
  }
}

namespace ad {
namespace {

Tape& same_tape(Var a, Var b) {
  if (!a.tape || a.tape != b.tape) throw UsageError("operands recorded on different tapes");
  return *a.tape;
}

}  // namespace

Var conv2d_same(Var x, Var k, std::optional<Var> bias) {
  Tape& t = same_tape(x, k);
  if (bias) {
    same_tape(x, *bias);
    return t.push(OpKind::conv2d, {x.id, k.id, bias->id},
                  ops::conv2d_same(x.value(), k.value(), &bias->value()));
  }
  return t.push(OpKind::conv2d, {x.id, k.id}, ops::conv2d_same(x.value(), k.value(), nullptr));
}

Var add(Var a, Var b) {
  return same_tape(a, b).push(OpKind::add, {a.id, b.id}, ops::add(a.value(), b.value()));
}
Var sub(Var a, Var b) {
  return same_tape(a, b).push(OpKind::sub, {a.id, b.id}, ops::sub(a.value(), b.value()));
}
Var mul(Var a, Var b) {
  return same_tape(a, b).push(OpKind::mul, {a.id, b.id}, ops::mul(a.value(), b.value()));
}
Var scale(Var a, double s) {
  return a.tape->push(OpKind::scale, {a.id}, ops::scale(a.value(), s), s);
}
Var sigmoid(Var a) { return a.tape->push(OpKind::sigmoid, {a.id}, ops::sigmoid(a.value())); }
Var tanh(Var a) { return a.tape->push(OpKind::tanh, {a.id}, ops::tanh(a.value())); }
Var relu(Var a) { return a.tape->push(OpKind::relu, {a.id}, ops::relu(a.value())); }

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_channels of nothing");
  Tape& t = *parts[0].tape;
  const auto& first = parts[0].value();
  if (first.rank() != 3) throw ConfigError("concat_channels expects [C,H,W] tensors");
  std::size_t channels = 0;
  std::vector<std::uint32_t> ids;
  for (const auto& p : parts) {
    same_tape(parts[0], p);
    const auto& v = p.value();
    if (v.rank() != 3 || v.dim(1) != first.dim(1) || v.dim(2) != first.dim(2))
      throw ConfigError("concat_channels: spatial mismatch " + shape_string(v.shape()));
    channels += v.dim(0);
    ids.push_back(p.id);
  }
  std::vector<double> data;
  data.reserve(channels * first.dim(1) * first.dim(2));
  for (const auto& p : parts) {
    auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  return t.push(OpKind::concat, std::move(ids),
                Tensor({channels, first.dim(1), first.dim(2)}, std::move(data)));
}

Var mse(Var pred, Var target) {
  Tape& t = same_tape(pred, target);
  return t.push(OpKind::mse, {pred.id, target.id},
                Tensor::scalar(ops::mse(pred.value(), target.value())));
}

}  // namespace ad
}  // namespace convlstm
