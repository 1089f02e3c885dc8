#pragma once

#include <cstddef>

#include "convlstm/rng.hpp"
#include "convlstm/tensor.hpp"

// Value-level kernels. The autodiff tape calls these for its forward and
// backward rules; they are also usable directly on plain tensors.
namespace convlstm::ops {

// Same-size cross-correlation with zero padding. input [Cin,H,W],
// kernels [Cout,Cin,kH,kW] with odd kH/kW, bias [Cout] or nullptr.
Tensor conv2d_same(const Tensor& input, const Tensor& kernels, const Tensor* bias);

// Accumulates (+=) into whichever gradient outputs are non-null.
void conv2d_same_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                          Tensor* grad_input, Tensor* grad_kernels, Tensor* grad_bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);

double sigmoid(double x);

// Mean squared error over all elements.
double mse(const Tensor& pred, const Tensor& target);

// Uniform on +-sqrt(6 / (fan_in + fan_out)).
Tensor xavier_init(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace convlstm::ops
