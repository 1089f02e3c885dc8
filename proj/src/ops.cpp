#include "convlstm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "convlstm/errors.hpp"

namespace convlstm::ops {
namespace {

struct ConvGeometry {
  std::size_t cin, h, w, cout, kh, kw;
  std::ptrdiff_t ph, pw;
};

ConvGeometry check_conv(const Tensor& input, const Tensor& kernels, const Tensor* bias) {
  if (input.rank() != 3) throw ConfigError("conv2d_same: input must be [C,H,W], got " +
                                           shape_string(input.shape()));
  if (kernels.rank() != 4)
    throw ConfigError("conv2d_same: kernels must be [Cout,Cin,kH,kW], got " +
                      shape_string(kernels.shape()));
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), kernels.dim(0), kernels.dim(2),
                 kernels.dim(3), 0, 0};
  if (kernels.dim(1) != g.cin)
    throw ConfigError("conv2d_same: input has " + std::to_string(g.cin) +
                      " channels, kernels expect " + std::to_string(kernels.dim(1)));
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ConfigError("conv2d_same: kernel size must be odd");
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.cout))
    throw ConfigError("conv2d_same: bias must be [Cout]");
  g.ph = static_cast<std::ptrdiff_t>(g.kh / 2);
  g.pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  return g;
}

// Unfolds the zero-padded input into rows indexed by (ci, dy, dx), each
// holding one shifted copy of the H*W plane.
std::vector<double> im2col(const ConvGeometry& g, const double* in) {
  const std::size_t plane = g.h * g.w;
  const auto H = static_cast<std::ptrdiff_t>(g.h);
  const auto W = static_cast<std::ptrdiff_t>(g.w);
  std::vector<double> cols(g.cin * g.kh * g.kw * plane, 0.0);
  double* row = cols.data();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* ip = in + ci * plane;
    for (std::size_t dy = 0; dy < g.kh; ++dy) {
      const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - g.ph;
      const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -oy);
      const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H, H - oy);
      for (std::size_t dx = 0; dx < g.kw; ++dx, row += plane) {
        const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - g.pw;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -ox);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - ox);
        if (x1 <= x0) continue;
        for (std::ptrdiff_t y = y0; y < y1; ++y)
          std::copy(ip + (y + oy) * W + x0 + ox, ip + (y + oy) * W + x1 + ox, row + y * W + x0);
      }
    }
  }
  return cols;
}

// Adds the rows of `cols` back onto the input positions they were copied from.
void col2im_add(const ConvGeometry& g, const double* cols, double* in) {
  const std::size_t plane = g.h * g.w;
  const auto H = static_cast<std::ptrdiff_t>(g.h);
  const auto W = static_cast<std::ptrdiff_t>(g.w);
  const double* row = cols;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* ip = in + ci * plane;
    for (std::size_t dy = 0; dy < g.kh; ++dy) {
      const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - g.ph;
      const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -oy);
      const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H, H - oy);
      for (std::size_t dx = 0; dx < g.kw; ++dx, row += plane) {
        const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - g.pw;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -ox);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - ox);
        for (std::ptrdiff_t y = y0; y < y1; ++y) {
          double* dst = ip + (y + oy) * W + ox;
          const double* src = row + y * W;
          for (std::ptrdiff_t x = x0; x < x1; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* what, F f) {
  require_same_shape(a, b, what);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace

Tensor conv2d_same(const Tensor& input, const Tensor& kernels, const Tensor* bias) {
  const auto g = check_conv(input, kernels, bias);
  const std::size_t plane = g.h * g.w, taps = g.cin * g.kh * g.kw;
  const auto cols = im2col(g, input.raw());
  Tensor out({g.cout, g.h, g.w});
  const double* k = kernels.raw();
  if (bias)
    for (std::size_t co = 0; co < g.cout; ++co)
      std::fill(out.raw() + co * plane, out.raw() + (co + 1) * plane, (*bias)[co]);
  // Four output channels per pass share each loaded input row.
  std::size_t co = 0;
  for (; co + 4 <= g.cout; co += 4) {
    double* o0 = out.raw() + co * plane;
    double* o1 = o0 + plane;
    double* o2 = o1 + plane;
    double* o3 = o2 + plane;
    const double* k0 = k + co * taps;
    for (std::size_t r = 0; r < taps; ++r) {
      const double w0 = k0[r], w1 = k0[taps + r], w2 = k0[2 * taps + r], w3 = k0[3 * taps + r];
      const double* src = cols.data() + r * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = src[p];
        o0[p] += w0 * v;
        o1[p] += w1 * v;
        o2[p] += w2 * v;
        o3[p] += w3 * v;
      }
    }
  }
  for (; co < g.cout; ++co) {
    double* op = out.raw() + co * plane;
    const double* kr = k + co * taps;
    for (std::size_t r = 0; r < taps; ++r) {
      const double wgt = kr[r];
      const double* src = cols.data() + r * plane;
      for (std::size_t p = 0; p < plane; ++p) op[p] += wgt * src[p];
    }
  }
  return out;
}

void conv2d_same_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                          Tensor* grad_input, Tensor* grad_kernels, Tensor* grad_bias) {
  const auto g = check_conv(input, kernels, nullptr);
  const std::size_t plane = g.h * g.w, taps = g.cin * g.kh * g.kw;
  const double* k = kernels.raw();
  const double* go = grad_out.raw();
  if (grad_bias)
    for (std::size_t co = 0; co < g.cout; ++co) {
      double s = 0.0;
      for (std::size_t p = 0; p < plane; ++p) s += go[co * plane + p];
      (*grad_bias)[co] += s;
    }
  if (grad_kernels) {
    const auto cols = im2col(g, input.raw());
    double* gk = grad_kernels->raw();
    // Transposed columns make the tap index contiguous: gk[co][:] += go[co][p] * colsT[p][:].
    std::vector<double> cols_t(plane * taps);
    for (std::size_t r = 0; r < taps; ++r)
      for (std::size_t p = 0; p < plane; ++p) cols_t[p * taps + r] = cols[r * plane + p];
    for (std::size_t co = 0; co < g.cout; ++co) {
      const double* gop = go + co * plane;
      double* gkr = gk + co * taps;
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = gop[p];
        const double* src = cols_t.data() + p * taps;
        for (std::size_t r = 0; r < taps; ++r) gkr[r] += v * src[r];
      }
    }
  }
  if (grad_input) {
    std::vector<double> gcols(taps * plane, 0.0);
    std::size_t co = 0;
    for (; co + 4 <= g.cout; co += 4) {
      const double* g0 = go + co * plane;
      const double* g1 = g0 + plane;
      const double* g2 = g1 + plane;
      const double* g3 = g2 + plane;
      const double* k0 = k + co * taps;
      for (std::size_t r = 0; r < taps; ++r) {
        const double w0 = k0[r], w1 = k0[taps + r], w2 = k0[2 * taps + r], w3 = k0[3 * taps + r];
        double* dst = gcols.data() + r * plane;
        for (std::size_t p = 0; p < plane; ++p)
          dst[p] += w0 * g0[p] + w1 * g1[p] + w2 * g2[p] + w3 * g3[p];
      }
    }
    for (; co < g.cout; ++co) {
      const double* gop = go + co * plane;
      const double* kr = k + co * taps;
      for (std::size_t r = 0; r < taps; ++r) {
        const double wgt = kr[r];
        double* dst = gcols.data() + r * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] += wgt * gop[p];
      }
    }
    col2im_add(g, gcols.data(), grad_input->raw());
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor scale(const Tensor& a, double s) {
  return map(a, [s](double x) { return s * x; });
}

double sigmoid(double x) {
  // Split on sign so exp never overflows.
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& a) {
  return map(a, [](double x) { return sigmoid(x); });
}
Tensor tanh(const Tensor& a) {
  return map(a, [](double x) { return std::tanh(x); });
}
Tensor relu(const Tensor& a) {
  return map(a, [](double x) { return x > 0 ? x : 0.0; });
}

double mse(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse");
  if (pred.empty()) throw DomainError("mse of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

Tensor xavier_init(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  if (fan_in == 0 || fan_out == 0) throw ConfigError("xavier_init: fans must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor out(std::move(shape));
  for (auto& v : out.data()) v = rng.uniform(-bound, bound);
  return out;
}

}  // namespace convlstm::ops
