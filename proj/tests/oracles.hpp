// Independent reference implementations used by the tests. These avoid the
// library's own kernels so agreement is meaningful.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "convlstm/anomaly.hpp"
#include "convlstm/network.hpp"
#include "convlstm/rng.hpp"
#include "convlstm/tensor.hpp"

namespace oracle {

using convlstm::Tensor;

inline Tensor random_tensor(convlstm::Shape shape, convlstm::Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Zero-padded same-size cross-correlation, one output element at a time.
inline Tensor conv(const Tensor& in, const Tensor& k, const Tensor* bias) {
  const std::size_t ci = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  Tensor out({co, h, w});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = bias ? (*bias)[o] : 0.0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const long yy = static_cast<long>(y + dy) - ph;
              const long xx = static_cast<long>(x + dx) - pw;
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w))
                continue;
              s += k[((o * ci + c) * kh + dy) * kw + dx] *
                   in.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            }
        out.at(o, y, x) = s;
      }
  return out;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// The Conv-LSTM cell written out per element.
inline convlstm::CellState cell_step(const convlstm::ConvLSTMCellParams& p, const Tensor& x,
                                     const convlstm::CellState& prev) {
  const Tensor xi = conv(x, p.w_xi, nullptr), hi = conv(prev.h, p.w_hi, nullptr);
  const Tensor xf = conv(x, p.w_xf, nullptr), hf = conv(prev.h, p.w_hf, nullptr);
  const Tensor xc = conv(x, p.w_xc, nullptr), hc = conv(prev.h, p.w_hc, nullptr);
  const Tensor xo = conv(x, p.w_xo, nullptr), ho = conv(prev.h, p.w_ho, nullptr);
  const std::size_t ch = prev.c.dim(0), hw = prev.c.dim(1) * prev.c.dim(2);
  convlstm::CellState next{Tensor(prev.h.shape()), Tensor(prev.c.shape())};
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t j = 0; j < hw; ++j) {
      const std::size_t i = c * hw + j;
      const double cp = prev.c[i];
      const double ig = sig(xi[i] + hi[i] + p.w_ci[i] * cp + p.b_i[c]);
      const double fg = sig(xf[i] + hf[i] + p.w_cf[i] * cp + p.b_f[c]);
      const double cn = fg * cp + ig * std::tanh(xc[i] + hc[i] + p.b_c[c]);
      const double og = sig(xo[i] + ho[i] + p.w_co[i] * cn + p.b_o[c]);
      next.c[i] = cn;
      next.h[i] = og * std::tanh(cn);
    }
  return next;
}

inline convlstm::ConvLSTMCellParams random_cell(std::size_t cin, std::size_t ch, std::size_t side,
                                                std::size_t k, convlstm::Rng& rng, double amp = 0.5) {
  auto kin = [&] { return random_tensor({ch, cin, k, k}, rng, -amp, amp); };
  auto khid = [&] { return random_tensor({ch, ch, k, k}, rng, -amp, amp); };
  auto peep = [&] { return random_tensor({ch, side, side}, rng, -amp, amp); };
  auto bias = [&] { return random_tensor({ch}, rng, -amp, amp); };
  return {kin(), khid(), kin(), khid(), kin(), khid(), kin(), khid(),
          peep(), peep(), peep(), bias(), bias(), bias(), bias()};
}

// (value, index) order used to break ties.
inline bool below(const std::vector<double>& f, std::size_t a, std::size_t b) {
  return f[a] < f[b] || (f[a] == f[b] && a < b);
}

// Path-based persistence. A minimum is an element whose neighbours both come
// later in (value, index) order. Walking left or right until the first
// element that precedes it, the highest element passed is where the two
// sublevel components meet; the minimum dies at the lower of the two meeting
// points. The global minimum has no such element and pairs with the global
// maximum. O(n^2).
inline std::vector<convlstm::ExtremaPair> persistence(const std::vector<double>& f) {
  const std::size_t n = f.size();
  std::vector<convlstm::ExtremaPair> out;
  std::size_t gmax = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (below(f, gmax, i)) gmax = i;
  for (std::size_t m = 0; m < n; ++m) {
    const bool left_ok = m == 0 || below(f, m, m - 1);
    const bool right_ok = m + 1 == n || below(f, m, m + 1);
    if (!left_ok || !right_ok) continue;
    constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
    std::size_t left_peak = none, right_peak = none;
    {
      std::size_t peak = m;
      for (std::size_t i = m; i-- > 0;) {
        if (below(f, i, m)) {
          left_peak = peak;
          break;
        }
        if (below(f, peak, i)) peak = i;
      }
    }
    {
      std::size_t peak = m;
      for (std::size_t i = m + 1; i < n; ++i) {
        if (below(f, i, m)) {
          right_peak = peak;
          break;
        }
        if (below(f, peak, i)) peak = i;
      }
    }
    std::size_t death;
    if (left_peak == none && right_peak == none) death = gmax;
    else if (left_peak == none) death = right_peak;
    else if (right_peak == none) death = left_peak;
    else death = below(f, left_peak, right_peak) ? left_peak : right_peak;
    out.push_back({m, f[m], death, f[death]});
  }
  return out;
}

}  // namespace oracle
