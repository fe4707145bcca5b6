#pragma once

#include "corrnet/autograd.hpp"
#include "corrnet/ops.hpp"

#include <cstdint>
#include <random>

namespace corrnet::testing {

template <typename S = double>
Tensor<S> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(std::move(shape));
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t[i] = S(dist(gen));
  return t;
}

/// Direct loop convolution over [T, C, H, W] (or [T, C] with a [Co, C/g, K] kernel),
/// cross-correlation with symmetric zero padding dilation * (k - 1) / 2.
template <typename S>
Tensor<S> naive_conv(const Tensor<S>& x, const Tensor<S>& k, const ConvSpec& spec) {
  const bool temporal = x.rank() == 2;
  const Index T = x.dim(0), H = temporal ? 1 : x.dim(2), W = temporal ? 1 : x.dim(3);
  const Index Co = k.dim(0), Cg = k.dim(1), G = spec.groups, Cog = Co / G;
  const Index Kt = spec.kernel[0], Kh = spec.kernel[1], Kw = spec.kernel[2];
  const Index To = (T + 2 * spec.padding(0) - spec.dilation[0] * (Kt - 1) - 1) / spec.stride[0] + 1;
  const Index Ho = (H + 2 * spec.padding(1) - spec.dilation[1] * (Kh - 1) - 1) / spec.stride[1] + 1;
  const Index Wo = (W + 2 * spec.padding(2) - spec.dilation[2] * (Kw - 1) - 1) / spec.stride[2] + 1;
  Tensor<S> out(temporal ? Shape{To, Co} : Shape{To, Co, Ho, Wo});
  auto xin = [&](Index t, Index c, Index h, Index w) -> S {
    if (t < 0 || t >= T || h < 0 || h >= H || w < 0 || w >= W) return S(0);
    return temporal ? x.at({t, c}) : x.at({t, c, h, w});
  };
  auto kval = [&](Index o, Index ci, Index a, Index b, Index d) -> S {
    return temporal ? k.at({o, ci, a}) : k.at({o, ci, a, b, d});
  };
  for (Index t = 0; t < To; ++t)
    for (Index o = 0; o < Co; ++o)
      for (Index i = 0; i < Ho; ++i)
        for (Index j = 0; j < Wo; ++j) {
          const Index g = o / Cog;
          S acc = 0;
          for (Index ci = 0; ci < Cg; ++ci)
            for (Index a = 0; a < Kt; ++a)
              for (Index b = 0; b < Kh; ++b)
                for (Index d = 0; d < Kw; ++d) {
                  const Index tt = t * spec.stride[0] - spec.padding(0) + a * spec.dilation[0];
                  const Index hh = i * spec.stride[1] - spec.padding(1) + b * spec.dilation[1];
                  const Index ww = j * spec.stride[2] - spec.padding(2) + d * spec.dilation[2];
                  acc += kval(o, ci, a, b, d) * xin(tt, g * Cg + ci, hh, ww);
                }
          if (temporal) out.at({t, o}) = acc;
          else out.at({t, o, i, j}) = acc;
        }
  return out;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace corrnet::testing
