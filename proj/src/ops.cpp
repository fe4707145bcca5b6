#include "corrnet/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace corrnet {

void ConvSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1) throw ShapeError("conv: kernel extent must be positive");
    if (kernel[a] % 2 == 0) throw ShapeError("conv: length-preserving padding needs odd kernels");
    if (dilation[a] < 1) throw ShapeError("conv: dilation must be >= 1");
    if (stride[a] < 1) throw ShapeError("conv: stride must be >= 1");
  }
  if (groups < 1) throw ShapeError("conv: groups must be positive");
}

namespace {

template <typename S>
using RowMatrix = typename Tensor<S>::Matrix;

// Trailing extent of a [T, C, ...] operand.
Index trailing(const Shape& s) {
  Index n = 1;
  for (std::size_t i = 2; i < s.size(); ++i) n *= s[i];
  return n;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

struct ConvPlan {
  ConvSpec spec;
  bool temporal_only = false;
  Index T = 0, C = 0, H = 1, W = 1;
  Index Co = 0, Cg = 0, Cog = 0, G = 1;
  Index To = 0, Ho = 1, Wo = 1;

  Index krows() const { return Cg * spec.kernel[0] * spec.kernel[1] * spec.kernel[2]; }
  Index ncols() const { return To * Ho * Wo; }
  Shape output_shape() const {
    return temporal_only ? Shape{To, Co} : Shape{To, Co, Ho, Wo};
  }
};

ConvPlan make_plan(const Shape& xs, const Shape& ks, const ConvSpec& spec) {
  spec.validate();
  ConvPlan p;
  p.spec = spec;
  if (xs.size() == 2) {
    require(ks.size() == 3, "conv_nd: [T,C] input needs a [Co,C/g,K] kernel");
    require(spec.kernel[1] == 1 && spec.kernel[2] == 1 && spec.stride[1] == 1 && spec.stride[2] == 1,
            "conv_nd: temporal input with spatial kernel extent");
    p.temporal_only = true;
    p.T = xs[0];
    p.C = xs[1];
    require(ks[2] == spec.kernel[0], "conv_nd: kernel tensor does not match spec extents");
  } else if (xs.size() == 4) {
    require(ks.size() == 5, "conv_nd: [T,C,H,W] input needs a [Co,C/g,Kt,Kh,Kw] kernel");
    p.T = xs[0];
    p.C = xs[1];
    p.H = xs[2];
    p.W = xs[3];
    require(ks[2] == spec.kernel[0] && ks[3] == spec.kernel[1] && ks[4] == spec.kernel[2],
            "conv_nd: kernel tensor does not match spec extents");
  } else {
    throw ShapeError("conv_nd: input must be [T,C] or [T,C,H,W], got " + to_string(xs));
  }
  p.G = spec.groups;
  p.Co = ks[0];
  p.Cg = ks[1];
  require(p.C % p.G == 0, "conv_nd: groups do not divide input channels");
  require(p.Co % p.G == 0, "conv_nd: groups do not divide output channels");
  require(p.Cg == p.C / p.G, "conv_nd: kernel input channels != C / groups");
  p.Cog = p.Co / p.G;
  p.To = spec.output_extent(0, p.T);
  p.Ho = spec.output_extent(1, p.H);
  p.Wo = spec.output_extent(2, p.W);
  require(p.To > 0 && p.Ho > 0 && p.Wo > 0, "conv_nd: empty output extent");
  return p;
}

template <typename S>
void im2col(const ConvPlan& p, const S* x, Index g, RowMatrix<S>& cols) {
  const auto& k = p.spec.kernel;
  const auto& d = p.spec.dilation;
  const auto& s = p.spec.stride;
  const Index pt = p.spec.padding(0), ph = p.spec.padding(1), pw = p.spec.padding(2);
  cols.resize(p.krows(), p.ncols());
  for (Index ci = 0; ci < p.Cg; ++ci) {
    const Index c = g * p.Cg + ci;
    for (Index kt = 0; kt < k[0]; ++kt)
      for (Index kh = 0; kh < k[1]; ++kh)
        for (Index kw = 0; kw < k[2]; ++kw) {
          const Index row = ((ci * k[0] + kt) * k[1] + kh) * k[2] + kw;
          S* dst = cols.row(row).data();
          for (Index to = 0; to < p.To; ++to) {
            const Index ti = to * s[0] - pt + kt * d[0];
            S* plane = dst + to * p.Ho * p.Wo;
            if (ti < 0 || ti >= p.T) {
              std::fill(plane, plane + p.Ho * p.Wo, S(0));
              continue;
            }
            const S* src = x + (ti * p.C + c) * p.H * p.W;
            for (Index ho = 0; ho < p.Ho; ++ho) {
              const Index hi = ho * s[1] - ph + kh * d[1];
              S* line = plane + ho * p.Wo;
              if (hi < 0 || hi >= p.H) {
                std::fill(line, line + p.Wo, S(0));
                continue;
              }
              const S* srow = src + hi * p.W;
              for (Index wo = 0; wo < p.Wo; ++wo) {
                const Index wi = wo * s[2] - pw + kw * d[2];
                line[wo] = (wi >= 0 && wi < p.W) ? srow[wi] : S(0);
              }
            }
          }
        }
  }
}

template <typename S>
void col2im_add(const ConvPlan& p, const RowMatrix<S>& cols, Index g, S* dx) {
  const auto& k = p.spec.kernel;
  const auto& d = p.spec.dilation;
  const auto& s = p.spec.stride;
  const Index pt = p.spec.padding(0), ph = p.spec.padding(1), pw = p.spec.padding(2);
  for (Index ci = 0; ci < p.Cg; ++ci) {
    const Index c = g * p.Cg + ci;
    for (Index kt = 0; kt < k[0]; ++kt)
      for (Index kh = 0; kh < k[1]; ++kh)
        for (Index kw = 0; kw < k[2]; ++kw) {
          const Index row = ((ci * k[0] + kt) * k[1] + kh) * k[2] + kw;
          const S* src = cols.row(row).data();
          for (Index to = 0; to < p.To; ++to) {
            const Index ti = to * s[0] - pt + kt * d[0];
            if (ti < 0 || ti >= p.T) continue;
            const S* plane = src + to * p.Ho * p.Wo;
            S* dst = dx + (ti * p.C + c) * p.H * p.W;
            for (Index ho = 0; ho < p.Ho; ++ho) {
              const Index hi = ho * s[1] - ph + kh * d[1];
              if (hi < 0 || hi >= p.H) continue;
              const S* line = plane + ho * p.Wo;
              S* drow = dst + hi * p.W;
              for (Index wo = 0; wo < p.Wo; ++wo) {
                const Index wi = wo * s[2] - pw + kw * d[2];
                if (wi >= 0 && wi < p.W) drow[wi] += line[wo];
              }
            }
          }
        }
  }
}

template <typename S>
Tensor<S> conv_forward(const ConvPlan& p, const Tensor<S>& x, const Tensor<S>& kernel,
                       std::vector<RowMatrix<S>>* saved_cols) {
  Tensor<S> out(p.output_shape());
  const Index plane = p.Ho * p.Wo;
  RowMatrix<S> cols;
  RowMatrix<S> res;
  for (Index g = 0; g < p.G; ++g) {
    im2col(p, x.data(), g, cols);
    Eigen::Map<const RowMatrix<S>> wg(kernel.data() + g * p.Cog * p.krows(), p.Cog, p.krows());
    res.noalias() = wg * cols;
    for (Index to = 0; to < p.To; ++to)
      for (Index co = 0; co < p.Cog; ++co) {
        const S* src = res.row(co).data() + to * plane;
        std::copy(src, src + plane, out.data() + (to * p.Co + g * p.Cog + co) * plane);
      }
    if (saved_cols) saved_cols->push_back(std::move(cols));
  }
  return out;
}

template <typename S>
S stable_sigmoid(S x) {
  if (x >= 0) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
void check_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

}  // namespace

template <typename S>
Tensor<S> conv_nd(const Tensor<S>& input, const Tensor<S>& kernel, const ConvSpec& spec) {
  const auto plan = make_plan(input.shape(), kernel.shape(), spec);
  return conv_forward<S>(plan, input, kernel, nullptr);
}

template <typename S>
Tensor<S> pool_spatial(const Tensor<S>& input, PoolMode mode) {
  if (input.rank() != 4) throw ShapeError("pool_spatial: expected [T,C,H,W]");
  const Index T = input.dim(0), C = input.dim(1), P = input.dim(2) * input.dim(3);
  if (P == 0) throw ShapeError("pool_spatial: empty spatial extent");
  Tensor<S> out({T, C, 1, 1});
  auto in = input.matrix(T * C, P);
  if (mode == PoolMode::Average) {
    out.vec() = in.rowwise().sum() / S(P);
  } else {
    out.vec() = in.rowwise().maxCoeff();
  }
  return out;
}

template <typename S>
Tensor<S> softmax_lastaxis(const Tensor<S>& input) {
  if (input.rank() == 0 || input.size() == 0) return input;
  const Index n = input.dim(input.rank() - 1);
  Tensor<S> out(input.shape());
  auto in = input.matrix(input.size() / n, n);
  auto o = out.matrix(input.size() / n, n);
  for (Index r = 0; r < in.rows(); ++r) {
    const S m = in.row(r).maxCoeff();
    o.row(r) = (in.row(r).array() - m).exp().matrix();
    o.row(r) /= o.row(r).sum();
  }
  return out;
}

template <typename S>
S centered_sigmoid(S x) {
  static const S bound = std::nextafter(S(0.5), S(0));
  const S v = S(0.5) * std::tanh(x / S(2));
  return std::clamp(v, -bound, bound);
}

namespace ops {

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a, b, "add");
  Tensor<S> out(a.shape());
  out.vec() = a.value().vec() + b.value().vec();
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Tensor<S>& g) {
    if (t.requires_grad(a)) t.grad(a).vec() += g.vec();
    if (t.requires_grad(b)) t.grad(b).vec() += g.vec();
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a, b, "sub");
  Tensor<S> out(a.shape());
  out.vec() = a.value().vec() - b.value().vec();
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Tensor<S>& g) {
    if (t.requires_grad(a)) t.grad(a).vec() += g.vec();
    if (t.requires_grad(b)) t.grad(b).vec() -= g.vec();
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a, b, "mul");
  Tensor<S> out(a.shape());
  out.vec() = a.value().vec().cwiseProduct(b.value().vec());
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Tensor<S>& g) {
    if (t.requires_grad(a)) t.grad(a).vec() += g.vec().cwiseProduct(t.value(b.id()).vec());
    if (t.requires_grad(b)) t.grad(b).vec() += g.vec().cwiseProduct(t.value(a.id()).vec());
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out(a.shape());
  out.vec() = a.value().vec() * factor;
  return a.tape().push(std::move(out), {a}, [a, factor](Tape<S>& t, const Tensor<S>& g) {
    t.grad(a).vec() += g.vec() * factor;
  });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S offset) {
  Tensor<S> out(a.shape());
  out.vec() = a.value().vec().array() + offset;
  return a.tape().push(std::move(out), {a},
                       [a](Tape<S>& t, const Tensor<S>& g) { t.grad(a).vec() += g.vec(); });
}

template <typename S>
Var<S> scale_by(const Var<S>& a, const Var<S>& gain) {
  if (gain.value().size() != 1) throw ShapeError("scale_by: gain must hold one value");
  Tensor<S> out(a.shape());
  out.vec() = a.value().vec() * gain.value()[0];
  return a.tape().push(std::move(out), {a, gain}, [a, gain](Tape<S>& t, const Tensor<S>& g) {
    if (t.requires_grad(a)) t.grad(a).vec() += g.vec() * t.value(gain.id())[0];
    if (t.requires_grad(gain)) t.grad(gain)[0] += g.vec().dot(t.value(a.id()).vec());
  });
}

template <typename S>
Var<S> mix(const std::vector<Var<S>>& terms, const Var<S>& coeffs) {
  if (terms.empty()) throw ShapeError("mix: no terms");
  if (coeffs.value().size() != static_cast<Index>(terms.size())) {
    throw ShapeError("mix: coefficient count does not match term count");
  }
  Tensor<S> out(terms.front().shape());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].shape() != out.shape()) throw ShapeError("mix: terms differ in shape");
    out.vec() += coeffs.value()[static_cast<Index>(i)] * terms[i].value().vec();
  }
  std::vector<Var<S>> parents(terms);
  parents.push_back(coeffs);
  return coeffs.tape().push(std::move(out), parents, [terms, coeffs](Tape<S>& t, const Tensor<S>& g) {
    const auto& c = t.value(coeffs.id());
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const auto idx = static_cast<Index>(i);
      if (t.requires_grad(terms[i])) t.grad(terms[i]).vec() += c[idx] * g.vec();
      if (t.requires_grad(coeffs)) t.grad(coeffs)[idx] += g.vec().dot(t.value(terms[i].id()).vec());
    }
  });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  Tensor<S> out(a.shape());
  const auto& x = a.value();
  for (Index i = 0; i < x.size(); ++i) out[i] = x[i] > S(0) ? x[i] : S(0);
  return a.tape().push(std::move(out), {a}, [a](Tape<S>& t, const Tensor<S>& g) {
    const auto& x = t.value(a.id());
    auto& ga = t.grad(a);
    for (Index i = 0; i < x.size(); ++i)
      if (x[i] > S(0)) ga[i] += g[i];
  });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  Tensor<S> out(a.shape());
  const auto& x = a.value();
  for (Index i = 0; i < x.size(); ++i) out[i] = stable_sigmoid(x[i]);
  auto self = std::make_shared<std::size_t>(0);
  auto v = a.tape().push(std::move(out), {a}, [a, self](Tape<S>& t, const Tensor<S>& g) {
    const auto& y = t.value(*self);
    t.grad(a).vec().array() += g.vec().array() * y.vec().array() * (S(1) - y.vec().array());
  });
  *self = v.id();
  return v;
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  Tensor<S> out(a.shape());
  out.vec() = a.value().vec().array().tanh();
  auto self = std::make_shared<std::size_t>(0);
  auto v = a.tape().push(std::move(out), {a}, [a, self](Tape<S>& t, const Tensor<S>& g) {
    const auto& y = t.value(*self);
    t.grad(a).vec().array() += g.vec().array() * (S(1) - y.vec().array().square());
  });
  *self = v.id();
  return v;
}

template <typename S>
Var<S> centered_sigmoid(const Var<S>& a) {
  Tensor<S> out(a.shape());
  const auto& x = a.value();
  for (Index i = 0; i < x.size(); ++i) out[i] = corrnet::centered_sigmoid(x[i]);
  auto self = std::make_shared<std::size_t>(0);
  auto v = a.tape().push(std::move(out), {a}, [a, self](Tape<S>& t, const Tensor<S>& g) {
    // d/dx [sigmoid(x) - 1/2] = 1/4 - (sigmoid(x) - 1/2)^2
    const auto& y = t.value(*self);
    t.grad(a).vec().array() += g.vec().array() * (S(0.25) - y.vec().array().square());
  });
  *self = v.id();
  return v;
}

template <typename S>
Var<S> sum(const Var<S>& a) {
  auto out = Tensor<S>::scalar(a.value().vec().sum());
  return a.tape().push(std::move(out), {a}, [a](Tape<S>& t, const Tensor<S>& g) {
    t.grad(a).vec().array() += g[0];
  });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  const Index n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty operand");
  auto out = Tensor<S>::scalar(a.value().vec().sum() / S(n));
  return a.tape().push(std::move(out), {a}, [a, n](Tape<S>& t, const Tensor<S>& g) {
    t.grad(a).vec().array() += g[0] / S(n);
  });
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  auto out = a.value().reshaped(std::move(shape));
  return a.tape().push(std::move(out), {a},
                       [a](Tape<S>& t, const Tensor<S>& g) { t.grad(a).vec() += g.vec(); });
}

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out({m, n});
  out.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
  return a.tape().push(std::move(out), {a, b}, [a, b, m, k, n](Tape<S>& t, const Tensor<S>& g) {
    auto gm = g.matrix(m, n);
    if (t.requires_grad(a))
      t.grad(a).matrix(m, k).noalias() += gm * t.value(b.id()).matrix(k, n).transpose();
    if (t.requires_grad(b))
      t.grad(b).matrix(k, n).noalias() += t.value(a.id()).matrix(m, k).transpose() * gm;
  });
}

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const std::optional<Var<S>>& bias) {
  if (x.value().rank() != 2 || weight.value().rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: incompatible " + to_string(x.shape()) + " and weight " +
                     to_string(weight.shape()));
  }
  const Index n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (bias && bias->value().size() != out_dim) throw ShapeError("linear: bias size mismatch");
  Tensor<S> out({n, out_dim});
  auto o = out.matrix(n, out_dim);
  o.noalias() = x.value().matrix(n, in) * weight.value().matrix(out_dim, in).transpose();
  if (bias) o.rowwise() += bias->value().vec().transpose();
  std::vector<Var<S>> parents{x, weight};
  if (bias) parents.push_back(*bias);
  return x.tape().push(std::move(out), parents,
                       [x, weight, bias, n, in, out_dim](Tape<S>& t, const Tensor<S>& g) {
                         auto gm = g.matrix(n, out_dim);
                         if (t.requires_grad(x))
                           t.grad(x).matrix(n, in).noalias() +=
                               gm * t.value(weight.id()).matrix(out_dim, in);
                         if (t.requires_grad(weight))
                           t.grad(weight).matrix(out_dim, in).noalias() +=
                               gm.transpose() * t.value(x.id()).matrix(n, in);
                         if (bias && t.requires_grad(*bias))
                           t.grad(*bias).vec() += gm.colwise().sum().transpose();
                       });
}

template <typename S>
Var<S> add_channel_bias(const Var<S>& x, const Var<S>& bias) {
  const auto& xs = x.shape();
  if (xs.size() < 2 || bias.value().size() != xs[1]) {
    throw ShapeError("add_channel_bias: bias of size " + std::to_string(bias.value().size()) +
                     " for operand " + to_string(xs));
  }
  const Index T = xs[0], C = xs[1], P = trailing(xs);
  Tensor<S> out = x.value();
  for (Index t = 0; t < T; ++t)
    for (Index c = 0; c < C; ++c) out.vec().segment((t * C + c) * P, P).array() += bias.value()[c];
  return x.tape().push(std::move(out), {x, bias}, [x, bias, T, C, P](Tape<S>& t, const Tensor<S>& g) {
    if (t.requires_grad(x)) t.grad(x).vec() += g.vec();
    if (t.requires_grad(bias)) {
      auto& gb = t.grad(bias);
      for (Index tt = 0; tt < T; ++tt)
        for (Index c = 0; c < C; ++c) gb[c] += g.vec().segment((tt * C + c) * P, P).sum();
    }
  });
}

template <typename S>
Var<S> conv_nd(const Var<S>& x, const Var<S>& kernel, const ConvSpec& spec) {
  auto plan = make_plan(x.shape(), kernel.shape(), spec);
  auto& tape = x.tape();
  const bool keep = tape.recording() && (tape.requires_grad(x) || tape.requires_grad(kernel));
  auto cols = std::make_shared<std::vector<RowMatrix<S>>>();
  auto out = conv_forward<S>(plan, x.value(), kernel.value(), keep ? cols.get() : nullptr);
  return tape.push(std::move(out), {x, kernel}, [x, kernel, plan, cols](Tape<S>& t, const Tensor<S>& g) {
    const Index plane = plan.Ho * plan.Wo;
    const Index N = plan.ncols();
    RowMatrix<S> gout(plan.Cog, N);
    RowMatrix<S> dcols;
    for (Index grp = 0; grp < plan.G; ++grp) {
      for (Index to = 0; to < plan.To; ++to)
        for (Index co = 0; co < plan.Cog; ++co) {
          const S* src = g.data() + (to * plan.Co + grp * plan.Cog + co) * plane;
          std::copy(src, src + plane, gout.row(co).data() + to * plane);
        }
      const auto& cg = (*cols)[static_cast<std::size_t>(grp)];
      if (t.requires_grad(kernel)) {
        Eigen::Map<RowMatrix<S>> dk(t.grad(kernel).data() + grp * plan.Cog * plan.krows(), plan.Cog,
                                    plan.krows());
        dk.noalias() += gout * cg.transpose();
      }
      if (t.requires_grad(x)) {
        Eigen::Map<const RowMatrix<S>> wg(t.value(kernel.id()).data() + grp * plan.Cog * plan.krows(),
                                          plan.Cog, plan.krows());
        dcols.noalias() = wg.transpose() * gout;
        col2im_add(plan, dcols, grp, t.grad(x).data());
      }
    }
  });
}

template <typename S>
Var<S> pool_spatial(const Var<S>& x, PoolMode mode) {
  auto out = corrnet::pool_spatial(x.value(), mode);
  const Index T = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  std::vector<Index> argmax;
  if (mode == PoolMode::Max) {
    argmax.resize(static_cast<std::size_t>(T * C));
    auto in = x.value().matrix(T * C, P);
    for (Index r = 0; r < T * C; ++r) {
      Index best = 0;
      for (Index p = 1; p < P; ++p)
        if (in(r, p) > in(r, best)) best = p;
      argmax[static_cast<std::size_t>(r)] = best;
    }
  }
  return x.tape().push(std::move(out), {x}, [x, mode, T, C, P, argmax](Tape<S>& t, const Tensor<S>& g) {
    auto gx = t.grad(x).matrix(T * C, P);
    if (mode == PoolMode::Average) {
      for (Index r = 0; r < T * C; ++r) gx.row(r).array() += g[r] / S(P);
    } else {
      for (Index r = 0; r < T * C; ++r) gx(r, argmax[static_cast<std::size_t>(r)]) += g[r];
    }
  });
}

template <typename S>
Var<S> max_pool_time(const Var<S>& x, Index window) {
  if (x.value().rank() != 2) throw ShapeError("max_pool_time: expected [T,C]");
  if (window < 1) throw ShapeError("max_pool_time: window must be positive");
  const Index T = x.dim(0), C = x.dim(1), To = T / window;
  Tensor<S> out({To, C});
  std::vector<Index> src(static_cast<std::size_t>(To * C));
  const auto& in = x.value();
  for (Index to = 0; to < To; ++to)
    for (Index c = 0; c < C; ++c) {
      Index best = to * window;
      for (Index k = 1; k < window; ++k)
        if (in[(to * window + k) * C + c] > in[best * C + c]) best = to * window + k;
      src[static_cast<std::size_t>(to * C + c)] = best;
      out[to * C + c] = in[best * C + c];
    }
  return x.tape().push(std::move(out), {x}, [x, src, To, C](Tape<S>& t, const Tensor<S>& g) {
    auto& gx = t.grad(x);
    for (Index to = 0; to < To; ++to)
      for (Index c = 0; c < C; ++c) gx[src[static_cast<std::size_t>(to * C + c)] * C + c] += g[to * C + c];
  });
}

template <typename S>
Var<S> softmax_lastaxis(const Var<S>& x) {
  auto out = corrnet::softmax_lastaxis(x.value());
  auto self = std::make_shared<std::size_t>(0);
  auto v = x.tape().push(std::move(out), {x}, [x, self](Tape<S>& t, const Tensor<S>& g) {
    const auto& y = t.value(*self);
    const Index n = y.dim(y.rank() - 1);
    const Index rows = y.size() / n;
    auto ym = y.matrix(rows, n);
    auto gm = g.matrix(rows, n);
    auto gx = t.grad(x).matrix(rows, n);
    for (Index r = 0; r < rows; ++r) {
      const S dot = ym.row(r).dot(gm.row(r));
      gx.row(r).array() += ym.row(r).array() * (gm.row(r).array() - dot);
    }
  });
  *self = v.id();
  return v;
}

template <typename S>
Var<S> broadcast_mul_spatial(const Var<S>& x, const Var<S>& e) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("broadcast_mul_spatial: expected [T,C,H,W] operand");
  const Index T = xs[0], C = xs[1], P = xs[2] * xs[3];
  const auto& es = e.shape();
  const bool ok = (es == Shape{T, C}) || (es == Shape{T, C, 1, 1});
  if (!ok) {
    throw ShapeError("broadcast_mul_spatial: cannot broadcast " + to_string(es) + " over " +
                     to_string(xs));
  }
  Tensor<S> out(xs);
  auto xm = x.value().matrix(T * C, P);
  auto om = out.matrix(T * C, P);
  om = (xm.array().colwise() * e.value().vec().array()).matrix();
  return x.tape().push(std::move(out), {x, e}, [x, e, T, C, P](Tape<S>& t, const Tensor<S>& g) {
    auto gm = g.matrix(T * C, P);
    if (t.requires_grad(x))
      t.grad(x).matrix(T * C, P).array() += gm.array().colwise() * t.value(e.id()).vec().array();
    if (t.requires_grad(e))
      t.grad(e).vec() += gm.cwiseProduct(t.value(x.id()).matrix(T * C, P)).rowwise().sum();
  });
}

template <typename S>
Var<S> slice_rows(const Var<S>& x, Index begin, Index count) {
  if (x.value().rank() != 2 || begin < 0 || count < 0 || begin + count > x.dim(0)) {
    throw ShapeError("slice_rows: range out of bounds for " + to_string(x.shape()));
  }
  const Index n = x.dim(1);
  Tensor<S> out({count, n});
  out.vec() = x.value().vec().segment(begin * n, count * n);
  return x.tape().push(std::move(out), {x}, [x, begin, count, n](Tape<S>& t, const Tensor<S>& g) {
    t.grad(x).vec().segment(begin * n, count * n) += g.vec();
  });
}

template <typename S>
Var<S> slice_cols(const Var<S>& x, Index begin, Index count) {
  if (x.value().rank() != 2 || begin < 0 || count < 0 || begin + count > x.dim(1)) {
    throw ShapeError("slice_cols: range out of bounds for " + to_string(x.shape()));
  }
  const Index m = x.dim(0), n = x.dim(1);
  Tensor<S> out({m, count});
  out.matrix(m, count) = x.value().matrix(m, n).middleCols(begin, count);
  return x.tape().push(std::move(out), {x}, [x, begin, count, m, n](Tape<S>& t, const Tensor<S>& g) {
    t.grad(x).matrix(m, n).middleCols(begin, count) += g.matrix(m, count);
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const Index m = parts.front().dim(0);
  Index total = 0;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.dim(0) != m) throw ShapeError("concat_cols: row count mismatch");
    total += p.dim(1);
  }
  Tensor<S> out({m, total});
  auto om = out.matrix(m, total);
  Index off = 0;
  for (const auto& p : parts) {
    om.middleCols(off, p.dim(1)) = p.value().matrix(m, p.dim(1));
    off += p.dim(1);
  }
  return parts.front().tape().push(std::move(out), parts, [parts, m, total](Tape<S>& t, const Tensor<S>& g) {
    auto gm = g.matrix(m, total);
    Index off = 0;
    for (const auto& p : parts) {
      const Index w = t.value(p.id()).dim(1);
      if (t.requires_grad(p)) t.grad(p).matrix(m, w) += gm.middleCols(off, w);
      off += w;
    }
  });
}

template <typename S>
Var<S> stack_rows(const std::vector<Var<S>>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no operands");
  const Index n = rows.front().value().size();
  for (const auto& r : rows)
    if (r.value().size() != n) throw ShapeError("stack_rows: operand size mismatch");
  const Index m = static_cast<Index>(rows.size());
  Tensor<S> out({m, n});
  for (Index i = 0; i < m; ++i) out.vec().segment(i * n, n) = rows[static_cast<std::size_t>(i)].value().vec();
  return rows.front().tape().push(std::move(out), rows, [rows, n](Tape<S>& t, const Tensor<S>& g) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (t.requires_grad(rows[i])) t.grad(rows[i]).vec() += g.vec().segment(static_cast<Index>(i) * n, n);
  });
}

template <typename S>
Var<S> gather_neighbors(const Var<S>& x, const std::vector<int>& offsets) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("gather_neighbors: expected [T,C,H,W]");
  const Index T = xs[0], C = xs[1], P = xs[2] * xs[3], L = static_cast<Index>(offsets.size());
  std::vector<Index> src(static_cast<std::size_t>(T * L));
  for (Index t = 0; t < T; ++t)
    for (Index l = 0; l < L; ++l)
      src[static_cast<std::size_t>(t * L + l)] =
          std::clamp<Index>(t + offsets[static_cast<std::size_t>(l)], 0, T - 1);
  Tensor<S> out({T, C, L, xs[2], xs[3]});
  const auto& in = x.value();
  for (Index t = 0; t < T; ++t)
    for (Index c = 0; c < C; ++c)
      for (Index l = 0; l < L; ++l)
        out.vec().segment(((t * C + c) * L + l) * P, P) =
            in.vec().segment((src[static_cast<std::size_t>(t * L + l)] * C + c) * P, P);
  return x.tape().push(std::move(out), {x}, [x, src, T, C, P, L](Tape<S>& tp, const Tensor<S>& g) {
    auto& gx = tp.grad(x);
    for (Index t = 0; t < T; ++t)
      for (Index c = 0; c < C; ++c)
        for (Index l = 0; l < L; ++l)
          gx.vec().segment((src[static_cast<std::size_t>(t * L + l)] * C + c) * P, P) +=
              g.vec().segment(((t * C + c) * L + l) * P, P);
  });
}

template <typename S>
Var<S> neighbor_affinity(const Var<S>& desc, const Var<S>& neighbors) {
  const auto& ns = neighbors.shape();
  if (ns.size() != 5) throw ShapeError("neighbor_affinity: neighbors must be [T,C,L,H,W]");
  const Index T = ns[0], C = ns[1], L = ns[2], P = ns[3] * ns[4];
  if (desc.value().size() != T * C || desc.dim(0) != T) {
    throw ShapeError("neighbor_affinity: descriptor " + to_string(desc.shape()) +
                     " does not match neighbors " + to_string(ns));
  }
  Tensor<S> out({T, L, ns[3], ns[4]});
  const auto& d = desc.value();
  const auto& nb = neighbors.value();
  for (Index t = 0; t < T; ++t) {
    auto o = out.matrix(T, L * P).row(t);
    for (Index c = 0; c < C; ++c) o += d[t * C + c] * nb.vec().segment((t * C + c) * L * P, L * P).transpose();
  }
  return desc.tape().push(std::move(out), {desc, neighbors},
                          [desc, neighbors, T, C, L, P](Tape<S>& tp, const Tensor<S>& g) {
                            const auto& d = tp.value(desc.id());
                            const auto& nb = tp.value(neighbors.id());
                            for (Index t = 0; t < T; ++t) {
                              auto gt = g.vec().segment(t * L * P, L * P);
                              for (Index c = 0; c < C; ++c) {
                                auto seg = nb.vec().segment((t * C + c) * L * P, L * P);
                                if (tp.requires_grad(desc)) tp.grad(desc)[t * C + c] += gt.dot(seg);
                                if (tp.requires_grad(neighbors))
                                  tp.grad(neighbors).vec().segment((t * C + c) * L * P, L * P) +=
                                      d[t * C + c] * gt;
                              }
                            }
                          });
}

template <typename S>
Var<S> neighbor_aggregate(const Var<S>& maps, const Var<S>& neighbors, const Var<S>& beta) {
  const auto& ns = neighbors.shape();
  if (ns.size() != 5) throw ShapeError("neighbor_aggregate: neighbors must be [T,C,L,H,W]");
  const Index T = ns[0], C = ns[1], L = ns[2], P = ns[3] * ns[4];
  if (maps.shape() != Shape{T, L, ns[3], ns[4]}) {
    throw ShapeError("neighbor_aggregate: maps " + to_string(maps.shape()) +
                     " do not match neighbors " + to_string(ns));
  }
  if (beta.value().size() != L) {
    throw ShapeError("neighbor_aggregate: beta has " + std::to_string(beta.value().size()) +
                     " entries for L=" + std::to_string(L));
  }
  Tensor<S> out({T, C});
  const auto& a = maps.value();
  const auto& nb = neighbors.value();
  const auto& b = beta.value();
  for (Index t = 0; t < T; ++t)
    for (Index c = 0; c < C; ++c) {
      S acc = 0;
      for (Index l = 0; l < L; ++l)
        acc += b[l] * a.vec().segment((t * L + l) * P, P).dot(nb.vec().segment(((t * C + c) * L + l) * P, P));
      out[t * C + c] = acc;
    }
  return maps.tape().push(
      std::move(out), {maps, neighbors, beta},
      [maps, neighbors, beta, T, C, L, P](Tape<S>& tp, const Tensor<S>& g) {
        const auto& a = tp.value(maps.id());
        const auto& nb = tp.value(neighbors.id());
        const auto& b = tp.value(beta.id());
        for (Index t = 0; t < T; ++t)
          for (Index c = 0; c < C; ++c) {
            const S gtc = g[t * C + c];
            for (Index l = 0; l < L; ++l) {
              auto aseg = a.vec().segment((t * L + l) * P, P);
              auto nseg = nb.vec().segment(((t * C + c) * L + l) * P, P);
              if (tp.requires_grad(maps)) tp.grad(maps).vec().segment((t * L + l) * P, P) += (gtc * b[l]) * nseg;
              if (tp.requires_grad(neighbors))
                tp.grad(neighbors).vec().segment(((t * C + c) * L + l) * P, P) += (gtc * b[l]) * aseg;
              if (tp.requires_grad(beta)) tp.grad(beta)[l] += gtc * aseg.dot(nseg);
            }
          }
      });
}

template <typename S>
Var<S> attention_pool(const Var<S>& x, const Var<S>& query) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("attention_pool: expected [T,C,H,W]");
  const Index T = xs[0], C = xs[1], P = xs[2] * xs[3];
  if (query.value().size() != C) {
    throw ShapeError("attention_pool: query has " + std::to_string(query.value().size()) +
                     " channels, features have " + std::to_string(C));
  }
  if (P == 0) throw ShapeError("attention_pool: empty spatial extent");
  const S inv_sqrt = S(1) / std::sqrt(S(C));
  auto weights = std::make_shared<RowMatrix<S>>(T, P);
  Tensor<S> out({T, C});
  const auto& q = query.value().vec();
  for (Index t = 0; t < T; ++t) {
    auto xt = x.value().matrix(T * C, P).middleRows(t * C, C);
    Eigen::Matrix<S, 1, Eigen::Dynamic> s = (q.transpose() * xt) * inv_sqrt;
    s.array() -= s.maxCoeff();
    s = s.array().exp().matrix();
    s /= s.sum();
    weights->row(t) = s;
    out.matrix(T, C).row(t) = (xt * s.transpose()).transpose();
  }
  return x.tape().push(std::move(out), {x, query},
                       [x, query, weights, T, C, P, inv_sqrt](Tape<S>& tp, const Tensor<S>& g) {
                         const auto& xv = tp.value(x.id());
                         const auto& qv = tp.value(query.id()).vec();
                         for (Index t = 0; t < T; ++t) {
                           auto xt = xv.matrix(T * C, P).middleRows(t * C, C);
                           auto a = weights->row(t);
                           Eigen::Matrix<S, Eigen::Dynamic, 1> gt = g.matrix(T, C).row(t).transpose();
                           Eigen::Matrix<S, 1, Eigen::Dynamic> da = gt.transpose() * xt;
                           const S dot = da.dot(a);
                           Eigen::Matrix<S, 1, Eigen::Dynamic> ds = a.array() * (da.array() - dot);
                           if (tp.requires_grad(query)) tp.grad(query).vec() += (xt * ds.transpose()) * inv_sqrt;
                           if (tp.requires_grad(x)) {
                             auto gx = tp.grad(x).matrix(T * C, P).middleRows(t * C, C);
                             gx.noalias() += gt * a;
                             gx.noalias() += (qv * inv_sqrt) * ds;
                           }
                         }
                       });
}

}  // namespace ops

#define CORRNET_INSTANTIATE_OPS(S)                                                                 \
  template Tensor<S> conv_nd(const Tensor<S>&, const Tensor<S>&, const ConvSpec&);                 \
  template Tensor<S> pool_spatial(const Tensor<S>&, PoolMode);                                     \
  template Tensor<S> softmax_lastaxis(const Tensor<S>&);                                           \
  template S centered_sigmoid(S);                                                                  \
  namespace ops {                                                                                  \
  template Var<S> add(const Var<S>&, const Var<S>&);                                               \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                               \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                               \
  template Var<S> scale(const Var<S>&, S);                                                         \
  template Var<S> add_scalar(const Var<S>&, S);                                                    \
  template Var<S> scale_by(const Var<S>&, const Var<S>&);                                          \
  template Var<S> mix(const std::vector<Var<S>>&, const Var<S>&);                                  \
  template Var<S> relu(const Var<S>&);                                                             \
  template Var<S> sigmoid(const Var<S>&);                                                          \
  template Var<S> tanh(const Var<S>&);                                                             \
  template Var<S> centered_sigmoid(const Var<S>&);                                                 \
  template Var<S> sum(const Var<S>&);                                                              \
  template Var<S> mean(const Var<S>&);                                                             \
  template Var<S> reshape(const Var<S>&, Shape);                                                   \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                            \
  template Var<S> linear(const Var<S>&, const Var<S>&, const std::optional<Var<S>>&);              \
  template Var<S> add_channel_bias(const Var<S>&, const Var<S>&);                                  \
  template Var<S> conv_nd(const Var<S>&, const Var<S>&, const ConvSpec&);                          \
  template Var<S> pool_spatial(const Var<S>&, PoolMode);                                           \
  template Var<S> max_pool_time(const Var<S>&, Index);                                             \
  template Var<S> softmax_lastaxis(const Var<S>&);                                                 \
  template Var<S> broadcast_mul_spatial(const Var<S>&, const Var<S>&);                             \
  template Var<S> slice_rows(const Var<S>&, Index, Index);                                         \
  template Var<S> slice_cols(const Var<S>&, Index, Index);                                         \
  template Var<S> concat_cols(const std::vector<Var<S>>&);                                         \
  template Var<S> stack_rows(const std::vector<Var<S>>&);                                          \
  template Var<S> gather_neighbors(const Var<S>&, const std::vector<int>&);                        \
  template Var<S> neighbor_affinity(const Var<S>&, const Var<S>&);                                 \
  template Var<S> neighbor_aggregate(const Var<S>&, const Var<S>&, const Var<S>&);                 \
  template Var<S> attention_pool(const Var<S>&, const Var<S>&);                                    \
  }

CORRNET_INSTANTIATE_OPS(float)
CORRNET_INSTANTIATE_OPS(double)

}  // namespace corrnet
