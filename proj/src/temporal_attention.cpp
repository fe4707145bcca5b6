#include "corrnet/temporal_attention.hpp"

#include "corrnet/identification.hpp"
#include "corrnet/rng.hpp"

#include <cmath>

namespace corrnet {

template <typename S>
TemporalAttentionWeights<S> TemporalAttentionWeights<S>::bind(const Bound<S>& params,
                                                              const std::string& prefix,
                                                              const TemporalAttentionConfig& cfg) {
  TemporalAttentionWeights w;
  w.reduce = params(prefix + "reduce");
  for (int i = 1; i <= cfg.branches; ++i) w.branches.push_back(params(prefix + "branch.d" + std::to_string(i)));
  w.delta = params(prefix + "delta");
  w.recover = params(prefix + "recover.w");
  w.recover_b = params(prefix + "recover.b");
  w.lambda = params(prefix + "lambda");
  return w;
}

template <typename S>
void init_temporal_attention(ParamStore<S>& store, const std::string& prefix, Index channels,
                             const TemporalAttentionConfig& cfg, std::uint64_t seed) {
  if (cfg.branches < 1) throw std::invalid_argument("temporal attention: M_t must be positive");
  const Index reduced = reduced_channels(channels, cfg.reduction);
  store.set(prefix + "reduce", init::normal<S>({reduced, channels, 1}, 1.0 / std::sqrt(double(channels)),
                                               param_seed(seed, prefix + "reduce")));
  for (int i = 1; i <= cfg.branches; ++i) {
    const auto name = prefix + "branch.d" + std::to_string(i);
    store.set(name, init::normal<S>({reduced, 1, cfg.kernel}, std::sqrt(2.0 / double(cfg.kernel)),
                                    param_seed(seed, name)));
  }
  store.set(prefix + "delta", Tensor<S>({cfg.branches}, S(1) / S(cfg.branches)));
  store.set(prefix + "recover.w", init::normal<S>({channels, reduced, 1}, 1.0 / std::sqrt(double(reduced)),
                                                  param_seed(seed, prefix + "recover.w")));
  store.set(prefix + "recover.b", Tensor<S>({channels}));
  store.set(prefix + "lambda", Tensor<S>({1}, S(0)));
}

template <typename S>
Var<S> temporal_multiscale(const Var<S>& y, const TemporalAttentionWeights<S>& w,
                           const TemporalAttentionConfig& cfg) {
  if (y.value().rank() != 4) throw ShapeError("temporal_multiscale: expected [T,C,H,W]");
  const Index T = y.dim(0), C = y.dim(1);
  auto pooled = ops::reshape(ops::pool_spatial(y, PoolMode::Average), {T, C});
  auto reduced = ops::conv_nd(pooled, w.reduce, ConvSpec::temporal(1));
  const Index cr = reduced.dim(1);
  std::vector<Var<S>> outs;
  for (int i = 1; i <= cfg.branches; ++i) {
    outs.push_back(ops::conv_nd(reduced, w.branches.at(static_cast<std::size_t>(i - 1)),
                                ConvSpec::temporal(cfg.kernel, i, cr)));
  }
  return ops::mix(outs, w.delta);
}

template <typename S>
Var<S> temporal_attention_maps(const Var<S>& mixed, const TemporalAttentionWeights<S>& w) {
  auto projected = ops::add_channel_bias(ops::conv_nd(mixed, w.recover, ConvSpec::temporal(1)), w.recover_b);
  return ops::centered_sigmoid(projected);
}

template <typename S>
Var<S> apply_temporal_attention(const Var<S>& y, const Var<S>& gates, const Var<S>& lambda) {
  return ops::add(y, ops::scale_by(ops::broadcast_mul_spatial(y, gates), lambda));
}

template <typename S>
Var<S> temporal_attention_forward(const Var<S>& y, const TemporalAttentionWeights<S>& w,
                                  const TemporalAttentionConfig& cfg, Var<S>* gates_out) {
  auto gates = temporal_attention_maps(temporal_multiscale(y, w, cfg), w);
  if (gates_out) *gates_out = gates;
  return apply_temporal_attention(y, gates, w.lambda);
}

#define CORRNET_INSTANTIATE_TEMPORAL(S)                                                           \
  template struct TemporalAttentionWeights<S>;                                                    \
  template void init_temporal_attention<S>(ParamStore<S>&, const std::string&, Index,             \
                                           const TemporalAttentionConfig&, std::uint64_t);        \
  template Var<S> temporal_multiscale(const Var<S>&, const TemporalAttentionWeights<S>&,          \
                                      const TemporalAttentionConfig&);                            \
  template Var<S> temporal_attention_maps(const Var<S>&, const TemporalAttentionWeights<S>&);     \
  template Var<S> apply_temporal_attention(const Var<S>&, const Var<S>&, const Var<S>&);          \
  template Var<S> temporal_attention_forward(const Var<S>&, const TemporalAttentionWeights<S>&,   \
                                             const TemporalAttentionConfig&, Var<S>*);

CORRNET_INSTANTIATE_TEMPORAL(float)
CORRNET_INSTANTIATE_TEMPORAL(double)

}  // namespace corrnet
