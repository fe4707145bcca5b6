#include "corrnet/identification.hpp"

#include "corrnet/rng.hpp"

#include <cmath>

namespace corrnet {

std::string branch_name(int spatial, int temporal) {
  return "branch.s" + std::to_string(spatial) + "t" + std::to_string(temporal);
}

namespace {

Index branch_groups(const IdentificationConfig& cfg, Index reduced) {
  return cfg.groups == 0 ? reduced : cfg.groups;
}

}  // namespace

ConvSpec branch_spec(const IdentificationConfig& cfg, Index reduced, int spatial_dilation,
                     int temporal_dilation) {
  return ConvSpec::spatiotemporal(cfg.kernel_t, cfg.kernel_s, temporal_dilation, spatial_dilation,
                                  branch_groups(cfg, reduced));
}

template <typename S>
IdentificationWeights<S> IdentificationWeights<S>::bind(const Bound<S>& params, const std::string& prefix,
                                                        const IdentificationConfig& cfg) {
  IdentificationWeights w;
  w.reduce = params(prefix + "reduce");
  for (int i = 1; i <= cfg.spatial_scales; ++i)
    for (int j = 1; j <= cfg.temporal_scales; ++j) w.branches.push_back(params(prefix + branch_name(i, j)));
  w.sigma = params(prefix + "sigma");
  w.recover = params(prefix + "recover.w");
  w.recover_b = params(prefix + "recover.b");
  w.alpha = params(prefix + "alpha");
  return w;
}

template <typename S>
void init_identification(ParamStore<S>& store, const std::string& prefix, Index channels,
                         const IdentificationConfig& cfg, std::uint64_t seed) {
  if (cfg.spatial_scales < 1 || cfg.temporal_scales < 1) {
    throw std::invalid_argument("identification: N_s and N_t must be positive");
  }
  const Index reduced = reduced_channels(channels, cfg.reduction);
  const Index groups = branch_groups(cfg, reduced);
  if (reduced % groups != 0) throw ShapeError("identification: groups do not divide C/r");
  const Index per_group = reduced / groups;
  const Index branches = Index{cfg.spatial_scales} * cfg.temporal_scales;
  const double fan_in = static_cast<double>(per_group * cfg.kernel_t * cfg.kernel_s * cfg.kernel_s);

  store.set(prefix + "reduce", init::normal<S>({reduced, channels, 1, 1, 1},
                                               1.0 / std::sqrt(double(channels)),
                                               param_seed(seed, prefix + "reduce")));
  for (int i = 1; i <= cfg.spatial_scales; ++i)
    for (int j = 1; j <= cfg.temporal_scales; ++j) {
      const auto name = prefix + branch_name(i, j);
      store.set(name, init::normal<S>({reduced, per_group, cfg.kernel_t, cfg.kernel_s, cfg.kernel_s},
                                      std::sqrt(2.0 / fan_in), param_seed(seed, name)));
    }
  store.set(prefix + "sigma", Tensor<S>({branches}, S(1) / S(branches)));
  store.set(prefix + "recover.w", init::normal<S>({channels, reduced, 1, 1, 1},
                                                  1.0 / std::sqrt(double(reduced)),
                                                  param_seed(seed, prefix + "recover.w")));
  store.set(prefix + "recover.b", Tensor<S>({channels}));
  store.set(prefix + "alpha", Tensor<S>({1}, S(0)));
}

template <typename S>
Var<S> multiscale_branches(const Var<S>& reduced, const IdentificationWeights<S>& w,
                           const IdentificationConfig& cfg) {
  const Index cr = reduced.dim(1);
  std::vector<Var<S>> outs;
  std::size_t b = 0;
  for (int i = 1; i <= cfg.spatial_scales; ++i)
    for (int j = 1; j <= cfg.temporal_scales; ++j)
      outs.push_back(ops::conv_nd(reduced, w.branches.at(b++), branch_spec(cfg, cr, i, j)));
  return ops::mix(outs, w.sigma);
}

template <typename S>
Var<S> identification_maps(const Var<S>& mixed, const IdentificationWeights<S>& w) {
  auto projected = ops::add_channel_bias(ops::conv_nd(mixed, w.recover, ConvSpec::pointwise()), w.recover_b);
  return ops::centered_sigmoid(projected);
}

template <typename S>
Var<S> fuse_trajectories(const Var<S>& x, const Var<S>& trajectories, const Var<S>& maps,
                         const Var<S>& alpha) {
  if (x.shape() != maps.shape()) {
    throw ShapeError("fuse_trajectories: maps " + to_string(maps.shape()) + " vs features " +
                     to_string(x.shape()));
  }
  return ops::add(x, ops::scale_by(ops::broadcast_mul_spatial(maps, trajectories), alpha));
}

template <typename S>
Var<S> identification_forward(const Var<S>& x, const IdentificationWeights<S>& w,
                              const IdentificationConfig& cfg) {
  auto reduced = ops::conv_nd(x, w.reduce, ConvSpec::pointwise());
  return identification_maps(multiscale_branches(reduced, w, cfg), w);
}

#define CORRNET_INSTANTIATE_IDENTIFICATION(S)                                                        \
  template struct IdentificationWeights<S>;                                                          \
  template void init_identification<S>(ParamStore<S>&, const std::string&, Index,                    \
                                       const IdentificationConfig&, std::uint64_t);                  \
  template Var<S> multiscale_branches(const Var<S>&, const IdentificationWeights<S>&,                \
                                      const IdentificationConfig&);                                  \
  template Var<S> identification_maps(const Var<S>&, const IdentificationWeights<S>&);               \
  template Var<S> fuse_trajectories(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&);     \
  template Var<S> identification_forward(const Var<S>&, const IdentificationWeights<S>&,             \
                                         const IdentificationConfig&);

CORRNET_INSTANTIATE_IDENTIFICATION(float)
CORRNET_INSTANTIATE_IDENTIFICATION(double)

}  // namespace corrnet
