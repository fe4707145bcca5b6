#pragma once

#include "corrnet/autograd.hpp"
#include "corrnet/ops.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace corrnet {

struct IdentificationConfig {
  int reduction = 16;
  int spatial_scales = 3;   // N_s, spatial dilations 1..N_s
  int temporal_scales = 4;  // N_t, temporal dilations 1..N_t
  Index kernel_t = 3;
  Index kernel_s = 3;
  Index groups = 0;  // 0 selects depthwise (one group per reduced channel)
};

/// Reduced channel count max(1, C / r).
inline Index reduced_channels(Index channels, int reduction) {
  return std::max<Index>(1, channels / reduction);
}

/// Branch (i, j) uses spatial dilation i and temporal dilation j, stored i-major.
template <typename S>
struct IdentificationWeights {
  Var<S> reduce;                // [C/r, C, 1, 1, 1]
  std::vector<Var<S>> branches;  // N_s * N_t kernels [C/r, C/r/g, K_t, K_s, K_s]
  Var<S> sigma;                 // [N_s * N_t]
  Var<S> recover;               // [C, C/r, 1, 1, 1]
  Var<S> recover_b;             // [C]
  Var<S> alpha;                 // [1]

  static IdentificationWeights bind(const Bound<S>& params, const std::string& prefix,
                                    const IdentificationConfig& cfg);
};

std::string branch_name(int spatial, int temporal);

template <typename S>
void init_identification(ParamStore<S>& store, const std::string& prefix, Index channels,
                         const IdentificationConfig& cfg, std::uint64_t seed);

ConvSpec branch_spec(const IdentificationConfig& cfg, Index reduced, int spatial_dilation,
                     int temporal_dilation);

/// x_m = sum_ij sigma_ij * conv_ij(x_r) for a reduced input [T, C/r, H, W].
template <typename S>
Var<S> multiscale_branches(const Var<S>& reduced, const IdentificationWeights<S>& w,
                           const IdentificationConfig& cfg);

/// M = sigmoid(recover(x_m)) - 0.5, [T, C, H, W].
template <typename S>
Var<S> identification_maps(const Var<S>& mixed, const IdentificationWeights<S>& w);

/// y = x + alpha * (E ⊙ M) with E [T, C, 1, 1] broadcast over space.
template <typename S>
Var<S> fuse_trajectories(const Var<S>& x, const Var<S>& trajectories, const Var<S>& maps,
                         const Var<S>& alpha);

/// Reduce, mix branches, recover: the identification map M of a stage input.
template <typename S>
Var<S> identification_forward(const Var<S>& x, const IdentificationWeights<S>& w,
                              const IdentificationConfig& cfg);

}  // namespace corrnet
