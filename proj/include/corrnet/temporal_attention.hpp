#pragma once

#include "corrnet/autograd.hpp"
#include "corrnet/ops.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace corrnet {

struct TemporalAttentionConfig {
  int reduction = 16;
  int branches = 3;  // M_t, dilations 1..M_t
  Index kernel = 3;  // P_t
};

template <typename S>
struct TemporalAttentionWeights {
  Var<S> reduce;                 // [C/r, C, 1]
  std::vector<Var<S>> branches;  // M_t depthwise kernels [C/r, 1, P_t]
  Var<S> delta;                  // [M_t]
  Var<S> recover;                // [C, C/r, 1]
  Var<S> recover_b;              // [C]
  Var<S> lambda;                 // [1]

  static TemporalAttentionWeights bind(const Bound<S>& params, const std::string& prefix,
                                       const TemporalAttentionConfig& cfg);
};

template <typename S>
void init_temporal_attention(ParamStore<S>& store, const std::string& prefix, Index channels,
                             const TemporalAttentionConfig& cfg, std::uint64_t seed);

/// Spatial average pool, channel reduction and dilated depthwise temporal branches:
/// y_m [T, C/r].
template <typename S>
Var<S> temporal_multiscale(const Var<S>& y, const TemporalAttentionWeights<S>& w,
                           const TemporalAttentionConfig& cfg);

/// U = sigmoid(recover(y_m)) - 0.5, [T, C].
template <typename S>
Var<S> temporal_attention_maps(const Var<S>& mixed, const TemporalAttentionWeights<S>& w);

/// z = y + lambda * (y ⊙ U) with U broadcast over space.
template <typename S>
Var<S> apply_temporal_attention(const Var<S>& y, const Var<S>& gates, const Var<S>& lambda);

template <typename S>
Var<S> temporal_attention_forward(const Var<S>& y, const TemporalAttentionWeights<S>& w,
                                  const TemporalAttentionConfig& cfg, Var<S>* gates_out = nullptr);

}  // namespace corrnet
