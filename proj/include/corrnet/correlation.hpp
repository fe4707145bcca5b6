#pragma once

#include "corrnet/autograd.hpp"
#include "corrnet/ops.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace corrnet {

/// Learnable state of one correlation module.
///
/// `gamma` fuses the average/max/attention descriptors, `beta` weights the L temporal
/// neighbours. The attention branch is a single-head, single-query attention over the
/// spatial positions of a frame, followed by a value map and a two-layer MLP whose hidden
/// width equals the channel count.
template <typename S>
struct CorrelationWeights {
  Var<S> gamma;     // [3]
  Var<S> beta;      // [L]
  Var<S> query;     // [C]
  Var<S> value;     // [C, C]
  Var<S> hidden_w;  // [C, C]
  Var<S> hidden_b;  // [C]
  Var<S> out_w;     // [C, C]
  Var<S> out_b;     // [C]

  static CorrelationWeights bind(const Bound<S>& params, const std::string& prefix);
};

/// Writes freshly initialised correlation parameters under `prefix`.
/// gamma = 1/3 and beta = 1/L exactly; projections are random.
template <typename S>
void init_correlation(ParamStore<S>& store, const std::string& prefix, Index channels, int window,
                      std::uint64_t seed);

/// Per-frame compact descriptors, each [T, C, 1, 1].
template <typename S>
struct CompactDescriptor {
  Var<S> avg;
  Var<S> max;
  Var<S> att;
  Var<S> fused;
};

template <typename S>
struct NeighborSet {
  Var<S> frames;  // [T, C, L, H, W]
  std::vector<int> offsets;
};

template <typename S>
struct CorrelationMaps {
  Var<S> raw;    // [T, L, H, W]
  Var<S> gated;  // [T, L, H, W], strictly inside (-0.5, 0.5)
};

/// Symmetric window {-L/2, ..., -1, +1, ..., +L/2}. Throws for odd or non-positive L.
std::vector<int> neighbor_offsets(int window);

template <typename S>
CompactDescriptor<S> compress_frames(const Var<S>& x, const CorrelationWeights<S>& w);

template <typename S>
NeighborSet<S> sample_neighbors(const Var<S>& x, int window);

template <typename S>
CorrelationMaps<S> correlation_maps(const CompactDescriptor<S>& desc, const NeighborSet<S>& neighbors);

/// Trajectory features E, [T, C, 1, 1].
template <typename S>
Var<S> trajectory_features(const CorrelationMaps<S>& maps, const NeighborSet<S>& neighbors,
                           const Var<S>& beta);

template <typename S>
Var<S> correlation_forward(const Var<S>& x, int window, const CorrelationWeights<S>& w,
                           CorrelationMaps<S>* maps_out = nullptr);

/// Dense patch-to-patch affinity between two frames [C, H, W]:
/// A(i,j,i',j') = (1/C) sum_c a(c,i,j) b(c,i',j'). Result is [H, W, H, W].
template <typename S>
Tensor<S> legacy_pairwise_affinity(const Tensor<S>& frame_a, const Tensor<S>& frame_b);

}  // namespace corrnet
