#include "corrnet/correlation.hpp"

#include "corrnet/rng.hpp"

#include <cmath>

namespace corrnet {

std::vector<int> neighbor_offsets(int window) {
  if (window < 2 || window % 2 != 0) {
    throw std::invalid_argument("correlation window L must be even and >= 2, got " +
                                std::to_string(window));
  }
  std::vector<int> offsets;
  for (int k = -window / 2; k <= window / 2; ++k)
    if (k != 0) offsets.push_back(k);
  return offsets;
}

template <typename S>
CorrelationWeights<S> CorrelationWeights<S>::bind(const Bound<S>& params, const std::string& prefix) {
  return {params(prefix + "gamma"),    params(prefix + "beta"),     params(prefix + "query"),
          params(prefix + "value"),    params(prefix + "hidden.w"), params(prefix + "hidden.b"),
          params(prefix + "out.w"),    params(prefix + "out.b")};
}

template <typename S>
void init_correlation(ParamStore<S>& store, const std::string& prefix, Index channels, int window,
                      std::uint64_t seed) {
  const auto L = static_cast<Index>(neighbor_offsets(window).size());
  const double xavier = std::sqrt(3.0 / static_cast<double>(channels));
  auto seed_of = [&](const char* leaf) { return param_seed(seed, prefix + leaf); };
  store.set(prefix + "gamma", Tensor<S>({3}, S(1) / S(3)));
  store.set(prefix + "beta", Tensor<S>({L}, S(1) / S(L)));
  store.set(prefix + "query", init::normal<S>({channels}, 1.0, seed_of("query")));
  store.set(prefix + "value", init::uniform<S>({channels, channels}, xavier, seed_of("value")));
  store.set(prefix + "hidden.w", init::uniform<S>({channels, channels}, xavier, seed_of("hidden.w")));
  store.set(prefix + "hidden.b", Tensor<S>({channels}));
  store.set(prefix + "out.w", init::uniform<S>({channels, channels}, xavier, seed_of("out.w")));
  store.set(prefix + "out.b", Tensor<S>({channels}));
}

template <typename S>
CompactDescriptor<S> compress_frames(const Var<S>& x, const CorrelationWeights<S>& w) {
  if (x.value().rank() != 4) throw ShapeError("compress_frames: expected [T,C,H,W]");
  const Index T = x.dim(0), C = x.dim(1);
  CompactDescriptor<S> d;
  d.avg = ops::pool_spatial(x, PoolMode::Average);
  d.max = ops::pool_spatial(x, PoolMode::Max);
  auto pooled = ops::attention_pool(x, w.query);
  auto projected = ops::linear(pooled, w.value);
  auto hidden = ops::relu(ops::linear(projected, w.hidden_w, w.hidden_b));
  d.att = ops::reshape(ops::linear(hidden, w.out_w, w.out_b), {T, C, 1, 1});
  d.fused = ops::mix<S>({d.avg, d.max, d.att}, w.gamma);
  return d;
}

template <typename S>
NeighborSet<S> sample_neighbors(const Var<S>& x, int window) {
  auto offsets = neighbor_offsets(window);
  return {ops::gather_neighbors(x, offsets), offsets};
}

template <typename S>
CorrelationMaps<S> correlation_maps(const CompactDescriptor<S>& desc, const NeighborSet<S>& neighbors) {
  CorrelationMaps<S> m;
  m.raw = ops::neighbor_affinity(desc.fused, neighbors.frames);
  m.gated = ops::centered_sigmoid(m.raw);
  return m;
}

template <typename S>
Var<S> trajectory_features(const CorrelationMaps<S>& maps, const NeighborSet<S>& neighbors,
                           const Var<S>& beta) {
  auto e = ops::neighbor_aggregate(maps.gated, neighbors.frames, beta);
  return ops::reshape(e, {e.dim(0), e.dim(1), 1, 1});
}

template <typename S>
Var<S> correlation_forward(const Var<S>& x, int window, const CorrelationWeights<S>& w,
                           CorrelationMaps<S>* maps_out) {
  auto desc = compress_frames(x, w);
  auto neighbors = sample_neighbors(x, window);
  auto maps = correlation_maps(desc, neighbors);
  if (maps_out) *maps_out = maps;
  return trajectory_features(maps, neighbors, w.beta);
}

template <typename S>
Tensor<S> legacy_pairwise_affinity(const Tensor<S>& frame_a, const Tensor<S>& frame_b) {
  if (frame_a.rank() != 3 || frame_a.shape() != frame_b.shape()) {
    throw ShapeError("legacy_pairwise_affinity: frames must share a [C,H,W] shape, got " +
                     to_string(frame_a.shape()) + " and " + to_string(frame_b.shape()));
  }
  const Index C = frame_a.dim(0), H = frame_a.dim(1), W = frame_a.dim(2), P = H * W;
  Tensor<S> out({H, W, H, W});
  out.matrix(P, P).noalias() =
      frame_a.matrix(C, P).transpose() * frame_b.matrix(C, P) / S(C);
  return out;
}

#define CORRNET_INSTANTIATE_CORRELATION(S)                                                            \
  template struct CorrelationWeights<S>;                                                              \
  template void init_correlation<S>(ParamStore<S>&, const std::string&, Index, int, std::uint64_t);   \
  template CompactDescriptor<S> compress_frames(const Var<S>&, const CorrelationWeights<S>&);         \
  template NeighborSet<S> sample_neighbors(const Var<S>&, int);                                       \
  template CorrelationMaps<S> correlation_maps(const CompactDescriptor<S>&, const NeighborSet<S>&);   \
  template Var<S> trajectory_features(const CorrelationMaps<S>&, const NeighborSet<S>&, const Var<S>&); \
  template Var<S> correlation_forward(const Var<S>&, int, const CorrelationWeights<S>&,               \
                                      CorrelationMaps<S>*);                                            \
  template Tensor<S> legacy_pairwise_affinity(const Tensor<S>&, const Tensor<S>&);

CORRNET_INSTANTIATE_CORRELATION(float)
CORRNET_INSTANTIATE_CORRELATION(double)

}  // namespace corrnet
