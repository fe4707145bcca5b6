#pragma once

#include "corrnet/autograd.hpp"
#include "corrnet/correlation.hpp"
#include "corrnet/identification.hpp"
#include "corrnet/temporal_attention.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace corrnet {

/// Desk-scale recognition model: a strided per-frame CNN with spatial-temporal correlation
/// stages after selected CNN stages, followed by a {K5, P2, K5, P2} temporal CNN, a
/// bidirectional LSTM and a linear classifier over glosses plus blank.
struct ModelConfig {
  Index input_channels = 3;
  Index frame_size = 64;
  std::vector<Index> stage_channels{16, 32, 64, 128};
  std::vector<int> st_after{2, 3, 4};  // 1-based stage numbers followed by an ST stage
  std::vector<int> windows{2, 6, 10};  // correlation window L of each ST stage
  bool st_stages = true;
  int vocab_size = 8;
  Index head_channels = 128;
  Index hidden = 128;
  int rnn_layers = 2;
  IdentificationConfig identification;
  TemporalAttentionConfig temporal;

  Index feature_dim() const { return stage_channels.back(); }
  int classes() const { return vocab_size + 1; }
  /// Spatial extent after `stage` stride-2 stages (stage 0 is the input).
  Index spatial_extent(int stage) const;
  void validate() const;
};

/// Frames after the two stride-2 temporal pools.
inline Index output_length(Index frames) { return (frames / 2) / 2; }

template <typename S>
ParamStore<S> init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Values captured from one ST stage for inspection.
template <typename S>
struct StageTrace {
  int stage = 0;
  Tensor<S> input;       // [T, C, H, W]
  Tensor<S> gated_maps;  // A_hat, [T, L, H, W]
  Tensor<S> identification;  // M, [T, C, H, W]
  Tensor<S> gates;       // U, [T, C]
};

/// One spatial-temporal correlation stage: correlation and identification in parallel,
/// fused residually, then temporal attention.
template <typename S>
Var<S> st_stage_forward(const Var<S>& x, const ModelConfig& cfg, const Bound<S>& params,
                        const std::string& prefix, int window, StageTrace<S>* trace = nullptr);

/// [T, 3, H0, W0] video -> [T, d] frame features.
template <typename S>
Var<S> feature_extractor_forward(const Var<S>& video, const ModelConfig& cfg, const Bound<S>& params,
                                 std::vector<StageTrace<S>>* traces = nullptr);

/// [T, d] -> [T/4, V+1] logits. Throws for T < 4.
template <typename S>
Var<S> temporal_head_forward(const Var<S>& features, const ModelConfig& cfg, const Bound<S>& params);

template <typename S>
Var<S> model_forward(const Var<S>& video, const ModelConfig& cfg, const Bound<S>& params,
                     std::vector<StageTrace<S>>* traces = nullptr);

/// Inference without recording gradients.
template <typename S>
Tensor<S> predict_logits(const Tensor<S>& video, const ModelConfig& cfg, const ParamStore<S>& params,
                         std::vector<StageTrace<S>>* traces = nullptr);

}  // namespace corrnet
