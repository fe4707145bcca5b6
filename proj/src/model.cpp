#include "corrnet/model.hpp"

#include "corrnet/rng.hpp"

#include <algorithm>
#include <cmath>

namespace corrnet {

Index ModelConfig::spatial_extent(int stage) const {
  Index n = frame_size;
  for (int s = 0; s < stage; ++s) n = (n - 1) / 2 + 1;
  return n;
}

void ModelConfig::validate() const {
  if (stage_channels.empty()) throw std::invalid_argument("model: at least one CNN stage required");
  if (st_after.size() != windows.size()) {
    throw std::invalid_argument("model: st_after and windows must have the same length");
  }
  for (int s : st_after) {
    if (s < 1 || s > static_cast<int>(stage_channels.size())) {
      throw std::invalid_argument("model: ST stage placed after nonexistent stage " + std::to_string(s));
    }
  }
  for (int w : windows) neighbor_offsets(w);
  if (vocab_size < 1) throw std::invalid_argument("model: vocabulary must be nonempty");
  if (input_channels < 1 || frame_size < 1 || head_channels < 1 || hidden < 1 || rnn_layers < 1) {
    throw std::invalid_argument("model: dimensions must be positive");
  }
}

namespace {

std::string stage_prefix(int stage) { return "backbone.s" + std::to_string(stage) + "."; }
std::string st_prefix(int stage) { return "st" + std::to_string(stage) + "."; }

template <typename S>
void set_normal(ParamStore<S>& store, const std::string& name, Shape shape, double stddev, std::uint64_t seed) {
  store.set(name, init::normal<S>(std::move(shape), stddev, param_seed(seed, name)));
}

template <typename S>
void set_uniform(ParamStore<S>& store, const std::string& name, Shape shape, double bound, std::uint64_t seed) {
  store.set(name, init::uniform<S>(std::move(shape), bound, param_seed(seed, name)));
}

template <typename S>
Var<S> lstm_direction(const Var<S>& inputs, const Bound<S>& params, const std::string& prefix, Index hidden,
                      bool reverse) {
  auto& tape = inputs.tape();
  const Index T = inputs.dim(0);
  auto w_hh = params(prefix + "w_hh");
  auto projected = ops::linear(inputs, params(prefix + "w_ih"), std::optional<Var<S>>(params(prefix + "b")));
  auto h = tape.constant(Tensor<S>({1, hidden}));
  auto c = tape.constant(Tensor<S>({1, hidden}));
  std::vector<Var<S>> outputs(static_cast<std::size_t>(T));
  for (Index step = 0; step < T; ++step) {
    const Index t = reverse ? T - 1 - step : step;
    auto gates = ops::add(ops::slice_rows(projected, t, 1), ops::linear(h, w_hh));
    auto in_gate = ops::sigmoid(ops::slice_cols(gates, 0, hidden));
    auto forget = ops::sigmoid(ops::slice_cols(gates, hidden, hidden));
    auto cell = ops::tanh(ops::slice_cols(gates, 2 * hidden, hidden));
    auto out_gate = ops::sigmoid(ops::slice_cols(gates, 3 * hidden, hidden));
    c = ops::add(ops::mul(forget, c), ops::mul(in_gate, cell));
    h = ops::mul(out_gate, ops::tanh(c));
    outputs[static_cast<std::size_t>(t)] = h;
  }
  return ops::stack_rows(outputs);
}

}  // namespace

template <typename S>
ParamStore<S> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<S> store;
  Index in = cfg.input_channels;
  for (std::size_t k = 0; k < cfg.stage_channels.size(); ++k) {
    const int stage = static_cast<int>(k) + 1;
    const Index out = cfg.stage_channels[k];
    set_normal(store, stage_prefix(stage) + "w", {out, in, 1, 3, 3}, std::sqrt(2.0 / double(in * 9)), seed);
    store.set(stage_prefix(stage) + "b", Tensor<S>({out}));
    in = out;
  }
  if (cfg.st_stages) {
    for (std::size_t i = 0; i < cfg.st_after.size(); ++i) {
      const int stage = cfg.st_after[i];
      const Index channels = cfg.stage_channels[static_cast<std::size_t>(stage - 1)];
      const auto prefix = st_prefix(stage);
      init_correlation(store, prefix + "corr.", channels, cfg.windows[i], seed);
      init_identification(store, prefix + "id.", channels, cfg.identification, seed);
      init_temporal_attention(store, prefix + "ta.", channels, cfg.temporal, seed);
    }
  }
  const Index d = cfg.feature_dim(), hc = cfg.head_channels, H = cfg.hidden;
  set_normal(store, "head.conv1.w", {hc, d, 5}, std::sqrt(2.0 / double(d * 5)), seed);
  store.set("head.conv1.b", Tensor<S>({hc}));
  set_normal(store, "head.conv2.w", {hc, hc, 5}, std::sqrt(2.0 / double(hc * 5)), seed);
  store.set("head.conv2.b", Tensor<S>({hc}));
  Index rnn_in = hc;
  const double bound = 1.0 / std::sqrt(double(H));
  for (int layer = 0; layer < cfg.rnn_layers; ++layer) {
    for (const char* dir : {"fw", "bw"}) {
      const auto prefix = "rnn.l" + std::to_string(layer) + "." + dir + ".";
      set_uniform(store, prefix + "w_ih", {4 * H, rnn_in}, bound, seed);
      set_uniform(store, prefix + "w_hh", {4 * H, H}, bound, seed);
      Tensor<S> bias({4 * H});
      bias.vec().segment(H, H).setOnes();  // forget gate
      store.set(prefix + "b", std::move(bias));
    }
    rnn_in = 2 * H;
  }
  set_uniform(store, "classifier.w", {cfg.classes(), 2 * H}, 1.0 / std::sqrt(double(2 * H)), seed);
  store.set("classifier.b", Tensor<S>({cfg.classes()}));
  return store;
}

template <typename S>
Var<S> st_stage_forward(const Var<S>& x, const ModelConfig& cfg, const Bound<S>& params,
                        const std::string& prefix, int window, StageTrace<S>* trace) {
  auto corr_w = CorrelationWeights<S>::bind(params, prefix + "corr.");
  auto id_w = IdentificationWeights<S>::bind(params, prefix + "id.", cfg.identification);
  auto ta_w = TemporalAttentionWeights<S>::bind(params, prefix + "ta.", cfg.temporal);

  CorrelationMaps<S> maps;
  auto trajectories = correlation_forward(x, window, corr_w, &maps);
  auto identification = identification_forward(x, id_w, cfg.identification);
  auto fused = fuse_trajectories(x, trajectories, identification, id_w.alpha);
  Var<S> gates;
  auto out = temporal_attention_forward(fused, ta_w, cfg.temporal, &gates);
  if (trace) {
    trace->input = x.value();
    trace->gated_maps = maps.gated.value();
    trace->identification = identification.value();
    trace->gates = gates.value();
  }
  return out;
}

template <typename S>
Var<S> feature_extractor_forward(const Var<S>& video, const ModelConfig& cfg, const Bound<S>& params,
                                 std::vector<StageTrace<S>>* traces) {
  const auto& vs = video.shape();
  if (vs.size() != 4 || vs[0] < 1 || vs[1] != cfg.input_channels) {
    throw ShapeError("feature extractor: expected [T, " + std::to_string(cfg.input_channels) +
                     ", H, W] video, got " + to_string(vs));
  }
  Var<S> x = video;
  for (std::size_t k = 0; k < cfg.stage_channels.size(); ++k) {
    const int stage = static_cast<int>(k) + 1;
    x = ops::conv_nd(x, params(stage_prefix(stage) + "w"), ConvSpec::frame(3, 2));
    x = ops::relu(ops::add_channel_bias(x, params(stage_prefix(stage) + "b")));
    if (!cfg.st_stages) continue;
    auto it = std::find(cfg.st_after.begin(), cfg.st_after.end(), stage);
    if (it == cfg.st_after.end()) continue;
    const int window = cfg.windows[static_cast<std::size_t>(it - cfg.st_after.begin())];
    StageTrace<S>* trace = nullptr;
    if (traces) {
      traces->emplace_back();
      traces->back().stage = stage;
      trace = &traces->back();
    }
    x = st_stage_forward(x, cfg, params, st_prefix(stage), window, trace);
  }
  auto pooled = ops::pool_spatial(x, PoolMode::Average);
  if (!pooled.value().all_finite()) throw NumericError("feature extractor: non-finite activations");
  return ops::reshape(pooled, {x.dim(0), x.dim(1)});
}

template <typename S>
Var<S> temporal_head_forward(const Var<S>& features, const ModelConfig& cfg, const Bound<S>& params) {
  if (features.value().rank() != 2 || features.dim(1) != cfg.feature_dim()) {
    throw ShapeError("temporal head: expected [T, " + std::to_string(cfg.feature_dim()) + "] features, got " +
                     to_string(features.shape()));
  }
  if (features.dim(0) < 4) {
    throw ShapeError("temporal head: needs at least 4 frames, got " + std::to_string(features.dim(0)));
  }
  auto x = ops::conv_nd(features, params("head.conv1.w"), ConvSpec::temporal(5));
  x = ops::max_pool_time(ops::relu(ops::add_channel_bias(x, params("head.conv1.b"))), 2);
  x = ops::conv_nd(x, params("head.conv2.w"), ConvSpec::temporal(5));
  x = ops::max_pool_time(ops::relu(ops::add_channel_bias(x, params("head.conv2.b"))), 2);
  for (int layer = 0; layer < cfg.rnn_layers; ++layer) {
    const auto prefix = "rnn.l" + std::to_string(layer) + ".";
    auto fw = lstm_direction(x, params, prefix + "fw.", cfg.hidden, false);
    auto bw = lstm_direction(x, params, prefix + "bw.", cfg.hidden, true);
    x = ops::concat_cols<S>({fw, bw});
  }
  return ops::linear(x, params("classifier.w"), std::optional<Var<S>>(params("classifier.b")));
}

template <typename S>
Var<S> model_forward(const Var<S>& video, const ModelConfig& cfg, const Bound<S>& params,
                     std::vector<StageTrace<S>>* traces) {
  return temporal_head_forward(feature_extractor_forward(video, cfg, params, traces), cfg, params);
}

template <typename S>
Tensor<S> predict_logits(const Tensor<S>& video, const ModelConfig& cfg, const ParamStore<S>& params,
                         std::vector<StageTrace<S>>* traces) {
  Tape<S> tape(false);
  auto bound = tape.bind(params);
  return model_forward(tape.constant(video), cfg, bound, traces).value();
}

#define CORRNET_INSTANTIATE_MODEL(S)                                                                   \
  template ParamStore<S> init_model<S>(const ModelConfig&, std::uint64_t);                             \
  template Var<S> st_stage_forward(const Var<S>&, const ModelConfig&, const Bound<S>&,                 \
                                   const std::string&, int, StageTrace<S>*);                           \
  template Var<S> feature_extractor_forward(const Var<S>&, const ModelConfig&, const Bound<S>&,        \
                                            std::vector<StageTrace<S>>*);                              \
  template Var<S> temporal_head_forward(const Var<S>&, const ModelConfig&, const Bound<S>&);           \
  template Var<S> model_forward(const Var<S>&, const ModelConfig&, const Bound<S>&,                    \
                                std::vector<StageTrace<S>>*);                                          \
  template Tensor<S> predict_logits(const Tensor<S>&, const ModelConfig&, const ParamStore<S>&,        \
                                    std::vector<StageTrace<S>>*);

CORRNET_INSTANTIATE_MODEL(float)
CORRNET_INSTANTIATE_MODEL(double)

}  // namespace corrnet
