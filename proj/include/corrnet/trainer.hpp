#pragma once

#include "corrnet/autograd.hpp"
#include "corrnet/metrics.hpp"
#include "corrnet/model.hpp"
#include "corrnet/synthetic.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace corrnet {

class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double clip_norm = 0.0;     // global gradient norm limit, 0 disables
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update; returns the global gradient norm before clipping.
  double step(ParamStore<float>& params, const GradMap<float>& grads);

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t n) { steps_ = n; }
  ParamStore<float>& first_moment() { return m_; }
  ParamStore<float>& second_moment() { return v_; }
  const ParamStore<float>& first_moment() const { return m_; }
  const ParamStore<float>& second_moment() const { return v_; }

 private:
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
  ParamStore<float> m_;
  ParamStore<float> v_;
};

template <typename S>
struct Example {
  const Tensor<S>* frames;
  const GlossSequence* labels;
};

/// Mean CTC loss over the batch, on one tape.
template <typename S>
Var<S> batch_ctc_loss(Tape<S>& tape, const Bound<S>& params, const std::vector<Example<S>>& batch,
                      const ModelConfig& cfg);

/// Mean loss and its gradient, one tape per sample, reduced in batch order.
/// Throws DivergenceError on a non-finite loss.
template <typename S>
std::pair<double, GradMap<S>> batch_gradients(const std::vector<Example<S>>& batch, const ModelConfig& cfg,
                                              const ParamStore<S>& params, std::vector<double>* sample_losses = nullptr);

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// One optimizer step on the mean CTC loss of `batch`.
StepResult train_step(const std::vector<const Sample*>& batch, const ModelConfig& cfg, ParamStore<float>& params,
                      Adam& opt);

struct EvalResult {
  WerBreakdown total;
  std::vector<WerBreakdown> per_sample;
  std::vector<GlossSequence> hypotheses;
};

EvalResult evaluate(const ModelConfig& cfg, const ParamStore<float>& params, const std::vector<Sample>& samples);

/// Sample order of epoch `epoch` (1-based): a shuffle seeded by (seed, epoch) only.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

struct TrainState {
  ParamStore<float> params;
  Adam optimizer;
  int epoch = 0;  // epochs completed
};

/// Trains one epoch in place; returns the mean step loss.
double train_epoch(TrainState& state, const ModelConfig& cfg, const std::vector<Sample>& train, int batch_size,
                   std::uint64_t seed, const std::function<void(std::uint64_t step, double loss)>& on_step = {});

}  // namespace corrnet
