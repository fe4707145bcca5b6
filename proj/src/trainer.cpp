#include "corrnet/trainer.hpp"

#include "corrnet/ctc.hpp"
#include "corrnet/rng.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace corrnet {

double Adam::step(ParamStore<float>& params, const GradMap<float>& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.vec().template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
  const float b1 = float(cfg_.beta1), b2 = float(cfg_.beta2);
  const float step_size = float(cfg_.learning_rate / bc1);
  const float inv_bc2 = float(1.0 / bc2), eps = float(cfg_.epsilon);
  const float decay = float(cfg_.learning_rate * cfg_.weight_decay);
  for (auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    if (!m_.contains(name)) {
      m_.set(name, Tensor<float>(p.shape()));
      v_.set(name, Tensor<float>(p.shape()));
    }
    const Eigen::VectorXf g = it->second.vec() * float(clip);
    auto& m = m_.at(name).vec();
    auto& v = v_.at(name).vec();
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
    auto& w = p.vec();
    if (decay != 0.0f) w -= decay * w;
    w.array() -= step_size * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
  }
  return norm;
}

template <typename S>
Var<S> batch_ctc_loss(Tape<S>& tape, const Bound<S>& params, const std::vector<Example<S>>& batch,
                      const ModelConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("batch_ctc_loss: empty batch");
  std::vector<Var<S>> losses;
  for (const auto& ex : batch) {
    auto logits = model_forward(tape.constant(*ex.frames), cfg, params);
    losses.push_back(ctc_loss(logits, ex.labels->tokens));
  }
  std::vector<S> weights(losses.size(), S(1) / S(losses.size()));
  Var<S> total = ops::scale(losses[0], weights[0]);
  for (std::size_t i = 1; i < losses.size(); ++i) total = ops::add(total, ops::scale(losses[i], weights[i]));
  return total;
}

template <typename S>
std::pair<double, GradMap<S>> batch_gradients(const std::vector<Example<S>>& batch, const ModelConfig& cfg,
                                              const ParamStore<S>& params, std::vector<double>* sample_losses) {
  if (batch.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  const S inv = S(1) / S(batch.size());
  GradMap<S> total;
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tape<S> tape;
    auto bound = tape.bind(params);
    auto logits = model_forward(tape.constant(*batch[i].frames), cfg, bound);
    auto l = ctc_loss(logits, batch[i].labels->tokens);
    const double value = double(l.value()[0]);
    if (!std::isfinite(value)) {
      std::ostringstream os;
      os << "non-finite loss " << value << " on batch item " << i << " (target length " << batch[i].labels->size()
         << ", " << logits.dim(0) << " output steps)";
      throw DivergenceError(os.str());
    }
    if (sample_losses) sample_losses->push_back(value);
    loss += value;
    auto grads = tape.backward(ops::scale(l, inv));
    if (i == 0) {
      total = std::move(grads);
    } else {
      for (auto& [name, g] : grads) total.at(name).vec() += g.vec();
    }
  }
  return {loss / double(batch.size()), std::move(total)};
}

StepResult train_step(const std::vector<const Sample*>& batch, const ModelConfig& cfg, ParamStore<float>& params,
                      Adam& opt) {
  std::vector<Example<float>> examples;
  for (const auto* s : batch) examples.push_back({&s->frames, &s->labels});
  std::pair<double, GradMap<float>> lg;
  try {
    lg = batch_gradients(examples, cfg, params);
  } catch (const DivergenceError& e) {
    std::ostringstream os;
    os << "divergence at step " << opt.steps() + 1 << ": " << e.what() << " [samples";
    for (const auto* s : batch) os << " " << s->id;
    os << "]";
    throw DivergenceError(os.str());
  }
  StepResult r;
  r.loss = lg.first;
  r.grad_norm = opt.step(params, lg.second);
  if (!std::isfinite(r.grad_norm)) {
    throw DivergenceError("divergence at step " + std::to_string(opt.steps()) + ": non-finite gradient norm");
  }
  return r;
}

EvalResult evaluate(const ModelConfig& cfg, const ParamStore<float>& params, const std::vector<Sample>& samples) {
  EvalResult r;
  for (const auto& s : samples) {
    auto hyp = greedy_decode(predict_logits(s.frames, cfg, params));
    auto w = word_errors(hyp.tokens, s.labels.tokens);
    r.total += w;
    r.per_sample.push_back(w);
    r.hypotheses.push_back(std::move(hyp));
  }
  return r;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t state = derive_seed(seed, 0xE90C000000000000ULL + std::uint64_t(epoch));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = std::size_t(splitmix64(state) % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

double train_epoch(TrainState& state, const ModelConfig& cfg, const std::vector<Sample>& train, int batch_size,
                   std::uint64_t seed, const std::function<void(std::uint64_t, double)>& on_step) {
  if (train.empty()) throw std::invalid_argument("train_epoch: empty training split");
  const auto order = epoch_order(train.size(), seed, state.epoch + 1);
  double sum = 0.0;
  int steps = 0;
  for (std::size_t start = 0; start < order.size(); start += std::size_t(batch_size)) {
    std::vector<const Sample*> batch;
    for (std::size_t k = start; k < std::min(order.size(), start + std::size_t(batch_size)); ++k)
      batch.push_back(&train[order[k]]);
    const auto r = train_step(batch, cfg, state.params, state.optimizer);
    sum += r.loss;
    ++steps;
    if (on_step) on_step(state.optimizer.steps(), r.loss);
  }
  ++state.epoch;
  return sum / steps;
}

template Var<float> batch_ctc_loss(Tape<float>&, const Bound<float>&, const std::vector<Example<float>>&,
                                   const ModelConfig&);
template Var<double> batch_ctc_loss(Tape<double>&, const Bound<double>&, const std::vector<Example<double>>&,
                                    const ModelConfig&);
template std::pair<double, GradMap<float>> batch_gradients(const std::vector<Example<float>>&, const ModelConfig&,
                                                           const ParamStore<float>&, std::vector<double>*);
template std::pair<double, GradMap<double>> batch_gradients(const std::vector<Example<double>>&, const ModelConfig&,
                                                            const ParamStore<double>&, std::vector<double>*);

}  // namespace corrnet
