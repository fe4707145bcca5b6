#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "corrnet/ctc.hpp"
#include "corrnet/gradcheck.hpp"
#include "corrnet/model.hpp"
#include "corrnet/synthetic.hpp"
#include "corrnet/trainer.hpp"
#include "test_support.hpp"

#include <cmath>
#include <random>

using namespace corrnet;
using corrnet::testing::random_tensor;

namespace {

ModelConfig tiny_model(bool st = true) {
  ModelConfig cfg;
  cfg.frame_size = 16;
  cfg.stage_channels = {4, 8, 8, 16};
  cfg.windows = {2, 2, 4};
  cfg.st_stages = st;
  cfg.vocab_size = 8;
  cfg.head_channels = 8;
  cfg.hidden = 6;
  cfg.rnn_layers = 1;
  cfg.identification.reduction = 4;
  cfg.identification.spatial_scales = 2;
  cfg.identification.temporal_scales = 2;
  cfg.temporal.reduction = 4;
  cfg.temporal.branches = 2;
  return cfg;
}

// Gives every residual gain a nonzero value so the ST stages take part in the output.
template <typename S>
void open_gains(ParamStore<S>& p, double value) {
  for (auto& [name, t] : p)
    if (name.ends_with(".alpha") || name.ends_with(".lambda")) t.fill(S(value));
}

CorpusSpec tiny_corpus() {
  CorpusSpec spec;
  spec.frame_size = 16;
  spec.square = 4;
  spec.min_frames = 6;
  spec.max_frames = 7;
  spec.min_tokens = 2;
  spec.max_tokens = 3;
  return spec;
}

}  // namespace

TEST_CASE("ctc loss on two uniform steps is ln 3") {
  Tensor<double> logits({2, 3});
  const std::vector<int> target{1};
  CHECK(ctc_loss_value(logits, target) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(ctc_brute_force(logits, target) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  Tensor<double> sure({1, 3}, {0.0, 200.0, 0.0});
  CHECK(ctc_loss_value(sure, target) == doctest::Approx(0.0));
}

TEST_CASE("ctc loss agrees with path enumeration") {
  std::mt19937_64 gen(5);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int V = 1 + int(gen() % 4), T = 1 + int(gen() % 8), N = int(gen() % 4);
    std::vector<int> target;
    for (int i = 0; i < N; ++i) target.push_back(1 + int(gen() % std::uint64_t(V)));
    auto logits = random_tensor({T, V + 1}, gen(), -2.0, 2.0);
    const double fast = ctc_loss_value(logits, target);
    const double slow = ctc_brute_force(logits, target);
    if (std::isinf(slow)) {
      CHECK(std::isinf(fast));
      CHECK(ctc_min_length(target) > T);
      continue;
    }
    CHECK(fast >= 0.0);
    CHECK(std::abs(fast - slow) <= 1e-8);
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("ctc edge cases") {
  auto logits = random_tensor({3, 3}, 1);
  const std::vector<int> empty;
  CHECK(ctc_loss_value(logits, empty) == doctest::Approx(ctc_brute_force(logits, empty)).epsilon(1e-12));
  const std::vector<int> repeat{1, 1};
  CHECK(ctc_min_length(repeat) == 3);
  const std::vector<int> impossible{1, 2, 1, 2};
  CHECK(std::isinf(ctc_loss_value(logits, impossible)));
  CHECK(std::isinf(ctc_brute_force(logits, impossible)));
  CHECK_THROWS_AS(ctc_brute_force(random_tensor({11, 3}, 1), repeat), std::invalid_argument);
}

TEST_CASE("ctc gradient") {
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    ParamStore<double> p;
    p.set("logits", random_tensor({6, 4}, seed, -2, 2));
    const std::vector<int> target{2, 3};
    ScalarObjective f = [&](Tape<double>&, const Bound<double>& b) { return ctc_loss(b("logits"), target); };
    CHECK(grad_check_fd(f, p).max_rel_error <= 1e-4);
  }
}

TEST_CASE("greedy decoding") {
  auto path_logits = [](const std::vector<int>& path) {
    Tensor<double> t({Index(path.size()), 3});
    for (std::size_t i = 0; i < path.size(); ++i) t.at({Index(i), path[i]}) = 1.0;
    return t;
  };
  CHECK(greedy_decode(path_logits({0, 1, 1, 0, 2})).tokens == std::vector<int>{1, 2});
  CHECK(greedy_decode(path_logits({0, 0, 0})).empty());
  CHECK(greedy_decode(path_logits({1, 0, 1})).tokens == std::vector<int>{1, 1});
  Tensor<double> tie({2, 3}, 0.5);
  CHECK(best_path(tie) == std::vector<int>{0, 0});

  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 200; ++trial) {
    auto logits = random_tensor({12, 4}, gen());
    auto path = best_path(logits);
    auto seq = greedy_decode(logits);
    for (int tok : seq.tokens) CHECK(tok != kBlank);
    std::vector<int> expect;
    for (std::size_t t = 0; t < path.size(); ++t)
      if (path[t] != kBlank && (t == 0 || path[t] != path[t - 1])) expect.push_back(path[t]);
    CHECK(seq.tokens == expect);
  }
}

TEST_CASE("head output lengths") {
  auto cfg = tiny_model();
  auto p = init_model<double>(cfg, 1);
  Tape<double> tape(false);
  auto b = tape.bind(p);
  CHECK(temporal_head_forward(tape.constant(random_tensor({8, 16}, 1)), cfg, b).shape() == Shape{2, 9});
  CHECK(temporal_head_forward(tape.constant(random_tensor({16, 16}, 2)), cfg, b).shape() == Shape{4, 9});
  CHECK(temporal_head_forward(tape.constant(random_tensor({11, 16}, 3)), cfg, b).shape() == Shape{2, 9});
  CHECK(output_length(16) == 4);
  CHECK_THROWS_AS(temporal_head_forward(tape.constant(random_tensor({3, 16}, 3)), cfg, b), ShapeError);

  auto zero = temporal_head_forward(tape.constant(Tensor<double>({8, 16})), cfg, b).value();
  for (Index t = 0; t < 2; ++t)
    for (Index k = 1; k < 9; ++k) CHECK(zero.at({t, k}) == zero.at({t, 0}));
}

TEST_CASE("identity at initialization") {
  auto full = tiny_model(true), base = tiny_model(false);
  auto p = init_model<float>(full, 3);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto video = random_tensor<float>({8, 3, 16, 16}, 100 + seed, 0.0, 1.0);
    CHECK(bitwise_equal(predict_logits(video, full, p), predict_logits(video, base, p)));
  }
}

TEST_CASE("single frame video through the extractor") {
  auto cfg = tiny_model();
  auto p = init_model<double>(cfg, 4);
  open_gains(p, 0.5);
  Tape<double> tape(false);
  auto v = feature_extractor_forward(tape.constant(random_tensor({1, 3, 16, 16}, 3, 0, 1)), cfg, tape.bind(p));
  CHECK(v.shape() == Shape{1, 16});
  CHECK(v.value().all_finite());
}

TEST_CASE("extractor equals the composition of module forwards") {
  auto cfg = tiny_model();
  cfg.windows = {2, 2, 2};
  auto p = init_model<double>(cfg, 5);
  open_gains(p, 0.7);
  auto video = random_tensor({6, 3, 16, 16}, 6, 0, 1);
  Tape<double> tape(false);
  auto b = tape.bind(p);
  auto got = feature_extractor_forward(tape.constant(video), cfg, b).value();

  Var<double> x = tape.constant(video);
  for (int stage = 1; stage <= 4; ++stage) {
    const auto s = "backbone.s" + std::to_string(stage) + ".";
    x = ops::relu(ops::add_channel_bias(ops::conv_nd(x, b(s + "w"), ConvSpec::frame(3, 2)), b(s + "b")));
    if (stage < 2) continue;
    const auto st = "st" + std::to_string(stage) + ".";
    auto e = correlation_forward(x, 2, CorrelationWeights<double>::bind(b, st + "corr."));
    auto idw = IdentificationWeights<double>::bind(b, st + "id.", cfg.identification);
    auto m = identification_forward(x, idw, cfg.identification);
    auto y = fuse_trajectories(x, e, m, idw.alpha);
    x = temporal_attention_forward(y, TemporalAttentionWeights<double>::bind(b, st + "ta.", cfg.temporal), cfg.temporal);
  }
  auto want = pool_spatial(x.value(), PoolMode::Average).reshaped({6, 16});
  CHECK(max_abs_diff(got, want) < 1e-6);
}

TEST_CASE("zero learning rate keeps parameters bitwise") {
  auto cfg = tiny_model();
  auto spec = tiny_corpus();
  auto s0 = generate_sample(spec, Split::Train, 0).sample;
  auto s1 = generate_sample(spec, Split::Train, 1).sample;
  auto p = init_model<float>(cfg, 7);
  const auto before = p;
  AdamConfig ac;
  ac.learning_rate = 0.0;
  Adam opt(ac);
  train_step({&s0, &s1}, cfg, p, opt);
  train_step({&s0, &s1}, cfg, p, opt);
  for (const auto& [name, t] : before) CHECK(bitwise_equal(t, p.at(name)));
}

TEST_CASE("loss decreases on a fixed batch") {
  auto cfg = tiny_model();
  auto spec = tiny_corpus();
  std::vector<Sample> batch;
  for (int i = 0; i < 2; ++i) batch.push_back(generate_sample(spec, Split::Train, i).sample);
  auto p = init_model<float>(cfg, 8);
  AdamConfig ac;
  ac.learning_rate = 1e-2;
  Adam opt(ac);
  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) losses.push_back(train_step({&batch[0], &batch[1]}, cfg, p, opt).loss);
  MESSAGE("loss " << losses.front() << " -> " << losses.back());
  CHECK(losses.back() < 0.5 * losses.front());
}

TEST_CASE("batch gradients") {
  auto cfg = tiny_model();
  cfg.stage_channels = {4, 4, 4, 8};
  cfg.head_channels = 4;
  cfg.hidden = 3;
  auto spec = tiny_corpus();
  std::vector<Tensor<double>> frames;
  std::vector<GlossSequence> labels;
  for (int i = 0; i < 2; ++i) {
    auto s = generate_sample(spec, Split::Dev, i).sample;
    frames.push_back(s.frames.cast<double>());
    labels.push_back(s.labels);
  }
  std::vector<Example<double>> batch{{&frames[0], &labels[0]}, {&frames[1], &labels[1]}};
  auto p = init_model<double>(cfg, 9);
  open_gains(p, 0.3);
  // background pixels are exactly zero; zero biases would sit on the relu kink
  std::uint64_t bias_seed = 30;
  for (auto& [name, t] : p)
    if (name.ends_with(".b")) t = random_tensor(t.shape(), bias_seed++, -0.2, 0.2);

  Tape<double> tape;
  auto single = tape.backward(batch_ctc_loss(tape, tape.bind(p), batch, cfg));
  auto [loss, split] = batch_gradients(batch, cfg, p);
  CHECK(std::isfinite(loss));
  for (const auto& [name, g] : single) CHECK(max_abs_diff(g, split.at(name)) < 1e-10);

  ScalarObjective f = [&](Tape<double>& t, const Bound<double>& b) { return batch_ctc_loss(t, b, batch, cfg); };
  GradCheckOptions opts;
  opts.max_entries = 4;
  auto r = grad_check_fd(f, p, opts);
  INFO(r.worst_param);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("epoch order is a seeded permutation") {
  auto a = epoch_order(50, 42, 1), b = epoch_order(50, 42, 1), c = epoch_order(50, 42, 2);
  CHECK(a == b);
  CHECK(a != c);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}
