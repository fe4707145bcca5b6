#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "corrnet/checkpoint.hpp"
#include "corrnet/config.hpp"
#include "corrnet/driver.hpp"
#include "corrnet/heatmap.hpp"
#include "corrnet/synthetic.hpp"
#include "test_support.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace corrnet;
using corrnet::testing::random_tensor;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("corrnet_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

CorpusSpec tiny_spec() {
  CorpusSpec s;
  s.seed = 5;
  s.train = 6;
  s.dev = 3;
  s.test = 2;
  s.min_frames = 6;
  s.max_frames = 7;
  s.max_tokens = 3;
  s.frame_size = 16;
  s.square = 4;
  return s;
}

RunConfig tiny_run(const fs::path& data) {
  std::istringstream in("data_dir=" + data.string() +
                        "\nepochs=2\nframe_size=16\nstage_channels=4,4,8,8\nwindows=2,2,2\nreduction=4\n"
                        "spatial_scales=2\ntemporal_scales=2\ntemporal_branches=2\nhead_channels=8\nhidden=6\n"
                        "rnn_layers=1\nbatch_size=2\n");
  return RunConfig::from_map(parse_key_values(in));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CORRNET_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string cli_stderr(const std::string& args, const fs::path& dir) {
  const auto err = dir / "stderr.txt";
  [[maybe_unused]] const int rc = std::system((std::string(CORRNET_CLI) + " " + args + " >/dev/null 2>" + err.string()).c_str());
  return slurp(err);
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise") {
  auto dir = scratch("ckpt");
  Checkpoint c;
  c.params.set("a.w", random_tensor<float>({3, 4, 1, 1, 1}, 1));
  c.params.set("b", random_tensor<float>({7}, 2, -1e30, 1e30));
  c.params.set("scalar", Tensor<float>({1}, -0.0f));
  c.meta["step"] = 0xFFFFFFFF12345678ULL;
  c.meta["seed"] = 42;
  c.adam_m.set("a.w", random_tensor<float>({3, 4, 1, 1, 1}, 3));
  c.adam_v.set("a.w", random_tensor<float>({3, 4, 1, 1, 1}, 4, 0, 1));
  save_checkpoint(dir / "c.cnpk", c);
  auto back = load_checkpoint(dir / "c.cnpk");
  for (const auto& [name, t] : c.params) CHECK(bitwise_equal(t, back.params.at(name)));
  CHECK(back.meta == c.meta);
  CHECK(bitwise_equal(back.adam_m.at("a.w"), c.adam_m.at("a.w")));
  CHECK(bitwise_equal(back.adam_v.at("a.w"), c.adam_v.at("a.w")));
  CHECK(slurp(dir / "c.cnpk").substr(0, 4) == "CNPK");

  save_checkpoint(dir / "d.cnpk", back);
  CHECK(slurp(dir / "c.cnpk") == slurp(dir / "d.cnpk"));

  std::ofstream(dir / "bad.cnpk") << "NOPE";
  CHECK_THROWS(load_checkpoint(dir / "bad.cnpk"));
  auto bytes = slurp(dir / "c.cnpk");
  std::ofstream(dir / "short.cnpk", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS(load_checkpoint(dir / "short.cnpk"));
}

TEST_CASE("run config parsing") {
  std::istringstream in("# comment\n seed = 7 \n\nepochs=3 # trailing\nwindows=2,4,6\n");
  auto cfg = RunConfig::from_map(parse_key_values(in));
  CHECK(cfg.seed == 7);
  CHECK(cfg.epochs == 3);
  CHECK(cfg.windows == std::vector<int>{2, 4, 6});
  CHECK(cfg.learning_rate == 1e-3);

  std::istringstream again(cfg.to_string());
  CHECK(RunConfig::from_map(parse_key_values(again)).to_string() == cfg.to_string());
  CHECK(RunConfig::keys().size() == 24);

  std::istringstream unknown("seed=1\nlearning_rtae=0.1\n");
  CHECK_THROWS_AS(RunConfig::from_map(parse_key_values(unknown)), ConfigError);
  std::istringstream dup("seed=1\nseed=2\n");
  CHECK_THROWS_AS(parse_key_values(dup), ConfigError);
  std::istringstream no_eq("seed\n");
  CHECK_THROWS_AS(parse_key_values(no_eq), ConfigError);
  std::istringstream bad("epochs=three\n");
  CHECK_THROWS_AS(RunConfig::from_map(parse_key_values(bad)), ConfigError);
  std::istringstream odd("windows=3,6,10\n");
  CHECK_THROWS_AS(RunConfig::from_map(parse_key_values(odd)).model(8), ConfigError);
}

TEST_CASE("corpus generation is deterministic") {
  auto dir = scratch("corpus");
  auto spec = tiny_spec();
  write_corpus(spec, dir / "a");
  write_corpus(spec, dir / "b");
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    auto rel = fs::relative(entry.path(), dir / "a");
    REQUIRE(fs::exists(dir / "b" / rel));
    CHECK(slurp(entry.path()) == slurp(dir / "b" / rel));
  }
  auto vocab = read_vocabulary(dir / "a");
  CHECK(vocab == primitive_vocabulary());
  auto dev = load_split(dir / "a", Split::Dev, vocab);
  REQUIRE(dev.size() == 3);
  auto regen = generate_sample(spec, Split::Dev, 1).sample;
  CHECK(dev[1].id == regen.id);
  CHECK(bitwise_equal(dev[1].frames, regen.frames));
  CHECK(dev[1].labels == regen.labels);

  auto other = spec;
  other.seed = 6;
  CHECK_FALSE(bitwise_equal(generate_sample(other, Split::Dev, 1).sample.frames, regen.frames));
}

TEST_CASE("labels follow the generation trace") {
  CorpusSpec spec;
  for (int i = 0; i < 100; ++i) {
    auto g = generate_sample(spec, Split::Train, i);
    const auto n = g.sample.labels.size();
    CHECK(n >= 2);
    CHECK(n <= 5);
    CHECK(labels_from_trace(g.trace) == g.sample.labels);
    int frames = 0;
    for (const auto& seg : g.trace.segments) {
      CHECK(seg.first_frame == frames);
      CHECK(seg.frames >= 6);
      CHECK(seg.frames <= 10);
      frames += seg.frames;
    }
    CHECK(g.sample.frames.dim(0) == frames);
    CHECK(g.sample.frames.shape() == Shape{frames, 3, 64, 64});
    for (std::size_t k = 1; k < n; ++k) CHECK(g.sample.labels.tokens[k] != g.sample.labels.tokens[k - 1]);
  }
}

TEST_CASE("sweeps in opposite directions share their middle frame") {
  const int n = 7;
  auto left = render_sequence({Primitive::LeftSweep}, {n}, 64, 12).sample.frames;
  auto right = render_sequence({Primitive::RightSweep}, {n}, 64, 12).sample.frames;
  const Index F = 3 * 64 * 64;
  auto frame = [&](const Tensor<float>& v, Index t) { return Tensor<float>({F}, std::span<const float>(v.data() + t * F, F)); };
  CHECK(bitwise_equal(frame(left, 3), frame(right, 3)));
  CHECK_FALSE(bitwise_equal(frame(left, 0), frame(right, 0)));
  CHECK(primitive_state(Primitive::LeftSweep, 3, n, 64, 12) == primitive_state(Primitive::RightSweep, 3, n, 64, 12));
  CHECK(primitive_state(Primitive::UpSweep, 3, n, 64, 12) == primitive_state(Primitive::DownSweep, 3, n, 64, 12));
}

TEST_CASE("pgm export") {
  auto dir = scratch("pgm");
  CHECK(gate_to_pixel(0.0) == 128);
  CHECK(gate_to_pixel(-0.5) == 0);
  CHECK(gate_to_pixel(0.4999) == 255);
  CHECK(gate_to_pixel(-3.0) == 0);
  Tensor<float> zero({2, 3, 5, 4});
  auto px = channel_mean_pixels(zero, 1);
  CHECK(px.size() == 20);
  for (auto v : px) CHECK(v == 128);
  write_pgm(dir / "z.pgm", px, 5, 4);
  Index h = 0, w = 0;
  CHECK(read_pgm(dir / "z.pgm", &h, &w) == px);
  CHECK(h == 5);
  CHECK(w == 4);
  CHECK(slurp(dir / "z.pgm").rfind("P5\n4 5\n255\n", 0) == 0);

  Tensor<float> maps({1, 2, 3, 3});
  maps.at({0, 1, 2, 1}) = 0.3f;
  auto peaks = peak_trace(maps);
  REQUIRE(peaks.size() == 2);
  CHECK(peaks[1].y == 2);
  CHECK(peaks[1].x == 1);
  CHECK(peaks[0].y == 0);
}

TEST_CASE("training, resume, evaluation and map export") {
  auto dir = scratch("train");
  write_corpus(tiny_spec(), dir / "data");
  auto cfg = tiny_run(dir / "data");
  const auto vocab = read_vocabulary(dir / "data");

  SUBCASE("zero epochs stores the initialization") {
    auto c = cfg;
    c.epochs = 0;
    run_training(c, dir / "init", nullptr);
    auto ckpt = load_checkpoint(dir / "init" / kBestCheckpoint);
    auto init = init_model<float>(cfg.model(vocab.size()), cfg.seed);
    REQUIRE(ckpt.params.size() == init.size());
    for (const auto& [name, t] : init) CHECK(bitwise_equal(t, ckpt.params.at(name)));
  }

  SUBCASE("reruns and resumes reproduce the log") {
    run_training(cfg, dir / "r1", nullptr);
    run_training(cfg, dir / "r2", nullptr);
    const auto log = slurp(dir / "r1" / kMetricsLog);
    CHECK(log == slurp(dir / "r2" / kMetricsLog));
    CHECK(std::count(log.begin(), log.end(), '\n') == 2);
    CHECK(slurp(dir / "r1" / kLastCheckpoint) == slurp(dir / "r2" / kLastCheckpoint));

    auto first = cfg;
    first.epochs = 1;
    run_training(first, dir / "half", nullptr);
    auto rest = cfg;
    rest.resume = (dir / "half" / kLastCheckpoint).string();
    run_training(rest, dir / "resumed", nullptr);
    const auto second_line = log.substr(log.find('\n') + 1);
    CHECK(slurp(dir / "resumed" / kMetricsLog) == second_line);
    auto a = load_checkpoint(dir / "r1" / kLastCheckpoint), b = load_checkpoint(dir / "resumed" / kLastCheckpoint);
    for (const auto& [name, t] : a.params) CHECK(bitwise_equal(t, b.params.at(name)));

    auto r1 = run_eval(dir / "r1" / kBestCheckpoint, Split::Dev);
    auto r2 = run_eval(dir / "r1" / kBestCheckpoint, Split::Dev);
    CHECK(r1.to_string(vocab) == r2.to_string(vocab));
    CHECK(r1.ids.size() == 3);
    CHECK(r1.to_string(vocab).rfind("dev  del/ins ", 0) == 0);
  }

  SUBCASE("maps of an untrained model") {
    auto c = cfg;
    c.epochs = 0;
    run_training(c, dir / "u", nullptr);
    auto files = run_dump_maps(dir / "u" / kBestCheckpoint, 0, dir / "maps");
    CHECK_FALSE(files.empty());
    const auto s = load_split(dir / "data", Split::Dev, vocab);
    const Index T = s[0].frames.dim(0);
    Index h = 0, w = 0;
    read_pgm(dir / "maps" / "st2_ahat_t000_n0.pgm", &h, &w);
    CHECK(h == 4);
    CHECK(w == 4);
    read_pgm(dir / "maps" / "st4_m_t000.pgm", &h, &w);
    CHECK(h == 1);
    CHECK(fs::exists(dir / "maps" / ("st3_m_t" + std::string(3 - std::to_string(T - 1).size(), '0') + std::to_string(T - 1) + ".pgm")));
    CHECK(fs::exists(dir / "maps" / "st2_u.txt"));
    CHECK(fs::exists(dir / "maps" / "st2_peaks.txt"));
    CHECK_THROWS_AS(run_dump_maps(dir / "u" / kBestCheckpoint, 3, dir / "maps"), std::out_of_range);
  }

  SUBCASE("vocabulary mismatch is rejected") {
    auto c = cfg;
    c.epochs = 0;
    run_training(c, dir / "v", nullptr);
    write_vocabulary(dir / "data" / "vocab.txt", Vocabulary({"a", "b", "c", "d", "e", "f", "g", "h"}));
    CHECK_THROWS(run_eval(dir / "v" / kBestCheckpoint, Split::Dev));
  }
}

TEST_CASE("command line errors exit nonzero with one line") {
  auto dir = scratch("cli");
  CHECK(run_cli("") != 0);
  CHECK(run_cli("frobnicate") != 0);
  CHECK(run_cli("train") != 0);
  CHECK(run_cli("eval --checkpoint " + (dir / "missing.cnpk").string()) != 0);
  CHECK(run_cli("eval --checkpoint x --split valid") != 0);
  std::ofstream(dir / "bad.cfg") << "nonsense_key=1\n";
  CHECK(run_cli("flops --config " + (dir / "bad.cfg").string()) == 1);
  const auto err = cli_stderr("flops --config " + (dir / "bad.cfg").string(), dir);
  CHECK(err.rfind("error: ", 0) == 0);
  CHECK(std::count(err.begin(), err.end(), '\n') == 1);
  CHECK(err.find("nonsense_key") != std::string::npos);

  std::ofstream(dir / "ok.cfg") << "flops_frames=2\n";
  CHECK(run_cli("flops --config " + (dir / "ok.cfg").string()) == 0);
  std::ofstream(dir / "spec.cfg") << tiny_spec().to_string();
  CHECK(run_cli("gen-data --spec " + (dir / "spec.cfg").string() + " --out " + (dir / "corpus").string()) == 0);
  CHECK(fs::exists(dir / "corpus" / "dev" / "labels.txt"));
}

TEST_CASE("untrained model decodes near-degenerately" * doctest::may_fail()) {
  CorpusSpec spec;
  std::vector<Sample> dev;
  for (int i = 0; i < spec.dev; ++i) dev.push_back(generate_sample(spec, Split::Dev, i).sample);
  RunConfig run;
  const auto model = run.model(int(kPrimitiveNames.size()));
  const auto result = evaluate(model, init_model<float>(model, run.seed), dev);
  MESSAGE("untrained dev WER " << result.total.wer() << " (sub " << result.total.substitutions << ", del "
                                << result.total.deletions << ", ins " << result.total.insertions << ")");
  CHECK(result.total.wer() >= 0.9);
}
