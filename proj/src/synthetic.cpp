#include "corrnet/synthetic.hpp"

#include "corrnet/checkpoint.hpp"
#include "corrnet/config.hpp"
#include "corrnet/rng.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace corrnet {

namespace fs = std::filesystem;

Vocabulary primitive_vocabulary() {
  return Vocabulary(std::vector<std::string>(kPrimitiveNames.begin(), kPrimitiveNames.end()));
}

CorpusSpec CorpusSpec::from_map(const std::map<std::string, std::string>& kv) {
  CorpusSpec s;
  for (const auto& [key, value] : kv) {
    auto num = [&](auto& field) {
      std::istringstream is(value);
      std::remove_reference_t<decltype(field)> v{};
      if (!(is >> v) || !is.eof()) throw ConfigError("corpus spec: invalid value '" + value + "' for key " + key);
      field = v;
    };
    if (key == "seed") num(s.seed);
    else if (key == "train") num(s.train);
    else if (key == "dev") num(s.dev);
    else if (key == "test") num(s.test);
    else if (key == "min_frames") num(s.min_frames);
    else if (key == "max_frames") num(s.max_frames);
    else if (key == "min_tokens") num(s.min_tokens);
    else if (key == "max_tokens") num(s.max_tokens);
    else if (key == "frame_size") num(s.frame_size);
    else if (key == "square") num(s.square);
    else throw ConfigError("corpus spec: unknown key " + key);
  }
  s.validate();
  return s;
}

CorpusSpec CorpusSpec::from_file(const fs::path& path) { return from_map(read_key_values(path)); }

std::string CorpusSpec::to_string() const {
  std::ostringstream os;
  os << "seed=" << seed << "\ntrain=" << train << "\ndev=" << dev << "\ntest=" << test
     << "\nmin_frames=" << min_frames << "\nmax_frames=" << max_frames << "\nmin_tokens=" << min_tokens
     << "\nmax_tokens=" << max_tokens << "\nframe_size=" << frame_size << "\nsquare=" << square << "\n";
  return os.str();
}

void CorpusSpec::validate() const {
  if (train < 0 || dev < 0 || test < 0) throw ConfigError("corpus spec: split sizes must be >= 0");
  if (min_frames < 2 || max_frames < min_frames) throw ConfigError("corpus spec: need 2 <= min_frames <= max_frames");
  if (min_tokens < 1 || max_tokens < min_tokens) throw ConfigError("corpus spec: need 1 <= min_tokens <= max_tokens");
  if (square < 2 || frame_size < 3 * square) throw ConfigError("corpus spec: frame_size must be >= 3 * square");
}

SquareState primitive_state(Primitive p, int frame, int frames, Index frame_size, Index square) {
  const double u = frames > 1 ? double(frame) / double(frames - 1) : 0.5;
  const double n = double(frame_size), s = double(square);
  const double mid = n / 2.0;
  const double lo = s, hi = n - s;  // sweep endpoints, symmetric about the centre
  const double travel = lo + (hi - lo) * u;
  switch (p) {
    case Primitive::LeftSweep: return {hi - (hi - lo) * u, mid, s};
    case Primitive::RightSweep: return {travel, mid, s};
    case Primitive::UpSweep: return {mid, hi - (hi - lo) * u, s};
    case Primitive::DownSweep: return {mid, travel, s};
    case Primitive::Diagonal: return {travel, travel, s};
    case Primitive::Circle: {
      const double r = (hi - lo) / 2.5, a = 2.0 * std::numbers::pi * u;
      return {mid + r * std::cos(a), mid + r * std::sin(a), s};
    }
    case Primitive::Grow: return {mid, mid, s * (0.5 + u)};
    case Primitive::Shrink: return {mid, mid, s * (1.5 - u)};
  }
  throw std::invalid_argument("unknown primitive");
}

void render_square(Tensor<float>& video, Index t, const SquareState& s) {
  const Index C = video.dim(1), H = video.dim(2), W = video.dim(3);
  const Index side = std::max<Index>(1, Index(std::lround(s.side)));
  const Index x0 = Index(std::floor(s.cx - double(side) / 2.0 + 0.5));
  const Index y0 = Index(std::floor(s.cy - double(side) / 2.0 + 0.5));
  for (Index c = 0; c < C; ++c)
    for (Index y = std::max<Index>(0, y0); y < std::min(H, y0 + side); ++y)
      for (Index x = std::max<Index>(0, x0); x < std::min(W, x0 + side); ++x) video.at({t, c, y, x}) = 1.0f;
}

GlossSequence labels_from_trace(const GenerationTrace& trace) {
  GlossSequence out;
  for (const auto& seg : trace.segments) out.tokens.push_back(seg.token);
  return out;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "dev") return Split::Dev;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, dev or test)");
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

std::uint64_t sample_seed(std::uint64_t master, Split split, std::uint64_t index) {
  return derive_seed(master, (std::uint64_t(split) << 32) + index);
}

namespace {

int draw(std::uint64_t& state, int lo, int hi) {
  return lo + int(splitmix64(state) % std::uint64_t(hi - lo + 1));
}

std::string sample_id(Split split, int index) {
  std::ostringstream os;
  os << split_name(split) << "_" << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

}  // namespace

GeneratedSample render_sequence(const std::vector<Primitive>& primitives, const std::vector<int>& frames,
                                Index frame_size, Index square) {
  if (primitives.size() != frames.size()) throw std::invalid_argument("render_sequence: one frame count per primitive");
  GeneratedSample g;
  int total = 0;
  for (std::size_t k = 0; k < primitives.size(); ++k) {
    g.trace.segments.push_back({int(primitives[k]) + 1, total, frames[k]});
    for (int f = 0; f < frames[k]; ++f)
      g.trace.squares.push_back(primitive_state(primitives[k], f, frames[k], frame_size, square));
    total += frames[k];
  }
  g.sample.frames = Tensor<float>({Index(total), 3, frame_size, frame_size});
  for (Index t = 0; t < total; ++t) render_square(g.sample.frames, t, g.trace.squares[std::size_t(t)]);
  g.sample.labels = labels_from_trace(g.trace);
  return g;
}

GeneratedSample generate_sample(const CorpusSpec& spec, Split split, int index) {
  spec.validate();
  std::uint64_t state = sample_seed(spec.seed, split, std::uint64_t(index));
  const int tokens = draw(state, spec.min_tokens, spec.max_tokens);
  std::vector<Primitive> prims;
  std::vector<int> frames;
  for (int k = 0; k < tokens; ++k) {
    int p = draw(state, 0, int(kPrimitiveNames.size()) - 1);
    // no immediate repeats
    if (!prims.empty() && p == int(prims.back())) p = (p + 1 + draw(state, 0, 6)) % 8;
    prims.push_back(Primitive(p));
    frames.push_back(draw(state, spec.min_frames, spec.max_frames));
  }
  auto g = render_sequence(prims, frames, spec.frame_size, spec.square);
  g.sample.id = sample_id(split, index);
  return g;
}

void write_vocabulary(const fs::path& path, const Vocabulary& vocab) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& g : vocab.glosses()) os << g << "\n";
}

Vocabulary read_vocabulary(const fs::path& corpus_dir) {
  std::ifstream is(corpus_dir / "vocab.txt");
  if (!is) throw std::runtime_error("cannot open " + (corpus_dir / "vocab.txt").string());
  std::vector<std::string> glosses;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) glosses.push_back(line);
  return Vocabulary(std::move(glosses));
}

void write_corpus(const CorpusSpec& spec, const fs::path& out) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::runtime_error("cannot create " + out.string() + ": " + ec.message());
  const auto vocab = primitive_vocabulary();
  write_vocabulary(out / "vocab.txt", vocab);
  {
    std::ofstream os(out / "corpus.cfg");
    if (!os) throw std::runtime_error("cannot write " + (out / "corpus.cfg").string());
    os << spec.to_string();
  }
  for (Split split : {Split::Train, Split::Dev, Split::Test}) {
    const int count = split == Split::Train ? spec.train : split == Split::Dev ? spec.dev : spec.test;
    const auto dir = out / split_name(split);
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
    std::ofstream labels(dir / "labels.txt"), trace(dir / "trace.txt");
    if (!labels || !trace) throw std::runtime_error("cannot write labels in " + dir.string());
    for (int i = 0; i < count; ++i) {
      const auto g = generate_sample(spec, split, i);
      save_tensor(dir / (g.sample.id + ".frames"), "frames", g.sample.frames);
      labels << g.sample.id;
      for (const auto& w : vocab.decode(g.sample.labels)) labels << " " << w;
      labels << "\n";
      trace << g.sample.id;
      for (const auto& seg : g.trace.segments)
        trace << " " << vocab.name(seg.token) << ":" << seg.first_frame << ":" << seg.frames;
      trace << "\n";
    }
  }
}

std::vector<Sample> load_split(const fs::path& corpus_dir, Split split, const Vocabulary& vocab, int limit) {
  const auto dir = corpus_dir / split_name(split);
  std::ifstream is(dir / "labels.txt");
  if (!is) throw std::runtime_error("cannot open " + (dir / "labels.txt").string());
  std::vector<Sample> out;
  std::string line;
  while (std::getline(is, line)) {
    if (limit > 0 && int(out.size()) >= limit) break;
    std::istringstream ls(line);
    Sample s;
    if (!(ls >> s.id)) continue;
    std::vector<std::string> words;
    std::string w;
    while (ls >> w) words.push_back(w);
    try {
      s.labels = vocab.encode(words);
    } catch (const std::out_of_range& e) {
      throw std::runtime_error("vocabulary mismatch in " + (dir / "labels.txt").string() + ": " + e.what());
    }
    s.frames = load_tensor(dir / (s.id + ".frames"), "frames");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace corrnet
