#pragma once

#include "corrnet/ctc.hpp"
#include "corrnet/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace corrnet {

/// Motion primitives of the synthetic sign corpus; gloss id = enum value + 1.
enum class Primitive { LeftSweep, RightSweep, UpSweep, DownSweep, Diagonal, Circle, Grow, Shrink };

inline constexpr std::array<std::string_view, 8> kPrimitiveNames{
    "left-sweep", "right-sweep", "up-sweep", "down-sweep", "diagonal", "circle", "grow", "shrink"};

Vocabulary primitive_vocabulary();

struct CorpusSpec {
  std::uint64_t seed = 42;
  int train = 400;
  int dev = 50;
  int test = 50;
  int min_frames = 6;   // frames per primitive
  int max_frames = 10;
  int min_tokens = 2;   // primitives per sample
  int max_tokens = 5;
  Index frame_size = 64;
  Index square = 12;    // side of the square at rest

  static CorpusSpec from_map(const std::map<std::string, std::string>& kv);
  static CorpusSpec from_file(const std::filesystem::path& path);
  std::string to_string() const;
  void validate() const;
};

/// Square placement in pixel units; (cx, cy) is the centre.
struct SquareState {
  double cx = 0;
  double cy = 0;
  double side = 0;
  friend bool operator==(const SquareState&, const SquareState&) = default;
};

/// Square for frame `frame` of an `frames`-long rendering of `p`.
SquareState primitive_state(Primitive p, int frame, int frames, Index frame_size, Index square);

/// Paints the white square into frame t of a [T, 3, N, N] video (background stays 0).
void render_square(Tensor<float>& video, Index t, const SquareState& s);

struct Segment {
  int token = 0;
  int first_frame = 0;
  int frames = 0;
};

struct GenerationTrace {
  std::vector<Segment> segments;
  std::vector<SquareState> squares;  // one per frame
};

/// Labels implied by a trace.
GlossSequence labels_from_trace(const GenerationTrace& trace);

struct Sample {
  std::string id;
  Tensor<float> frames;  // [T, 3, N, N]
  GlossSequence labels;
};

enum class Split { Train, Dev, Test };
Split parse_split(const std::string& name);
std::string split_name(Split s);

/// Per-sample seed: derive_seed(master, split * 2^32 + index).
std::uint64_t sample_seed(std::uint64_t master, Split split, std::uint64_t index);

struct GeneratedSample {
  Sample sample;
  GenerationTrace trace;
};

/// Pure function of (spec, split, index).
GeneratedSample generate_sample(const CorpusSpec& spec, Split split, int index);

/// Renders an explicit primitive sequence with the given per-primitive frame counts.
GeneratedSample render_sequence(const std::vector<Primitive>& primitives, const std::vector<int>& frames,
                                Index frame_size, Index square);

/// Writes `<out>/{train,dev,test}/<id>.frames`, `labels.txt`, `trace.txt`, plus `<out>/vocab.txt`
/// and `<out>/corpus.cfg`.
void write_corpus(const CorpusSpec& spec, const std::filesystem::path& out);

Vocabulary read_vocabulary(const std::filesystem::path& corpus_dir);
void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);

/// Loads a split in labels.txt order; `limit` > 0 keeps only the first `limit` samples.
std::vector<Sample> load_split(const std::filesystem::path& corpus_dir, Split split, const Vocabulary& vocab,
                               int limit = 0);

}  // namespace corrnet
