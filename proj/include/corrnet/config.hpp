#pragma once

#include "corrnet/model.hpp"

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrnet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses UTF-8 `key = value` lines. `#` starts a comment; blank lines are ignored.
/// Malformed lines and repeated keys are errors.
std::map<std::string, std::string> parse_key_values(std::istream& in, const std::string& source = "<input>");
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

/// Training / evaluation configuration. Every key has a default; unknown keys are rejected.
struct RunConfig {
  std::string data_dir = "data";
  std::uint64_t seed = 42;
  int epochs = 30;
  int batch_size = 2;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double clip_norm = 0.0;        // 0 disables gradient clipping
  double stop_dev_wer = -1.0;    // stop once dev WER falls below this; negative disables
  int max_train_samples = 0;     // 0 uses the whole split
  double flops_frames = 1.0;     // clip length reported by `flops`
  std::string resume;            // checkpoint to continue from

  Index frame_size = 64;
  std::vector<Index> stage_channels{16, 32, 64, 128};
  bool st_stages = true;
  std::vector<int> st_after{2, 3, 4};
  std::vector<int> windows{2, 6, 10};
  int reduction = 16;
  int spatial_scales = 3;
  int temporal_scales = 4;
  int temporal_branches = 3;
  Index temporal_kernel = 3;
  Index head_channels = 128;
  Index hidden = 128;
  int rnn_layers = 2;

  static RunConfig from_map(const std::map<std::string, std::string>& kv);
  static RunConfig from_file(const std::filesystem::path& path);
  /// Every key, one `key=value` line each; parses back to an equal config.
  std::string to_string() const;

  ModelConfig model(int vocab_size) const;
  /// Documented keys with their defaults, in file order.
  static std::vector<std::string> keys();
};

}  // namespace corrnet
