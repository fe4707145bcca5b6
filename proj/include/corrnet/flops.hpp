#pragma once

#include "corrnet/model.hpp"

#include <map>
#include <string>
#include <vector>

namespace corrnet {

/// One counted component: `count` is `formula` evaluated at `variables`.
/// Formulas use + * / ^ and parentheses over the named variables.
struct FlopEntry {
  std::string name;
  std::string formula;
  std::map<std::string, double> variables;
  double count = 0.0;
};

/// Multiply-add counts (one multiply-add = one FLOP).
class FlopReport {
 public:
  void add(std::string name, std::string formula, std::map<std::string, double> variables, double count);
  void append(const FlopReport& other, const std::string& prefix = "");

  const std::vector<FlopEntry>& entries() const { return entries_; }
  double total() const;
  double gflops() const { return total() / 1e9; }

  /// Aligned table.
  std::string to_text() const;
  /// `<name>=<count>` lines plus `total=` and `gflops=`.
  std::string to_key_values() const;

 private:
  std::vector<FlopEntry> entries_;
};

/// Full pairwise affinity volumes against `neighbors` adjacent frames.
FlopReport count_pairwise_correlation(double T, double C, double H, double W, double neighbors = 2);

/// Compact-descriptor correlation with a window of L neighbors; L = 0 leaves aggregation only.
FlopReport count_compressed_correlation(double T, double C, double H, double W, double L);

FlopReport count_identification(double T, double C, double H, double W, const IdentificationConfig& cfg);
FlopReport count_temporal_attention(double T, double C, double H, double W, const TemporalAttentionConfig& cfg);

/// Whole recognition model on a clip of `frames` frames. The temporal pools are counted at
/// T/2 and T/4 so the total is linear in T.
FlopReport count_model(const ModelConfig& cfg, double frames);

/// Convolution multiply-adds: out_elements * kernel_volume * C_in / groups.
double conv_flops(double out_elements, double kernel_volume, double in_channels, double groups = 1);

struct StageShape {
  double channels;
  double size;  // H = W
  double window;
};

/// ResNet18 stage shapes carrying correlation modules: 28x28x128 (L=2), 14x14x256 (L=6), 7x7x512 (L=10).
std::vector<StageShape> resnet18_stages();

}  // namespace corrnet
