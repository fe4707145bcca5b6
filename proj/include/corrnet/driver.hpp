#pragma once

#include "corrnet/checkpoint.hpp"
#include "corrnet/config.hpp"
#include "corrnet/trainer.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace corrnet {

/// Sidecar written next to every checkpoint of a run.
inline constexpr const char* kRunConfigFile = "run.cfg";
inline constexpr const char* kMetricsLog = "metrics.log";
inline constexpr const char* kBestCheckpoint = "best.cnpk";
inline constexpr const char* kLastCheckpoint = "last.cnpk";

struct EpochRecord {
  int epoch = 0;
  std::uint64_t step = 0;
  double train_loss = 0.0;
  WerBreakdown dev;

  /// One metrics-log line: space-separated key=value pairs.
  std::string to_log_line() const;
};

struct TrainSummary {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 when no epoch ran
  double best_dev_wer = 0.0;
  std::filesystem::path best_checkpoint;
};

std::uint64_t vocabulary_fingerprint(const Vocabulary& vocab);

Checkpoint make_checkpoint(const TrainState& state, std::uint64_t seed, const Vocabulary& vocab,
                           bool with_optimizer);

/// Trains per `cfg`, writing run.cfg, metrics.log, best.cnpk and last.cnpk under `out`.
/// `progress` receives human-readable status lines.
TrainSummary run_training(const RunConfig& cfg, const std::filesystem::path& out,
                          const std::function<void(const std::string&)>& progress = {});

/// Run configuration stored next to a checkpoint.
RunConfig run_config_for(const std::filesystem::path& checkpoint);

struct LoadedModel {
  RunConfig run;
  ModelConfig model;
  Vocabulary vocab;
  ParamStore<float> params;
};

/// Loads a checkpoint with its run.cfg and the corpus vocabulary; throws on vocabulary mismatch.
LoadedModel load_model(const std::filesystem::path& checkpoint);

struct EvalReport {
  Split split = Split::Dev;
  std::vector<std::string> ids;
  std::vector<GlossSequence> references;
  EvalResult result;

  /// Corpus summary in del/ins/WER form followed by one line per sample.
  std::string to_string(const Vocabulary& vocab) const;
};

EvalReport run_eval(const std::filesystem::path& checkpoint, Split split);

/// Writes heatmaps for sample `index` of the dev split.
std::vector<std::filesystem::path> run_dump_maps(const std::filesystem::path& checkpoint, int index,
                                                 const std::filesystem::path& out);

}  // namespace corrnet
