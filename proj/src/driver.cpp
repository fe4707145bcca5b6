#include "corrnet/driver.hpp"

#include "corrnet/heatmap.hpp"
#include "corrnet/rng.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace corrnet {

namespace fs = std::filesystem;

std::string EpochRecord::to_log_line() const {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "epoch=" << epoch << " step=" << step << " train_loss=" << train_loss << " dev_wer=" << dev.wer()
     << " dev_sub=" << dev.substitutions << " dev_del=" << dev.deletions << " dev_ins=" << dev.insertions
     << " dev_ref=" << dev.reference_length;
  return os.str();
}

std::uint64_t vocabulary_fingerprint(const Vocabulary& vocab) {
  std::string joined;
  for (const auto& g : vocab.glosses()) joined += g + "\n";
  return fnv1a(joined);
}

Checkpoint make_checkpoint(const TrainState& state, std::uint64_t seed, const Vocabulary& vocab,
                           bool with_optimizer) {
  Checkpoint c;
  c.params = state.params;
  c.meta["epoch"] = std::uint64_t(state.epoch);
  c.meta["step"] = state.optimizer.steps();
  c.meta["seed"] = seed;
  c.meta["vocab_size"] = std::uint64_t(vocab.size());
  c.meta["vocab_hash"] = vocabulary_fingerprint(vocab);
  if (with_optimizer) {
    c.adam_m = state.optimizer.first_moment();
    c.adam_v = state.optimizer.second_moment();
  }
  return c;
}

namespace {

AdamConfig adam_config(const RunConfig& cfg) {
  AdamConfig a;
  a.learning_rate = cfg.learning_rate;
  a.weight_decay = cfg.weight_decay;
  a.clip_norm = cfg.clip_norm;
  return a;
}

void check_vocabulary(const Checkpoint& ckpt, const Vocabulary& vocab, const fs::path& path) {
  auto size = ckpt.meta.find("vocab_size");
  auto hash = ckpt.meta.find("vocab_hash");
  if (size == ckpt.meta.end() || hash == ckpt.meta.end()) {
    throw std::runtime_error("checkpoint " + path.string() + " carries no vocabulary fingerprint");
  }
  if (size->second != std::uint64_t(vocab.size()) || hash->second != vocabulary_fingerprint(vocab)) {
    throw std::runtime_error("vocabulary mismatch between checkpoint " + path.string() + " and corpus");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

}  // namespace

TrainSummary run_training(const RunConfig& cfg, const fs::path& out,
                          const std::function<void(const std::string&)>& progress) {
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  const fs::path data(cfg.data_dir);
  const auto vocab = read_vocabulary(data);
  const auto model = cfg.model(vocab.size());
  const auto train = load_split(data, Split::Train, vocab, cfg.max_train_samples);
  const auto dev = load_split(data, Split::Dev, vocab);
  if (train.empty()) throw std::runtime_error("training split of " + data.string() + " is empty");
  if (dev.empty()) throw std::runtime_error("dev split of " + data.string() + " is empty");

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::runtime_error("cannot create " + out.string() + ": " + ec.message());
  RunConfig saved = cfg;
  saved.data_dir = fs::absolute(data).lexically_normal().string();
  write_text(out / kRunConfigFile, saved.to_string());

  TrainState state{init_model<float>(model, cfg.seed), Adam(adam_config(cfg)), 0};
  TrainSummary summary;
  summary.best_checkpoint = out / kBestCheckpoint;
  summary.best_dev_wer = std::numeric_limits<double>::infinity();
  const bool resuming = !cfg.resume.empty();
  if (resuming) {
    auto ckpt = load_checkpoint(cfg.resume);
    check_vocabulary(ckpt, vocab, cfg.resume);
    if (ckpt.meta.at("seed") != cfg.seed) throw std::runtime_error("resume checkpoint was trained with another seed");
    for (const auto& [name, t] : state.params) {
      if (!ckpt.params.contains(name) || ckpt.params.at(name).shape() != t.shape()) {
        throw std::runtime_error("resume checkpoint does not match the configured model at " + name);
      }
    }
    state.params = std::move(ckpt.params);
    state.optimizer.first_moment() = std::move(ckpt.adam_m);
    state.optimizer.second_moment() = std::move(ckpt.adam_v);
    state.optimizer.set_steps(ckpt.meta.at("step"));
    state.epoch = int(ckpt.meta.at("epoch"));
    say("resumed from " + cfg.resume + " at epoch " + std::to_string(state.epoch));
  } else {
    save_checkpoint(out / kBestCheckpoint, make_checkpoint(state, cfg.seed, vocab, false));
  }
  std::ofstream log(out / kMetricsLog, resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + (out / kMetricsLog).string());

  while (state.epoch < cfg.epochs) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.train_loss = train_epoch(state, model, train, cfg.batch_size, cfg.seed);
    rec.epoch = state.epoch;
    rec.step = state.optimizer.steps();
    rec.dev = evaluate(model, state.params, dev).total;
    log << rec.to_log_line() << "\n" << std::flush;
    summary.epochs.push_back(rec);
    save_checkpoint(out / kLastCheckpoint, make_checkpoint(state, cfg.seed, vocab, true));
    if (rec.dev.wer() < summary.best_dev_wer) {
      summary.best_dev_wer = rec.dev.wer();
      summary.best_epoch = rec.epoch;
      save_checkpoint(out / kBestCheckpoint, make_checkpoint(state, cfg.seed, vocab, false));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "epoch " << rec.epoch << "/" << cfg.epochs << " loss "
       << rec.train_loss << " dev_wer " << rec.dev.wer() << " (" << std::setprecision(1) << secs << " s)";
    say(os.str());
    if (cfg.stop_dev_wer >= 0 && rec.dev.wer() < cfg.stop_dev_wer) {
      say("dev WER below stop_dev_wer, stopping");
      break;
    }
  }
  if (summary.epochs.empty()) summary.best_dev_wer = evaluate(model, state.params, dev).total.wer();
  return summary;
}

RunConfig run_config_for(const fs::path& checkpoint) {
  const auto path = checkpoint.parent_path() / kRunConfigFile;
  if (!fs::exists(path)) throw std::runtime_error("missing " + path.string() + " next to checkpoint");
  return RunConfig::from_file(path);
}

LoadedModel load_model(const fs::path& checkpoint) {
  LoadedModel m;
  m.run = run_config_for(checkpoint);
  m.vocab = read_vocabulary(m.run.data_dir);
  m.model = m.run.model(m.vocab.size());
  auto ckpt = load_checkpoint(checkpoint);
  check_vocabulary(ckpt, m.vocab, checkpoint);
  const auto expected = init_model<float>(m.model, 0);
  for (const auto& [name, t] : expected) {
    if (!ckpt.params.contains(name) || ckpt.params.at(name).shape() != t.shape()) {
      throw std::runtime_error("checkpoint " + checkpoint.string() + " does not match run.cfg at " + name);
    }
  }
  m.params = std::move(ckpt.params);
  return m;
}

std::string EvalReport::to_string(const Vocabulary& vocab) const {
  const auto& t = result.total;
  const double ref = double(t.reference_length);
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << split_name(split) << "  del/ins " << 100.0 * double(t.deletions) / ref << "/"
     << 100.0 * double(t.insertions) / ref << "  WER " << 100.0 * t.wer() << "\n";
  os << std::setprecision(6);
  os << "split=" << split_name(split) << " samples=" << ids.size() << " wer=" << t.wer()
     << " sub=" << t.substitutions << " del=" << t.deletions << " ins=" << t.insertions
     << " ref=" << t.reference_length << "\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& w = result.per_sample[i];
    auto join = [&](const GlossSequence& s) {
      std::string out;
      for (const auto& g : vocab.decode(s)) out += (out.empty() ? "" : ",") + g;
      return out.empty() ? std::string("-") : out;
    };
    os << "id=" << ids[i] << " wer=" << w.wer() << " sub=" << w.substitutions << " del=" << w.deletions
       << " ins=" << w.insertions << " ref=" << join(references[i]) << " hyp=" << join(result.hypotheses[i]) << "\n";
  }
  return os.str();
}

EvalReport run_eval(const fs::path& checkpoint, Split split) {
  const auto m = load_model(checkpoint);
  const auto samples = load_split(m.run.data_dir, split, m.vocab);
  if (samples.empty()) throw std::runtime_error(split_name(split) + " split is empty");
  EvalReport r;
  r.split = split;
  for (const auto& s : samples) {
    r.ids.push_back(s.id);
    r.references.push_back(s.labels);
  }
  r.result = evaluate(m.model, m.params, samples);
  return r;
}

std::vector<fs::path> run_dump_maps(const fs::path& checkpoint, int index, const fs::path& out) {
  const auto m = load_model(checkpoint);
  const auto samples = load_split(m.run.data_dir, Split::Dev, m.vocab);
  if (index < 0 || index >= int(samples.size())) {
    throw std::out_of_range("sample index " + std::to_string(index) + " out of range [0, " +
                            std::to_string(samples.size()) + ")");
  }
  std::vector<StageTrace<float>> traces;
  predict_logits(samples[std::size_t(index)].frames, m.model, m.params, &traces);
  return dump_stage_maps(traces, out);
}

}  // namespace corrnet
