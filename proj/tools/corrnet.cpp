#include "corrnet/driver.hpp"
#include "corrnet/flops.hpp"
#include "corrnet/metrics.hpp"
#include "corrnet/synthetic.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace corrnet;

namespace {

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int gen_data(const fs::path& spec_path, const fs::path& out) {
  const auto spec = CorpusSpec::from_file(spec_path);
  write_corpus(spec, out);
  std::cout << "wrote corpus to " << out.string() << " (train=" << spec.train << " dev=" << spec.dev
            << " test=" << spec.test << ")\n";
  return 0;
}

int train(const fs::path& config, const fs::path& out) {
  const auto cfg = RunConfig::from_file(config);
  const auto summary = run_training(cfg, out, [](const std::string& s) { std::cout << s << std::endl; });
  std::cout << "best_epoch=" << summary.best_epoch << " best_dev_wer=" << summary.best_dev_wer
            << " checkpoint=" << summary.best_checkpoint.string() << "\n";
  return 0;
}

int eval(const fs::path& checkpoint, const std::string& split) {
  const auto report = run_eval(checkpoint, parse_split(split));
  const auto vocab = load_model(checkpoint).vocab;
  std::cout << report.to_string(vocab);
  return 0;
}

int flops(const fs::path& config, bool key_values) {
  const auto cfg = RunConfig::from_file(config);
  const auto model = cfg.model(int(kPrimitiveNames.size()));
  FlopReport model_report = count_model(model, cfg.flops_frames);
  if (key_values) {
    std::cout << model_report.to_key_values();
    return 0;
  }
  std::cout << "model (" << cfg.flops_frames << " frames)\n" << model_report.to_text() << "\n";
  std::cout << "ResNet18 stage shapes, one frame\n";
  for (const auto& s : resnet18_stages()) {
    const double p = count_pairwise_correlation(1, s.channels, s.size, s.size).total();
    const double c = count_compressed_correlation(1, s.channels, s.size, s.size, s.window).total();
    std::cout << "  " << s.size << "x" << s.size << "x" << s.channels << " L=" << s.window << "  pairwise "
              << p / 1e9 << " GFLOPs  compressed " << c / 1e9 << " GFLOPs  ratio " << p / c << "\n";
  }
  return 0;
}

int dump_maps(const fs::path& checkpoint, int sample, const fs::path& out) {
  const auto files = run_dump_maps(checkpoint, sample, out);
  std::cout << "wrote " << files.size() << " files to " << out.string() << "\n";
  return 0;
}

int score(const fs::path& hyp, const fs::path& ref) {
  const auto hyps = read_sentences(hyp);
  const auto refs = read_sentences(ref);
  std::cout << score_corpus(hyps, refs).to_string();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-temporal correlation networks for sign sequence recognition"};
  app.require_subcommand(1);

  fs::path spec, out, config, checkpoint, hyp, ref;
  std::string split = "dev";
  int sample = 0;
  bool key_values = false;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic trajectory corpus");
  gen->add_option("--spec", spec, "Corpus spec (key=value)")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Run config (key=value)")->required();
  tr->add_option("--out", out, "Run directory")->required();

  auto* ev = app.add_subcommand("eval", "Word error rate on a split");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));

  auto* fl = app.add_subcommand("flops", "Multiply-add counts");
  fl->add_option("--config", config)->required();
  fl->add_flag("--key-values", key_values, "Machine-readable output");

  auto* dm = app.add_subcommand("dump-maps", "Export correlation and attention maps of a dev sample");
  dm->add_option("--checkpoint", checkpoint)->required();
  dm->add_option("--sample", sample)->required();
  dm->add_option("--out", out)->required();

  auto* sc = app.add_subcommand("score", "WER, BLEU@1-4 and ROUGE-L of sentence files");
  sc->add_option("--hyp", hyp)->required();
  sc->add_option("--ref", ref)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return gen_data(spec, out);
    if (tr->parsed()) return train(config, out);
    if (ev->parsed()) return eval(checkpoint, split);
    if (fl->parsed()) return flops(config, key_values);
    if (dm->parsed()) return dump_maps(checkpoint, sample, out);
    if (sc->parsed()) return score(hyp, ref);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 1;
}
