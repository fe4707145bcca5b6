#include "corrnet/metrics.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace corrnet {

Sentence tokenize(const std::string& line) {
  Sentence out;
  std::istringstream is(line);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::vector<Sentence> read_sentences(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(is, line)) out.push_back(tokenize(line));
  return out;
}

std::string ScoreReport::to_string() const {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "sentences=" << sentences << "\n";
  os << "wer=" << wer.wer() << "\n";
  os << "substitutions=" << wer.substitutions << "\n";
  os << "deletions=" << wer.deletions << "\n";
  os << "insertions=" << wer.insertions << "\n";
  os << "reference_words=" << wer.reference_length << "\n";
  for (int n = 0; n < 4; ++n) os << "bleu" << n + 1 << "=" << bleu.bleu[std::size_t(n)] << "\n";
  os << "rouge_l=" << rouge_l << "\n";
  return os.str();
}

ScoreReport score_corpus(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  ScoreReport r;
  r.sentences = refs.size();
  r.wer = corpus_word_errors(hyps, refs);
  r.bleu = corpus_bleu(hyps, refs);
  r.rouge_l = corpus_rouge_l(hyps, refs);
  return r;
}

}  // namespace corrnet
