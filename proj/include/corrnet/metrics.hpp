#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrnet {

/// Edit counts of one hypothesis against one reference (or summed over a corpus).
struct WerBreakdown {
  std::int64_t substitutions = 0;
  std::int64_t deletions = 0;
  std::int64_t insertions = 0;
  std::int64_t reference_length = 0;

  std::int64_t errors() const { return substitutions + deletions + insertions; }
  double wer() const { return double(errors()) / double(reference_length); }
  WerBreakdown& operator+=(const WerBreakdown& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    reference_length += o.reference_length;
    return *this;
  }
};

/// Levenshtein alignment with unit costs. When several alignments are optimal the
/// traceback prefers substitution, then deletion, then insertion.
template <typename Tok>
WerBreakdown word_errors(const std::vector<Tok>& hyp, const std::vector<Tok>& ref) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<std::int64_t>> d(n + 1, std::vector<std::int64_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = std::int64_t(i);
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = std::int64_t(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      d[i][j] = std::min({d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1), d[i - 1][j] + 1, d[i][j - 1] + 1});

  WerBreakdown out;
  out.reference_length = std::int64_t(n);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (d[i][j] == d[i - 1][j - 1] + (same ? 0 : 1)) {
        if (!same) ++out.substitutions;
        --i, --j;
        continue;
      }
    }
    if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++out.deletions;
      --i;
    } else {
      ++out.insertions;
      --j;
    }
  }
  return out;
}

template <typename Tok>
WerBreakdown corpus_word_errors(const std::vector<std::vector<Tok>>& hyps, const std::vector<std::vector<Tok>>& refs) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("wer: hypothesis and reference counts differ");
  WerBreakdown total;
  for (std::size_t k = 0; k < hyps.size(); ++k) total += word_errors(hyps[k], refs[k]);
  return total;
}

struct BleuScore {
  std::array<double, 4> bleu{};       // BLEU@1..4
  std::array<double, 4> precision{};  // clipped n-gram precision per order
  double brevity_penalty = 1.0;
  std::int64_t hypothesis_length = 0;
  std::int64_t reference_length = 0;
};

/// Corpus BLEU with clipped counts, uniform weights and the standard brevity penalty.
/// An order with no n-grams in either corpus has precision 1; no smoothing otherwise.
template <typename Tok>
BleuScore corpus_bleu(const std::vector<std::vector<Tok>>& hyps, const std::vector<std::vector<Tok>>& refs) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("bleu: hypothesis and reference counts differ");
  if (refs.empty()) throw std::invalid_argument("bleu: empty corpus");
  std::array<std::int64_t, 4> matched{}, total{}, ref_total{};
  BleuScore s;
  for (std::size_t k = 0; k < hyps.size(); ++k) {
    const auto& h = hyps[k];
    const auto& r = refs[k];
    s.hypothesis_length += std::int64_t(h.size());
    s.reference_length += std::int64_t(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<Tok>, std::int64_t> hc, rc;
      for (std::size_t p = 0; p + n <= h.size(); ++p) ++hc[std::vector<Tok>(h.begin() + p, h.begin() + p + n)];
      for (std::size_t p = 0; p + n <= r.size(); ++p) ++rc[std::vector<Tok>(r.begin() + p, r.begin() + p + n)];
      for (const auto& [gram, c] : hc) {
        auto it = rc.find(gram);
        matched[n - 1] += std::min(c, it == rc.end() ? 0 : it->second);
        total[n - 1] += c;
      }
      for (const auto& [gram, c] : rc) ref_total[n - 1] += c;
    }
  }
  for (std::size_t n = 0; n < 4; ++n) {
    if (total[n] == 0) s.precision[n] = ref_total[n] == 0 ? 1.0 : 0.0;
    else s.precision[n] = double(matched[n]) / double(total[n]);
  }
  if (s.hypothesis_length == 0) s.brevity_penalty = s.reference_length == 0 ? 1.0 : 0.0;
  else if (s.hypothesis_length < s.reference_length)
    s.brevity_penalty = std::exp(1.0 - double(s.reference_length) / double(s.hypothesis_length));
  for (std::size_t n = 0; n < 4; ++n) {
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t k = 0; k <= n; ++k) {
      if (s.precision[k] <= 0.0) zero = true;
      else log_sum += std::log(s.precision[k]);
    }
    s.bleu[n] = zero ? 0.0 : s.brevity_penalty * std::exp(log_sum / double(n + 1));
  }
  return s;
}

template <typename Tok>
std::size_t lcs_length(const std::vector<Tok>& a, const std::vector<Tok>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Sentence ROUGE-L F1 (beta = 1) from the longest common subsequence.
template <typename Tok>
double rouge_l(const std::vector<Tok>& hyp, const std::vector<Tok>& ref) {
  if (ref.empty()) throw std::invalid_argument("rouge_l: empty reference");
  const double lcs = double(lcs_length(hyp, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / double(hyp.size()), r = lcs / double(ref.size());
  return 2.0 * p * r / (p + r);
}

/// Mean sentence ROUGE-L F1 over a corpus.
template <typename Tok>
double corpus_rouge_l(const std::vector<std::vector<Tok>>& hyps, const std::vector<std::vector<Tok>>& refs) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("rouge: hypothesis and reference counts differ");
  if (hyps.empty()) throw std::invalid_argument("rouge_l: empty corpus");
  double sum = 0.0;
  for (std::size_t k = 0; k < hyps.size(); ++k) sum += rouge_l(hyps[k], refs[k]);
  return sum / double(hyps.size());
}

using Sentence = std::vector<std::string>;

/// Splits on whitespace.
Sentence tokenize(const std::string& line);
/// One sentence per line.
std::vector<Sentence> read_sentences(const std::filesystem::path& path);

struct ScoreReport {
  WerBreakdown wer;
  BleuScore bleu;
  double rouge_l = 0.0;
  std::size_t sentences = 0;

  /// key=value lines.
  std::string to_string() const;
};

ScoreReport score_corpus(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs);

}  // namespace corrnet
