#pragma once

#include "corrnet/autograd.hpp"

#include <span>
#include <string>
#include <vector>

namespace corrnet {

/// CTC blank index; never a gloss.
inline constexpr int kBlank = 0;

/// Token sequence over gloss indices 1..V.
struct GlossSequence {
  std::vector<int> tokens;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  friend bool operator==(const GlossSequence&, const GlossSequence&) = default;
};

/// Index <-> gloss name table. Index 0 is reserved for the blank.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> glosses);

  int size() const { return static_cast<int>(glosses_.size()); }
  const std::string& name(int token) const;
  int id(const std::string& gloss) const;
  const std::vector<std::string>& glosses() const { return glosses_; }

  GlossSequence encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const GlossSequence& seq) const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<std::string> glosses_;
};

/// Shortest input length admitting `target`: its length plus one per adjacent repeat.
Index ctc_min_length(std::span<const int> target);

/// Negative log-likelihood of `target` under [T', V+1] logits, forward recursion in log
/// space. Returns +inf when no alignment exists.
template <typename S>
double ctc_loss_value(const Tensor<S>& logits, std::span<const int> target, int blank = kBlank);

/// Differentiable CTC loss. The gradient wrt logits is softmax minus the alignment
/// posterior; an infeasible target yields +inf with a zero gradient.
template <typename S>
Var<S> ctc_loss(const Var<S>& logits, std::span<const int> target, int blank = kBlank);

/// Enumerates every label path of length T' (requires T' <= 10, |target| <= 4).
double ctc_brute_force(const Tensor<double>& logits, std::span<const int> target, int blank = kBlank);

/// Per-step argmax, ties to the lowest index.
template <typename S>
std::vector<int> best_path(const Tensor<S>& logits);

/// Merges consecutive repeats, then drops blanks.
GlossSequence collapse_path(std::span<const int> path, int blank = kBlank);

template <typename S>
GlossSequence greedy_decode(const Tensor<S>& logits, int blank = kBlank) {
  auto path = best_path(logits);
  return collapse_path(path, blank);
}

}  // namespace corrnet
