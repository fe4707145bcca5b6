#include "corrnet/ctc.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace corrnet {

Vocabulary::Vocabulary(std::vector<std::string> glosses) : glosses_(std::move(glosses)) {}

const std::string& Vocabulary::name(int token) const {
  if (token < 1 || token > size()) throw std::out_of_range("token " + std::to_string(token) + " not in vocabulary");
  return glosses_[static_cast<std::size_t>(token - 1)];
}

int Vocabulary::id(const std::string& gloss) const {
  for (std::size_t i = 0; i < glosses_.size(); ++i)
    if (glosses_[i] == gloss) return static_cast<int>(i) + 1;
  throw std::out_of_range("unknown gloss '" + gloss + "'");
}

GlossSequence Vocabulary::encode(const std::vector<std::string>& words) const {
  GlossSequence seq;
  for (const auto& w : words) seq.tokens.push_back(id(w));
  return seq;
}

std::vector<std::string> Vocabulary::decode(const GlossSequence& seq) const {
  std::vector<std::string> out;
  for (int t : seq.tokens) out.push_back(name(t));
  return out;
}

Index ctc_min_length(std::span<const int> target) {
  Index n = static_cast<Index>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

using Table = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Lattice {
  Table log_probs;  // [T, K]
  std::vector<int> labels;  // blank-augmented
  Table alpha;
  double log_likelihood = kNegInf;
};

template <typename S>
Table log_softmax_rows(const Tensor<S>& logits) {
  if (logits.rank() != 2) throw ShapeError("ctc: logits must be [T, K]");
  const Index T = logits.dim(0), K = logits.dim(1);
  Table lp = logits.matrix(T, K).template cast<double>();
  for (Index t = 0; t < T; ++t) {
    const double m = lp.row(t).maxCoeff();
    const double lse = m + std::log((lp.row(t).array() - m).exp().sum());
    lp.row(t).array() -= lse;
  }
  return lp;
}

void check_target(std::span<const int> target, Index classes, int blank) {
  for (int tok : target) {
    if (tok == blank) throw std::invalid_argument("ctc: target contains the blank token");
    if (tok < 0 || tok >= classes) throw std::invalid_argument("ctc: target token out of range");
  }
}

bool can_skip(const std::vector<int>& labels, Index s, int blank) {
  return s >= 2 && labels[static_cast<std::size_t>(s)] != blank &&
         labels[static_cast<std::size_t>(s)] != labels[static_cast<std::size_t>(s - 2)];
}

template <typename S>
Lattice forward_lattice(const Tensor<S>& logits, std::span<const int> target, int blank) {
  Lattice lat;
  lat.log_probs = log_softmax_rows(logits);
  const Index T = lat.log_probs.rows(), K = lat.log_probs.cols();
  check_target(target, K, blank);
  lat.labels.push_back(blank);
  for (int tok : target) {
    lat.labels.push_back(tok);
    lat.labels.push_back(blank);
  }
  const Index L = static_cast<Index>(lat.labels.size());
  lat.alpha = Table::Constant(T, L, kNegInf);
  if (T == 0) return lat;
  lat.alpha(0, 0) = lat.log_probs(0, blank);
  if (L > 1) lat.alpha(0, 1) = lat.log_probs(0, lat.labels[1]);
  for (Index t = 1; t < T; ++t)
    for (Index s = 0; s < L; ++s) {
      double a = lat.alpha(t - 1, s);
      if (s >= 1) a = log_add(a, lat.alpha(t - 1, s - 1));
      if (can_skip(lat.labels, s, blank)) a = log_add(a, lat.alpha(t - 1, s - 2));
      if (a != kNegInf) lat.alpha(t, s) = a + lat.log_probs(t, lat.labels[static_cast<std::size_t>(s)]);
    }
  lat.log_likelihood = lat.alpha(T - 1, L - 1);
  if (L > 1) lat.log_likelihood = log_add(lat.log_likelihood, lat.alpha(T - 1, L - 2));
  return lat;
}

// d(-log p)/d logits = softmax - posterior occupancy of each class.
Table ctc_gradient(const Lattice& lat, int blank) {
  const Index T = lat.log_probs.rows(), K = lat.log_probs.cols();
  const Index L = static_cast<Index>(lat.labels.size());
  Table beta = Table::Constant(T, L, kNegInf);
  beta(T - 1, L - 1) = 0.0;
  if (L > 1) beta(T - 1, L - 2) = 0.0;
  for (Index t = T - 1; t-- > 0;)
    for (Index s = 0; s < L; ++s) {
      double b = beta(t + 1, s) + lat.log_probs(t + 1, lat.labels[static_cast<std::size_t>(s)]);
      if (s + 1 < L)
        b = log_add(b, beta(t + 1, s + 1) + lat.log_probs(t + 1, lat.labels[static_cast<std::size_t>(s + 1)]));
      if (s + 2 < L && can_skip(lat.labels, s + 2, blank))
        b = log_add(b, beta(t + 1, s + 2) + lat.log_probs(t + 1, lat.labels[static_cast<std::size_t>(s + 2)]));
      beta(t, s) = b;
    }
  Table grad = lat.log_probs.array().exp().matrix();
  for (Index t = 0; t < T; ++t)
    for (Index s = 0; s < L; ++s) {
      const double occ = lat.alpha(t, s) + beta(t, s) - lat.log_likelihood;
      if (occ != kNegInf && !std::isnan(occ)) grad(t, lat.labels[static_cast<std::size_t>(s)]) -= std::exp(occ);
    }
  (void)K;
  return grad;
}

}  // namespace

template <typename S>
double ctc_loss_value(const Tensor<S>& logits, std::span<const int> target, int blank) {
  const auto lat = forward_lattice(logits, target, blank);
  return -lat.log_likelihood;
}

template <typename S>
Var<S> ctc_loss(const Var<S>& logits, std::span<const int> target, int blank) {
  auto lat = std::make_shared<Lattice>(forward_lattice(logits.value(), target, blank));
  const double loss = -lat->log_likelihood;
  auto out = Tensor<S>::scalar(static_cast<S>(loss));
  return logits.tape().push(std::move(out), {logits}, [logits, lat, blank](Tape<S>& t, const Tensor<S>& g) {
    if (!std::isfinite(lat->log_likelihood)) return;
    const Table grad = ctc_gradient(*lat, blank);
    const Index T = grad.rows(), K = grad.cols();
    t.grad(logits).matrix(T, K) += (grad * static_cast<double>(g[0])).template cast<S>();
  });
}

double ctc_brute_force(const Tensor<double>& logits, std::span<const int> target, int blank) {
  if (logits.rank() != 2) throw ShapeError("ctc_brute_force: logits must be [T, K]");
  const Index T = logits.dim(0), K = logits.dim(1);
  if (T > 10 || target.size() > 4) {
    throw std::invalid_argument("ctc_brute_force: enumeration budget exceeded (T' <= 10, |target| <= 4)");
  }
  check_target(target, K, blank);
  const Table probs = log_softmax_rows(logits).array().exp().matrix();
  std::vector<int> path(static_cast<std::size_t>(T), 0);
  double total = 0.0;
  while (true) {
    auto collapsed = collapse_path(path, blank);
    if (std::equal(collapsed.tokens.begin(), collapsed.tokens.end(), target.begin(), target.end())) {
      double p = 1.0;
      for (Index t = 0; t < T; ++t) p *= probs(t, path[static_cast<std::size_t>(t)]);
      total += p;
    }
    Index pos = 0;
    while (pos < T && ++path[static_cast<std::size_t>(pos)] == K) path[static_cast<std::size_t>(pos++)] = 0;
    if (pos == T) break;
  }
  return -std::log(total);
}

template <typename S>
std::vector<int> best_path(const Tensor<S>& logits) {
  if (logits.rank() != 2) throw ShapeError("best_path: logits must be [T, K]");
  const Index T = logits.dim(0), K = logits.dim(1);
  std::vector<int> path;
  auto m = logits.matrix(T, K);
  for (Index t = 0; t < T; ++t) {
    Index best = 0;
    for (Index k = 1; k < K; ++k)
      if (m(t, k) > m(t, best)) best = k;
    path.push_back(static_cast<int>(best));
  }
  return path;
}

GlossSequence collapse_path(std::span<const int> path, int blank) {
  GlossSequence out;
  int prev = -1;
  for (int tok : path) {
    if (tok != prev && tok != blank) out.tokens.push_back(tok);
    prev = tok;
  }
  return out;
}

template double ctc_loss_value(const Tensor<float>&, std::span<const int>, int);
template double ctc_loss_value(const Tensor<double>&, std::span<const int>, int);
template Var<float> ctc_loss(const Var<float>&, std::span<const int>, int);
template Var<double> ctc_loss(const Var<double>&, std::span<const int>, int);
template std::vector<int> best_path(const Tensor<float>&);
template std::vector<int> best_path(const Tensor<double>&);

}  // namespace corrnet
