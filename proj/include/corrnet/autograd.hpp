#pragma once

#include "corrnet/tensor.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace corrnet {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
using GradMap = std::map<std::string, Tensor<Scalar>>;

/// Named parameter tensors, ordered by name.
template <typename Scalar>
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor<Scalar>>;

  void set(const std::string& name, Tensor<Scalar> value) { params_[name] = std::move(value); }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor<Scalar>& at(const std::string& name) const;
  Tensor<Scalar>& at(const std::string& name);
  std::size_t size() const { return params_.size(); }
  Index parameter_count() const {
    Index n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& [name, t] : params_) out.set(name, t.template cast<Other>());
    return out;
  }

 private:
  Map params_;
};

/// Parameters bound to a tape for one forward pass.
template <typename Scalar>
class Bound {
 public:
  Var<Scalar> operator()(const std::string& name) const;
  void insert(const std::string& name, Var<Scalar> v) { vars_[name] = v; }

 private:
  std::map<std::string, Var<Scalar>> vars_;
};

/// Single-writer record of primitive applications for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every node's parents have lower ids and a
/// reverse sweep over ids is a reverse topological order. A tape built with
/// `record == false` keeps values only and never stores backward closures.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using BackwardFn = std::function<void(Tape&, const TensorT& grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<Scalar> constant(TensorT value);
  Var<Scalar> parameter(const std::string& name, TensorT value);
  Bound<Scalar> bind(const ParamStore<Scalar>& store);

  /// Appends an op result. `fn` is kept only if some parent requires a gradient.
  Var<Scalar> push(TensorT value, std::initializer_list<Var<Scalar>> parents, BackwardFn fn);
  Var<Scalar> push(TensorT value, const std::vector<Var<Scalar>>& parents, BackwardFn fn);

  const TensorT& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var<Scalar>& v) const { return requires_grad(v.id()); }

  /// Gradient accumulator of a node, zero-initialised on first access.
  TensorT& grad(std::size_t id);
  TensorT& grad(const Var<Scalar>& v) { return grad(v.id()); }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Runs the reverse sweep from a scalar loss and returns gradients of every registered
  /// parameter. Intermediate values and gradients are released afterwards.
  GradMap<Scalar> backward(const Var<Scalar>& loss);

 private:
  struct Node {
    TensorT value;
    std::optional<TensorT> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::size_t append(Node node);

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> params_;
  bool record_ = true;
  bool consumed_ = false;
};

// Implementation ---------------------------------------------------------------------------

template <typename Scalar>
const Tensor<Scalar>& ParamStore<Scalar>::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

template <typename Scalar>
Tensor<Scalar>& ParamStore<Scalar>::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

template <typename Scalar>
Var<Scalar> Bound<Scalar>::operator()(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("parameter '" + name + "' is not bound");
  return it->second;
}

template <typename Scalar>
std::size_t Tape<Scalar>::append(Node node) {
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::constant(TensorT value) {
  Node n;
  n.value = std::move(value);
  return Var<Scalar>(this, append(std::move(n)));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::parameter(const std::string& name, TensorT value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  auto id = append(std::move(n));
  params_.emplace_back(name, id);
  return Var<Scalar>(this, id);
}

template <typename Scalar>
Bound<Scalar> Tape<Scalar>::bind(const ParamStore<Scalar>& store) {
  Bound<Scalar> bound;
  for (const auto& [name, t] : store) bound.insert(name, parameter(name, t));
  return bound;
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::push(TensorT value, std::initializer_list<Var<Scalar>> parents,
                               BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const auto& p : parents) n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return Var<Scalar>(this, append(std::move(n)));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::push(TensorT value, const std::vector<Var<Scalar>>& parents,
                               BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const auto& p : parents) n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return Var<Scalar>(this, append(std::move(n)));
}

template <typename Scalar>
Tensor<Scalar>& Tape<Scalar>::grad(std::size_t id) {
  auto& node = nodes_.at(id);
  if (!node.grad) node.grad.emplace(node.value.shape());
  return *node.grad;
}

template <typename Scalar>
GradMap<Scalar> Tape<Scalar>::backward(const Var<Scalar>& loss) {
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
  if (loss.value().size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!record_) throw std::logic_error("backward() on a non-recording tape");

  grad(loss.id()).vec().setOnes();
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.grad || !node.backward) continue;
    // Move the gradient out so the closure may accumulate into parents freely.
    TensorT g = std::move(*node.grad);
    node.grad.reset();
    node.backward(*this, g);
    node.backward = nullptr;
  }

  GradMap<Scalar> out;
  for (const auto& [name, id] : params_) {
    auto& node = nodes_[id];
    out[name] = node.grad ? std::move(*node.grad) : TensorT(node.value.shape());
  }
  nodes_.clear();
  nodes_.shrink_to_fit();
  consumed_ = true;
  return out;
}

}  // namespace corrnet
