#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "spanedit/errors.hpp"
#include "spanedit/narray.hpp"

namespace spanedit::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; the tape must outlive it.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  inline const NArray& value() const;
  const Shape& shape() const { return value().shape(); }
  inline bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

using BackwardFn = std::function<void(Tape&, int self)>;

// Append-only record of computed values. Nodes are created in evaluation
// order, so parents always precede children and a reverse sweep is a valid
// topological order for backpropagation.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(NArray v) { return push_leaf(std::move(v), nullptr, false); }
  // The referenced array must outlive the tape.
  Var constant_ref(const NArray& v) { return push_leaf(NArray{}, &v, false); }
  Var variable(NArray v) { return push_leaf(std::move(v), nullptr, true); }
  Var variable_ref(const NArray& v) { return push_leaf(NArray{}, &v, true); }

  const NArray& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.owned;
  }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Gradient buffer of a node, zero-initialized on first access.
  NArray& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_ready) {
      n.grad = NArray(value(id).shape(), 0.0);
      n.grad_ready = true;
    }
    return n.grad;
  }
  const NArray* grad_if_any(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.grad_ready ? &n.grad : nullptr;
  }

  bool tracking(std::initializer_list<Var> parents) const {
    for (const Var& p : parents)
      if (requires_grad(p.id())) return true;
    return false;
  }
  bool tracking(std::span<const Var> parents) const {
    for (const Var& p : parents)
      if (requires_grad(p.id())) return true;
    return false;
  }

  // Records an op result. `fn` is dropped when no parent is tracked.
  Var record(NArray value, bool track, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = track;
    if (track) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Call once per tape (or after
  // zero_grad): intermediate buffers are not cleared between sweeps.
  void backward(Var loss) {
    if (&loss.tape() != this) throw ValidationError("loss belongs to a different tape");
    const NArray& v = value(loss.id());
    if (v.rank() != 0) throw ShapeError("backward needs a scalar loss, got shape " + v.shape().str());
    grad(loss.id())[0] += 1.0;
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || !n.backward) continue;
      if (!grad_if_any(id)) continue;
      n.backward(*this, id);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      n.grad = NArray{};
      n.grad_ready = false;
    }
  }

 private:
  struct Node {
    NArray owned;
    const NArray* external = nullptr;
    NArray grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool grad_ready = false;
  };

  Var push_leaf(NArray v, const NArray* external, bool requires_grad) {
    Node n;
    n.owned = std::move(v);
    n.external = external;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
};

inline const NArray& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace spanedit::ad
