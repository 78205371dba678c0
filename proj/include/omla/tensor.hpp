#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "omla/dual.hpp"
#include "omla/error.hpp"

namespace omla {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <class T>
class Tape;

/// Dense row-major tensor. Storage is immutable and shared between copies, so
/// a Tensor is a cheap value handle. A tensor produced while recording carries
/// the tape and the node id that produced it.
template <class T>
class Tensor {
 public:
  Tensor() : data_(std::make_shared<const std::vector<T>>()) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape_));
    }
    data_ = std::make_shared<const std::vector<T>>(std::move(data));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0.0)); }
  static Tensor full(Shape shape, T value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return data_->size(); }

  std::span<const T> data() const { return {data_->data(), data_->size()}; }
  const T& operator[](std::size_t i) const { return (*data_)[i]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool recorded() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  int node() const { return node_; }

  /// Same data and shape, detached from any tape.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
  }

 private:
  friend class Tape<T>;

  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;
};

/// Define-by-run record of tensor operations. Each node stores a closure that
/// maps the gradient of its output to gradients of its inputs. Nodes are
/// appended in execution order, so the list is topologically sorted.
template <class T>
class Tape {
 public:
  /// grad_out has the output's numel. grad_in[i] is null for inputs that are
  /// not recorded; otherwise it points to a zero-initialised accumulator.
  using BackwardFn =
      std::function<void(std::span<const T> grad_out, std::span<std::vector<T>* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiable leaf.
  Tensor<T> leaf(const Tensor<T>& value) {
    check_open();
    Tensor<T> out = value.detached();
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{{}, value.numel(), nullptr});
    return out;
  }

  /// Appends an operation node. Inputs that are not recorded on this tape are
  /// stored as -1 and receive no gradient.
  Tensor<T> record(Shape shape, std::vector<T> data, std::span<const Tensor<T>* const> inputs,
                   BackwardFn backward) {
    check_open();
    Node node;
    node.inputs.reserve(inputs.size());
    for (const Tensor<T>* in : inputs) {
      if (in->tape_ != nullptr && in->tape_ != this) {
        throw ContractError("operation mixes tensors from different tapes");
      }
      node.inputs.push_back(in->tape_ == this ? in->node_ : -1);
    }
    node.numel = data.size();
    node.backward = std::move(backward);
    Tensor<T> out(std::move(shape), std::move(data));
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
    return out;
  }

  /// Reverse sweep from a scalar loss. Every node is visited once, in reverse
  /// recording order. The tape accepts no further operations afterwards.
  void backward(const Tensor<T>& loss) {
    check_open();
    if (loss.tape_ != this) throw ContractError("backward: loss was not produced on this tape");
    if (loss.numel() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    consumed_ = true;
    grads_.assign(nodes_.size(), {});
    grads_[static_cast<std::size_t>(loss.node_)].assign(1, T(1.0));
    std::vector<std::vector<T>*> grad_in;
    for (int id = loss.node_; id >= 0; --id) {
      Node& node = nodes_[static_cast<std::size_t>(id)];
      std::vector<T>& gout = grads_[static_cast<std::size_t>(id)];
      if (gout.empty() || !node.backward) continue;
      grad_in.assign(node.inputs.size(), nullptr);
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const int in = node.inputs[i];
        if (in < 0) continue;
        std::vector<T>& g = grads_[static_cast<std::size_t>(in)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(in)].numel, T(0.0));
        grad_in[i] = &g;
      }
      node.backward(gout, grad_in);
      // Interior gradients are no longer needed once propagated.
      if (!node.inputs.empty()) std::vector<T>().swap(gout);
      node.backward = nullptr;
    }
  }

  /// Gradient accumulated for a recorded tensor; zeros if none reached it.
  std::vector<T> grad(const Tensor<T>& t) const {
    if (t.tape_ != this) throw ContractError("grad: tensor is not recorded on this tape");
    if (!consumed_) throw ContractError("grad: backward() has not run");
    const auto& g = grads_[static_cast<std::size_t>(t.node_)];
    if (g.empty()) return std::vector<T>(t.numel(), T(0.0));
    return g;
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    std::vector<int> inputs;
    std::size_t numel = 0;
    BackwardFn backward;
  };

  void check_open() const {
    if (consumed_) throw ContractError("tape already consumed by backward()");
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  bool consumed_ = false;
};

/// Returns the tape shared by the recorded inputs, or null if none is recorded.
template <class T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* t : inputs) {
    if (!t->recorded()) continue;
    if (tape != nullptr && tape != t->tape()) {
      throw ContractError("operation mixes tensors from different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

}  // namespace omla
