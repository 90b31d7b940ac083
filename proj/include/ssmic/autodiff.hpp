#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "ssmic/tensor.hpp"

namespace ssmic::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
// sweep visits every node after all of its consumers.
class Tape {
 public:
  using Backward = std::function<void(const Tensor& grad_out, Tape& tape)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  // Appends an op result. The backward closure runs only if some parent
  // requires a gradient and the tape is recording.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);
  Var record(Tensor value, const std::vector<Var>& parents, Backward backward);

  bool requires_grad(const Var& v) const;
  void accumulate(const Var& v, const Tensor& grad);
  void accumulate(const Var& v, const std::vector<double>& grad);

  // Seeds d(root)/d(root) = 1 for a single-element root and sweeps backward.
  void backward(const Var& root);
  // Gradient accumulated into v (zeros when nothing reached it).
  Tensor grad(const Var& v) const;
  // Whether any gradient flowed into v during the last sweep.
  bool reached(const Var& v) const { return !nodes_[v.id()].grad.empty(); }
  void zero_grad();

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return recording_; }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Backward backward;
    std::vector<double> grad;
  };

  Var push(Tensor value, bool requires_grad, Backward backward);

  std::deque<Node> nodes_;
  bool recording_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

}  // namespace ssmic::ad
