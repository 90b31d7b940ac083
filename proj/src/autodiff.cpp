#include "ssmic/autodiff.hpp"

#include "ssmic/error.hpp"

namespace ssmic::ad {

Var Tape::push(Tensor value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), requires_grad, std::move(backward), {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(Tensor value) { return push(std::move(value), true, nullptr); }

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::vector<Var>(parents), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) {
    require(p.tape() == this, ErrorCode::kInternal, "autodiff: operand belongs to another tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  if (!recording_ || !needs) return push(std::move(value), false, nullptr);
  return push(std::move(value), true, std::move(backward));
}

bool Tape::requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

void Tape::accumulate(const Var& v, const Tensor& grad) {
  accumulate(v, std::vector<double>(grad.data().begin(), grad.data().end()));
}

void Tape::accumulate(const Var& v, const std::vector<double>& grad) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  require(grad.size() == n.value.size(), ErrorCode::kInternal,
          "autodiff: gradient size " + std::to_string(grad.size()) + " does not match value " +
              shape_str(n.value.shape()));
  if (n.grad.empty()) {
    n.grad = grad;
  } else {
    for (std::size_t i = 0; i < grad.size(); ++i) n.grad[i] += grad[i];
  }
}

void Tape::backward(const Var& root) {
  require(root.tape() == this, ErrorCode::kInternal, "autodiff: root belongs to another tape");
  require(nodes_[root.id()].value.size() == 1, ErrorCode::kInvalidArgument,
          "autodiff: backward needs a single-element root");
  accumulate(root, std::vector<double>{1.0});
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    Tensor g(n.value.shape(), n.grad);
    n.backward(g, *this);
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor::zeros(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.clear();
}

}  // namespace ssmic::ad
