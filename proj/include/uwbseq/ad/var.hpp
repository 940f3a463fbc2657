#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uwbseq/ad/tensor.hpp"

namespace uwbseq::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One entry of the dynamic tape. The graph is rebuilt on every forward pass
// and is reachable only through the parents of the output node.
struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  Tensor& grad_buffer();
};

class Var {
public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(int axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  // Zero-filled when no gradient reached this node.
  Tensor grad() const;
  void zero_grad();

  const NodePtr& node() const { return node_; }

private:
  NodePtr node_;
  friend Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);
};

// Builds an op result. The backward rule is dropped when gradients are
// disabled or no parent requires them.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

bool grad_enabled();

class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

// Reverse-topological accumulation from a scalar loss. Throws
// std::invalid_argument for a non-scalar loss.
void backward(const Var& loss);

}  // namespace uwbseq::ad
