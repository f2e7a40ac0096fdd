#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "anatomap/geometry.hpp"
#include "anatomap/tensor.hpp"

// Tape-based reverse-mode differentiation. Every op returns a Var that keeps
// its inputs alive; backward() walks the graph from a scalar root in reverse
// topological order. A graph is owned by one thread at a time.
namespace anatomap::nn {

struct Node {
  Tensor value;
  Tensor grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  /// Adds g into this node's gradient buffer.
  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  /// Gradient after backward(); zeros when nothing flowed here.
  Tensor grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node>& node() const { return node_; }
  bool defined() const { return node_ != nullptr; }

  static Var from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

/// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
void backward(const Var& root);

Var conv3(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var avg_pool2(const Var& x);
Var upsample2(const Var& x);
Var linear(const Var& x, const Var& w, const Var& b);
Var relu(const Var& x);
Var tanh(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, float s);
/// Elementwise product with a constant tensor of the same shape.
Var mul_const(const Var& a, const Tensor& c);
Var reshape(const Var& a, std::vector<int> shape);
Var l2_normalize_channels(const Var& x);
Var softmax_spatial(const Var& x);
Var dot_map(const Var& v, const Var& f);
Var gather_channels(const Var& f, Voxel at);
/// Scalar binary cross-entropy against a one-hot target at flat index `hot`.
Var bce_onehot(const Var& s, std::size_t hot);
/// Scalar sum of squares.
Var sum_squares(const Var& a);
/// Scalar sum of all elements.
Var sum(const Var& a);
/// Sum of scalar Vars.
Var add_scalars(const std::vector<Var>& terms);

}  // namespace anatomap::nn
