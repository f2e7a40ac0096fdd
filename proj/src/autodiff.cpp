#include "anatomap/autodiff.hpp"

#include <cmath>
#include <unordered_set>

#include "anatomap/kernels.hpp"

namespace anatomap::nn {

namespace k = kernels;

void Node::accumulate(const Tensor& g) {
  if (grad.numel() == 0) {
    grad = g.reshaped(value.shape());
    return;
  }
  if (g.numel() != grad.numel()) throw Error(ErrorCode::ShapeMismatch, "gradient shape does not match value");
  for (std::size_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::from_node(std::shared_ptr<Node> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

Tensor Var::grad() const {
  if (node_->grad.numel() != 0) return node_->grad;
  return Tensor(node_->value.shape());
}

namespace {

// Builds the output node; the backward closure is attached only when some
// input needs a gradient.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
  if (node->requires_grad) {
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(bw);
  }
  return Var::from_node(std::move(node));
}

bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

Tensor scalar(double v) { return Tensor({1}, std::vector<float>{float(v)}); }

}  // namespace

void backward(const Var& root) {
  if (root.value().numel() != 1) throw Error(ErrorCode::ShapeMismatch, "backward root must be a scalar");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Tensor(root.value().shape(), 1.0f));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.numel() != 0) n->backward(*n);
  }
}

Var conv3(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  Tensor y = k::conv3_forward(x.value(), w.value(), b.value(), stride, pad);
  return make_op(std::move(y), {x, w, b}, [stride, pad](Node& self) {
    auto g = k::conv3_backward(self.inputs[0]->value, self.inputs[1]->value, self.grad, stride, pad, wants(self, 0));
    if (wants(self, 0)) self.inputs[0]->accumulate(g.dx);
    if (wants(self, 1)) self.inputs[1]->accumulate(g.dw);
    if (wants(self, 2)) self.inputs[2]->accumulate(g.db);
  });
}

Var avg_pool2(const Var& x) {
  return make_op(k::avg_pool2_forward(x.value()), {x},
                 [](Node& self) { self.inputs[0]->accumulate(k::avg_pool2_backward(self.grad)); });
}

Var upsample2(const Var& x) {
  return make_op(k::upsample2_forward(x.value()), {x},
                 [](Node& self) { self.inputs[0]->accumulate(k::upsample2_backward(self.grad)); });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  return make_op(k::linear_forward(x.value(), w.value(), b.value()), {x, w, b}, [](Node& self) {
    auto g = k::linear_backward(self.inputs[0]->value, self.inputs[1]->value, self.grad);
    if (wants(self, 0)) self.inputs[0]->accumulate(g.dx);
    if (wants(self, 1)) self.inputs[1]->accumulate(g.dw);
    if (wants(self, 2)) self.inputs[2]->accumulate(g.db);
  });
}

Var relu(const Var& x) {
  return make_op(k::relu_forward(x.value()), {x},
                 [](Node& self) { self.inputs[0]->accumulate(k::relu_backward(self.inputs[0]->value, self.grad)); });
}

Var tanh(const Var& x) {
  return make_op(k::tanh_forward(x.value()), {x},
                 [](Node& self) { self.inputs[0]->accumulate(k::tanh_backward(self.value, self.grad)); });
}

Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) throw Error(ErrorCode::ShapeMismatch, "add: shapes differ");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) self.inputs[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) throw Error(ErrorCode::ShapeMismatch, "sub: shapes differ");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] = -g[i];
      self.inputs[1]->accumulate(g);
    }
  });
}

Var scale(const Var& a, float s) {
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= s;
  return make_op(std::move(y), {a}, [s](Node& self) {
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= s;
    self.inputs[0]->accumulate(g);
  });
}

Var mul_const(const Var& a, const Tensor& c) {
  if (a.value().numel() != c.numel()) throw Error(ErrorCode::ShapeMismatch, "mul_const: sizes differ");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= c[i];
  return make_op(std::move(y), {a}, [c](Node& self) {
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= c[i];
    self.inputs[0]->accumulate(g);
  });
}

Var reshape(const Var& a, std::vector<int> shape) {
  return make_op(a.value().reshaped(std::move(shape)), {a},
                 [](Node& self) { self.inputs[0]->accumulate(self.grad.reshaped(self.inputs[0]->value.shape())); });
}

Var l2_normalize_channels(const Var& x) {
  return make_op(k::l2_normalize_channels_forward(x.value()), {x}, [](Node& self) {
    self.inputs[0]->accumulate(k::l2_normalize_channels_backward(self.inputs[0]->value, self.value, self.grad));
  });
}

Var softmax_spatial(const Var& x) {
  return make_op(k::softmax_spatial_forward(x.value()), {x},
                 [](Node& self) { self.inputs[0]->accumulate(k::softmax_spatial_backward(self.value, self.grad)); });
}

Var dot_map(const Var& v, const Var& f) {
  return make_op(k::dot_map_forward(v.value(), f.value()), {v, f}, [](Node& self) {
    auto g = k::dot_map_backward(self.inputs[0]->value, self.inputs[1]->value, self.grad);
    if (wants(self, 0)) self.inputs[0]->accumulate(g.dv);
    if (wants(self, 1)) self.inputs[1]->accumulate(g.df);
  });
}

Var gather_channels(const Var& f, Voxel at) {
  return make_op(k::gather_channels_forward(f.value(), at), {f}, [at](Node& self) {
    self.inputs[0]->accumulate(k::gather_channels_backward(self.inputs[0]->value.shape(), at, self.grad));
  });
}

Var bce_onehot(const Var& s, std::size_t hot) {
  return make_op(scalar(k::bce_onehot_forward(s.value(), hot)), {s}, [hot](Node& self) {
    self.inputs[0]->accumulate(k::bce_onehot_backward(self.inputs[0]->value, hot, self.grad[0]));
  });
}

Var sum_squares(const Var& a) {
  double acc = 0.0;
  for (float v : a.value().values()) acc += double(v) * v;
  return make_op(scalar(acc), {a}, [](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    Tensor g(x.shape());
    const float d = self.grad[0];
    for (std::size_t i = 0; i < x.numel(); ++i) g[i] = 2.0f * d * x[i];
    self.inputs[0]->accumulate(g);
  });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (float v : a.value().values()) acc += v;
  return make_op(scalar(acc), {a}, [](Node& self) {
    self.inputs[0]->accumulate(Tensor(self.inputs[0]->value.shape(), self.grad[0]));
  });
}

Var add_scalars(const std::vector<Var>& terms) {
  double acc = 0.0;
  for (const auto& t : terms) {
    if (t.value().numel() != 1) throw Error(ErrorCode::ShapeMismatch, "add_scalars expects scalars");
    acc += t.value()[0];
  }
  return make_op(scalar(acc), terms, [](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (wants(self, i)) self.inputs[i]->accumulate(self.grad);
    }
  });
}

}  // namespace anatomap::nn
