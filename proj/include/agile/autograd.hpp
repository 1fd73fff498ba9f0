#pragma once

// Minimal reverse-mode differentiation over agile::Tensor.
//
// Every op returns a Var whose node remembers its parents and a closure that
// pushes the output gradient back into them. backward() topologically sorts
// the graph reachable from a scalar root. Graphs are per-call and are dropped
// with the last Var referencing them.

#include <functional>
#include <memory>
#include <vector>

#include "agile/tensor.hpp"

namespace agile::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape, 0.0);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  const std::vector<int>& shape() const { return node_->value.shape; }
  // Zero tensor when no gradient reached this node.
  Tensor grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var leaf(Tensor value, bool requires_grad);
inline Var constant(Tensor value) { return leaf(std::move(value), false); }

// Seeds d(root)/d(root) = 1; root must hold a single element.
void backward(const Var& root);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var scale_by(const Var& a, const Var& s);  // s holds one element
Var add_n(const std::vector<Var>& xs);

Var reshape(const Var& a, std::vector<int> shape);
Var matmul(const Var& a, const Var& b);  // {m,k} x {k,n}
Var transpose(const Var& a);             // {m,n} -> {n,m}
Var add_row_bias(const Var& a, const Var& bias);  // {m,n} + {n}
Var slice_cols(const Var& a, int begin, int end);
Var concat_cols(const std::vector<Var>& xs);
Var concat_rows(const Var& a, const Var& b);
Var softmax_rows(const Var& a);
Var column(const Var& a, int j);  // {m,n} -> {m}

// {C,H,W} image-style ops, stride 1, zero padding.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int pad);
Var add_channel_bias(const Var& x, const Var& bias);  // {C,H,W} + {C}
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
Var concat_channels(const Var& a, const Var& b);

Var silu(const Var& x);
Var sum(const Var& x);
Var sum_squares(const Var& x);

// Bilinear resize of a {H,W} map, half-pixel centers, edge clamped.
Var resize_bilinear(const Var& x, int out_h, int out_w);

}  // namespace agile::ag
