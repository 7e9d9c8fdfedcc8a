#pragma once

// Reverse-mode differentiation over a fixed operator set. Every operator
// records its output on a Tape together with a closure that pushes the
// output gradient back into its inputs. Activations use the (C, N, H, W)
// layout from tensor.hpp; vectors are (D, N, 1, 1) tensors.

#include <deque>
#include <functional>
#include <span>

#include "diffpad/tensor.hpp"

namespace diffpad::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  // A non-recording tape evaluates the same graph without keeping closures.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor<T> value, bool needs_grad = false);
  // Leaf that refers to `value` without copying; it must outlive the tape.
  Var leaf_view(const Tensor<T>& value, bool needs_grad = false);

  const Tensor<T>& value(Var v) const {
    const Node& node = nodes_[v.id];
    return node.view ? *node.view : node.value;
  }
  // Zero-shaped until backward() reaches the node.
  const Tensor<T>& grad(Var v) const { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return v.valid() && nodes_[v.id].needs_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 on a single-element node and runs closures in
  // reverse creation order.
  void backward(Var loss);

  // Used by operators.
  Var push(Tensor<T> value, bool needs_grad, std::function<void()> backward_fn);
  Tensor<T>& grad_buffer(Var v);

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* view = nullptr;
    Tensor<T> grad;
    std::function<void()> backward;
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;
  bool record_;
};

// Convolution with weight (Cout, Cin, k, k) and optional bias (Cout, 1, 1, 1).
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride, int pad);

// Transposed convolution with weight (Cin, Cout, k, k); the adjoint of
// conv2d with the same geometry.
template <typename T>
Var conv_transpose2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride, int pad);

template <typename T>
Var group_norm(Tape<T>& tape, Var x, Var gamma, Var beta, int groups, T eps = T(1e-5));

template <typename T>
Var silu(Tape<T>& tape, Var x);

template <typename T>
Var relu(Tape<T>& tape, Var x);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor);

// x (C, N, H, W) plus v (C, N, 1, 1) broadcast over the spatial plane.
template <typename T>
Var add_channel(Tape<T>& tape, Var x, Var v);

template <typename T>
Var upsample_nearest2x(Tape<T>& tape, Var x);

// Channel concatenation of tensors sharing N, H, W.
template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b);

// (C, N, H, W) -> (C*H*W, N, 1, 1) and back.
template <typename T>
Var flatten(Tape<T>& tape, Var x);
template <typename T>
Var unflatten(Tape<T>& tape, Var x, int c, int h, int w);

// Mean of (a - b)^2 over all elements, as a (1, 1, 1, 1) node.
template <typename T>
Var mse(Tape<T>& tape, Var a, Var b);

// mu + exp(logvar / 2) * eps, eps held constant.
template <typename T>
Var reparameterize(Tape<T>& tape, Var mu, Var logvar, const Tensor<T>& eps);

// Batch mean of 0.5 * sum_d (mu^2 + exp(logvar) - logvar - 1).
template <typename T>
Var gaussian_kl(Tape<T>& tape, Var mu, Var logvar);

}  // namespace diffpad::ad
