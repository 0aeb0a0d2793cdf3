#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "vqtts/tensor.hpp"

namespace vqtts {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t size() const { return value().size(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class BackwardContext {
 public:
  const Tensor& out_grad() const { return *out_grad_; }
  const Tensor& output() const { return *output_; }
  const Tensor& input(std::size_t i) const { return *inputs_[i]; }
  // Accumulator for input i, or nullptr when that input needs no gradient.
  Tensor* input_grad(std::size_t i) const { return input_grads_[i]; }

 private:
  friend class Tape;
  const Tensor* out_grad_ = nullptr;
  const Tensor* output_ = nullptr;
  std::vector<const Tensor*> inputs_;
  std::vector<Tensor*> input_grads_;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Record of one forward pass. Nodes are appended in execution order, so the
// insertion order is a topological order of the graph.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  // Leaf bound to an external parameter tensor. Binding the same tensor twice
  // returns the same Var, so gradients from every use accumulate in one place.
  Var param(const Tensor& parameter);

  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  // Zeros when no gradient reached v.
  Tensor grad(Var v) const;
  // Gradient accumulated for a bound parameter; zeros if it never reached the loss.
  Tensor grad_of(const Tensor& parameter) const;

  bool grad_enabled() const { return grad_enabled_; }
  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> bound_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

// ---- primitives ---------------------------------------------------------
// Binary elementwise ops accept equal shapes, or a single-element right operand.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

Var matmul(Var a, Var b);
Var transpose(Var a);

// x[..., C] + b[C]
Var add_bias(Var x, Var b);
// x[..., C] * g[C]
Var mul_gain(Var x, Var g);
// x[C, T] + b[C]
Var add_channel_bias(Var x, Var b);

Var relu(Var x);
Var leaky_relu(Var x, double slope);
Var tanh(Var x);
Var sigmoid(Var x);
Var exp(Var x);
Var abs(Var x);
Var square(Var x);
Var sqrt(Var x);
// log(max(x, floor)); no gradient flows where x < floor.
Var log_clamped(Var x, double floor);

// Along the last axis. `keep` marks positions that participate; masked
// entries get exactly zero probability.
Var softmax(Var x);
Var softmax(Var x, const std::vector<unsigned char>& keep);
Var log_softmax(Var x);
// Normalization over the last axis, without affine parameters.
Var layer_norm(Var x, double eps = 1e-5);

Var embedding(Var table, std::span<const int> ids);

Var sum(Var x);
Var mean(Var x);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);

// Forward identity, zero gradient.
Var stop_gradient(Var x);

// Inverted dropout: kept units are scaled by 1/(1-rate).
Var dropout(Var x, double rate, std::mt19937_64& rng);

// x[C_in, T], w[C_out, C_in, K] -> [C_out, floor((T + 2 pad - d (K-1) - 1) / stride) + 1]
Var conv1d(Var x, Var w, std::size_t stride, std::size_t pad, std::size_t dilation = 1);
// x[C_in, T], w[C_in, C_out, K] -> [C_out, (T - 1) stride - 2 pad + K]
Var conv_transpose1d(Var x, Var w, std::size_t stride, std::size_t pad);
// Non-overlapping mean pooling over time; trailing samples that do not fill a window are dropped.
Var avg_pool1d(Var x, std::size_t kernel);

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t pad, std::size_t dilation = 1);
std::size_t conv_transpose1d_output_length(std::size_t length, std::size_t kernel,
                                           std::size_t stride, std::size_t pad);

// Lower-triangular keep-mask for [rows, cols] attention scores: row i sees columns <= i + offset.
std::vector<unsigned char> causal_mask(std::size_t rows, std::size_t cols, std::size_t offset = 0);

}  // namespace vqtts
