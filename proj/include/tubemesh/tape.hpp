#pragma once

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tubemesh/ndarray.hpp"

namespace tubemesh::nn {

// Trainable tensor: value, gradient, and the two AdamW moment arrays.
struct Parameter {
  std::string name;
  NdArray value;
  NdArray grad;
  NdArray m;
  NdArray v;

  Parameter() = default;
  Parameter(std::string n, NdArray init)
      : name(std::move(n)),
        value(std::move(init)),
        grad(value.shape()),
        m(value.shape()),
        v(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

// Handle into a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff tape. Operations append nodes in topological order;
// backward() sweeps them in reverse exactly once, then accumulates leaf
// gradients into their Parameters.
class Tape {
 public:
  Var constant(NdArray value);
  Var leaf(Parameter& p);

  Var make(NdArray value, bool requires_grad);
  void set_backward(Var v, std::function<void(Tape&)> backward);

  const NdArray& val(Var v) const { return nodes_[v.id].value; }
  NdArray& val(Var v) { return nodes_[v.id].value; }

  // Lazily allocated zero-filled gradient buffer.
  NdArray& grad(Var v);
  bool grad_touched(Var v) const { return !nodes_[v.id].grad.empty(); }
  bool needs_grad(Var v) const { return nodes_[v.id].requires_grad; }

  void backward(Var scalar_loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    NdArray value;
    NdArray grad;
    bool requires_grad = false;
    bool is_leaf = false;
    std::function<void(Tape&)> backward;
  };
  std::deque<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> leaves_;
  bool backward_done_ = false;
};

// Elementwise and reduction ops.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var affine(Tape& t, Var x, double scale, double shift);
Var sum(Tape& t, Var x);
Var weighted_sum(Tape& t, Var x, NdArray weights);
Var square(Tape& t, Var x);
Var abs_value(Tape& t, Var x);
Var relu(Tape& t, Var x);
Var leaky_relu(Tape& t, Var x, double slope);
Var sigmoid(Tape& t, Var x);
Var log_clamped(Tape& t, Var x, double eps);
Var reshape(Tape& t, Var x, std::vector<std::size_t> shape);

// Softmax over the channel axis (dim 1) of [B,C,...].
Var softmax_channels(Tape& t, Var x);

// 1D convolution along R applied independently at every (theta,z) site.
// x [B,C,Theta,R,L], w [C',C,k], b [C']  ->  [B,C',Theta,R',L], valid in R.
Var conv_radial(Tape& t, Var x, Var w, Var b, int stride);

// Cylindrical 3D convolution: x [B,C,Theta,R,L], w [C',C,3,3,3], b [C'].
// Circular padding along Theta, mirror padding along L, valid along R.
Var conv3d_cyl(Tape& t, Var x, Var w, Var b);

// Plain 1D convolution with zero padding: x [B,C,L], w [C',C,k], b [C'].
Var conv1d(Tape& t, Var x, Var w, Var b, int stride, int pad);

Var maxpool1d(Tape& t, Var x, int k, int stride);
Var global_maxpool(Tape& t, Var x);  // [B,C,L] -> [B,C], max over L
Var linear(Tape& t, Var x, Var w, Var b);  // [B,Ci] x [Co,Ci] + [Co]
Var select_rows(Tape& t, Var x, std::vector<std::size_t> rows);

// Tape-free forward kernels; these back the ops above and double as the
// module-level primitives.
NdArray conv1d_radial(const NdArray& input, const NdArray& kernel, int stride);
NdArray conv3d_cyl_forward(const NdArray& input, const NdArray& kernel);
NdArray softmax(const NdArray& x, std::size_t axis);

}  // namespace tubemesh::nn
