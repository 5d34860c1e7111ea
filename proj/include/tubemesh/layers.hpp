#pragma once

#include <string>
#include <vector>

#include "tubemesh/rng.hpp"
#include "tubemesh/tape.hpp"

namespace tubemesh::nn {

// Batch normalization over the channel axis (dim 1). Training mode uses
// batch statistics and updates the running buffers; inference mode uses the
// running buffers.
struct BatchNorm {
  Parameter gamma;
  Parameter beta;
  NdArray running_mean;
  NdArray running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t channels)
      : gamma(name + ".gamma", NdArray::full({channels}, 1.0)),
        beta(name + ".beta", NdArray({channels})),
        running_mean({channels}),
        running_var(NdArray::full({channels}, 1.0)) {}

  Var operator()(Tape& t, Var x, bool training);

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

Var batch_norm(Tape& t, Var x, BatchNorm& bn, bool training);

// Kaiming fan-in init for convolution/linear weights; biases start at zero.
NdArray kaiming_init(const std::vector<std::size_t>& shape, std::size_t fan_in,
                     Rng& rng);

struct ConvRadialLayer {
  Parameter w;  // [C',C,k]
  Parameter b;  // [C']
  int stride = 1;

  ConvRadialLayer() = default;
  ConvRadialLayer(const std::string& name, std::size_t cout, std::size_t cin,
                  std::size_t k, Rng& rng, int stride = 1)
      : w(name + ".w", kaiming_init({cout, cin, k}, cin * k, rng)),
        b(name + ".b", NdArray({cout})),
        stride(stride) {}

  Var operator()(Tape& t, Var x) {
    return conv_radial(t, x, t.leaf(w), t.leaf(b), stride);
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

struct Conv3dCylLayer {
  Parameter w;  // [C',C,3,3,3]
  Parameter b;

  Conv3dCylLayer() = default;
  Conv3dCylLayer(const std::string& name, std::size_t cout, std::size_t cin,
                 Rng& rng)
      : w(name + ".w", kaiming_init({cout, cin, 3, 3, 3}, cin * 27, rng)),
        b(name + ".b", NdArray({cout})) {}

  Var operator()(Tape& t, Var x) {
    return conv3d_cyl(t, x, t.leaf(w), t.leaf(b));
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

struct Conv1dLayer {
  Parameter w;  // [C',C,k]
  Parameter b;
  int stride = 1;
  int pad = 0;

  Conv1dLayer() = default;
  Conv1dLayer(const std::string& name, std::size_t cout, std::size_t cin,
              std::size_t k, Rng& rng, int stride = 1, int pad = 0)
      : w(name + ".w", kaiming_init({cout, cin, k}, cin * k, rng)),
        b(name + ".b", NdArray({cout})),
        stride(stride),
        pad(pad) {}

  Var operator()(Tape& t, Var x) {
    return conv1d(t, x, t.leaf(w), t.leaf(b), stride, pad);
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

struct LinearLayer {
  Parameter w;  // [Co,Ci]
  Parameter b;

  LinearLayer() = default;
  LinearLayer(const std::string& name, std::size_t cout, std::size_t cin,
              Rng& rng)
      : w(name + ".w", kaiming_init({cout, cin}, cin, rng)),
        b(name + ".b", NdArray({cout})) {}

  Var operator()(Tape& t, Var x) {
    return linear(t, x, t.leaf(w), t.leaf(b));
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

}  // namespace tubemesh::nn
