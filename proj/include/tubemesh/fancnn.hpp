#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "tubemesh/geometry.hpp"
#include "tubemesh/layers.hpp"
#include "tubemesh/optimizer.hpp"
#include "tubemesh/phantom.hpp"

namespace tubemesh::fancnn {

struct FanCnnConfig {
  std::size_t n_theta = 16;
  std::size_t r_samples = 32;
  double dr = 0.2;
  std::size_t conv1d_kernel = 7;
  std::size_t conv1d_channels = 16;
  std::size_t n_conv3d = 7;
  std::size_t trunk_channels = 16;
  std::size_t prefinal_kernel = 6;  // 0 = whatever closes R to 1
  double leaky_slope = 0.01;
  double ca_min_radius = 0.15;
  std::size_t n_classes = 4;
  std::size_t radii_outputs = 3;

  // R extent left after the two stem convolutions and the 3^3 trunk
  std::size_t r_after_trunk() const;
  void validate();  // resolves prefinal_kernel = 0, then checks R closes to 1
};

FanCnnConfig fancnn_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json fancnn_config_to_json(const FanCnnConfig& cfg);

// Radial-extent regression network over cylindrical intensity volumes:
// two 1D stem convolutions along R, a 3x3x3 cylindrical trunk, a 1D
// convolution closing R to 1, and linear radii/class heads.
class FanCnn {
 public:
  FanCnn(const FanCnnConfig& cfg, Rng& rng);

  struct Output {
    nn::Var radii;        // [B, 3, Theta, L]
    nn::Var class_probs;  // [B, n_classes, Theta, L]
  };

  // x: [B, 1, Theta, R, L]
  Output forward(nn::Tape& t, nn::Var x, bool training);

  std::vector<nn::Parameter*> parameters();
  std::vector<std::pair<std::string, NdArray*>> named_tensors();
  const FanCnnConfig& config() const { return cfg_; }
  std::size_t parameter_count();

  void save(const std::string& path, const nlohmann::ordered_json& meta);
  void load(const std::string& path);

 private:
  FanCnnConfig cfg_;
  nn::ConvRadialLayer stem1_, stem2_, prefinal_;
  nn::BatchNorm bn_stem1_, bn_stem2_, bn_prefinal_;
  std::vector<nn::Conv3dCylLayer> trunk_;
  std::vector<nn::BatchNorm> bn_trunk_;
  nn::ConvRadialLayer head_radii_, head_class_;
};

// Batched regression/classification targets on the (theta, z) grid.
struct FieldBatchTarget {
  NdArray radii;                   // [B, 3, Theta, L]
  std::vector<std::uint8_t> cls;   // B * Theta * L entries in 0..3
};

// Composite loss: categorical cross-entropy + lumen MSE + the two plaque
// terms, each a pair of separately normalized in-plaque / plaque-free means.
nn::Var fancnn_loss(nn::Tape& t, const FanCnn::Output& out,
                    const FieldBatchTarget& target);

// Raw head outputs for one artery.
struct RawPrediction {
  NdArray radii;        // [3, Theta, L]
  NdArray class_probs;  // [n_classes, Theta, L]
};

// Clamps radii into a valid field without classifier attention.
geom::RadialField prediction_to_field(const RawPrediction& raw,
                                      double max_outer);

// Classifier attention: per plaque type, connected components of predicted
// radii >= min_radius take the majority argmax class of their vertices; a
// "no plaque" vote clears the component, a single-type vote clears the other
// type's radii there. Idempotent.
geom::RadialField classifier_attention(const RawPrediction& raw,
                                       double min_radius, double max_outer);

}  // namespace tubemesh::fancnn
