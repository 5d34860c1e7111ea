#include "tubemesh/fancnn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tubemesh/checkpoint.hpp"

namespace tubemesh::fancnn {

using nn::Tape;
using nn::Var;

std::size_t FanCnnConfig::r_after_trunk() const {
  long r = static_cast<long>(r_samples);
  r -= 2 * (static_cast<long>(conv1d_kernel) - 1);
  r -= 2 * static_cast<long>(n_conv3d);
  return r > 0 ? static_cast<std::size_t>(r) : 0;
}

void FanCnnConfig::validate() {
  if (n_theta < 3) {
    throw std::invalid_argument("fancnn: n_theta must be >= 3");
  }
  const std::size_t r = r_after_trunk();
  if (r < 1) {
    throw std::invalid_argument(
        "fancnn: stem kernels and trunk depth consume the whole R axis");
  }
  if (prefinal_kernel == 0) prefinal_kernel = r;
  if (prefinal_kernel != r) {
    throw std::invalid_argument(
        "fancnn: pre-final kernel " + std::to_string(prefinal_kernel) +
        " does not close the remaining R extent " + std::to_string(r) +
        " to 1");
  }
  if (n_classes != 4) {
    throw std::invalid_argument("fancnn: the class head expects 4 categories");
  }
  if (radii_outputs != 3) {
    throw std::invalid_argument("fancnn: the radii head expects 3 outputs");
  }
  if (ca_min_radius < 0 || dr <= 0) {
    throw std::invalid_argument("fancnn: bad radius parameters");
  }
}

namespace {
const char* kConfigKeys[] = {
    "n_theta",        "r_samples",       "dr",          "conv1d_kernel",
    "conv1d_channels", "n_conv3d",       "trunk_channels", "prefinal_kernel",
    "leaky_slope",    "ca_min_radius",   "n_classes",   "radii_outputs"};
}

FanCnnConfig fancnn_config_from_json(const nlohmann::json& j) {
  FanCnnConfig cfg;
  for (const auto& [key, val] : j.items()) {
    if (std::find_if(std::begin(kConfigKeys), std::end(kConfigKeys),
                     [&](const char* k) { return key == k; }) ==
        std::end(kConfigKeys)) {
      throw std::invalid_argument("fancnn config: unknown key '" + key + "'");
    }
    (void)val;
  }
  if (j.contains("n_theta")) cfg.n_theta = j["n_theta"].get<std::size_t>();
  if (j.contains("r_samples"))
    cfg.r_samples = j["r_samples"].get<std::size_t>();
  if (j.contains("dr")) cfg.dr = j["dr"].get<double>();
  if (j.contains("conv1d_kernel"))
    cfg.conv1d_kernel = j["conv1d_kernel"].get<std::size_t>();
  if (j.contains("conv1d_channels"))
    cfg.conv1d_channels = j["conv1d_channels"].get<std::size_t>();
  if (j.contains("n_conv3d")) cfg.n_conv3d = j["n_conv3d"].get<std::size_t>();
  if (j.contains("trunk_channels"))
    cfg.trunk_channels = j["trunk_channels"].get<std::size_t>();
  if (j.contains("prefinal_kernel"))
    cfg.prefinal_kernel = j["prefinal_kernel"].get<std::size_t>();
  if (j.contains("leaky_slope"))
    cfg.leaky_slope = j["leaky_slope"].get<double>();
  if (j.contains("ca_min_radius"))
    cfg.ca_min_radius = j["ca_min_radius"].get<double>();
  if (j.contains("n_classes"))
    cfg.n_classes = j["n_classes"].get<std::size_t>();
  if (j.contains("radii_outputs"))
    cfg.radii_outputs = j["radii_outputs"].get<std::size_t>();
  cfg.validate();
  return cfg;
}

nlohmann::ordered_json fancnn_config_to_json(const FanCnnConfig& cfg) {
  nlohmann::ordered_json j;
  j["n_theta"] = cfg.n_theta;
  j["r_samples"] = cfg.r_samples;
  j["dr"] = cfg.dr;
  j["conv1d_kernel"] = cfg.conv1d_kernel;
  j["conv1d_channels"] = cfg.conv1d_channels;
  j["n_conv3d"] = cfg.n_conv3d;
  j["trunk_channels"] = cfg.trunk_channels;
  j["prefinal_kernel"] = cfg.prefinal_kernel;
  j["leaky_slope"] = cfg.leaky_slope;
  j["ca_min_radius"] = cfg.ca_min_radius;
  j["n_classes"] = cfg.n_classes;
  j["radii_outputs"] = cfg.radii_outputs;
  return j;
}

FanCnn::FanCnn(const FanCnnConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  Rng init = rng.substream(0xF0);
  stem1_ = nn::ConvRadialLayer("stem1", cfg_.conv1d_channels, 1,
                               cfg_.conv1d_kernel, init);
  bn_stem1_ = nn::BatchNorm("bn_stem1", cfg_.conv1d_channels);
  stem2_ = nn::ConvRadialLayer("stem2", cfg_.trunk_channels,
                               cfg_.conv1d_channels, cfg_.conv1d_kernel, init);
  bn_stem2_ = nn::BatchNorm("bn_stem2", cfg_.trunk_channels);
  for (std::size_t i = 0; i < cfg_.n_conv3d; ++i) {
    const std::string name = "trunk" + std::to_string(i);
    trunk_.emplace_back(name, cfg_.trunk_channels, cfg_.trunk_channels, init);
    bn_trunk_.emplace_back("bn_" + name, cfg_.trunk_channels);
  }
  prefinal_ = nn::ConvRadialLayer("prefinal", cfg_.trunk_channels,
                                  cfg_.trunk_channels, cfg_.prefinal_kernel,
                                  init);
  bn_prefinal_ = nn::BatchNorm("bn_prefinal", cfg_.trunk_channels);
  head_radii_ = nn::ConvRadialLayer("head_radii", cfg_.radii_outputs,
                                    cfg_.trunk_channels, 1, init);
  head_class_ = nn::ConvRadialLayer("head_class", cfg_.n_classes,
                                    cfg_.trunk_channels, 1, init);
}

FanCnn::Output FanCnn::forward(Tape& t, Var x, bool training) {
  const NdArray& xv = t.val(x);
  if (xv.rank() != 5 || xv.dim(1) != 1) {
    throw std::invalid_argument("fancnn: input must be [B,1,Theta,R,L], got " +
                                xv.shape_str());
  }
  if (xv.dim(3) != cfg_.r_samples) {
    throw std::invalid_argument(
        "fancnn: input R=" + std::to_string(xv.dim(3)) +
        " does not match the configured " + std::to_string(cfg_.r_samples));
  }
  if (xv.dim(2) != cfg_.n_theta) {
    throw std::invalid_argument("fancnn: input Theta axis mismatch");
  }
  Var h = stem1_(t, x);
  h = nn::relu(t, bn_stem1_(t, h, training));
  h = stem2_(t, h);
  h = nn::relu(t, bn_stem2_(t, h, training));
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    h = trunk_[i](t, h);
    h = nn::relu(t, bn_trunk_[i](t, h, training));
  }
  h = prefinal_(t, h);
  h = nn::leaky_relu(t, bn_prefinal_(t, h, training), cfg_.leaky_slope);
  // h: [B, C, Theta, 1, L]
  Var radii = head_radii_(t, h);
  Var logits = head_class_(t, h);
  const std::size_t B = t.val(radii).dim(0);
  const std::size_t L = t.val(radii).dim(4);
  radii = nn::reshape(t, radii, {B, cfg_.radii_outputs, cfg_.n_theta, L});
  logits = nn::reshape(t, logits, {B, cfg_.n_classes, cfg_.n_theta, L});
  Var probs = nn::softmax_channels(t, logits);
  return {radii, probs};
}

std::vector<nn::Parameter*> FanCnn::parameters() {
  std::vector<nn::Parameter*> out;
  stem1_.collect(out);
  bn_stem1_.collect(out);
  stem2_.collect(out);
  bn_stem2_.collect(out);
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    trunk_[i].collect(out);
    bn_trunk_[i].collect(out);
  }
  prefinal_.collect(out);
  bn_prefinal_.collect(out);
  head_radii_.collect(out);
  head_class_.collect(out);
  return out;
}

std::size_t FanCnn::parameter_count() {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

std::vector<std::pair<std::string, NdArray*>> FanCnn::named_tensors() {
  std::vector<std::pair<std::string, NdArray*>> out;
  for (nn::Parameter* p : parameters()) out.emplace_back(p->name, &p->value);
  auto add_bn = [&](nn::BatchNorm& bn, const std::string& name) {
    out.emplace_back(name + ".running_mean", &bn.running_mean);
    out.emplace_back(name + ".running_var", &bn.running_var);
  };
  add_bn(bn_stem1_, "bn_stem1");
  add_bn(bn_stem2_, "bn_stem2");
  for (std::size_t i = 0; i < bn_trunk_.size(); ++i)
    add_bn(bn_trunk_[i], "bn_trunk" + std::to_string(i));
  add_bn(bn_prefinal_, "bn_prefinal");
  return out;
}

void FanCnn::save(const std::string& path, const nlohmann::ordered_json& meta) {
  nlohmann::ordered_json m = meta;
  m["config"] = fancnn_config_to_json(cfg_);
  std::vector<std::pair<std::string, const NdArray*>> tensors;
  for (auto& [name, arr] : named_tensors()) tensors.emplace_back(name, arr);
  nn::save_checkpoint(path, tensors, m);
}

void FanCnn::load(const std::string& path) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  const FanCnnConfig stored = fancnn_config_from_json(ck.meta.at("config"));
  if (stored.n_theta != cfg_.n_theta || stored.r_samples != cfg_.r_samples ||
      stored.trunk_channels != cfg_.trunk_channels ||
      stored.n_conv3d != cfg_.n_conv3d) {
    throw std::runtime_error(
        "fancnn: checkpoint architecture does not match the configuration");
  }
  for (auto& [name, arr] : named_tensors()) {
    const NdArray& src = ck.tensor(name);
    if (!src.same_shape(*arr)) {
      throw std::runtime_error("fancnn: shape mismatch for tensor '" + name +
                               "'");
    }
    *arr = src;
  }
}

Var fancnn_loss(Tape& t, const FanCnn::Output& out,
                const FieldBatchTarget& target) {
  const NdArray& radii = t.val(out.radii);
  const NdArray& probs = t.val(out.class_probs);
  const std::size_t B = radii.dim(0);
  const std::size_t T = radii.dim(2);
  const std::size_t L = radii.dim(3);
  const std::size_t n_classes = probs.dim(1);
  const std::size_t K = B * T * L;
  if (!target.radii.same_shape(radii)) {
    throw std::invalid_argument("fancnn_loss: target radii shape mismatch");
  }
  if (target.cls.size() != K) {
    throw std::invalid_argument("fancnn_loss: target class count mismatch");
  }
  for (std::size_t i = 0; i < target.radii.size(); ++i) {
    if (!std::isfinite(target.radii[i])) {
      throw std::invalid_argument("fancnn_loss: non-finite target radius");
    }
  }

  // classification: one-hot cross entropy averaged over every vertex
  NdArray cls_weights({B, n_classes, T, L});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < T * L; ++i) {
      const std::uint8_t c = target.cls[b * T * L + i];
      if (c >= n_classes) {
        throw std::invalid_argument("fancnn_loss: class label out of range");
      }
      cls_weights[(b * n_classes + c) * T * L + i] =
          -1.0 / static_cast<double>(K);
    }
  }
  Var log_p = nn::log_clamped(t, out.class_probs, 1e-12);
  Var loss_cls = nn::weighted_sum(t, log_p, std::move(cls_weights));

  // lumen: mean squared radius error over all vertices (channel 0)
  Var diff = nn::sub(t, out.radii, t.constant(target.radii));
  NdArray lumen_mask({B, 3, T, L});
  for (std::size_t b = 0; b < B; ++b) {
    double* ch0 = lumen_mask.data() + b * 3 * T * L;
    for (std::size_t i = 0; i < T * L; ++i)
      ch0[i] = 1.0 / static_cast<double>(K);
  }
  Var loss_l = nn::weighted_sum(t, nn::square(t, diff), std::move(lumen_mask));

  // plaque terms: in-plaque mean absolute error plus plaque-free mean
  // predicted magnitude, the two halves normalized separately
  Var abs_diff = nn::abs_value(t, diff);
  Var abs_pred = nn::abs_value(t, out.radii);
  Var loss = nn::add(t, loss_cls, loss_l);
  for (std::size_t channel : {1UL, 2UL}) {
    std::size_t inside = 0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < T * L; ++i)
        if (target.radii[(b * 3 + channel) * T * L + i] > 0.0) ++inside;
    const std::size_t outside = K - inside;
    if (inside > 0) {
      NdArray w({B, 3, T, L});
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < T * L; ++i)
          if (target.radii[(b * 3 + channel) * T * L + i] > 0.0)
            w[(b * 3 + channel) * T * L + i] = 1.0 / static_cast<double>(inside);
      loss = nn::add(t, loss, nn::weighted_sum(t, abs_diff, std::move(w)));
    }
    if (outside > 0) {
      NdArray w({B, 3, T, L});
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < T * L; ++i)
          if (!(target.radii[(b * 3 + channel) * T * L + i] > 0.0))
            w[(b * 3 + channel) * T * L + i] =
                1.0 / static_cast<double>(outside);
      loss = nn::add(t, loss, nn::weighted_sum(t, abs_pred, std::move(w)));
    }
  }
  return loss;
}

geom::RadialField prediction_to_field(const RawPrediction& raw,
                                      double max_outer) {
  const std::size_t T = raw.radii.dim(1), L = raw.radii.dim(2);
  geom::RadialField f(T, L);
  for (std::size_t v = 0; v < T; ++v) {
    for (std::size_t z = 0; z < L; ++z) {
      const std::size_t i = v * L + z;
      double rl = std::max(0.0, raw.radii[0 * T * L + i]);
      double rcp = std::max(0.0, raw.radii[1 * T * L + i]);
      double rncp = std::max(0.0, raw.radii[2 * T * L + i]);
      rl = std::min(rl, max_outer);
      rncp = std::min(rncp, max_outer - rl);
      rcp = std::min(rcp, max_outer - rl - rncp);
      const std::size_t fi = f.idx(v, z);
      f.r_l[fi] = rl;
      f.r_cp[fi] = rcp;
      f.r_ncp[fi] = rncp;
    }
  }
  f.refresh_classes();
  return f;
}

namespace {

// connected components with theta wraparound over a boolean vertex mask;
// field indexing convention (v * L + z)
std::vector<int> components(const std::vector<bool>& mask, std::size_t T,
                            std::size_t L, int& count) {
  std::vector<int> comp(T * L, -1);
  count = 0;
  for (std::size_t start = 0; start < T * L; ++start) {
    if (!mask[start] || comp[start] >= 0) continue;
    const int id = count++;
    std::vector<std::size_t> stack{start};
    comp[start] = id;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      const std::size_t v = cur / L, z = cur % L;
      const std::size_t nbr[4] = {((v + 1) % T) * L + z,
                                  ((v + T - 1) % T) * L + z,
                                  z + 1 < L ? v * L + z + 1 : cur,
                                  z > 0 ? v * L + z - 1 : cur};
      for (std::size_t nb : nbr) {
        if (nb == cur || !mask[nb] || comp[nb] >= 0) continue;
        comp[nb] = id;
        stack.push_back(nb);
      }
    }
  }
  return comp;
}

}  // namespace

geom::RadialField classifier_attention(const RawPrediction& raw,
                                       double min_radius, double max_outer) {
  geom::RadialField f = prediction_to_field(raw, max_outer);
  const std::size_t T = f.n_theta(), L = f.length();
  const std::size_t n_classes = raw.class_probs.dim(0);

  std::vector<int> argmax(T * L, 0);
  for (std::size_t v = 0; v < T; ++v) {
    for (std::size_t z = 0; z < L; ++z) {
      const std::size_t pi = v * L + z;
      double best = raw.class_probs[pi];
      for (std::size_t c = 1; c < n_classes; ++c) {
        const double p = raw.class_probs[c * T * L + pi];
        if (p > best) {
          best = p;
          argmax[f.idx(v, z)] = static_cast<int>(c);
        }
      }
    }
  }

  // per type: the majority argmax class of each component decides its fate
  for (int type = 0; type < 2; ++type) {
    NdArray& radii = type == 0 ? f.r_cp : f.r_ncp;
    std::vector<bool> mask(T * L);
    for (std::size_t i = 0; i < T * L; ++i) mask[i] = radii[i] >= min_radius;
    int count = 0;
    const std::vector<int> comp = components(mask, T, L, count);
    std::vector<std::array<std::size_t, 4>> votes(
        static_cast<std::size_t>(count), {0, 0, 0, 0});
    for (std::size_t i = 0; i < T * L; ++i) {
      if (comp[i] >= 0)
        votes[static_cast<std::size_t>(
            comp[i])][static_cast<std::size_t>(argmax[i])]++;
    }
    std::vector<bool> clear(static_cast<std::size_t>(count), false);
    for (int c = 0; c < count; ++c) {
      const auto& v = votes[static_cast<std::size_t>(c)];
      std::size_t winner = 0;
      for (std::size_t cls = 1; cls < 4; ++cls) {
        if (v[cls] > v[winner]) winner = cls;  // ties keep the lower class
      }
      const auto no_plaque = static_cast<std::size_t>(geom::PlaqueClass::None);
      const auto cp_only = static_cast<std::size_t>(geom::PlaqueClass::CP);
      const auto ncp_only = static_cast<std::size_t>(geom::PlaqueClass::NCP);
      if (winner == no_plaque) {
        clear[static_cast<std::size_t>(c)] = true;
      } else if (type == 0 && winner == ncp_only) {
        clear[static_cast<std::size_t>(c)] = true;  // CP radii, NCP-only vote
      } else if (type == 1 && winner == cp_only) {
        clear[static_cast<std::size_t>(c)] = true;  // NCP radii, CP-only vote
      }
    }
    for (std::size_t i = 0; i < T * L; ++i) {
      if (comp[i] >= 0 && clear[static_cast<std::size_t>(comp[i])])
        radii[i] = 0.0;
    }
  }
  f.refresh_classes();
  return f;
}

}  // namespace tubemesh::fancnn
