#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "tubemesh/fancnn.hpp"
#include "tubemesh/metrics.hpp"

namespace tubemesh::fancnn {

struct TrainConfig {
  nn::OptimizerConfig optimizer =
      [] {
        nn::OptimizerConfig c;
        c.learning_rate = 0.01;
        c.weight_decay = 0.01;
        c.milestones = {300, 400, 500};
        return c;
      }();
  int epochs = 600;  // one balanced batch per epoch
  int batch = 32;
  double jitter_mm = 0.6;
  double flip_prob = 0.5;
  int patch_slices = 21;  // 10 mm at dz 0.5
  int holdout = 0;        // entries reserved from the corpus tail
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg);

// In-memory corpus with per-category patch-center index.
struct LoadedCorpus {
  phantom::CorpusManifest manifest;
  std::vector<geom::MprVolume> mprs;
  std::vector<geom::RadialField> truths;
  std::vector<std::size_t> train_items;
  std::vector<std::size_t> holdout_items;
  // (phantom, slice) sites per category over the training split
  std::array<std::vector<std::pair<std::size_t, std::size_t>>, 4> sites;
  double dz = 0.5;
};

LoadedCorpus load_corpus(const std::string& dir, int holdout);

// Rebuilds the per-category (phantom, slice) site index over train_items.
void build_category_index(LoadedCorpus& corpus);

struct Patch {
  NdArray input;  // [1, Theta, R, Lp]
  NdArray radii;  // [3, Theta, Lp]
  std::vector<std::uint8_t> cls;
};

// Balanced-category patch with centerline jitter and theta/z flips.
Patch sample_patch(const LoadedCorpus& corpus, int category, Rng& rng,
                   const FanCnnConfig& cfg, const TrainConfig& train);

struct TrainRunResult {
  std::vector<double> loss_curve;
  std::uint64_t seed = 0;
};

TrainRunResult train_one(FanCnn& model, const LoadedCorpus& corpus,
                         const TrainConfig& train, std::uint64_t seed);

// Trains `seeds` independently seeded models and writes model_s<i>.tmnn plus
// ensemble.json into out_dir.
void train_ensemble(const std::string& corpus_dir, const FanCnnConfig& cfg,
                    const TrainConfig& train, int seeds,
                    std::uint64_t base_seed, const std::string& out_dir);

class Ensemble {
 public:
  static Ensemble load(const std::string& dir);
  Ensemble() = default;

  const FanCnnConfig& config() const { return cfg_; }
  std::size_t size() const { return members_.size(); }
  std::vector<FanCnn>& members() { return members_; }

  // Whole-artery single pass; head outputs averaged across members.
  RawPrediction predict(const geom::MprVolume& mpr) const;
  RawPrediction predict_cyl(const geom::CylindricalVolume& cyl) const;

 private:
  FanCnnConfig cfg_;
  mutable std::vector<FanCnn> members_;
};

struct EvalResult {
  double lumen_mae = 0.0;
  double icc_cp = 0.0, icc_ncp = 0.0, icc_total = 0.0;
  metrics::LesionStats cp, ncp, total;          // with classifier attention
  metrics::LesionStats cp_raw, ncp_raw, total_raw;  // without
  std::size_t n_arteries = 0;
};

// Held-out evaluation: ensemble inference, classifier attention, lesion
// detection against the stored truth fields.
EvalResult evaluate(const Ensemble& ensemble, const LoadedCorpus& corpus,
                    const std::vector<std::size_t>& items);

}  // namespace tubemesh::fancnn
