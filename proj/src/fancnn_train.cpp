#include "tubemesh/fancnn_train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "tubemesh/formats.hpp"
#include "tubemesh/parallel.hpp"

namespace tubemesh::fancnn {

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  static const char* keys[] = {"optimizer", "epochs",       "batch",
                               "jitter_mm", "flip_prob",    "patch_slices",
                               "holdout"};
  for (const auto& [key, val] : j.items()) {
    if (std::find_if(std::begin(keys), std::end(keys), [&](const char* k) {
          return key == k;
        }) == std::end(keys)) {
      throw std::invalid_argument("fancnn train config: unknown key '" + key +
                                  "'");
    }
    (void)val;
  }
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    static const char* okeys[] = {"learning_rate", "weight_decay", "beta1",
                                  "beta2",         "epsilon",      "milestones",
                                  "gamma"};
    for (const auto& [key, val] : o.items()) {
      if (std::find_if(std::begin(okeys), std::end(okeys), [&](const char* k) {
            return key == k;
          }) == std::end(okeys)) {
        throw std::invalid_argument("optimizer config: unknown key '" + key +
                                    "'");
      }
      (void)val;
    }
    if (o.contains("learning_rate"))
      cfg.optimizer.learning_rate = o["learning_rate"].get<double>();
    if (o.contains("weight_decay"))
      cfg.optimizer.weight_decay = o["weight_decay"].get<double>();
    if (o.contains("beta1")) cfg.optimizer.beta1 = o["beta1"].get<double>();
    if (o.contains("beta2")) cfg.optimizer.beta2 = o["beta2"].get<double>();
    if (o.contains("epsilon"))
      cfg.optimizer.epsilon = o["epsilon"].get<double>();
    if (o.contains("milestones"))
      cfg.optimizer.milestones = o["milestones"].get<std::vector<int>>();
    if (o.contains("gamma")) cfg.optimizer.gamma = o["gamma"].get<double>();
  }
  if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
  if (j.contains("batch")) cfg.batch = j["batch"].get<int>();
  if (j.contains("jitter_mm")) cfg.jitter_mm = j["jitter_mm"].get<double>();
  if (j.contains("flip_prob")) cfg.flip_prob = j["flip_prob"].get<double>();
  if (j.contains("patch_slices"))
    cfg.patch_slices = j["patch_slices"].get<int>();
  if (j.contains("holdout")) cfg.holdout = j["holdout"].get<int>();
  cfg.optimizer.validate();
  if (cfg.batch < 4 || cfg.batch % 4 != 0) {
    throw std::invalid_argument(
        "fancnn train config: batch must be a positive multiple of 4");
  }
  if (cfg.patch_slices < 1 || cfg.patch_slices % 2 == 0) {
    throw std::invalid_argument(
        "fancnn train config: patch_slices must be odd");
  }
  return cfg;
}

nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json o;
  o["learning_rate"] = cfg.optimizer.learning_rate;
  o["weight_decay"] = cfg.optimizer.weight_decay;
  o["beta1"] = cfg.optimizer.beta1;
  o["beta2"] = cfg.optimizer.beta2;
  o["epsilon"] = cfg.optimizer.epsilon;
  o["milestones"] = cfg.optimizer.milestones;
  o["gamma"] = cfg.optimizer.gamma;
  nlohmann::ordered_json j;
  j["optimizer"] = std::move(o);
  j["epochs"] = cfg.epochs;
  j["batch"] = cfg.batch;
  j["jitter_mm"] = cfg.jitter_mm;
  j["flip_prob"] = cfg.flip_prob;
  j["patch_slices"] = cfg.patch_slices;
  j["holdout"] = cfg.holdout;
  return j;
}

LoadedCorpus load_corpus(const std::string& dir, int holdout) {
  LoadedCorpus corpus;
  corpus.manifest = phantom::load_manifest(dir);
  corpus.dz = corpus.manifest.dz;
  const std::size_t n = corpus.manifest.phantoms.size();
  if (holdout < 0 || static_cast<std::size_t>(holdout) >= n) {
    throw std::invalid_argument("load_corpus: holdout outside corpus size");
  }
  corpus.mprs.resize(n);
  corpus.truths.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& e = corpus.manifest.phantoms[i];
    if (!e.mpr_path.empty()) {
      corpus.mprs[i] = geom::read_mpr(dir + "/" + e.mpr_path);
    }
    corpus.truths[i] = geom::read_field_csv(dir + "/" + e.truth_csv);
  });
  const std::size_t n_train = n - static_cast<std::size_t>(holdout);
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? corpus.train_items : corpus.holdout_items).push_back(i);
  }
  for (std::size_t i : corpus.train_items) {
    if (corpus.mprs[i].voxels.empty()) {
      throw std::invalid_argument(
          "load_corpus: training requires MPR volumes (corpus written with "
          "MPRs disabled?)");
    }
  }
  build_category_index(corpus);
  return corpus;
}

void build_category_index(LoadedCorpus& corpus) {
  for (auto& s : corpus.sites) s.clear();
  for (std::size_t i : corpus.train_items) {
    const auto& f = corpus.truths[i];
    for (std::size_t z = 0; z < f.length(); ++z) {
      bool has[4] = {false, false, false, false};
      bool any_plaque = false;
      for (std::size_t v = 0; v < f.n_theta(); ++v) {
        const std::uint8_t c = f.plaque_class[f.idx(v, z)];
        has[c] = true;
        any_plaque |= (c != 0);
      }
      if (!any_plaque) corpus.sites[0].emplace_back(i, z);
      if (has[1]) corpus.sites[1].emplace_back(i, z);
      if (has[2]) corpus.sites[2].emplace_back(i, z);
      if (has[3]) corpus.sites[3].emplace_back(i, z);
    }
  }
}

namespace {

std::size_t mirror_slice(long z, long L) {
  if (L == 1) return 0;
  long m = z;
  while (m < 0 || m >= L) {
    if (m < 0) m = -m;
    if (m >= L) m = 2 * (L - 1) - m;
  }
  return static_cast<std::size_t>(m);
}

struct PatchPlan {
  std::size_t item = 0;
  std::vector<std::size_t> window;
  double ox = 0.0, oy = 0.0;
  bool flip_theta = false, flip_z = false;
};

PatchPlan plan_patch(const LoadedCorpus& corpus, int category, Rng& rng,
                     const TrainConfig& train) {
  const auto& sites = corpus.sites[static_cast<std::size_t>(category)];
  if (sites.empty()) {
    static const char* names[4] = {"none", "CP", "NCP", "mixed"};
    throw std::invalid_argument(std::string("sample_patch: category '") +
                                names[category] +
                                "' is absent from the training corpus");
  }
  PatchPlan plan;
  const auto& [item, center] = sites[rng.integer(sites.size())];
  plan.item = item;
  const geom::RadialField& truth = corpus.truths[item];
  const long L = static_cast<long>(truth.length());
  const int half = (train.patch_slices - 1) / 2;
  for (int d = -half; d <= half; ++d) {
    plan.window.push_back(mirror_slice(static_cast<long>(center) + d, L));
  }
  // in-plane jitter, kept strictly inside the lumen across the window
  if (train.jitter_mm > 0.0) {
    const double ang = rng.uniform(0.0, 2.0 * geom::kPi);
    double mag = train.jitter_mm * std::sqrt(rng.uniform());
    for (int attempt = 0; attempt < 6; ++attempt) {
      const double ox = mag * std::cos(ang), oy = mag * std::sin(ang);
      bool ok = true;
      for (std::size_t z : plan.window) {
        if (!geom::origin_inside_lumen(truth, z, ox, oy, 0.05)) {
          ok = false;
          break;
        }
      }
      if (ok) {
        plan.ox = ox;
        plan.oy = oy;
        break;
      }
      mag *= 0.5;
    }
  }
  plan.flip_theta = rng.bernoulli(train.flip_prob);
  plan.flip_z = rng.bernoulli(train.flip_prob);
  return plan;
}

Patch materialize_patch(const LoadedCorpus& corpus, const PatchPlan& plan,
                        const FanCnnConfig& cfg) {
  const geom::MprVolume& mpr = corpus.mprs[plan.item];
  const geom::RadialField& truth = corpus.truths[plan.item];
  const std::size_t T = cfg.n_theta, R = cfg.r_samples;
  const std::size_t W = plan.window.size();

  geom::CylindricalVolume cyl =
      geom::unwrap_slices(mpr, plan.window, T, R, cfg.dr, plan.ox, plan.oy);

  // window truth, reprojected to the jittered origin
  geom::RadialField window(truth.n_theta(), W);
  for (std::size_t w = 0; w < W; ++w) {
    const std::size_t z = plan.window[w];
    for (std::size_t v = 0; v < truth.n_theta(); ++v) {
      const std::size_t src = truth.idx(v, z);
      const std::size_t dst = window.idx(v, w);
      window.r_l[dst] = truth.r_l[src];
      window.r_cp[dst] = truth.r_cp[src];
      window.r_ncp[dst] = truth.r_ncp[src];
    }
  }
  window.refresh_classes();
  geom::RadialField target = (plan.ox != 0.0 || plan.oy != 0.0)
                                 ? geom::reproject(window, plan.ox, plan.oy)
                                 : window;

  Patch patch;
  patch.input = NdArray({1, T, R, W});
  patch.radii = NdArray({3, T, W});
  patch.cls.assign(T * W, 0);
  for (std::size_t v = 0; v < T; ++v) {
    const std::size_t sv = plan.flip_theta ? (T - v) % T : v;
    for (std::size_t w = 0; w < W; ++w) {
      const std::size_t sw = plan.flip_z ? W - 1 - w : w;
      for (std::size_t k = 0; k < R; ++k) {
        patch.input[(v * R + k) * W + w] = cyl.samples[(sv * R + k) * W + sw];
      }
      const std::size_t src = target.idx(sv, sw);
      patch.radii[(0 * T + v) * W + w] = target.r_l[src];
      patch.radii[(1 * T + v) * W + w] = target.r_cp[src];
      patch.radii[(2 * T + v) * W + w] = target.r_ncp[src];
      patch.cls[v * W + w] = target.plaque_class[src];
    }
  }
  return patch;
}

}  // namespace

Patch sample_patch(const LoadedCorpus& corpus, int category, Rng& rng,
                   const FanCnnConfig& cfg, const TrainConfig& train) {
  if (category < 0 || category > 3) {
    throw std::invalid_argument("sample_patch: category must be 0..3");
  }
  const PatchPlan plan = plan_patch(corpus, category, rng, train);
  return materialize_patch(corpus, plan, cfg);
}

TrainRunResult train_one(FanCnn& model, const LoadedCorpus& corpus,
                         const TrainConfig& train, std::uint64_t seed) {
  for (int c = 0; c < 4; ++c) {
    if (corpus.sites[static_cast<std::size_t>(c)].empty()) {
      static const char* names[4] = {"none", "CP", "NCP", "mixed"};
      throw std::invalid_argument(
          std::string("fancnn train: corpus lacks category '") + names[c] +
          "'");
    }
  }
  const FanCnnConfig& cfg = model.config();
  nn::AdamW opt(model.parameters(), train.optimizer);
  Rng rng = Rng(seed).substream(0x7A);

  TrainRunResult result;
  result.seed = seed;
  const int per_category = train.batch / 4;
  const std::size_t T = cfg.n_theta, R = cfg.r_samples;
  const std::size_t W = static_cast<std::size_t>(train.patch_slices);

  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    std::vector<PatchPlan> plans;
    plans.reserve(static_cast<std::size_t>(train.batch));
    for (int c = 0; c < 4; ++c) {
      for (int i = 0; i < per_category; ++i) {
        plans.push_back(plan_patch(corpus, c, rng, train));
      }
    }
    const std::size_t B = plans.size();
    NdArray input({B, 1, T, R, W});
    FieldBatchTarget target;
    target.radii = NdArray({B, 3, T, W});
    target.cls.assign(B * T * W, 0);
    {
      std::vector<Patch> patches(B);
      parallel_for(B, [&](std::size_t b) {
        patches[b] = materialize_patch(corpus, plans[b], cfg);
      });
      for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(patches[b].input.data(), T * R * W,
                    input.data() + b * T * R * W);
        std::copy_n(patches[b].radii.data(), 3 * T * W,
                    target.radii.data() + b * 3 * T * W);
        std::copy_n(patches[b].cls.begin(), T * W,
                    target.cls.begin() + b * T * W);
      }
    }

    nn::Tape tape;
    FanCnn::Output out = model.forward(tape, tape.constant(std::move(input)),
                                       /*training=*/true);
    nn::Var loss = fancnn_loss(tape, out, target);
    const double loss_value = tape.val(loss)[0];
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("fancnn train: loss diverged at epoch " +
                               std::to_string(epoch) + " (seed " +
                               std::to_string(seed) + ")");
    }
    opt.zero_grad();
    try {
      tape.backward(loss);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(e.what()) + " (seed " +
                               std::to_string(seed) + ")");
    }
    opt.step(epoch);
    result.loss_curve.push_back(loss_value);
  }
  return result;
}

void train_ensemble(const std::string& corpus_dir, const FanCnnConfig& cfg,
                    const TrainConfig& train, int seeds,
                    std::uint64_t base_seed, const std::string& out_dir) {
  if (seeds < 1) throw std::invalid_argument("train_ensemble: seeds < 1");
  LoadedCorpus corpus = load_corpus(corpus_dir, train.holdout);
  std::filesystem::create_directories(out_dir);

  nlohmann::ordered_json ensemble;
  ensemble["config"] = fancnn_config_to_json(cfg);
  ensemble["train"] = train_config_to_json(train);
  ensemble["base_seed"] = base_seed;
  ensemble["members"] = nlohmann::ordered_json::array();

  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = mix_seed(base_seed, 0xE500 + s);
    Rng init(seed);
    FanCnnConfig member_cfg = cfg;
    FanCnn model(member_cfg, init);
    TrainRunResult run = train_one(model, corpus, train, seed);
    char name[32];
    std::snprintf(name, sizeof(name), "model_s%d.tmnn", s);
    nlohmann::ordered_json meta;
    meta["seed"] = seed;
    meta["epoch"] = train.epochs;
    meta["final_loss"] = run.loss_curve.empty() ? 0.0 : run.loss_curve.back();
    model.save(out_dir + "/" + name, meta);
    nlohmann::ordered_json member;
    member["file"] = name;
    member["seed"] = seed;
    ensemble["members"].push_back(std::move(member));
  }
  std::ofstream f(out_dir + "/ensemble.json", std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write ensemble.json");
  f << ensemble.dump(2) << "\n";
}

Ensemble Ensemble::load(const std::string& dir) {
  std::ifstream f(dir + "/ensemble.json");
  if (!f) throw std::runtime_error("no ensemble.json in " + dir);
  nlohmann::json j;
  f >> j;
  Ensemble e;
  e.cfg_ = fancnn_config_from_json(j.at("config"));
  for (const auto& member : j.at("members")) {
    Rng dummy(0);
    FanCnnConfig cfg = e.cfg_;
    FanCnn model(cfg, dummy);
    model.load(dir + "/" + member.at("file").get<std::string>());
    e.members_.push_back(std::move(model));
  }
  if (e.members_.empty()) {
    throw std::runtime_error("ensemble has no members: " + dir);
  }
  return e;
}

RawPrediction Ensemble::predict_cyl(const geom::CylindricalVolume& cyl) const {
  const std::size_t T = cfg_.n_theta, R = cfg_.r_samples;
  if (cyl.n_theta != T || cyl.r_samples() != R) {
    throw std::invalid_argument("ensemble: cylindrical grid mismatch");
  }
  const std::size_t L = cyl.length();
  RawPrediction avg;
  avg.radii = NdArray({cfg_.radii_outputs, T, L});
  avg.class_probs = NdArray({cfg_.n_classes, T, L});
  for (FanCnn& model : members_) {
    NdArray input(
        {1, 1, T, R, L},
        std::vector<double>(cyl.samples.data(),
                            cyl.samples.data() + cyl.samples.size()));
    nn::Tape tape;
    FanCnn::Output out =
        model.forward(tape, tape.constant(std::move(input)), false);
    const NdArray& radii = tape.val(out.radii);
    const NdArray& probs = tape.val(out.class_probs);
    for (std::size_t i = 0; i < avg.radii.size(); ++i) avg.radii[i] += radii[i];
    for (std::size_t i = 0; i < avg.class_probs.size(); ++i)
      avg.class_probs[i] += probs[i];
  }
  const double inv = 1.0 / static_cast<double>(members_.size());
  for (std::size_t i = 0; i < avg.radii.size(); ++i) avg.radii[i] *= inv;
  for (std::size_t i = 0; i < avg.class_probs.size(); ++i)
    avg.class_probs[i] *= inv;
  return avg;
}

RawPrediction Ensemble::predict(const geom::MprVolume& mpr) const {
  const geom::CylindricalVolume cyl =
      geom::unwrap(mpr, cfg_.n_theta, cfg_.r_samples, cfg_.dr);
  return predict_cyl(cyl);
}

EvalResult evaluate(const Ensemble& ensemble, const LoadedCorpus& corpus,
                    const std::vector<std::size_t>& items) {
  const FanCnnConfig& cfg = ensemble.config();
  const double max_outer = static_cast<double>(cfg.r_samples) * cfg.dr;

  EvalResult result;
  result.n_arteries = items.size();
  std::vector<std::vector<geom::Lesion>> truth_cp, truth_ncp, truth_total;
  std::vector<std::vector<geom::Lesion>> pred_cp, pred_ncp, pred_total;
  std::vector<std::vector<geom::Lesion>> raw_cp, raw_ncp, raw_total;

  double abs_err = 0.0;
  std::size_t n_vertices = 0;
  for (std::size_t item : items) {
    if (corpus.mprs[item].voxels.empty()) {
      throw std::invalid_argument("evaluate: item lacks an MPR volume");
    }
    const RawPrediction raw = ensemble.predict(corpus.mprs[item]);
    const geom::RadialField with_ca =
        classifier_attention(raw, cfg.ca_min_radius, max_outer);
    const geom::RadialField without_ca = prediction_to_field(raw, max_outer);
    const geom::RadialField& truth = corpus.truths[item];

    for (std::size_t i = 0; i < truth.r_l.size(); ++i) {
      abs_err += std::fabs(with_ca.r_l[i] - truth.r_l[i]);
    }
    n_vertices += truth.r_l.size();

    const double min_r = cfg.ca_min_radius;
    const double dz = corpus.dz;
    truth_cp.push_back(
        geom::extract_lesions(truth, geom::PlaqueKind::CP, min_r, dz));
    truth_ncp.push_back(
        geom::extract_lesions(truth, geom::PlaqueKind::NCP, min_r, dz));
    truth_total.push_back(
        geom::extract_lesions(truth, geom::PlaqueKind::Total, min_r, dz));
    pred_cp.push_back(
        geom::extract_lesions(with_ca, geom::PlaqueKind::CP, min_r, dz));
    pred_ncp.push_back(
        geom::extract_lesions(with_ca, geom::PlaqueKind::NCP, min_r, dz));
    pred_total.push_back(
        geom::extract_lesions(with_ca, geom::PlaqueKind::Total, min_r, dz));
    raw_cp.push_back(
        geom::extract_lesions(without_ca, geom::PlaqueKind::CP, min_r, dz));
    raw_ncp.push_back(
        geom::extract_lesions(without_ca, geom::PlaqueKind::NCP, min_r, dz));
    raw_total.push_back(
        geom::extract_lesions(without_ca, geom::PlaqueKind::Total, min_r, dz));
  }
  result.lumen_mae =
      n_vertices == 0 ? 0.0 : abs_err / static_cast<double>(n_vertices);
  result.cp = metrics::lesion_detection(truth_cp, pred_cp);
  result.ncp = metrics::lesion_detection(truth_ncp, pred_ncp);
  result.total = metrics::lesion_detection(truth_total, pred_total);
  result.cp_raw = metrics::lesion_detection(truth_cp, raw_cp);
  result.ncp_raw = metrics::lesion_detection(truth_ncp, raw_ncp);
  result.total_raw = metrics::lesion_detection(truth_total, raw_total);
  auto icc_or_zero = [](const metrics::LesionStats& s) {
    return s.matched_volumes.size() >= 2 ? metrics::icc(s.matched_volumes)
                                         : 0.0;
  };
  result.icc_cp = icc_or_zero(result.cp);
  result.icc_ncp = icc_or_zero(result.ncp);
  result.icc_total = icc_or_zero(result.total);
  return result;
}

}  // namespace tubemesh::fancnn
