#include "tubemesh/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "tubemesh/formats.hpp"
#include "tubemesh/parallel.hpp"

namespace tubemesh::phantom {

using geom::kPi;
using geom::PlaqueClass;

namespace {

// raised cosine bump: 1 at u=0, 0 at |u|>=1, smooth
double bump(double u) {
  const double a = std::fabs(u);
  if (a >= 1.0) return 0.0;
  return 0.5 * (1.0 + std::cos(kPi * a));
}

double ang_dist(double a, double b) {
  double d = std::fmod(a - b, 2.0 * kPi);
  if (d < -kPi) d += 2.0 * kPi;
  if (d > kPi) d -= 2.0 * kPi;
  return d;
}

// Analytic vessel model: baseline radius profile, per-lesion intrusion
// amplitudes (solved), and shell thickness fields.
struct Model {
  const PhantomSpec& spec;
  std::vector<double> intrusion;  // per lesion, fraction of baseline radius

  double baseline(double z_mm) const {
    return spec.base_radius - spec.taper * z_mm +
           spec.wobble_amp * std::sin(2.0 * kPi * z_mm / spec.wobble_period +
                                      spec.wobble_phase);
  }

  double lesion_weight(const LesionSpec& l, double theta, double z_mm) const {
    const double axial = bump((z_mm - l.z_center) / l.z_halfwidth);
    const double d = std::fabs(ang_dist(theta, l.arc_center));
    double angular;
    if (l.arc_plateau >= kPi || d <= l.arc_plateau) {
      angular = 1.0;
    } else if (l.arc_halfwidth <= l.arc_plateau) {
      angular = 0.0;
    } else {
      angular = bump((d - l.arc_plateau) / (l.arc_halfwidth - l.arc_plateau));
    }
    return axial * angular;
  }

  double lumen_radius(double theta, double z_mm) const {
    double shrink = 0.0;
    for (std::size_t i = 0; i < spec.lesions.size(); ++i) {
      shrink += intrusion[i] * lesion_weight(spec.lesions[i], theta, z_mm);
    }
    return baseline(z_mm) * std::max(0.0, 1.0 - shrink);
  }

  double ncp_thickness(double theta, double z_mm) const {
    double t = 0.0;
    for (const auto& l : spec.lesions) {
      if (l.ncp_thickness > 0.0)
        t += l.ncp_thickness * lesion_weight(l, theta, z_mm);
    }
    return t;
  }

  double cp_thickness(double theta, double z_mm) const {
    double t = 0.0;
    for (const auto& l : spec.lesions) {
      if (l.cp_thickness > 0.0)
        t += l.cp_thickness * lesion_weight(l, theta, z_mm);
    }
    return t;
  }
};

// polygon area of the lumen cross-section at slice position z
double lumen_polygon_area(const Model& m, double z_mm, std::size_t n_theta) {
  const double dth = 2.0 * kPi / static_cast<double>(n_theta);
  double acc = 0.0;
  double first = m.lumen_radius(0.0, z_mm);
  double prev = first;
  for (std::size_t v = 1; v < n_theta; ++v) {
    const double r = m.lumen_radius(dth * static_cast<double>(v), z_mm);
    acc += prev * r;
    prev = r;
  }
  acc += prev * first;
  return 0.5 * std::sin(dth) * acc;
}

double reference_polygon_area(const Model& m, double z_mm,
                              std::size_t n_theta) {
  const double r = m.baseline(z_mm);
  const double dth = 2.0 * kPi / static_cast<double>(n_theta);
  return 0.5 * static_cast<double>(n_theta) * std::sin(dth) * r * r;
}

// Solve each stenotic lesion's intrusion amplitude so the lumen narrowing at
// the lesion center hits the target percentage of the reference area.
void solve_intrusions(Model& m, std::size_t n_theta) {
  const auto& lesions = m.spec.lesions;
  m.intrusion.assign(lesions.size(), 0.0);
  for (std::size_t i = 0; i < lesions.size(); ++i) {
    const double target = lesions[i].target_stenosis;
    if (target <= 0.0) continue;
    const double z = lesions[i].z_center;
    auto stenosis_at = [&](double amp) {
      m.intrusion[i] = amp;
      const double ratio = lumen_polygon_area(m, z, n_theta) /
                           reference_polygon_area(m, z, n_theta);
      return 100.0 * (1.0 - ratio);
    };
    double lo = 0.0, hi = 1.0;
    if (stenosis_at(hi) < target) {
      throw std::invalid_argument("phantom: lesion target stenosis unreachable");
    }
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (stenosis_at(mid) < target) lo = mid;
      else hi = mid;
    }
    m.intrusion[i] = 0.5 * (lo + hi);
  }
}

}  // namespace

void PhantomSpec::validate() const {
  if (n_slices < 2) throw std::invalid_argument("phantom: need >= 2 slices");
  if (dz <= 0 || base_radius <= 0 || in_plane_spacing <= 0) {
    throw std::invalid_argument("phantom: non-positive geometry parameter");
  }
  const double len = length_mm();
  for (const auto& l : lesions) {
    if (l.z_center - l.z_halfwidth < -1e-9 ||
        l.z_center + l.z_halfwidth > len + 1e-9) {
      throw std::invalid_argument("phantom: lesion outside the vessel length");
    }
    if (l.z_halfwidth <= 0 || l.arc_halfwidth <= 0) {
      throw std::invalid_argument("phantom: lesion extents must be positive");
    }
    if (l.arc_plateau < 0 ||
        (l.arc_plateau < kPi && l.arc_plateau >= l.arc_halfwidth)) {
      throw std::invalid_argument(
          "phantom: arc plateau must stay inside the arc halfwidth");
    }
    if (l.cp_thickness < 0 || l.ncp_thickness < 0) {
      throw std::invalid_argument("phantom: negative shell thickness");
    }
    switch (l.type) {
      case PlaqueClass::CP:
        if (l.cp_thickness <= 0 || l.ncp_thickness != 0)
          throw std::invalid_argument("phantom: CP lesion shell mismatch");
        break;
      case PlaqueClass::NCP:
        if (l.ncp_thickness <= 0 || l.cp_thickness != 0)
          throw std::invalid_argument("phantom: NCP lesion shell mismatch");
        break;
      case PlaqueClass::Mixed:
        if (l.ncp_thickness <= 0 || l.cp_thickness <= 0)
          throw std::invalid_argument(
              "phantom: mixed lesion needs both shells");
        break;
      default:
        throw std::invalid_argument("phantom: lesion type cannot be None");
    }
    if (l.target_stenosis < 0 || l.target_stenosis > 97.0) {
      throw std::invalid_argument(
          "phantom: target stenosis must lie in [0, 97] percent");
    }
  }
}

int stenosis_to_grade(double s) {
  if (s < 0.0 || s > 100.0) {
    throw std::invalid_argument("stenosis_to_grade: input outside [0, 100]");
  }
  if (s == 0.0) return 0;
  if (s < 25.0) return 1;
  if (s < 50.0) return 2;
  if (s < 70.0) return 3;
  if (s < 100.0) return 4;
  return 5;
}

std::vector<double> stenosis_profile(
    const std::vector<double>& lumen_area,
    const std::vector<double>& reference_area) {
  if (lumen_area.size() != reference_area.size()) {
    throw std::invalid_argument("stenosis_profile: length mismatch");
  }
  std::vector<double> out(lumen_area.size());
  for (std::size_t z = 0; z < lumen_area.size(); ++z) {
    if (reference_area[z] <= 0.0) {
      throw std::invalid_argument(
          "stenosis_profile: reference area must be positive");
    }
    double s = 100.0 * (1.0 - lumen_area[z] / reference_area[z]);
    if (std::fabs(s) < 1e-9) s = 0.0;  // drop floating-point dust
    out[z] = std::clamp(s, 0.0, 100.0);
  }
  return out;
}

Phantom generate(const PhantomSpec& spec, std::size_t n_theta,
                 bool rasterize_mpr) {
  spec.validate();
  Model model{spec, {}};
  solve_intrusions(model, n_theta);

  const std::size_t L = spec.n_slices;
  const double dth = 2.0 * kPi / static_cast<double>(n_theta);

  Phantom out;
  PhantomTruth& truth = out.truth;
  truth.field = geom::RadialField(n_theta, L);
  truth.reference_area.resize(L);

  double min_lumen = INFINITY, max_outer = 0.0;
  for (std::size_t z = 0; z < L; ++z) {
    const double z_mm = static_cast<double>(z) * spec.dz;
    truth.reference_area[z] = reference_polygon_area(model, z_mm, n_theta);
    for (std::size_t v = 0; v < n_theta; ++v) {
      const double theta = dth * static_cast<double>(v);
      const std::size_t i = truth.field.idx(v, z);
      truth.field.r_l[i] = model.lumen_radius(theta, z_mm);
      truth.field.r_ncp[i] = model.ncp_thickness(theta, z_mm);
      truth.field.r_cp[i] = model.cp_thickness(theta, z_mm);
      min_lumen = std::min(min_lumen, truth.field.r_l[i]);
      max_outer = std::max(max_outer, truth.field.outer(v, z));
    }
  }
  if (min_lumen < 0.3 - 1e-9) {
    throw std::invalid_argument(
        "phantom: lumen radius fell below 0.3 mm (got " +
        std::to_string(min_lumen) + ")");
  }
  if (max_outer > 6.2 + 1e-9) {
    throw std::invalid_argument("phantom: outer wall exceeds 6.2 mm");
  }
  truth.field.refresh_classes();

  const geom::AreaSignalSet areas = geom::cross_section_areas(truth.field);
  truth.stenosis_percent = stenosis_profile(areas.a_l, truth.reference_area);
  truth.max_stenosis = *std::max_element(truth.stenosis_percent.begin(),
                                         truth.stenosis_percent.end());
  truth.grade = stenosis_to_grade(truth.max_stenosis);

  if (rasterize_mpr) {
    const std::size_t S = spec.mpr_size;
    out.mpr = geom::MprVolume(S, S, L, spec.in_plane_spacing, spec.dz);
    const double c = 0.5 * static_cast<double>(S - 1);

    // noise drawn in a fixed order so the volume is identical no matter how
    // the fill is parallelized
    std::vector<float> noise;
    const bool any_spread =
        spec.palette.lumen_spread > 0 || spec.palette.wall_spread > 0 ||
        spec.palette.cp_spread > 0 || spec.palette.ncp_spread > 0 ||
        spec.palette.background_spread > 0;
    if (spec.noise_sigma > 0.0 || any_spread) {
      Rng noise_rng = Rng(spec.seed).substream(0xA01);
      noise.resize(S * S * L * 2);
      for (auto& n : noise) n = static_cast<float>(noise_rng.normal());
    }

    parallel_for(L, [&](std::size_t z) {
      const double z_mm = static_cast<double>(z) * spec.dz;
      for (std::size_t x = 0; x < S; ++x) {
        for (std::size_t y = 0; y < S; ++y) {
          const double px =
              (static_cast<double>(x) - c) * spec.in_plane_spacing;
          const double py =
              (static_cast<double>(y) - c) * spec.in_plane_spacing;
          const double rho = std::hypot(px, py);
          const double phi = std::atan2(py, px);
          const double b1 = model.lumen_radius(phi, z_mm);
          const double b2 = b1 + model.ncp_thickness(phi, z_mm);
          const double b3 = b2 + model.cp_thickness(phi, z_mm);
          double mean, spread;
          if (rho < b1) {
            mean = spec.palette.lumen;
            spread = spec.palette.lumen_spread;
          } else if (rho < b2) {
            mean = spec.palette.ncp;
            spread = spec.palette.ncp_spread;
          } else if (rho < b3) {
            mean = spec.palette.cp;
            spread = spec.palette.cp_spread;
          } else if (rho < b3 + spec.wall_thickness) {
            mean = spec.palette.wall;
            spread = spec.palette.wall_spread;
          } else {
            mean = spec.palette.background;
            spread = spec.palette.background_spread;
          }
          double hu = mean;
          if (!noise.empty()) {
            const std::size_t ni = ((x * S + y) * L + z) * 2;
            hu += spread * noise[ni] + spec.noise_sigma * noise[ni + 1];
          }
          out.mpr.at(x, y, z) = static_cast<float>(hu);
        }
      }
    });
  }
  return out;
}

namespace {

bool spec_feasible(const PhantomSpec& spec, std::size_t n_theta) {
  try {
    generate(spec, n_theta, false);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

PhantomSpec draw_phantom_spec(Rng& rng, int target_grade,
                              const CorpusOptions& options) {
  PhantomSpec spec;
  spec.n_slices = options.min_slices +
                  rng.integer(options.max_slices - options.min_slices + 1);
  spec.base_radius =
      target_grade >= 4 ? rng.uniform(2.0, 2.4) : rng.uniform(1.7, 2.4);
  spec.taper = rng.uniform(0.0, 0.012);
  spec.wobble_amp = rng.uniform(0.0, 0.08);
  spec.wobble_period = rng.uniform(8.0, 16.0);
  spec.wobble_phase = rng.uniform(0.0, 2.0 * kPi);
  spec.seed = rng.bits();

  auto draw_type = [&]() {
    const std::uint64_t pick = rng.integer(3);
    return pick == 0 ? PlaqueClass::CP
                     : (pick == 1 ? PlaqueClass::NCP : PlaqueClass::Mixed);
  };
  auto add_lesion = [&](double stenosis_target, PlaqueClass type,
                        double z_lo_frac, double z_hi_frac) {
    LesionSpec l;
    l.type = type;
    const double len = spec.length_mm();
    l.z_halfwidth = rng.uniform(2.0, 4.0);
    const double lo = std::max(l.z_halfwidth, z_lo_frac * len);
    const double hi = std::min(len - l.z_halfwidth, z_hi_frac * len);
    l.z_center = lo < hi ? rng.uniform(lo, hi) : 0.5 * len;
    l.arc_center = rng.uniform(0.0, 2.0 * kPi);
    // deep narrowings need wide flat arcs to stay above the lumen floor
    if (stenosis_target >= 50.0) {
      l.arc_halfwidth = kPi;
      l.arc_plateau = rng.uniform(0.8 * kPi, kPi);
    } else if (stenosis_target >= 25.0) {
      l.arc_halfwidth = rng.uniform(2.0 * kPi / 3.0, kPi);
      l.arc_plateau = 0.5 * l.arc_halfwidth;
    } else {
      l.arc_halfwidth = rng.uniform(kPi / 3.0, kPi);
      l.arc_plateau = rng.bernoulli(0.5) ? 0.25 * l.arc_halfwidth : 0.0;
    }
    if (type == PlaqueClass::CP) {
      l.cp_thickness = rng.uniform(0.35, 0.9);
    } else if (type == PlaqueClass::NCP) {
      l.ncp_thickness = rng.uniform(0.35, 0.9);
    } else {
      l.cp_thickness = rng.uniform(0.25, 0.55);
      l.ncp_thickness = rng.uniform(0.25, 0.55);
    }
    l.target_stenosis = stenosis_target;
    spec.lesions.push_back(l);
  };

  if (target_grade > 0) {
    // keep a margin from the bin edges so grades are unambiguous
    static const double bin_lo[5] = {0, 4.0, 27.0, 52.0, 72.0};
    static const double bin_hi[5] = {0, 22.0, 47.0, 68.0, 93.0};
    const double target =
        rng.uniform(bin_lo[target_grade], bin_hi[target_grade]);
    add_lesion(target, draw_type(), 0.3, 0.7);
    // optional secondary low-grade lesion, z-disjoint from the primary so
    // narrowings never compound across a bin edge
    if (target_grade >= 2 && spec.length_mm() >= 28.0 && rng.bernoulli(0.4)) {
      const auto& primary = spec.lesions[0];
      const double len = spec.length_mm();
      const double hw = rng.uniform(1.5, 2.5);
      const double p_lo = primary.z_center - primary.z_halfwidth;
      const double p_hi = primary.z_center + primary.z_halfwidth;
      const double prox_hi = p_lo - hw - 1.0;
      const double dist_lo = p_hi + hw + 1.0;
      double z_lo = 0.0, z_hi = 0.0;
      const double prox_room = prox_hi - hw;
      const double dist_room = (len - hw) - dist_lo;
      if (std::max(prox_room, dist_room) > 0.5) {
        if (prox_room >= dist_room) {
          z_lo = hw;
          z_hi = prox_hi;
        } else {
          z_lo = dist_lo;
          z_hi = len - hw;
        }
        LesionSpec l;
        l.type = draw_type();
        l.z_halfwidth = hw;
        l.z_center = rng.uniform(z_lo, z_hi);
        l.arc_center = rng.uniform(0.0, 2.0 * kPi);
        l.arc_halfwidth = rng.uniform(kPi / 2.0, kPi);
        l.arc_plateau = 0.25 * l.arc_halfwidth;
        if (l.type == PlaqueClass::CP) l.cp_thickness = rng.uniform(0.35, 0.8);
        else if (l.type == PlaqueClass::NCP)
          l.ncp_thickness = rng.uniform(0.35, 0.8);
        else {
          l.cp_thickness = rng.uniform(0.25, 0.5);
          l.ncp_thickness = rng.uniform(0.25, 0.5);
        }
        l.target_stenosis = rng.uniform(3.0, 12.0);
        spec.lesions.push_back(l);
      }
    }
    // widen toward a uniform ring until the lumen floor holds
    for (int attempt = 0; attempt < 4 && !spec_feasible(spec, options.n_theta);
         ++attempt) {
      for (auto& l : spec.lesions) {
        l.arc_halfwidth = kPi;
        l.arc_plateau = std::min(kPi, l.arc_plateau + 0.4 * kPi);
      }
    }
    if (!spec_feasible(spec, options.n_theta)) {
      // uniform concentric narrowing is always attainable for targets <= 93
      for (auto& l : spec.lesions) {
        l.arc_halfwidth = kPi;
        l.arc_plateau = kPi;
      }
    }
  }
  return spec;
}

namespace {

nlohmann::ordered_json manifest_to_json(const CorpusManifest& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["n_theta"] = m.n_theta;
  j["dr"] = m.dr;
  j["r_samples"] = m.r_samples;
  j["dz"] = m.dz;
  nlohmann::ordered_json hist = nlohmann::ordered_json::object();
  for (const auto& [g, n] : m.grade_histogram) hist[std::to_string(g)] = n;
  j["grade_histogram"] = hist;
  j["phantoms"] = nlohmann::ordered_json::array();
  for (const auto& p : m.phantoms) {
    nlohmann::ordered_json e;
    e["id"] = p.id;
    e["mpr"] = p.mpr_path;
    e["truth"] = p.truth_csv;
    e["areas"] = p.areas_csv;
    e["grade"] = p.grade;
    e["max_stenosis"] = p.max_stenosis;
    e["n_slices"] = p.n_slices;
    e["patient"] = p.patient;
    j["phantoms"].push_back(std::move(e));
  }
  j["patients"] = nlohmann::ordered_json::array();
  for (const auto& p : m.patients) {
    nlohmann::ordered_json e;
    e["id"] = p.id;
    e["grade"] = p.grade;
    e["members"] = p.members;
    j["patients"].push_back(std::move(e));
  }
  return j;
}

CorpusManifest manifest_from_json(const nlohmann::json& j) {
  CorpusManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.n_theta = j.at("n_theta").get<std::size_t>();
  m.dr = j.at("dr").get<double>();
  m.r_samples = j.at("r_samples").get<std::size_t>();
  m.dz = j.at("dz").get<double>();
  for (const auto& [key, val] : j.at("grade_histogram").items()) {
    m.grade_histogram[std::stoi(key)] = val.get<std::size_t>();
  }
  for (const auto& e : j.at("phantoms")) {
    CorpusEntry p;
    p.id = e.at("id").get<std::string>();
    p.mpr_path = e.at("mpr").get<std::string>();
    p.truth_csv = e.at("truth").get<std::string>();
    p.areas_csv = e.at("areas").get<std::string>();
    p.grade = e.at("grade").get<int>();
    p.max_stenosis = e.at("max_stenosis").get<double>();
    p.n_slices = e.at("n_slices").get<std::size_t>();
    p.patient = e.at("patient").get<std::size_t>();
    m.phantoms.push_back(std::move(p));
  }
  for (const auto& e : j.at("patients")) {
    CorpusPatient p;
    p.id = e.at("id").get<std::size_t>();
    p.grade = e.at("grade").get<int>();
    p.members = e.at("members").get<std::vector<std::size_t>>();
    m.patients.push_back(std::move(p));
  }
  return m;
}

int draw_grade(Rng& rng, const std::map<int, double>& mix) {
  double total = 0.0;
  for (const auto& [g, w] : mix) total += w;
  if (total <= 0.0) throw std::invalid_argument("corpus: empty grade mix");
  double u = rng.uniform() * total;
  for (const auto& [g, w] : mix) {
    u -= w;
    if (u <= 0.0) return g;
  }
  return mix.rbegin()->first;
}

}  // namespace

CorpusManifest generate_corpus(const CorpusOptions& options,
                               const std::string& out_dir) {
  if (options.count == 0) throw std::invalid_argument("corpus: count is zero");
  if (options.arteries_per_patient == 0) {
    throw std::invalid_argument("corpus: arteries_per_patient is zero");
  }
  for (const auto& [g, w] : options.grade_mix) {
    if (g < 0 || g > 4 || w < 0.0) {
      throw std::invalid_argument(
          "corpus: grade mix supports grades 0-4 with nonnegative weights "
          "(grade 5 needs a fully occluded lumen, which the phantom lumen "
          "floor excludes)");
    }
  }
  std::filesystem::create_directories(out_dir);

  CorpusManifest manifest;
  manifest.seed = options.seed;
  manifest.n_theta = options.n_theta;

  Rng root(options.seed);
  const std::size_t n_patients =
      (options.count + options.arteries_per_patient - 1) /
      options.arteries_per_patient;

  struct Job {
    PhantomSpec spec;
    std::size_t patient;
  };
  std::vector<Job> jobs;
  for (std::size_t pid = 0; pid < n_patients && jobs.size() < options.count;
       ++pid) {
    Rng prng = root.substream(0x50000 + pid);
    const int patient_grade = draw_grade(prng, options.grade_mix);
    std::vector<int> artery_grades;
    artery_grades.push_back(patient_grade);
    while (artery_grades.size() < options.arteries_per_patient) {
      artery_grades.push_back(static_cast<int>(
          prng.integer(static_cast<std::uint64_t>(patient_grade + 1))));
    }
    // deterministic shuffle so the worst artery is not always the first
    for (std::size_t i = artery_grades.size(); i > 1; --i) {
      std::swap(artery_grades[i - 1], artery_grades[prng.integer(i)]);
    }
    CorpusPatient patient;
    patient.id = pid;
    patient.grade = patient_grade;
    for (std::size_t a = 0;
         a < options.arteries_per_patient && jobs.size() < options.count;
         ++a) {
      Rng arng = prng.substream(0xA000 + a);
      patient.members.push_back(jobs.size());
      jobs.push_back({draw_phantom_spec(arng, artery_grades[a], options), pid});
    }
    manifest.patients.push_back(std::move(patient));
  }

  std::vector<CorpusEntry> entries(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof(name), "p%04zu", i);
    const Phantom ph =
        generate(jobs[i].spec, options.n_theta, options.write_mpr);
    CorpusEntry e;
    e.id = name;
    e.grade = ph.truth.grade;
    e.max_stenosis = ph.truth.max_stenosis;
    e.n_slices = jobs[i].spec.n_slices;
    e.patient = jobs[i].patient;
    const std::string base = out_dir + "/" + name;
    if (options.write_mpr) {
      e.mpr_path = std::string(name) + ".tmpr";
      geom::write_mpr(base + ".tmpr", ph.mpr);
    }
    e.truth_csv = std::string(name) + "_truth.csv";
    geom::write_field_csv(base + "_truth.csv", ph.truth.field);
    e.areas_csv = std::string(name) + "_areas.csv";
    geom::write_areas_csv(base + "_areas.csv",
                          geom::cross_section_areas(ph.truth.field));
    entries[i] = std::move(e);
  });
  manifest.phantoms = std::move(entries);
  for (const auto& e : manifest.phantoms) manifest.grade_histogram[e.grade]++;
  // patient grades follow the generated arteries
  for (auto& p : manifest.patients) {
    int g = 0;
    for (std::size_t m : p.members) g = std::max(g, manifest.phantoms[m].grade);
    p.grade = g;
  }

  std::ofstream f(out_dir + "/manifest.json", std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write manifest in " + out_dir);
  f << manifest_to_json(manifest).dump(2) << "\n";
  return manifest;
}

CorpusManifest load_manifest(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("no manifest.json in " + dir);
  nlohmann::json j;
  f >> j;
  return manifest_from_json(j);
}

}  // namespace tubemesh::phantom
