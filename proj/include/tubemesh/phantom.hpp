#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tubemesh/geometry.hpp"
#include "tubemesh/rng.hpp"

namespace tubemesh::phantom {

// One plaque lesion: raised-cosine thickness bumps in z and angle, an
// inward lumen intrusion solved to hit the target stenosis percentage, and
// outward CP/NCP shells.
struct LesionSpec {
  geom::PlaqueClass type = geom::PlaqueClass::CP;
  double z_center = 0.0;       // mm
  double z_halfwidth = 3.0;    // mm
  double arc_center = 0.0;     // radians
  double arc_halfwidth = 1.0;  // radians, weight reaches 0 here
  double arc_plateau = 0.0;    // radians, weight stays 1 inside; pi = ring
  double cp_thickness = 0.0;   // mm, peak
  double ncp_thickness = 0.0;  // mm, peak
  double target_stenosis = 0.0;  // percent of reference lumen area
};

struct HuPalette {
  double lumen = 350.0;
  double wall = 60.0;
  double cp = 800.0;
  double ncp = 30.0;
  double background = 60.0;
  double lumen_spread = 0.0;
  double wall_spread = 0.0;
  double cp_spread = 0.0;
  double ncp_spread = 0.0;
  double background_spread = 0.0;
};

struct PhantomSpec {
  std::size_t n_slices = 48;
  double dz = 0.5;              // mm
  double base_radius = 1.9;     // mm at z = 0
  double taper = 0.0;           // mm lumen radius lost per mm of length
  double wobble_amp = 0.0;      // mm
  double wobble_period = 10.0;  // mm
  double wobble_phase = 0.0;
  std::vector<LesionSpec> lesions;
  HuPalette palette;
  double noise_sigma = 20.0;  // HU
  double wall_thickness = 0.35;
  std::uint64_t seed = 0;
  std::size_t mpr_size = 127;
  double in_plane_spacing = 0.1;

  double length_mm() const { return static_cast<double>(n_slices) * dz; }
  void validate() const;
};

struct PhantomTruth {
  geom::RadialField field;
  std::vector<double> reference_area;    // healthy lumen area per slice, mm^2
  std::vector<double> stenosis_percent;  // per slice
  double max_stenosis = 0.0;
  int grade = 0;
};

struct Phantom {
  geom::MprVolume mpr;
  PhantomTruth truth;
};

// CAD-RADS bin edges 0%, 1-24%, 25-49%, 50-69%, 70-99%, 100%.
int stenosis_to_grade(double max_stenosis_percent);

// stenosis(z) = 100 * (1 - a_l(z)/a_ref(z)), clamped to [0, 100]
std::vector<double> stenosis_profile(const std::vector<double>& lumen_area,
                                     const std::vector<double>& reference_area);

// Deterministic phantom synthesis. The truth field is the analytic generator
// sampled on the (theta, z) grid; the MPR paints each voxel with the palette
// value of the region containing its center plus Gaussian noise.
Phantom generate(const PhantomSpec& spec, std::size_t n_theta = 16,
                 bool rasterize_mpr = true);

// ---- corpus generation ----

struct CorpusOptions {
  std::size_t count = 80;               // phantoms (arteries)
  std::uint64_t seed = 1;
  std::map<int, double> grade_mix = {
      {0, 0.25}, {1, 0.20}, {2, 0.20}, {3, 0.20}, {4, 0.15}};
  std::size_t arteries_per_patient = 1;
  bool write_mpr = true;
  std::size_t n_theta = 16;
  std::size_t min_slices = 40;
  std::size_t max_slices = 64;
};

struct CorpusEntry {
  std::string id;
  std::string mpr_path;   // empty when MPRs are not written
  std::string truth_csv;
  std::string areas_csv;
  int grade = 0;
  double max_stenosis = 0.0;
  std::size_t n_slices = 0;
  std::size_t patient = 0;
};

struct CorpusPatient {
  std::size_t id = 0;
  int grade = 0;
  std::vector<std::size_t> members;  // indices into phantoms
};

struct CorpusManifest {
  std::uint64_t seed = 1;
  std::size_t n_theta = 16;
  double dr = 0.2;
  std::size_t r_samples = 32;
  double dz = 0.5;
  std::vector<CorpusEntry> phantoms;
  std::vector<CorpusPatient> patients;
  std::map<int, std::size_t> grade_histogram;
};

// Generates `count` phantoms under out_dir and writes manifest.json.
CorpusManifest generate_corpus(const CorpusOptions& options,
                               const std::string& out_dir);

CorpusManifest load_manifest(const std::string& dir);

// Draws a spec for phantom `index` of a corpus; exposed for tests.
PhantomSpec draw_phantom_spec(Rng& rng, int target_grade,
                              const CorpusOptions& options);

}  // namespace tubemesh::phantom
