#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "tubemesh/ndarray.hpp"

namespace tubemesh::geom {

inline constexpr double kPi = 3.14159265358979323846;

// Straightened multi-planar reformatted volume. The coronary centerline runs
// through the in-plane center of every slice; voxels are Hounsfield units.
struct MprVolume {
  std::size_t nx = 0, ny = 0, length = 0;
  double in_plane_spacing = 0.1;
  double through_plane_spacing = 0.5;
  std::vector<float> voxels;  // row-major [X,Y,L], z fastest

  MprVolume() = default;
  MprVolume(std::size_t x, std::size_t y, std::size_t l, double sp_in,
            double sp_through)
      : nx(x), ny(y), length(l), in_plane_spacing(sp_in),
        through_plane_spacing(sp_through), voxels(x * y * l, 0.0f) {}

  float& at(std::size_t x, std::size_t y, std::size_t z) {
    return voxels[(x * ny + y) * length + z];
  }
  float at(std::size_t x, std::size_t y, std::size_t z) const {
    return voxels[(x * ny + y) * length + z];
  }
  // distance from the slice center to the nearest in-plane border voxel
  double half_extent() const {
    return 0.5 * static_cast<double>(std::min(nx, ny) - 1) * in_plane_spacing;
  }
};

// Unwrapped cylindrical intensity grid: samples[theta][r][z], with sample k
// of a ray at radius k*dr from the slice center.
struct CylindricalVolume {
  NdArray samples;  // [N_theta, R, L]
  double dr = 0.2;
  std::size_t n_theta = 0;

  std::size_t r_samples() const { return samples.dim(1); }
  std::size_t length() const { return samples.dim(2); }
};

enum class PlaqueClass : std::uint8_t { None = 0, CP = 1, NCP = 2, Mixed = 3 };

// Per-vertex radial extents of lumen and the two plaque shells on the
// (theta, z) grid, plus the plaque class label at each vertex.
struct RadialField {
  NdArray r_l;    // [N_theta, L], mm
  NdArray r_cp;   // [N_theta, L], mm
  NdArray r_ncp;  // [N_theta, L], mm
  std::vector<std::uint8_t> plaque_class;  // [N_theta * L]

  RadialField() = default;
  RadialField(std::size_t n_theta, std::size_t length)
      : r_l({n_theta, length}),
        r_cp({n_theta, length}),
        r_ncp({n_theta, length}),
        plaque_class(n_theta * length, 0) {}

  std::size_t n_theta() const { return r_l.dim(0); }
  std::size_t length() const { return r_l.dim(1); }
  std::size_t idx(std::size_t v, std::size_t z) const {
    return v * length() + z;
  }
  double outer(std::size_t v, std::size_t z) const {
    const std::size_t i = idx(v, z);
    return r_l[i] + r_cp[i] + r_ncp[i];
  }
  // class derived from shell thicknesses
  static PlaqueClass classify(double cp, double ncp, double tol = 1e-9) {
    const bool has_cp = cp > tol, has_ncp = ncp > tol;
    if (has_cp && has_ncp) return PlaqueClass::Mixed;
    if (has_cp) return PlaqueClass::CP;
    if (has_ncp) return PlaqueClass::NCP;
    return PlaqueClass::None;
  }
  void refresh_classes(double tol = 1e-9) {
    for (std::size_t i = 0; i < plaque_class.size(); ++i) {
      plaque_class[i] = static_cast<std::uint8_t>(
          classify(r_cp[i], r_ncp[i], tol));
    }
  }
};

struct SurfaceMesh {
  std::vector<std::array<double, 3>> vertices;  // mm, MPR frame
  std::vector<std::array<int, 3>> faces;        // vertex index triples
};

// Per-slice cross-sectional areas in mm^2.
struct AreaSignalSet {
  std::vector<double> a_l;
  std::vector<double> a_cp;
  std::vector<double> a_ncp;

  std::size_t length() const { return a_l.size(); }
  double outer(std::size_t z) const { return a_l[z] + a_cp[z] + a_ncp[z]; }
};

// ---- operations ----

// Bilinear unwrap of an MPR volume about the slice center plus an optional
// in-plane origin offset (used by centerline-jitter augmentation). Samples
// outside the volume are edge-clamped; the unshifted maximum radius must fit
// inside the in-plane extent.
CylindricalVolume unwrap(const MprVolume& mpr, std::size_t n_theta,
                         std::size_t r_samples, double dr,
                         double offset_x = 0.0, double offset_y = 0.0);

// Same sampling restricted to an explicit slice window (entries may repeat
// for mirrored windows at the volume ends).
CylindricalVolume unwrap_slices(const MprVolume& mpr,
                                const std::vector<std::size_t>& slices,
                                std::size_t n_theta, std::size_t r_samples,
                                double dr, double offset_x = 0.0,
                                double offset_y = 0.0);

// Triangulated tube meshes for the lumen surface and the outer wall
// (r_l + r_ncp + r_cp). Uncapped; two triangles per quad; theta wraps.
std::pair<SurfaceMesh, SurfaceMesh> build_meshes(const RadialField& field,
                                                 double dz);

// Triangle-fan cross-section areas about the centerline, decomposed into
// lumen, CP, and NCP contributions.
AreaSignalSet cross_section_areas(const RadialField& field);

// Voxel classification against the theta-interpolated radial boundaries;
// prismatic in z (one field slice per dz of height).
struct LabelVolume {
  std::size_t nx = 0, ny = 0, nz = 0;
  double sx = 0.1, sy = 0.1, sz = 0.5;
  double half_extent = 6.4;
  std::vector<std::uint8_t> labels;  // PlaqueClass codes; 0 = background

  std::uint8_t at(std::size_t i, std::size_t j, std::size_t k) const {
    return labels[(k * ny + j) * nx + i];
  }
  double voxel_volume() const { return sx * sy * sz; }
  double volume_of(PlaqueClass c) const;
};

// Label codes inside LabelVolume: 1 lumen, 2 CP shell, 3 NCP shell.
inline constexpr std::uint8_t kLabelBackground = 0;
inline constexpr std::uint8_t kLabelLumen = 1;
inline constexpr std::uint8_t kLabelCP = 2;
inline constexpr std::uint8_t kLabelNCP = 3;

LabelVolume voxelize(const RadialField& field, double dz,
                     std::array<double, 3> spacing = {0.1, 0.1, 0.5},
                     double half_extent = 6.4);

double dice(const LabelVolume& a, const LabelVolume& b, std::uint8_t label);

struct SurfaceDistance {
  double msd = 0.0;
  double hd = 0.0;
};

// Symmetric point-sampled mean and Hausdorff surface distances.
SurfaceDistance surface_metrics(const SurfaceMesh& a, const SurfaceMesh& b,
                                int samples_per_face);

enum class PlaqueKind { CP, NCP, Total };

struct Lesion {
  PlaqueKind kind = PlaqueKind::Total;
  std::vector<std::pair<std::size_t, std::size_t>> vertices;  // (theta, z)
  double volume_mm3 = 0.0;
};

// 4-connected components (with theta wraparound) of vertices whose plaque
// radius exceeds min_radius, each carrying its voxelized volume.
std::vector<Lesion> extract_lesions(const RadialField& field, PlaqueKind kind,
                                    double min_radius, double dz = 0.5,
                                    std::array<double, 3> spacing = {0.1, 0.1,
                                                                     0.5});

// True when the offset origin lies strictly inside the lumen boundary at
// slice z.
bool origin_inside_lumen(const RadialField& field, std::size_t z,
                         double offset_x, double offset_y,
                         double margin = 0.0);

// Ground truth seen from a shifted centerline origin: each boundary is
// re-intersected along rays cast from the offset per slice.
RadialField reproject(const RadialField& field, double offset_x,
                      double offset_y);

struct MeshStats {
  std::size_t vertices = 0;
  std::size_t edges = 0;
  std::size_t faces = 0;
  long euler_characteristic = 0;
  std::size_t boundary_edges = 0;     // edges on exactly 1 face
  std::size_t nonmanifold_edges = 0;  // edges on 3+ faces
};

MeshStats mesh_stats(const SurfaceMesh& mesh);

}  // namespace tubemesh::geom
