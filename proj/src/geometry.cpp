#include "tubemesh/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "tubemesh/parallel.hpp"

namespace tubemesh::geom {

CylindricalVolume unwrap_slices(const MprVolume& mpr,
                                const std::vector<std::size_t>& slices,
                                std::size_t n_theta, std::size_t r_samples,
                                double dr, double offset_x, double offset_y) {
  if (n_theta < 1 || r_samples < 1 || dr <= 0.0) {
    throw std::invalid_argument("unwrap: bad sampling parameters");
  }
  if (slices.empty()) throw std::invalid_argument("unwrap: empty slice list");
  const double max_radius = static_cast<double>(r_samples - 1) * dr;
  if (max_radius > mpr.half_extent() + 1e-12) {
    throw std::invalid_argument(
        "unwrap: maximum sampled radius " + std::to_string(max_radius) +
        " mm exceeds the in-plane half extent " +
        std::to_string(mpr.half_extent()) + " mm");
  }
  for (std::size_t z : slices) {
    if (z >= mpr.length) throw std::invalid_argument("unwrap: slice index");
  }
  const std::size_t L = mpr.length;
  const std::size_t W = slices.size();
  CylindricalVolume cyl;
  cyl.n_theta = n_theta;
  cyl.dr = dr;
  cyl.samples = NdArray({n_theta, r_samples, W});

  const double cx = 0.5 * static_cast<double>(mpr.nx - 1);
  const double cy = 0.5 * static_cast<double>(mpr.ny - 1);
  const double inv_s = 1.0 / mpr.in_plane_spacing;

  for (std::size_t v = 0; v < n_theta; ++v) {
    const double theta =
        2.0 * kPi * static_cast<double>(v) / static_cast<double>(n_theta);
    const double ux = std::cos(theta), uy = std::sin(theta);
    for (std::size_t k = 0; k < r_samples; ++k) {
      const double rho = static_cast<double>(k) * dr;
      double gx = (offset_x + rho * ux) * inv_s + cx;
      double gy = (offset_y + rho * uy) * inv_s + cy;
      gx = std::clamp(gx, 0.0, static_cast<double>(mpr.nx - 1));
      gy = std::clamp(gy, 0.0, static_cast<double>(mpr.ny - 1));
      const std::size_t x0 = static_cast<std::size_t>(gx);
      const std::size_t y0 = static_cast<std::size_t>(gy);
      const std::size_t x1 = std::min(x0 + 1, mpr.nx - 1);
      const std::size_t y1 = std::min(y0 + 1, mpr.ny - 1);
      const double fx = gx - static_cast<double>(x0);
      const double fy = gy - static_cast<double>(y0);
      const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
      const double w01 = (1 - fx) * fy, w11 = fx * fy;
      const float* p00 = &mpr.voxels[(x0 * mpr.ny + y0) * L];
      const float* p10 = &mpr.voxels[(x1 * mpr.ny + y0) * L];
      const float* p01 = &mpr.voxels[(x0 * mpr.ny + y1) * L];
      const float* p11 = &mpr.voxels[(x1 * mpr.ny + y1) * L];
      double* out = cyl.samples.data() + (v * r_samples + k) * W;
      for (std::size_t w = 0; w < W; ++w) {
        const std::size_t z = slices[w];
        out[w] = w00 * p00[z] + w10 * p10[z] + w01 * p01[z] + w11 * p11[z];
      }
    }
  }
  return cyl;
}

CylindricalVolume unwrap(const MprVolume& mpr, std::size_t n_theta,
                         std::size_t r_samples, double dr, double offset_x,
                         double offset_y) {
  std::vector<std::size_t> all(mpr.length);
  for (std::size_t z = 0; z < mpr.length; ++z) all[z] = z;
  return unwrap_slices(mpr, all, n_theta, r_samples, dr, offset_x, offset_y);
}

std::pair<SurfaceMesh, SurfaceMesh> build_meshes(const RadialField& field,
                                                 double dz) {
  const std::size_t N = field.n_theta(), L = field.length();
  if (L < 2) throw std::invalid_argument("build_meshes: need at least 2 slices");
  if (dz <= 0.0) throw std::invalid_argument("build_meshes: dz must be > 0");
  for (std::size_t i = 0; i < N * L; ++i) {
    if (field.r_l[i] < 0.0 || field.r_cp[i] < 0.0 || field.r_ncp[i] < 0.0) {
      throw std::invalid_argument("build_meshes: negative radius in field");
    }
  }

  auto build = [&](bool outer_wall) {
    SurfaceMesh m;
    m.vertices.reserve(N * L);
    for (std::size_t z = 0; z < L; ++z) {
      for (std::size_t v = 0; v < N; ++v) {
        const double r = outer_wall ? field.outer(v, z)
                                    : field.r_l[field.idx(v, z)];
        const double theta =
            2.0 * kPi * static_cast<double>(v) / static_cast<double>(N);
        m.vertices.push_back({r * std::cos(theta), r * std::sin(theta),
                              static_cast<double>(z) * dz});
      }
    }
    m.faces.reserve(2 * N * (L - 1));
    for (std::size_t z = 0; z + 1 < L; ++z) {
      for (std::size_t v = 0; v < N; ++v) {
        const int a = static_cast<int>(z * N + v);
        const int b = static_cast<int>(z * N + (v + 1) % N);
        const int c = static_cast<int>((z + 1) * N + (v + 1) % N);
        const int d = static_cast<int>((z + 1) * N + v);
        m.faces.push_back({a, b, d});
        m.faces.push_back({b, c, d});
      }
    }
    return m;
  };
  return {build(false), build(true)};
}

namespace {

// Fan-triangulated polygon area about the origin for vertices at radius
// rho_v and equiangular spacing. Equals the shoelace area of the polygon.
double fan_area(const std::vector<double>& rho) {
  const std::size_t N = rho.size();
  const double s = std::sin(2.0 * kPi / static_cast<double>(N));
  double acc = 0.0;
  for (std::size_t v = 0; v < N; ++v) acc += rho[v] * rho[(v + 1) % N];
  return 0.5 * s * acc;
}

}  // namespace

AreaSignalSet cross_section_areas(const RadialField& field) {
  const std::size_t N = field.n_theta(), L = field.length();
  for (std::size_t i = 0; i < N * L; ++i) {
    if (field.r_l[i] < 0.0 || field.r_cp[i] < 0.0 || field.r_ncp[i] < 0.0) {
      throw std::invalid_argument(
          "cross_section_areas: negative radius in field");
    }
  }
  AreaSignalSet out;
  out.a_l.resize(L);
  out.a_cp.resize(L);
  out.a_ncp.resize(L);
  std::vector<double> rho(N);
  for (std::size_t z = 0; z < L; ++z) {
    for (std::size_t v = 0; v < N; ++v) rho[v] = field.r_l[field.idx(v, z)];
    const double area_l = fan_area(rho);
    for (std::size_t v = 0; v < N; ++v) rho[v] += field.r_ncp[field.idx(v, z)];
    const double area_l_ncp = fan_area(rho);
    for (std::size_t v = 0; v < N; ++v) rho[v] += field.r_cp[field.idx(v, z)];
    const double area_outer = fan_area(rho);
    out.a_l[z] = area_l;
    out.a_ncp[z] = area_l_ncp - area_l;
    out.a_cp[z] = area_outer - area_l_ncp;
  }
  return out;
}

double LabelVolume::volume_of(PlaqueClass c) const {
  std::uint8_t code = kLabelBackground;
  switch (c) {
    case PlaqueClass::None: code = kLabelBackground; break;
    case PlaqueClass::CP: code = kLabelCP; break;
    case PlaqueClass::NCP: code = kLabelNCP; break;
    case PlaqueClass::Mixed: code = kLabelLumen; break;  // unused pairing
  }
  std::size_t n = 0;
  for (std::uint8_t l : labels) n += (l == code);
  return static_cast<double>(n) * voxel_volume();
}

LabelVolume voxelize(const RadialField& field, double dz,
                     std::array<double, 3> spacing, double half_extent) {
  if (spacing[0] <= 0 || spacing[1] <= 0 || spacing[2] <= 0) {
    throw std::invalid_argument("voxelize: spacing must be positive");
  }
  const std::size_t N = field.n_theta(), L = field.length();
  LabelVolume vol;
  vol.sx = spacing[0];
  vol.sy = spacing[1];
  vol.sz = spacing[2];
  vol.half_extent = half_extent;
  vol.nx = static_cast<std::size_t>(std::lround(2.0 * half_extent / vol.sx));
  vol.ny = static_cast<std::size_t>(std::lround(2.0 * half_extent / vol.sy));
  vol.nz = static_cast<std::size_t>(
      std::lround(static_cast<double>(L) * dz / vol.sz));
  vol.nx = std::max<std::size_t>(vol.nx, 1);
  vol.ny = std::max<std::size_t>(vol.ny, 1);
  vol.nz = std::max<std::size_t>(vol.nz, 1);
  vol.labels.assign(vol.nx * vol.ny * vol.nz, kLabelBackground);

  const double dth = 2.0 * kPi / static_cast<double>(N);
  parallel_for(vol.nz, [&](std::size_t k) {
    const double zc = (static_cast<double>(k) + 0.5) * vol.sz;
    std::size_t slice = static_cast<std::size_t>(zc / dz);
    if (slice >= L) slice = L - 1;
    std::vector<double> b1(N), b2(N), b3(N);
    for (std::size_t v = 0; v < N; ++v) {
      const std::size_t i = field.idx(v, slice);
      b1[v] = field.r_l[i];
      b2[v] = b1[v] + field.r_ncp[i];
      b3[v] = b2[v] + field.r_cp[i];
    }
    std::uint8_t* plane = vol.labels.data() + k * vol.nx * vol.ny;
    for (std::size_t j = 0; j < vol.ny; ++j) {
      const double y = (static_cast<double>(j) + 0.5) * vol.sy - half_extent;
      for (std::size_t i = 0; i < vol.nx; ++i) {
        const double x = (static_cast<double>(i) + 0.5) * vol.sx - half_extent;
        const double rho = std::hypot(x, y);
        double phi = std::atan2(y, x);
        if (phi < 0) phi += 2.0 * kPi;
        double u = phi / dth;
        std::size_t v0 = static_cast<std::size_t>(u) % N;
        const double f = u - std::floor(u);
        const std::size_t v1 = (v0 + 1) % N;
        const double rb1 = b1[v0] + f * (b1[v1] - b1[v0]);
        std::uint8_t lab = kLabelBackground;
        if (rho < rb1) {
          lab = kLabelLumen;
        } else {
          const double rb2 = b2[v0] + f * (b2[v1] - b2[v0]);
          if (rho < rb2) {
            lab = kLabelNCP;
          } else {
            const double rb3 = b3[v0] + f * (b3[v1] - b3[v0]);
            if (rho < rb3) lab = kLabelCP;
          }
        }
        plane[j * vol.nx + i] = lab;
      }
    }
  });
  return vol;
}

double dice(const LabelVolume& a, const LabelVolume& b, std::uint8_t label) {
  if (a.nx != b.nx || a.ny != b.ny || a.nz != b.nz) {
    throw std::invalid_argument("dice: label volumes must share a grid");
  }
  std::size_t na = 0, nb = 0, ni = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const bool ia = a.labels[i] == label, ib = b.labels[i] == label;
    na += ia;
    nb += ib;
    ni += (ia && ib);
  }
  if (na + nb == 0) return 1.0;  // both empty
  return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

namespace {

double frac(double x) { return x - std::floor(x); }

// Closest distance from point p to triangle (a,b,c); Ericson's region test.
double point_triangle_distance(const std::array<double, 3>& p,
                               const std::array<double, 3>& a,
                               const std::array<double, 3>& b,
                               const std::array<double, 3>& c) {
  auto sub = [](const std::array<double, 3>& u, const std::array<double, 3>& v) {
    return std::array<double, 3>{u[0] - v[0], u[1] - v[1], u[2] - v[2]};
  };
  auto dot = [](const std::array<double, 3>& u, const std::array<double, 3>& v) {
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
  };
  const auto ab = sub(b, a), ac = sub(c, a), ap = sub(p, a);
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  auto dist_to = [&](double s, double t) {
    std::array<double, 3> q{a[0] + s * ab[0] + t * ac[0],
                            a[1] + s * ab[1] + t * ac[1],
                            a[2] + s * ab[2] + t * ac[2]};
    const auto d = sub(p, q);
    return std::sqrt(dot(d, d));
  };
  if (d1 <= 0 && d2 <= 0) return dist_to(0, 0);
  const auto bp = sub(p, b);
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return dist_to(1, 0);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double t = d1 / (d1 - d3);
    return dist_to(t, 0);
  }
  const auto cp_ = sub(p, c);
  const double d5 = dot(ab, cp_), d6 = dot(ac, cp_);
  if (d6 >= 0 && d5 <= d6) return dist_to(0, 1);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double t = d2 / (d2 - d6);
    return dist_to(0, t);
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && d4 - d3 >= 0 && d5 - d6 >= 0) {
    const double t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return dist_to(1 - t, t);
  }
  const double denom = 1.0 / (va + vb + vc);
  return dist_to(vb * denom, vc * denom);
}

struct FaceBox {
  std::array<double, 3> lo, hi;
};

double dist2_point_box(const std::array<double, 3>& p, const FaceBox& b) {
  double d2 = 0.0;
  for (int i = 0; i < 3; ++i) {
    double d = 0.0;
    if (p[i] < b.lo[i]) d = b.lo[i] - p[i];
    else if (p[i] > b.hi[i]) d = p[i] - b.hi[i];
    d2 += d * d;
  }
  return d2;
}

double point_mesh_distance(const std::array<double, 3>& p,
                           const SurfaceMesh& m,
                           const std::vector<FaceBox>& boxes) {
  double best = INFINITY;
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    if (dist2_point_box(p, boxes[f]) >= best * best) continue;
    const auto& fc = m.faces[f];
    const double d = point_triangle_distance(p, m.vertices[fc[0]],
                                             m.vertices[fc[1]],
                                             m.vertices[fc[2]]);
    if (d < best) best = d;
  }
  return best;
}

std::vector<std::array<double, 3>> sample_surface(const SurfaceMesh& m,
                                                  int samples_per_face) {
  // deterministic low-discrepancy barycentric pattern (plastic sequence)
  constexpr double g1 = 0.7548776662466927;  // 1/x, x^2 = x + 1 roots
  constexpr double g2 = 0.5698402909980532;
  std::vector<std::array<double, 3>> pts;
  pts.reserve(m.faces.size() * samples_per_face);
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    const auto& a = m.vertices[m.faces[f][0]];
    const auto& b = m.vertices[m.faces[f][1]];
    const auto& c = m.vertices[m.faces[f][2]];
    for (int s = 0; s < samples_per_face; ++s) {
      double r1 = frac(0.5 + g1 * static_cast<double>(s + 1));
      double r2 = frac(0.5 + g2 * static_cast<double>(s + 1));
      const double su = std::sqrt(r1);
      const double w0 = 1.0 - su, w1 = su * (1.0 - r2), w2 = su * r2;
      pts.push_back({w0 * a[0] + w1 * b[0] + w2 * c[0],
                     w0 * a[1] + w1 * b[1] + w2 * c[1],
                     w0 * a[2] + w1 * b[2] + w2 * c[2]});
    }
  }
  return pts;
}

std::vector<FaceBox> face_boxes(const SurfaceMesh& m) {
  std::vector<FaceBox> boxes(m.faces.size());
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    FaceBox bb{{INFINITY, INFINITY, INFINITY},
               {-INFINITY, -INFINITY, -INFINITY}};
    for (int k = 0; k < 3; ++k) {
      const auto& v = m.vertices[m.faces[f][k]];
      for (int i = 0; i < 3; ++i) {
        bb.lo[i] = std::min(bb.lo[i], v[i]);
        bb.hi[i] = std::max(bb.hi[i], v[i]);
      }
    }
    boxes[f] = bb;
  }
  return boxes;
}

}  // namespace

SurfaceDistance surface_metrics(const SurfaceMesh& a, const SurfaceMesh& b,
                                int samples_per_face) {
  if (a.faces.empty() || b.faces.empty()) {
    throw std::invalid_argument("surface_metrics: empty mesh");
  }
  if (samples_per_face < 1) {
    throw std::invalid_argument("surface_metrics: samples_per_face >= 1");
  }
  const auto boxes_a = face_boxes(a);
  const auto boxes_b = face_boxes(b);

  auto directed = [&](const SurfaceMesh& from, const SurfaceMesh& to,
                      const std::vector<FaceBox>& to_boxes) {
    const auto pts = sample_surface(from, samples_per_face);
    std::vector<double> d(pts.size());
    parallel_for(pts.size(), [&](std::size_t i) {
      d[i] = point_mesh_distance(pts[i], to, to_boxes);
    });
    double sum = 0.0, mx = 0.0;
    for (double v : d) {
      sum += v;
      mx = std::max(mx, v);
    }
    return std::pair<double, double>{sum / static_cast<double>(d.size()), mx};
  };

  const auto [mean_ab, max_ab] = directed(a, b, boxes_b);
  const auto [mean_ba, max_ba] = directed(b, a, boxes_a);
  return {0.5 * (mean_ab + mean_ba), std::max(max_ab, max_ba)};
}

std::vector<Lesion> extract_lesions(const RadialField& field, PlaqueKind kind,
                                    double min_radius, double dz,
                                    std::array<double, 3> spacing) {
  const std::size_t N = field.n_theta(), L = field.length();
  auto radius_of = [&](std::size_t i) {
    switch (kind) {
      case PlaqueKind::CP: return field.r_cp[i];
      case PlaqueKind::NCP: return field.r_ncp[i];
      default: return field.r_cp[i] + field.r_ncp[i];
    }
  };
  std::vector<int> comp(N * L, -1);
  std::vector<Lesion> lesions;
  for (std::size_t z = 0; z < L; ++z) {
    for (std::size_t v = 0; v < N; ++v) {
      const std::size_t i = field.idx(v, z);
      if (comp[i] >= 0 || !(radius_of(i) > min_radius)) continue;
      const int id = static_cast<int>(lesions.size());
      Lesion lesion;
      lesion.kind = kind;
      std::vector<std::size_t> stack{i};
      comp[i] = id;
      while (!stack.empty()) {
        const std::size_t cur = stack.back();
        stack.pop_back();
        const std::size_t cv = cur / L, cz = cur % L;
        lesion.vertices.emplace_back(cv, cz);
        const std::size_t nbr[4] = {
            field.idx((cv + 1) % N, cz), field.idx((cv + N - 1) % N, cz),
            cz + 1 < L ? field.idx(cv, cz + 1) : cur,
            cz > 0 ? field.idx(cv, cz - 1) : cur};
        for (std::size_t nb : nbr) {
          if (nb == cur || comp[nb] >= 0 || !(radius_of(nb) > min_radius))
            continue;
          comp[nb] = id;
          stack.push_back(nb);
        }
      }
      std::sort(lesion.vertices.begin(), lesion.vertices.end());
      lesions.push_back(std::move(lesion));
    }
  }
  if (lesions.empty()) return lesions;

  // voxelized volume: every plaque voxel is assigned to the component of the
  // vertex at its nearest ray angle in its slice
  const LabelVolume vol = voxelize(field, dz, spacing);
  const double dth = 2.0 * kPi / static_cast<double>(N);
  std::vector<std::size_t> counts(lesions.size(), 0);
  for (std::size_t k = 0; k < vol.nz; ++k) {
    const double zc = (static_cast<double>(k) + 0.5) * vol.sz;
    std::size_t slice = static_cast<std::size_t>(zc / dz);
    if (slice >= L) slice = L - 1;
    for (std::size_t j = 0; j < vol.ny; ++j) {
      for (std::size_t i = 0; i < vol.nx; ++i) {
        const std::uint8_t lab = vol.at(i, j, k);
        const bool counted =
            (kind == PlaqueKind::CP && lab == kLabelCP) ||
            (kind == PlaqueKind::NCP && lab == kLabelNCP) ||
            (kind == PlaqueKind::Total &&
             (lab == kLabelCP || lab == kLabelNCP));
        if (!counted) continue;
        const double x =
            (static_cast<double>(i) + 0.5) * vol.sx - vol.half_extent;
        const double y =
            (static_cast<double>(j) + 0.5) * vol.sy - vol.half_extent;
        double phi = std::atan2(y, x);
        if (phi < 0) phi += 2.0 * kPi;
        // nearest bracketing vertex first, the other endpoint as fallback
        // (covers interpolation ramps next to a component boundary)
        const double u = phi / dth;
        const std::size_t v0 = static_cast<std::size_t>(u) % N;
        const std::size_t v1 = (v0 + 1) % N;
        const double frac = u - std::floor(u);
        const std::size_t near_v = frac < 0.5 ? v0 : v1;
        const std::size_t far_v = frac < 0.5 ? v1 : v0;
        int id = comp[field.idx(near_v, slice)];
        if (id < 0) id = comp[field.idx(far_v, slice)];
        if (id >= 0) counts[id]++;
      }
    }
  }
  for (std::size_t i = 0; i < lesions.size(); ++i) {
    lesions[i].volume_mm3 = static_cast<double>(counts[i]) * vol.voxel_volume();
  }
  return lesions;
}

bool origin_inside_lumen(const RadialField& field, std::size_t z,
                         double offset_x, double offset_y, double margin) {
  const std::size_t N = field.n_theta();
  const double rho = std::hypot(offset_x, offset_y);
  if (rho == 0.0) {
    for (std::size_t v = 0; v < N; ++v) {
      if (field.r_l[field.idx(v, z)] <= margin) return false;
    }
    return true;
  }
  const double dth = 2.0 * kPi / static_cast<double>(N);
  double phi = std::atan2(offset_y, offset_x);
  if (phi < 0) phi += 2.0 * kPi;
  const double u = phi / dth;
  const std::size_t v0 = static_cast<std::size_t>(u) % N;
  const std::size_t v1 = (v0 + 1) % N;
  const double f = u - std::floor(u);
  const double b = field.r_l[field.idx(v0, z)] +
                   f * (field.r_l[field.idx(v1, z)] -
                        field.r_l[field.idx(v0, z)]);
  return rho + margin < b;
}

RadialField reproject(const RadialField& field, double offset_x,
                      double offset_y) {
  const std::size_t N = field.n_theta(), L = field.length();
  const double dth = 2.0 * kPi / static_cast<double>(N);

  RadialField out(N, L);
  std::vector<double> b1(N), b2(N), b3(N);
  for (std::size_t z = 0; z < L; ++z) {
    if (!origin_inside_lumen(field, z, offset_x, offset_y)) {
      throw std::invalid_argument(
          "reproject: offset origin lies outside the lumen at slice " +
          std::to_string(z));
    }
    for (std::size_t v = 0; v < N; ++v) {
      const std::size_t i = field.idx(v, z);
      b1[v] = field.r_l[i];
      b2[v] = b1[v] + field.r_ncp[i];
      b3[v] = b2[v] + field.r_cp[i];
    }
    auto interp = [&](const std::vector<double>& b, double phi) {
      if (phi < 0) phi += 2.0 * kPi;
      const double u = phi / dth;
      const std::size_t v0 = static_cast<std::size_t>(u) % N;
      const std::size_t v1 = (v0 + 1) % N;
      const double f = u - std::floor(u);
      return b[v0] + f * (b[v1] - b[v0]);
    };
    for (std::size_t v = 0; v < N; ++v) {
      const double alpha = dth * static_cast<double>(v);
      const double ux = std::cos(alpha), uy = std::sin(alpha);
      auto g = [&](const std::vector<double>& b, double t) {
        const double px = offset_x + t * ux, py = offset_y + t * uy;
        const double rho = std::hypot(px, py);
        const double phi = std::atan2(py, px);
        return rho - interp(b, phi);
      };
      auto first_root = [&](const std::vector<double>& b, double t_start) {
        double lo = t_start;
        if (g(b, lo) >= 0.0) return lo;
        const double step = 0.05;
        double hi = lo + step;
        const double t_max = 8.0 + std::hypot(offset_x, offset_y);
        while (g(b, hi) < 0.0) {
          lo = hi;
          hi += step;
          if (hi > t_max) return t_max;
        }
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (g(b, mid) < 0.0) lo = mid;
          else hi = mid;
        }
        return 0.5 * (lo + hi);
      };
      const double t1 = first_root(b1, 0.0);
      const double t2 = std::max(t1, first_root(b2, t1));
      const double t3 = std::max(t2, first_root(b3, t2));
      const std::size_t i = out.idx(v, z);
      out.r_l[i] = t1;
      out.r_ncp[i] = t2 - t1;
      out.r_cp[i] = t3 - t2;
    }
  }
  out.refresh_classes();
  return out;
}

MeshStats mesh_stats(const SurfaceMesh& mesh) {
  MeshStats s;
  s.vertices = mesh.vertices.size();
  s.faces = mesh.faces.size();
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edge_count[{a, b}]++;
    }
  }
  s.edges = edge_count.size();
  for (const auto& [e, c] : edge_count) {
    if (c == 1) s.boundary_edges++;
    if (c > 2) s.nonmanifold_edges++;
  }
  s.euler_characteristic = static_cast<long>(s.vertices) -
                           static_cast<long>(s.edges) +
                           static_cast<long>(s.faces);
  return s;
}

}  // namespace tubemesh::geom
