#pragma once

#include <string>

#include "tubemesh/geometry.hpp"

namespace tubemesh::geom {

// MPR volume file: magic "TMPR1", JSON header (shape, spacings), then raw
// little-endian 32-bit floats row-major.
void write_mpr(const std::string& path, const MprVolume& mpr);
MprVolume read_mpr(const std::string& path);

// Radial field CSV: header theta_index,z_index,r_l,r_cp,r_ncp,class.
void write_field_csv(const std::string& path, const RadialField& field);
RadialField read_field_csv(const std::string& path);

// Area signal CSV: header z_index,a_l,a_cp,a_ncp.
void write_areas_csv(const std::string& path, const AreaSignalSet& areas);
AreaSignalSet read_areas_csv(const std::string& path);

// Wavefront OBJ, ASCII v/f records with 1-based indices.
void write_obj(const std::string& path, const SurfaceMesh& mesh);

}  // namespace tubemesh::geom
