#include "tubemesh/formats.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "volume I/O assumes a little-endian host");

namespace tubemesh::geom {

namespace {
constexpr const char* kMprMagic = "TMPR1";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}
}  // namespace

void write_mpr(const std::string& path, const MprVolume& mpr) {
  nlohmann::ordered_json header;
  header["shape"] = {mpr.nx, mpr.ny, mpr.length};
  header["in_plane_spacing"] = mpr.in_plane_spacing;
  header["through_plane_spacing"] = mpr.through_plane_spacing;
  const std::string h = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << kMprMagic << "\n" << h.size() << "\n" << h;
  f.write(reinterpret_cast<const char*>(mpr.voxels.data()),
          static_cast<std::streamsize>(mpr.voxels.size() * sizeof(float)));
  if (!f) throw std::runtime_error("write failed: " + path);
}

MprVolume read_mpr(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  std::getline(f, magic);
  if (magic != kMprMagic) {
    throw std::runtime_error("bad MPR magic in " + path + " (expected TMPR1)");
  }
  std::string len_line;
  std::getline(f, len_line);
  const std::size_t hlen = std::stoull(len_line);
  std::string h(hlen, '\0');
  f.read(h.data(), static_cast<std::streamsize>(hlen));
  const auto header = nlohmann::json::parse(h);
  const auto shape = header.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3) throw std::runtime_error("MPR shape must be rank 3");
  MprVolume mpr(shape[0], shape[1], shape[2],
                header.at("in_plane_spacing").get<double>(),
                header.at("through_plane_spacing").get<double>());
  f.read(reinterpret_cast<char*>(mpr.voxels.data()),
         static_cast<std::streamsize>(mpr.voxels.size() * sizeof(float)));
  if (!f) throw std::runtime_error("truncated MPR data: " + path);
  return mpr;
}

void write_field_csv(const std::string& path, const RadialField& field) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "theta_index,z_index,r_l,r_cp,r_ncp,class\n";
  char buf[160];
  for (std::size_t z = 0; z < field.length(); ++z) {
    for (std::size_t v = 0; v < field.n_theta(); ++v) {
      const std::size_t i = field.idx(v, z);
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.9g,%.9g,%.9g,%u\n", v, z,
                    field.r_l[i], field.r_cp[i], field.r_ncp[i],
                    static_cast<unsigned>(field.plaque_class[i]));
      f << buf;
    }
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

RadialField read_field_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty field CSV");
  struct Row {
    std::size_t v, z;
    double rl, rcp, rncp;
    unsigned cls;
  };
  std::vector<Row> rows;
  std::size_t max_v = 0, max_z = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 6) {
      throw std::runtime_error("field CSV row must have 6 columns");
    }
    Row r{std::stoull(cells[0]), std::stoull(cells[1]), std::stod(cells[2]),
          std::stod(cells[3]), std::stod(cells[4]),
          static_cast<unsigned>(std::stoul(cells[5]))};
    max_v = std::max(max_v, r.v);
    max_z = std::max(max_z, r.z);
    rows.push_back(r);
  }
  RadialField field(max_v + 1, max_z + 1);
  if (rows.size() != field.n_theta() * field.length()) {
    throw std::runtime_error("field CSV is not a dense (theta,z) grid");
  }
  for (const auto& r : rows) {
    const std::size_t i = field.idx(r.v, r.z);
    field.r_l[i] = r.rl;
    field.r_cp[i] = r.rcp;
    field.r_ncp[i] = r.rncp;
    field.plaque_class[i] = static_cast<std::uint8_t>(r.cls);
  }
  return field;
}

void write_areas_csv(const std::string& path, const AreaSignalSet& areas) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "z_index,a_l,a_cp,a_ncp\n";
  char buf[128];
  for (std::size_t z = 0; z < areas.length(); ++z) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", z, areas.a_l[z],
                  areas.a_cp[z], areas.a_ncp[z]);
    f << buf;
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

AreaSignalSet read_areas_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty areas CSV");
  AreaSignalSet areas;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) {
      throw std::runtime_error("areas CSV row must have 4 columns");
    }
    areas.a_l.push_back(std::stod(cells[1]));
    areas.a_cp.push_back(std::stod(cells[2]));
    areas.a_ncp.push_back(std::stod(cells[3]));
  }
  return areas;
}

void write_obj(const std::string& path, const SurfaceMesh& mesh) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.8f %.8f %.8f\n", v[0], v[1], v[2]);
    f << buf;
  }
  for (const auto& face : mesh.faces) {
    std::snprintf(buf, sizeof(buf), "f %d %d %d\n", face[0] + 1, face[1] + 1,
                  face[2] + 1);
    f << buf;
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace tubemesh::geom
