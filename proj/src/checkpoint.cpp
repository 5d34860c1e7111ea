#include "tubemesh/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace tubemesh::nn {

namespace {
constexpr const char* kMagic = "TMNN1";
}

void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, const NdArray*>>& tensors,
    const nlohmann::ordered_json& meta) {
  nlohmann::ordered_json manifest = meta;
  manifest["format"] = kMagic;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& [name, arr] : tensors) {
    nlohmann::ordered_json t;
    t["name"] = name;
    t["shape"] = arr->shape();
    list.push_back(std::move(t));
  }
  manifest["tensors"] = std::move(list);
  const std::string header = manifest.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f << kMagic << "\n" << header.size() << "\n" << header;
  for (const auto& [name, arr] : tensors) {
    f.write(reinterpret_cast<const char*>(arr->data()),
            static_cast<std::streamsize>(arr->size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

const NdArray& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, a] : tensors) {
    if (n == name) return a;
  }
  throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string magic;
  std::getline(f, magic);
  if (magic != kMagic) {
    throw std::runtime_error("bad checkpoint magic in " + path +
                             " (expected TMNN1)");
  }
  std::string len_line;
  std::getline(f, len_line);
  const std::size_t hlen = std::stoull(len_line);
  std::string header(hlen, '\0');
  f.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("truncated checkpoint header: " + path);

  Checkpoint ck;
  ck.meta = nlohmann::ordered_json::parse(header);
  for (const auto& t : ck.meta.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    std::vector<std::size_t> shape =
        t.at("shape").get<std::vector<std::size_t>>();
    NdArray arr(shape);
    f.read(reinterpret_cast<char*>(arr.data()),
           static_cast<std::streamsize>(arr.size() * sizeof(double)));
    if (!f) {
      throw std::runtime_error("truncated checkpoint tensor '" + name +
                               "' in " + path);
    }
    ck.tensors.emplace_back(name, std::move(arr));
  }
  return ck;
}

}  // namespace tubemesh::nn
