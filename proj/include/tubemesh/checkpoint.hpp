#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tubemesh/ndarray.hpp"

namespace tubemesh::nn {

// Checkpoint file: magic "TMNN1", a JSON manifest (tensor names and shapes
// plus caller metadata such as epoch and seed), then the raw little-endian
// 64-bit floats in manifest order.
void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, const NdArray*>>& tensors,
    const nlohmann::ordered_json& meta);

struct Checkpoint {
  nlohmann::ordered_json meta;
  std::vector<std::pair<std::string, NdArray>> tensors;

  const NdArray& tensor(const std::string& name) const;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace tubemesh::nn
