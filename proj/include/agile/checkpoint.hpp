#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "agile/backbone.hpp"

namespace agile {

// On-disk container: <dir>/manifest.json plus <dir>/tensors.bin holding raw
// little-endian float32 values. The manifest's "tensors" array indexes the
// payload as {name, shape, offset} with offsets in elements.
struct Container {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor& tensor(const std::string& name) const;
};

void save_container(const std::filesystem::path& dir, const Container& c);
Container load_container(const std::filesystem::path& dir);

void save_embedding(const std::filesystem::path& dir, const TextEmbedding& e, const nlohmann::json& extra);
TextEmbedding load_embedding(const std::filesystem::path& dir, nlohmann::json* manifest = nullptr);

}  // namespace agile
