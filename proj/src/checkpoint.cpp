#include "agile/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

namespace agile {

const Tensor& Container::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw MissingArtifactError("checkpoint has no tensor '" + name + "'");
}

void save_container(const std::filesystem::path& dir, const Container& c) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = c.manifest;
  manifest["format"] = "agile-container/1";
  nlohmann::json index = nlohmann::json::array();
  std::ofstream bin(dir / "tensors.bin", std::ios::binary);
  if (!bin) throw Error("cannot write " + (dir / "tensors.bin").string());
  std::size_t offset = 0;
  for (const auto& t : c.tensors) {
    index.push_back({{"name", t.name}, {"shape", t.value.shape}, {"offset", offset}});
    for (double v : t.value.data) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      const char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
      bin.write(b, 4);
    }
    offset += t.value.size();
  }
  manifest["tensors"] = index;
  std::ofstream js(dir / "manifest.json");
  if (!js) throw Error("cannot write " + (dir / "manifest.json").string());
  js << manifest.dump(2) << '\n';
}

Container load_container(const std::filesystem::path& dir) {
  std::ifstream js(dir / "manifest.json");
  if (!js) throw MissingArtifactError("missing checkpoint manifest in " + dir.string());
  Container c;
  try {
    js >> c.manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest in " + dir.string() + ": " + e.what());
  }
  std::ifstream bin(dir / "tensors.bin", std::ios::binary);
  if (!bin) throw MissingArtifactError("missing tensor payload in " + dir.string());
  std::vector<char> payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  for (const auto& entry : c.manifest.at("tensors")) {
    auto shape = entry.at("shape").get<std::vector<int>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    Tensor t(shape);
    if ((offset + t.size()) * 4 > payload.size()) throw Error("truncated tensor payload in " + dir.string());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto* p = reinterpret_cast<const unsigned char*>(payload.data() + (offset + i) * 4);
      const std::uint32_t bits = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
      t[i] = std::bit_cast<float>(bits);
    }
    c.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
  }
  c.manifest.erase("tensors");
  return c;
}

void save_embedding(const std::filesystem::path& dir, const TextEmbedding& e, const nlohmann::json& extra) {
  Container c;
  c.manifest = extra;
  c.manifest["kind"] = "text_embedding";
  c.tensors.push_back({"embedding", e.tokens});
  save_container(dir, c);
}

TextEmbedding load_embedding(const std::filesystem::path& dir, nlohmann::json* manifest) {
  Container c = load_container(dir);
  if (c.manifest.value("kind", "") != "text_embedding") throw Error(dir.string() + " is not an embedding container");
  if (manifest) *manifest = c.manifest;
  return TextEmbedding{c.tensor("embedding")};
}

}  // namespace agile
