#pragma once

// Checkpoint container:
//   8 bytes   magic "CLGNCKPT"
//   u32       format version
//   u64       header length
//   header    JSON: metadata plus a tensor index {name, shape, offset}
//   payload   little-endian float32 tensor data, in index order

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "collagan/errors.hpp"
#include "collagan/tensor.hpp"

namespace collagan {

inline constexpr char kCheckpointMagic[8] = {'C', 'L', 'G', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor<float>> tensors;

  const Tensor<float>& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint has no tensor '" + name + "'");
    return it->second;
  }
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  const std::string text = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw DataError("short write to checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw DataError(path.string() + " is not a checkpoint file");
  }
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": corrupt header: " + e.what());
  }
  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    Tensor<float> t(entry.at("shape").get<std::vector<int>>());
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    ckpt.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  if (!in) throw DataError(path.string() + ": truncated checkpoint payload");
  return ckpt;
}

}  // namespace collagan
