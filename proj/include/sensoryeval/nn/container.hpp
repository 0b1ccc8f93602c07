#pragma once

// Parameter container file:
//   "SEVCKPT1\n" | u64 little-endian header length | JSON header |
//   float32 little-endian payload, one block per header "params" entry.

#include <nlohmann/json.hpp>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sensoryeval/error.hpp"
#include "sensoryeval/nn/tensor.hpp"

namespace sensoryeval::nn {

static_assert(std::endian::native == std::endian::little, "container I/O assumes little-endian");

inline constexpr char kContainerMagic[] = "SEVCKPT1\n";

struct Container {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

inline void write_container(const std::filesystem::path& path, nlohmann::json meta,
                            const std::vector<const Parameter*>& params) {
  nlohmann::json entries = nlohmann::json::array();
  for (const Parameter* p : params) entries.push_back({{"name", p->name}, {"shape", p->value.shape}});
  meta["params"] = entries;
  const std::string header = meta.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kContainerMagic, sizeof(kContainerMagic) - 1);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const Parameter* p : params) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!out) throw IoError("short write to " + path.string());
}

inline Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[sizeof(kContainerMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kContainerMagic, sizeof(magic)) != 0) {
    throw IoError("not a parameter container: " + path.string());
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 26)) throw IoError("corrupt container header: " + path.string());
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated container header: " + path.string());
  Container c;
  try {
    c.meta = nlohmann::json::parse(header);
    for (const auto& e : c.meta.at("params")) {
      Tensor t(e.at("shape").get<std::vector<int>>());
      in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
      if (!in) throw IoError("truncated container payload: " + path.string());
      c.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt container header: " + std::string(e.what()));
  }
  return c;
}

/// Copies container tensors into matching parameters; every parameter must
/// be present with an identical shape.
inline void load_into(const Container& c, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    auto it = c.tensors.find(p->name);
    if (it == c.tensors.end()) throw IoError("parameter missing from file: " + p->name);
    if (it->second.shape != p->value.shape) throw IoError("parameter shape mismatch: " + p->name);
    p->value.values = it->second.values;
  }
}

}  // namespace sensoryeval::nn
