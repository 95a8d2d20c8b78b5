#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace tore::harness {

/// One named f32 array of a container.
struct Array {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

/// Binary container: the 5-byte magic "TORE1", a little-endian u64 manifest
/// length, the JSON manifest, then a raw little-endian f32 blob. The manifest
/// lists every array as {name, shape, dtype, offset, bytes} with offsets
/// relative to the blob start, plus a free-form "meta" object.
struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Array> arrays;

  const Array& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  void add(std::string name, std::vector<std::size_t> shape, std::vector<float> data);
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace tore::harness
