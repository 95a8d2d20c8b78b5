#include "tore/harness/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tore::harness {

namespace {

constexpr char kMagic[5] = {'T', 'O', 'R', 'E', '1'};

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

}  // namespace

const Array& Container::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw std::out_of_range("container: no array named " + name);
}

bool Container::contains(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

void Container::add(std::string name, std::vector<std::size_t> shape, std::vector<float> data) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  if (n != data.size()) throw std::invalid_argument("container: array " + name + " shape does not match its data");
  arrays.push_back({std::move(name), std::move(shape), std::move(data)});
}

void write_container(const std::filesystem::path& path, const Container& c) {
  nlohmann::json manifest;
  manifest["format"] = "TORE1";
  manifest["meta"] = c.meta;
  manifest["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    const std::uint64_t bytes = a.data.size() * sizeof(float);
    manifest["arrays"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"dtype", "f32"}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  const std::string text = manifest.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("container: cannot open " + path.string() + " for writing");
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : c.arrays) {
    out.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("container: write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("container: cannot open " + path.string());
  char magic[5];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error("container: " + path.string() + " is not a TORE1 file");
  }
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("container: truncated manifest in " + path.string());
  const auto manifest = nlohmann::json::parse(text);
  const auto blob_start = in.tellg();
  Container c;
  c.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("arrays")) {
    if (entry.at("dtype") != "f32") throw std::runtime_error("container: unsupported dtype in " + path.string());
    Array a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto bytes = entry.at("bytes").get<std::uint64_t>();
    a.data.resize(bytes / sizeof(float));
    in.seekg(blob_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw std::runtime_error("container: truncated array " + a.name + " in " + path.string());
    std::size_t n = 1;
    for (auto d : a.shape) n *= d;
    if (n != a.data.size()) throw std::runtime_error("container: array " + a.name + " shape/bytes mismatch");
    c.arrays.push_back(std::move(a));
  }
  return c;
}

}  // namespace tore::harness
