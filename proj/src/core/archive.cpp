#include "skel3d/core/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "skel3d/core/error.hpp"

namespace skel3d {
namespace {

static_assert(std::endian::native == std::endian::little, "archive payload assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'K', 'E', 'L', '3', 'D', 'A', 'R'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void ArchiveWriter::add(std::string name, const Tensor& tensor) { entries_.emplace_back(std::move(name), &tensor); }

void ArchiveWriter::write(const std::filesystem::path& path, const nlohmann::json& meta) const {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : entries_) {
    index.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->numel() * sizeof(double);
  }
  const nlohmann::json header = {{"meta", meta}, {"tensors", index}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const std::uint64_t header_len = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& entry : entries_) {
    const Tensor* t = entry.second;
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->numel() * sizeof(double)));
  }
  if (!out) throw DataError("short write to " + path.string());
}

Archive Archive::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open archive " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError(path.string() + " is not a skel3d archive");
  if (version != kVersion) throw DataError("unsupported archive version " + std::to_string(version));
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("truncated archive header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt archive header in " + path.string() + ": " + e.what());
  }
  const auto payload_start = in.tellg();

  Archive ar;
  ar.meta_ = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    Tensor t(shape);
    const auto offset = entry.at("offset").get<std::uint64_t>();
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw DataError("truncated tensor payload in " + path.string());
    ar.tensors_.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ar;
}

bool Archive::has(const std::string& name) const {
  for (const auto& [n, t] : tensors_) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& Archive::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors_) {
    if (n == name) return t;
  }
  throw DataError("archive has no tensor named '" + name + "'");
}

}  // namespace skel3d
