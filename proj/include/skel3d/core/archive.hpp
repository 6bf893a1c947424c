#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "skel3d/core/tensor.hpp"

namespace skel3d {

// Checkpoint container:
//   8 bytes   magic "SKEL3DAR"
//   u32       format version (1)
//   u64       length of the JSON header in bytes
//   ...       JSON header: {"meta": <caller JSON>, "tensors": [{"name", "shape", "offset"}]}
//   ...       tensor payload, little-endian IEEE-754 doubles, offsets relative to payload start
class ArchiveWriter {
 public:
  void add(std::string name, const Tensor& tensor);
  void write(const std::filesystem::path& path, const nlohmann::json& meta) const;

 private:
  std::vector<std::pair<std::string, const Tensor*>> entries_;
};

class Archive {
 public:
  static Archive read(const std::filesystem::path& path);

  const nlohmann::json& meta() const noexcept { return meta_; }
  bool has(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& tensors() const noexcept { return tensors_; }

 private:
  nlohmann::json meta_;
  std::vector<std::pair<std::string, Tensor>> tensors_;
};

}  // namespace skel3d
