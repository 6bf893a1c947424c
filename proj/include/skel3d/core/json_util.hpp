#pragma once

#include <filesystem>
#include <initializer_list>
#include <string_view>

#include <json.hpp>

namespace skel3d {

// Throws ConfigError if `j` is not an object or holds a key outside `allowed`.
void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                        std::string_view context);

nlohmann::json read_json_file(const std::filesystem::path& path);
// Writes with two-space indentation and a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace skel3d
