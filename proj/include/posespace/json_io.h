#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

namespace posespace {

using Json = nlohmann::json;

// Serializes with every floating-point value written as 17 significant
// digits in scientific notation. Object keys keep nlohmann's sorted order,
// so equal documents always produce identical bytes.
std::string dump_json(const Json& doc, int indent = 1);

Json read_json_file(const std::filesystem::path& path);

// Writes via a temporary sibling and rename so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

void write_json_file(const std::filesystem::path& path, const Json& doc);

}  // namespace posespace
