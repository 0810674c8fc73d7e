#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace flowalign {

// Write-to-temp then rename, so readers never observe a truncated file.
void atomic_write_text(const std::filesystem::path& path, std::string_view content);

// Throws DependencyError if the file is missing, ConfigError on parse failure.
nlohmann::json load_json_file(const std::filesystem::path& path);

}  // namespace flowalign
