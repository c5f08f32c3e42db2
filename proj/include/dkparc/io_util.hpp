#pragma once

#include <filesystem>
#include <string>

namespace dkparc {

/// Writes `text` to `path.partial` and renames it into place, so readers never see a
/// half-written file. Creates missing parent directories. Throws IoError.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

std::string read_text(const std::filesystem::path& path);

}  // namespace dkparc
