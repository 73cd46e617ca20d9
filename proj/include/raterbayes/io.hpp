// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace raterbayes {

/// Write via a sibling temporary file and rename, so readers never observe
/// a partially written file. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

} // namespace raterbayes
