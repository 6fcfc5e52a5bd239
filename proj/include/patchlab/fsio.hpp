#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace patchlab {

std::string read_text_file(const std::filesystem::path& path);
std::vector<uint8_t> read_binary_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames into place, so readers never see
// a partial file and failures leave any existing file untouched.
void write_file_atomic(const std::filesystem::path& path, const void* data, size_t size);
void write_text_file_atomic(const std::filesystem::path& path, const std::string& content);

uint64_t hash_file(const std::filesystem::path& path);

}  // namespace patchlab
