#include "patchlab/fsio.hpp"

#include <cstdio>
#include <fstream>
#include <system_error>

#include "patchlab/common.hpp"

namespace patchlab {

namespace fs = std::filesystem;

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw InputError("read failed for " + path.string());
  return out;
}

std::vector<uint8_t> read_binary_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw InputError("cannot open " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> out(static_cast<size_t>(size));
  if (size > 0 && !in.read(reinterpret_cast<char*>(out.data()), size))
    throw InputError("read failed for " + path.string());
  return out;
}

void write_file_atomic(const fs::path& path, const void* data, size_t size) {
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw InputError("cannot create directory " + path.parent_path().string());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open " + tmp.string() + " for writing");
    if (size > 0) out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp, ec);
      throw InputError("write failed for " + tmp.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw InputError("cannot move " + tmp.string() + " into place");
  }
}

void write_text_file_atomic(const fs::path& path, const std::string& content) {
  write_file_atomic(path, content.data(), content.size());
}

uint64_t hash_file(const fs::path& path) {
  const auto bytes = read_binary_file(path);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace patchlab
