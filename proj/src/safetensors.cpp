#include "patchlab/safetensors.hpp"

#include <json.hpp>

#include <cstring>

#include "patchlab/common.hpp"
#include "patchlab/fsio.hpp"

namespace patchlab {

namespace {

using nlohmann::json;

size_t dtype_size(const std::string& dtype) {
  if (dtype == "F32") return 4;
  if (dtype == "F64") return 8;
  throw InputError("unsupported tensor dtype '" + dtype + "' (expected F32 or F64)");
}

size_t element_count(const std::vector<int64_t>& shape) {
  size_t n = 1;
  for (const int64_t d : shape) {
    if (d < 0) throw InputError("negative dimension in tensor shape");
    n *= static_cast<size_t>(d);
  }
  return n;
}

}  // namespace

SafeTensors SafeTensors::open(const std::filesystem::path& path) {
  SafeTensors st;
  st.bytes_ = read_binary_file(path);
  if (st.bytes_.size() < 8)
    throw InputError(path.string() + ": corrupt header (file shorter than the length field)");
  uint64_t header_len = 0;
  std::memcpy(&header_len, st.bytes_.data(), 8);
  if (header_len > st.bytes_.size() - 8)
    throw InputError(path.string() + ": corrupt header (declared length exceeds the file)");
  st.data_begin_ = 8 + static_cast<size_t>(header_len);

  json header;
  try {
    header = json::parse(st.bytes_.begin() + 8, st.bytes_.begin() + 8 + header_len);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": corrupt header (" + e.what() + ")");
  }
  if (!header.is_object()) throw InputError(path.string() + ": corrupt header (not a JSON object)");

  const size_t data_size = st.bytes_.size() - st.data_begin_;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") continue;
    TensorInfo t;
    try {
      t.dtype = entry.at("dtype").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<int64_t>>();
      const auto offsets = entry.at("data_offsets").get<std::vector<uint64_t>>();
      if (offsets.size() != 2) throw InputError("data_offsets must have two entries");
      t.begin = static_cast<size_t>(offsets[0]);
      t.end = static_cast<size_t>(offsets[1]);
    } catch (const json::exception& e) {
      throw InputError(path.string() + ": malformed entry for tensor '" + name + "': " + e.what());
    }
    if (t.end < t.begin || t.end > data_size)
      throw InputError(path.string() + ": tensor '" + name + "' offsets fall outside the file");
    if (t.end - t.begin != element_count(t.shape) * dtype_size(t.dtype))
      throw InputError(path.string() + ": tensor '" + name +
                       "' byte range does not match its shape");
    st.infos_.emplace(name, std::move(t));
  }
  return st;
}

const TensorInfo& SafeTensors::info(const std::string& name) const {
  const auto it = infos_.find(name);
  if (it == infos_.end()) throw InputError("missing tensor '" + name + "'");
  return it->second;
}

std::vector<std::string> SafeTensors::names() const {
  std::vector<std::string> out;
  out.reserve(infos_.size());
  for (const auto& [name, _] : infos_) out.push_back(name);
  return out;
}

template <typename Scalar>
void SafeTensors::read_values(const TensorInfo& t, Scalar* out, size_t count) const {
  const uint8_t* p = payload(t);
  if (t.dtype == "F32") {
    for (size_t i = 0; i < count; ++i) {
      float v;
      std::memcpy(&v, p + 4 * i, 4);
      out[i] = static_cast<Scalar>(v);
    }
  } else {
    for (size_t i = 0; i < count; ++i) {
      double v;
      std::memcpy(&v, p + 8 * i, 8);
      out[i] = static_cast<Scalar>(v);
    }
  }
}

template <typename Scalar>
Mat<Scalar> SafeTensors::matrix(const std::string& name) const {
  const TensorInfo& t = info(name);
  if (t.shape.size() != 2)
    throw InputError("tensor '" + name + "' has rank " + std::to_string(t.shape.size()) +
                     ", expected a matrix");
  Mat<Scalar> out(static_cast<Index>(t.shape[0]), static_cast<Index>(t.shape[1]));
  read_values(t, out.data(), static_cast<size_t>(out.size()));
  return out;
}

template <typename Scalar>
Vec<Scalar> SafeTensors::vector(const std::string& name) const {
  const TensorInfo& t = info(name);
  if (t.shape.size() != 1)
    throw InputError("tensor '" + name + "' has rank " + std::to_string(t.shape.size()) +
                     ", expected a vector");
  Vec<Scalar> out(static_cast<Index>(t.shape[0]));
  read_values(t, out.data(), static_cast<size_t>(out.size()));
  return out;
}

template Mat<float> SafeTensors::matrix<float>(const std::string&) const;
template Mat<double> SafeTensors::matrix<double>(const std::string&) const;
template Vec<float> SafeTensors::vector<float>(const std::string&) const;
template Vec<double> SafeTensors::vector<double>(const std::string&) const;

void SafeTensorsWriter::add_raw(const std::string& name, const std::string& dtype,
                                std::vector<int64_t> shape, const void* data, size_t size) {
  for (const auto& [existing, _] : infos_)
    if (existing == name) throw InvariantError("duplicate tensor '" + name + "'");
  TensorInfo t;
  t.dtype = dtype;
  t.shape = std::move(shape);
  t.begin = payload_.size();
  t.end = t.begin + size;
  payload_.insert(payload_.end(), static_cast<const uint8_t*>(data),
                  static_cast<const uint8_t*>(data) + size);
  infos_.emplace_back(name, std::move(t));
}

template <typename Scalar>
void SafeTensorsWriter::add_matrix(const std::string& name, const Mat<Scalar>& m) {
  add_raw(name, sizeof(Scalar) == 4 ? "F32" : "F64", {m.rows(), m.cols()}, m.data(),
          sizeof(Scalar) * static_cast<size_t>(m.size()));
}

template <typename Scalar>
void SafeTensorsWriter::add_vector(const std::string& name, const Vec<Scalar>& v) {
  add_raw(name, sizeof(Scalar) == 4 ? "F32" : "F64", {v.size()}, v.data(),
          sizeof(Scalar) * static_cast<size_t>(v.size()));
}

template void SafeTensorsWriter::add_matrix<float>(const std::string&, const Mat<float>&);
template void SafeTensorsWriter::add_matrix<double>(const std::string&, const Mat<double>&);
template void SafeTensorsWriter::add_vector<float>(const std::string&, const Vec<float>&);
template void SafeTensorsWriter::add_vector<double>(const std::string&, const Vec<double>&);

void SafeTensorsWriter::save(const std::filesystem::path& path) const {
  json header = json::object();
  for (const auto& [name, t] : infos_) {
    header[name] = {{"dtype", t.dtype},
                    {"shape", t.shape},
                    {"data_offsets", {t.begin, t.end}}};
  }
  std::string header_text = header.dump();
  while ((header_text.size() + 8) % 8 != 0) header_text.push_back(' ');

  std::vector<uint8_t> out;
  out.reserve(8 + header_text.size() + payload_.size());
  const uint64_t header_len = header_text.size();
  out.resize(8);
  std::memcpy(out.data(), &header_len, 8);
  out.insert(out.end(), header_text.begin(), header_text.end());
  out.insert(out.end(), payload_.begin(), payload_.end());
  write_file_atomic(path, out.data(), out.size());
}

}  // namespace patchlab
