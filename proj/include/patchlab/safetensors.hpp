#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchlab/matrix.hpp"

// Weight archive format: an 8-byte little-endian header length, a UTF-8 JSON
// header mapping tensor name -> {dtype, shape, data_offsets}, then the raw
// little-endian tensor bytes. Only F32 and F64 payloads are supported; reads
// convert to the requested scalar type.

namespace patchlab {

struct TensorInfo {
  std::string dtype;            // "F32" or "F64"
  std::vector<int64_t> shape;   // row-major
  size_t begin = 0, end = 0;    // byte range within the data section
};

class SafeTensors {
 public:
  static SafeTensors open(const std::filesystem::path& path);

  bool contains(const std::string& name) const { return infos_.count(name) > 0; }
  const TensorInfo& info(const std::string& name) const;
  std::vector<std::string> names() const;

  template <typename Scalar>
  Mat<Scalar> matrix(const std::string& name) const;  // 2-D tensors
  template <typename Scalar>
  Vec<Scalar> vector(const std::string& name) const;  // 1-D tensors

 private:
  SafeTensors() = default;
  const uint8_t* payload(const TensorInfo& t) const { return bytes_.data() + data_begin_ + t.begin; }
  template <typename Scalar>
  void read_values(const TensorInfo& t, Scalar* out, size_t count) const;

  std::vector<uint8_t> bytes_;
  size_t data_begin_ = 0;
  std::map<std::string, TensorInfo> infos_;
};

class SafeTensorsWriter {
 public:
  template <typename Scalar>
  void add_matrix(const std::string& name, const Mat<Scalar>& m);
  template <typename Scalar>
  void add_vector(const std::string& name, const Vec<Scalar>& v);

  // Assembles header plus payload and writes atomically.
  void save(const std::filesystem::path& path) const;

 private:
  void add_raw(const std::string& name, const std::string& dtype, std::vector<int64_t> shape,
               const void* data, size_t size);

  std::vector<std::pair<std::string, TensorInfo>> infos_;
  std::vector<uint8_t> payload_;
};

}  // namespace patchlab
