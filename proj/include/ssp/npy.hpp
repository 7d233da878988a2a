#pragma once

// Reader and writer for the NumPy single-array container (.npy), optionally
// gzip-compressed. Only C-order little-endian numeric arrays are supported.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ssp::npy {

enum class DType { kF4, kF8, kI1, kU1, kI4, kI8, kBool };

struct Header {
  DType dtype = DType::kF4;
  std::vector<std::int64_t> shape;

  std::int64_t element_count() const;
};

std::size_t dtype_size(DType dtype);
std::string dtype_descr(DType dtype);

// Streams rows of a (possibly gzip-compressed) .npy file, converting every
// element to float. A "row" is the sub-array below the leading axis.
class Reader {
 public:
  explicit Reader(const std::filesystem::path& path);
  ~Reader();
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  const Header& header() const { return header_; }
  std::int64_t rows() const { return header_.shape.empty() ? 1 : header_.shape.front(); }
  std::int64_t row_size() const;

  // Reads the next row into `out` (size row_size()). Throws FormatError on a
  // short read.
  void read_row(std::span<float> out);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  Header header_;
  std::vector<char> scratch_;
};

struct FloatArray {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

struct IntArray {
  std::vector<std::int64_t> shape;
  std::vector<std::int32_t> data;
};

FloatArray read_floats(const std::filesystem::path& path);
IntArray read_ints(const std::filesystem::path& path);

// Writers emit uncompressed .npy (format version 1.0); a ".gz" suffix on the
// path selects gzip output.
void write(const std::filesystem::path& path, std::span<const std::int64_t> shape,
           std::span<const float> data);
void write(const std::filesystem::path& path, std::span<const std::int64_t> shape,
           std::span<const std::int32_t> data);

}  // namespace ssp::npy
