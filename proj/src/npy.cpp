#include "ssp/npy.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>

#include "ssp/errors.hpp"

namespace ssp::npy {
namespace {

constexpr std::array<char, 6> kMagic = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

DType parse_descr(const std::string& descr) {
  if (descr.size() < 3) throw FormatError("npy: bad dtype descriptor '" + descr + "'");
  const char order = descr[0];
  if (order == '>') throw FormatError("npy: big-endian arrays are not supported");
  const std::string kind = descr.substr(1);
  if (kind == "f4") return DType::kF4;
  if (kind == "f8") return DType::kF8;
  if (kind == "i1") return DType::kI1;
  if (kind == "u1") return DType::kU1;
  if (kind == "i4") return DType::kI4;
  if (kind == "i8") return DType::kI8;
  if (kind == "b1") return DType::kBool;
  throw FormatError("npy: unsupported dtype '" + descr + "'");
}

Header parse_header(const std::string& text) {
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']+)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  Header header;
  if (!std::regex_search(text, m, descr_re)) throw FormatError("npy: header lacks 'descr'");
  header.dtype = parse_descr(m[1]);
  if (!std::regex_search(text, m, order_re)) throw FormatError("npy: header lacks 'fortran_order'");
  if (m[1] == "True") throw FormatError("npy: Fortran-ordered arrays are not supported");
  if (!std::regex_search(text, m, shape_re)) throw FormatError("npy: header lacks 'shape'");
  const std::string dims = m[1];
  static const std::regex int_re(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), int_re); it != std::sregex_iterator(); ++it) {
    header.shape.push_back(std::stoll(it->str()));
  }
  return header;
}

template <typename T>
void convert(const char* src, std::span<float> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v;
    std::memcpy(&v, src + i * sizeof(T), sizeof(T));
    out[i] = static_cast<float>(v);
  }
}

std::string build_header(DType dtype, std::span<const std::int64_t> shape) {
  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dims += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dims += ",";
    if (i + 1 < shape.size()) dims += " ";
  }
  std::string dict = "{'descr': '" + dtype_descr(dtype) + "', 'fortran_order': False, 'shape': (" + dims + "), }";
  // Magic (6) + version (2) + length (2) + dict + newline, padded to 64 bytes.
  std::size_t total = 10 + dict.size() + 1;
  std::size_t padding = (64 - total % 64) % 64;
  dict.append(padding, ' ');
  dict.push_back('\n');
  std::string out(kMagic.begin(), kMagic.end());
  out.push_back('\x01');
  out.push_back('\x00');
  auto len = static_cast<std::uint16_t>(dict.size());
  out.push_back(static_cast<char>(len & 0xff));
  out.push_back(static_cast<char>(len >> 8));
  return out + dict;
}

bool is_gzip_path(const std::filesystem::path& path) { return path.extension() == ".gz"; }

void write_bytes(const std::filesystem::path& path, const std::string& header, const char* data,
                 std::size_t bytes) {
  if (is_gzip_path(path)) {
    gzFile gz = gzopen(path.c_str(), "wb");
    if (gz == nullptr) throw std::runtime_error("npy: cannot open " + path.string() + " for writing");
    bool ok = gzwrite(gz, header.data(), static_cast<unsigned>(header.size())) == static_cast<int>(header.size());
    std::size_t offset = 0;
    while (ok && offset < bytes) {
      auto chunk = static_cast<unsigned>(std::min<std::size_t>(bytes - offset, 1u << 30));
      ok = gzwrite(gz, data + offset, chunk) == static_cast<int>(chunk);
      offset += chunk;
    }
    gzclose(gz);
    if (!ok) throw std::runtime_error("npy: write failed for " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("npy: cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(data, static_cast<std::streamsize>(bytes));
  if (!out) throw std::runtime_error("npy: write failed for " + path.string());
}

void check_count(std::span<const std::int64_t> shape, std::size_t n) {
  std::int64_t expected = std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
  if (expected != static_cast<std::int64_t>(n)) throw ShapeError("npy: data size does not match shape");
}

}  // namespace

std::int64_t Header::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF4: return 4;
    case DType::kF8: return 8;
    case DType::kI1: return 1;
    case DType::kU1: return 1;
    case DType::kI4: return 4;
    case DType::kI8: return 8;
    case DType::kBool: return 1;
  }
  return 0;
}

std::string dtype_descr(DType dtype) {
  switch (dtype) {
    case DType::kF4: return "<f4";
    case DType::kF8: return "<f8";
    case DType::kI1: return "|i1";
    case DType::kU1: return "|u1";
    case DType::kI4: return "<i4";
    case DType::kI8: return "<i8";
    case DType::kBool: return "|b1";
  }
  return "";
}

// gzread reads uncompressed files transparently, so one code path covers both.
struct Reader::Impl {
  gzFile file = nullptr;
  std::string path;

  void read_exact(char* dst, std::size_t n) {
    std::size_t done = 0;
    while (done < n) {
      auto chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
      int got = gzread(file, dst + done, chunk);
      if (got <= 0) throw FormatError("npy: unexpected end of data in " + path);
      done += static_cast<std::size_t>(got);
    }
  }
};

Reader::Reader(const std::filesystem::path& path) : impl_(std::make_unique<Impl>()) {
  impl_->path = path.string();
  if (!std::filesystem::exists(path)) throw std::runtime_error("npy: no such file: " + path.string());
  impl_->file = gzopen(path.c_str(), "rb");
  if (impl_->file == nullptr) throw std::runtime_error("npy: cannot open " + path.string());
  gzbuffer(impl_->file, 1 << 20);

  std::array<char, 8> prefix{};
  impl_->read_exact(prefix.data(), prefix.size());
  if (!std::equal(kMagic.begin(), kMagic.end(), prefix.begin())) {
    throw FormatError("npy: bad magic in " + path.string());
  }
  const int major = static_cast<unsigned char>(prefix[6]);
  std::size_t header_len = 0;
  if (major == 1) {
    std::array<unsigned char, 2> len{};
    impl_->read_exact(reinterpret_cast<char*>(len.data()), 2);
    header_len = len[0] | (len[1] << 8);
  } else if (major == 2 || major == 3) {
    std::array<unsigned char, 4> len{};
    impl_->read_exact(reinterpret_cast<char*>(len.data()), 4);
    header_len = len[0] | (len[1] << 8) | (len[2] << 16) | (static_cast<std::size_t>(len[3]) << 24);
  } else {
    throw FormatError("npy: unsupported format version " + std::to_string(major));
  }
  std::string text(header_len, '\0');
  impl_->read_exact(text.data(), header_len);
  header_ = parse_header(text);
}

Reader::~Reader() {
  if (impl_ && impl_->file != nullptr) gzclose(impl_->file);
}

std::int64_t Reader::row_size() const {
  if (header_.shape.empty()) return 1;
  return std::accumulate(header_.shape.begin() + 1, header_.shape.end(), std::int64_t{1}, std::multiplies<>());
}

void Reader::read_row(std::span<float> out) {
  const auto n = static_cast<std::size_t>(row_size());
  if (out.size() != n) throw ShapeError("npy: row buffer has wrong size");
  const std::size_t width = dtype_size(header_.dtype);
  scratch_.resize(n * width);
  impl_->read_exact(scratch_.data(), scratch_.size());
  switch (header_.dtype) {
    case DType::kF4: convert<float>(scratch_.data(), out); break;
    case DType::kF8: convert<double>(scratch_.data(), out); break;
    case DType::kI1: convert<std::int8_t>(scratch_.data(), out); break;
    case DType::kU1: convert<std::uint8_t>(scratch_.data(), out); break;
    case DType::kBool: convert<std::uint8_t>(scratch_.data(), out); break;
    case DType::kI4: convert<std::int32_t>(scratch_.data(), out); break;
    case DType::kI8: convert<std::int64_t>(scratch_.data(), out); break;
  }
}

FloatArray read_floats(const std::filesystem::path& path) {
  Reader reader(path);
  FloatArray out;
  out.shape = reader.header().shape;
  const auto row = static_cast<std::size_t>(reader.row_size());
  out.data.resize(static_cast<std::size_t>(reader.header().element_count()));
  for (std::int64_t r = 0; r < reader.rows(); ++r) {
    reader.read_row(std::span<float>(out.data).subspan(static_cast<std::size_t>(r) * row, row));
  }
  return out;
}

IntArray read_ints(const std::filesystem::path& path) {
  Reader reader(path);
  if (reader.header().dtype != DType::kI4) throw FormatError("npy: expected int32 array in " + path.string());
  FloatArray floats = read_floats(path);
  IntArray out;
  out.shape = std::move(floats.shape);
  out.data.assign(floats.data.begin(), floats.data.end());
  return out;
}

void write(const std::filesystem::path& path, std::span<const std::int64_t> shape, std::span<const float> data) {
  check_count(shape, data.size());
  write_bytes(path, build_header(DType::kF4, shape), reinterpret_cast<const char*>(data.data()),
              data.size() * sizeof(float));
}

void write(const std::filesystem::path& path, std::span<const std::int64_t> shape,
           std::span<const std::int32_t> data) {
  check_count(shape, data.size());
  write_bytes(path, build_header(DType::kI4, shape), reinterpret_cast<const char*>(data.data()),
              data.size() * sizeof(std::int32_t));
}

}  // namespace ssp::npy
