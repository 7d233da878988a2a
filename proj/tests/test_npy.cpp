#include <gtest/gtest.h>
#include <zlib.h>

#include <cstring>
#include <fstream>

#include "ssp/errors.hpp"
#include "ssp/npy.hpp"
#include "support.hpp"

namespace npy = ssp::npy;
using ssp::testing::TempDir;

namespace {

// Hand-assembled v1.0 file with an arbitrary header dictionary.
void write_raw_npy(const std::filesystem::path& path, const std::string& dict, const std::string& payload) {
  std::string header = dict;
  const std::size_t preamble = 10;
  while ((preamble + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::ofstream out(path, std::ios::binary);
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.put(static_cast<char>(len & 0xff));
  out.put(static_cast<char>(len >> 8));
  out << header << payload;
}

template <typename T>
std::string bytes_of(const std::vector<T>& v) {
  return std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
}

}  // namespace

TEST(Npy, FloatRoundTripPlainAndGzip) {
  TempDir dir;
  const std::vector<std::int64_t> shape = {2, 3, 4};
  std::vector<float> data(24);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i) * 0.5f - 3.0f;
  for (const char* name : {"a.npy", "a.npy.gz"}) {
    npy::write(dir / name, shape, data);
    const auto back = npy::read_floats(dir / name);
    EXPECT_EQ(back.shape, shape);
    EXPECT_EQ(back.data, data);
  }
}

TEST(Npy, GzipOutputIsCompressed) {
  TempDir dir;
  const std::vector<std::int64_t> shape = {1000};
  std::vector<float> zeros(1000, 0.0f);
  npy::write(dir / "z.npy.gz", shape, zeros);
  std::ifstream in(dir / "z.npy.gz", std::ios::binary);
  unsigned char magic[2] = {};
  in.read(reinterpret_cast<char*>(magic), 2);
  EXPECT_EQ(magic[0], 0x1f);
  EXPECT_EQ(magic[1], 0x8b);
  EXPECT_LT(std::filesystem::file_size(dir / "z.npy.gz"), 4000u);
}

TEST(Npy, IntRoundTrip) {
  TempDir dir;
  const std::vector<std::int64_t> shape = {3, 2};
  const std::vector<std::int32_t> data = {0, 483, -7, 12, 21, 1};
  npy::write(dir / "i.npy", shape, data);
  const auto back = npy::read_ints(dir / "i.npy");
  EXPECT_EQ(back.shape, shape);
  EXPECT_EQ(back.data, data);
  EXPECT_THROW(npy::read_ints(dir / "missing.npy"), std::runtime_error);
}

TEST(Npy, HeaderIsPaddedTo64Bytes) {
  TempDir dir;
  const std::vector<std::int64_t> shape = {5};
  npy::write(dir / "h.npy", shape, std::vector<float>(5, 1.0f));
  EXPECT_EQ((std::filesystem::file_size(dir / "h.npy") - 5 * sizeof(float)) % 64, 0u);
}

TEST(Npy, ReadsOtherDtypesAsFloat) {
  TempDir dir;
  write_raw_npy(dir / "f8.npy", "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 2), }",
                bytes_of(std::vector<double>{1.5, -2.0, 0.25, 4.0}));
  write_raw_npy(dir / "i1.npy", "{'descr': '|i1', 'fortran_order': False, 'shape': (3,), }",
                bytes_of(std::vector<std::int8_t>{-1, 0, 7}));
  write_raw_npy(dir / "b1.npy", "{'descr': '|b1', 'fortran_order': False, 'shape': (2,), }",
                bytes_of(std::vector<std::uint8_t>{1, 0}));
  write_raw_npy(dir / "i8.npy", "{'descr': '<i8', 'fortran_order': False, 'shape': (2,), }",
                bytes_of(std::vector<std::int64_t>{-3, 9}));

  EXPECT_EQ(npy::read_floats(dir / "f8.npy").data, (std::vector<float>{1.5f, -2.0f, 0.25f, 4.0f}));
  EXPECT_EQ(npy::read_floats(dir / "i1.npy").data, (std::vector<float>{-1.0f, 0.0f, 7.0f}));
  EXPECT_EQ(npy::read_floats(dir / "b1.npy").data, (std::vector<float>{1.0f, 0.0f}));
  EXPECT_EQ(npy::read_floats(dir / "i8.npy").data, (std::vector<float>{-3.0f, 9.0f}));
}

TEST(Npy, StreamsRowsOfLeadingAxis) {
  TempDir dir;
  const std::vector<std::int64_t> shape = {3, 2, 2};
  std::vector<float> data(12);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i);
  npy::write(dir / "r.npy.gz", shape, data);
  npy::Reader reader(dir / "r.npy.gz");
  EXPECT_EQ(reader.rows(), 3);
  EXPECT_EQ(reader.row_size(), 4);
  std::vector<float> row(4);
  for (int r = 0; r < 3; ++r) {
    reader.read_row(row);
    EXPECT_EQ(row[0], static_cast<float>(4 * r));
  }
  EXPECT_THROW(reader.read_row(row), ssp::FormatError);
}

TEST(Npy, RejectsMalformedFiles) {
  TempDir dir;
  {
    std::ofstream out(dir / "bad.npy", std::ios::binary);
    out << "not an array at all";
  }
  EXPECT_THROW(npy::read_floats(dir / "bad.npy"), ssp::FormatError);

  write_raw_npy(dir / "fortran.npy", "{'descr': '<f4', 'fortran_order': True, 'shape': (2, 2), }",
                bytes_of(std::vector<float>(4, 0.0f)));
  EXPECT_THROW(npy::read_floats(dir / "fortran.npy"), ssp::FormatError);

  write_raw_npy(dir / "bigendian.npy", "{'descr': '>f4', 'fortran_order': False, 'shape': (1,), }",
                bytes_of(std::vector<float>(1, 0.0f)));
  EXPECT_THROW(npy::read_floats(dir / "bigendian.npy"), ssp::FormatError);

  write_raw_npy(dir / "complex.npy", "{'descr': '<c8', 'fortran_order': False, 'shape': (1,), }",
                bytes_of(std::vector<float>(2, 0.0f)));
  EXPECT_THROW(npy::read_floats(dir / "complex.npy"), ssp::FormatError);

  write_raw_npy(dir / "short.npy", "{'descr': '<f4', 'fortran_order': False, 'shape': (10,), }",
                bytes_of(std::vector<float>(3, 0.0f)));
  EXPECT_THROW(npy::read_floats(dir / "short.npy"), ssp::FormatError);
}

TEST(Npy, WriteRejectsShapeMismatch) {
  TempDir dir;
  const std::vector<std::int64_t> shape = {2, 2};
  EXPECT_THROW(npy::write(dir / "x.npy", shape, std::vector<float>(3, 0.0f)), ssp::ShapeError);
}
