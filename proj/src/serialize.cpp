#include "sfdm/serialize.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "sfdm/error.hpp"

namespace sfdm {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {
constexpr std::uint64_t kMaxLen = std::uint64_t{1} << 34;
}

void BinaryWriter::u64(std::uint64_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }

void BinaryWriter::f64(double v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }

void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  os_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::tensor(const Tensor& t) {
  u64(t.rank());
  for (std::size_t d : t.shape()) u64(d);
  os_.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void BinaryReader::raw(char* dst, std::size_t n) {
  is_.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is_.gcount()) != n) throw IoError("truncated binary stream");
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  raw(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  raw(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::string BinaryReader::str() {
  const std::uint64_t n = u64();
  if (n > kMaxLen) throw IoError("string length out of range");
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

Tensor BinaryReader::tensor() {
  const std::uint64_t rank = u64();
  if (rank > 8) throw IoError("tensor rank out of range");
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = u64();
    count *= d;
    if (count > kMaxLen) throw IoError("tensor size out of range");
  }
  Tensor t(shape);
  raw(reinterpret_cast<char*>(t.data().data()), t.size() * sizeof(double));
  return t;
}

}  // namespace sfdm
