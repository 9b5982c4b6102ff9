#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "sfdm/tensor.hpp"

namespace sfdm {

/// Little-endian binary encoding used by checkpoints.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}
  void u64(std::uint64_t v);
  void f64(double v);
  void str(const std::string& s);
  void tensor(const Tensor& t);

 private:
  std::ostream& os_;
};

/// Reads what BinaryWriter wrote; truncated or malformed input raises IoError.
class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}
  std::uint64_t u64();
  double f64();
  std::string str();
  Tensor tensor();

 private:
  void raw(char* dst, std::size_t n);
  std::istream& is_;
};

}  // namespace sfdm
