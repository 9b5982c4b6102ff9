#include "sfdm/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sfdm/error.hpp"

namespace sfdm::io {

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename into " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

unsigned char to_byte(double x) noexcept {
  const double v = std::round((x + 1.0) * 127.5);
  return static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
}

double from_byte(unsigned char b) noexcept { return b / 127.5 - 1.0; }

ImageTensor quantize(const ImageTensor& image) {
  Tensor t = image.tensor();
  for (auto& v : t.vec()) v = from_byte(to_byte(v));
  return ImageTensor(std::move(t));
}

std::string encode_ppm(const ImageTensor& image) {
  if (image.channels() != 3) throw ShapeMismatch("PPM needs 3 channels");
  const std::size_t h = image.height(), w = image.width();
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const Tensor& t = image.tensor();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out += static_cast<char>(to_byte(t[(c * h + y) * w + x]));
  return out;
}

namespace {

// Next whitespace-delimited header token, skipping # comments.
std::string header_token(std::string_view bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) tok += bytes[pos++];
  return tok;
}

}  // namespace

ImageTensor decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  if (header_token(bytes, pos) != "P6") throw DecodeError("not a binary PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(header_token(bytes, pos));
    h = std::stoul(header_token(bytes, pos));
    maxval = std::stoul(header_token(bytes, pos));
  } catch (const std::logic_error&) {
    throw DecodeError("malformed PPM header");
  }
  if (maxval != 255 || w == 0 || h == 0 || w > 65536 || h > 65536) throw DecodeError("unsupported PPM geometry");
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos + 3 * w * h) throw DecodeError("truncated PPM data");
  Tensor t({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        t[(c * h + y) * w + x] = from_byte(static_cast<unsigned char>(bytes[pos++]));
  return ImageTensor(std::move(t));
}

void write_ppm(const std::filesystem::path& path, const ImageTensor& image) {
  write_file_atomic(path, encode_ppm(image));
}

ImageTensor read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }

}  // namespace sfdm::io
