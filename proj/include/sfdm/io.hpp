#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sfdm/core.hpp"

namespace sfdm::io {

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// Shortest round-tripping decimal form ("%.17g").
std::string format_double(double v);
std::vector<std::string> split_csv_line(const std::string& line);

/// 8-bit code of a [-1, 1] pixel: round((x + 1) * 127.5), clamped.
unsigned char to_byte(double x) noexcept;
double from_byte(unsigned char b) noexcept;
/// The image as it reads back after an 8-bit round trip.
ImageTensor quantize(const ImageTensor& image);

/// Binary PPM (P6, maxval 255) encoding of a 3-channel image.
std::string encode_ppm(const ImageTensor& image);
ImageTensor decode_ppm(std::string_view bytes);
void write_ppm(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor read_ppm(const std::filesystem::path& path);

}  // namespace sfdm::io
