#pragma once

#include <string>

#include "diffdet/common.hpp"

namespace diffdet {

/// Shortest round-trip-safe decimal rendering (17 significant digits).
std::string format_g17(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

/// FNV-1a 64-bit hash, hex-encoded; used for config and output fingerprints.
std::string fnv1a64_hex(const std::string& bytes);

/// One sample per row; header x0..x{d-1}; values with 17 significant digits.
void write_matrix_csv(const std::string& path, const Mat& m);
Mat read_matrix_csv(const std::string& path);

}  // namespace diffdet
