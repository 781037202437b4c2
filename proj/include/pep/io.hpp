#pragma once

// File formats. Byte-level layouts are documented in docs/formats.md.

#include <filesystem>
#include <string>
#include <vector>

#include "pep/core.hpp"
#include "pep/geometry.hpp"

namespace pep::io {

// Shortest decimal text that parses back to the same double.
std::string format_real(double v);

// KITTI velodyne scan: little-endian float32 (x, y, z, intensity) records.
PointCloud read_kitti_bin(const std::filesystem::path& path);
// Narrows x, y, z, intensity to float32.
void write_kitti_bin(const std::filesystem::path& path, const PointCloud& cloud);

// KITTI calibration text ("P2:", "R0_rect:", "Tr_velo_to_cam:"). An optional
// "image_size: W H" line sets the image extent; KITTI's 1242 x 375 otherwise.
Calibration parse_kitti_calib(const std::string& text);
Calibration read_kitti_calib(const std::filesystem::path& path);
std::string format_kitti_calib(const Calibration& calib);
void write_kitti_calib(const std::filesystem::path& path, const Calibration& calib);

// Columnar cloud text: a header of name:kind tokens ("x:f", "sem:c4", and an
// optional "gt:l" ground-truth column), then one point per line.
PointCloud parse_cloud_text(const std::string& text);
std::string format_cloud_text(const PointCloud& cloud);
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);

// "mask W H", then H rows of semantic ids, then H rows of instance ids.
LabeledMask parse_mask_text(const std::string& text);
std::string format_mask_text(const LabeledMask& mask);
LabeledMask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const LabeledMask& mask);

// One integer class id per line.
std::vector<int> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace pep::io
