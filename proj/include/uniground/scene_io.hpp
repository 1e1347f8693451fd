#pragma once

#include <filesystem>

#include "uniground/types.hpp"

namespace uniground {

/// Binary little-endian PLY with exactly the properties
/// float x, y, z + uchar red, green, blue. Anything else is rejected.
PointCloud load_ply(const std::filesystem::path& path);
void save_ply(const std::filesystem::path& path, const PointCloud& cloud);

cv::Mat load_rgb_png(const std::filesystem::path& path);
void save_rgb_png(const std::filesystem::path& path, const cv::Mat& rgb);

/// 16-bit grayscale PNG in millimeters <-> CV_32FC1 meters. 0 stays 0
/// (invalid); saving clips to the representable range [0, 65.535 m].
cv::Mat load_depth_png(const std::filesystem::path& path);
void save_depth_png(const std::filesystem::path& path, const cv::Mat& depth_m);

/// Single line "fx fy cx cy width height".
CameraIntrinsics load_intrinsics(const std::filesystem::path& path);
void save_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& intr);

/// 4x4 row-major camera-to-world matrix, 4 numbers per line. Rotations with
/// orthonormality error above 1e-3 are rejected; smaller drift is snapped to
/// the nearest rotation.
Pose load_pose(const std::filesystem::path& path);
void save_pose(const std::filesystem::path& path, const Pose& pose);

/// Scene directory layout:
///   cloud.ply
///   frames/color_%06d.png  frames/depth_%06d.png  frames/pose_%06d.txt
///   frames/intrinsics.txt
/// Frame ids are the consecutive indices 0..n-1; a gap or a missing file of
/// any kind for an existing index is an error.
Scene load_scene(const std::filesystem::path& root);
void save_scene(const std::filesystem::path& root, const Scene& scene);

}  // namespace uniground
