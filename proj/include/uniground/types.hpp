#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <opencv2/core.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace uniground {

using Vec3 = Eigen::Vector3d;
using Vec3f = Eigen::Vector3f;
using Rgb = std::array<std::uint8_t, 3>;

enum class ErrorCode {
  InvalidArgument,
  TooFewPoints,
  MissingFile,
  MissingPose,
  CorruptFile,
  DimensionMismatch,
  BadPose,
  UnsatisfiableSpec,
  ProviderFailure,
  Timeout,
  BadStatus,
  MalformedResponse,
  PayloadTooLarge,
};

const char* error_code_name(ErrorCode code);

/// Exception carrying a machine-checkable code plus an integer detail
/// (frame index, HTTP status, ...) so callers can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, long detail = 0)
      : std::runtime_error(what), code_(code), detail_(detail) {}

  ErrorCode code() const { return code_; }
  long detail() const { return detail_; }

 private:
  ErrorCode code_;
  long detail_;
};

/// Colored point cloud. Positions are float32 so PLY round-trips are
/// bitwise exact.
struct PointCloud {
  std::vector<Vec3f> positions;
  std::vector<Rgb> colors;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  void validate() const;
};

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const;
};

/// Camera-to-world rigid transform. Camera axes follow the pinhole
/// convention: x right, y down, z forward.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 to_camera(const Vec3& p_world) const {
    return rotation.transpose() * (p_world - translation);
  }
  Vec3 to_world(const Vec3& p_camera) const {
    return rotation * p_camera + translation;
  }

  /// max(|R*R^T - I|_max, |det(R) - 1|)
  double orthonormality_error() const;
  /// Snap rotation to the nearest proper rotation (SVD).
  void reorthonormalize();
  Eigen::Matrix4d matrix() const;
};

/// Camera at `eye` looking at `target`, image up aligned with world +z.
Pose look_at(const Vec3& eye, const Vec3& target);

struct Frame {
  int frame_id = 0;
  cv::Mat rgb;    // CV_8UC3, RGB channel order
  cv::Mat depth;  // CV_32FC1, meters; 0 = invalid
  Pose pose;
  CameraIntrinsics intrinsics;
};

struct Scene {
  std::string scene_id;
  PointCloud cloud;
  std::vector<Frame> frames;
};

struct AxisAlignedBox {
  Vec3 min_corner = Vec3::Zero();
  Vec3 max_corner = Vec3::Zero();

  Vec3 size() const { return max_corner - min_corner; }
  Vec3 center() const { return 0.5 * (min_corner + max_corner); }
  double volume() const {
    const Vec3 s = size();
    return s.x() * s.y() * s.z();
  }
  bool contains(const Vec3& p, double slack = 0.0) const {
    return p.x() >= min_corner.x() - slack && p.x() <= max_corner.x() + slack &&
           p.y() >= min_corner.y() - slack && p.y() <= max_corner.y() + slack &&
           p.z() >= min_corner.z() - slack && p.z() <= max_corner.z() + slack;
  }
};

/// Gravity-aligned box: yaw rotates about world +z, yaw in [-pi/2, pi/2).
struct OrientedBox {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Zero();
  double yaw = 0.0;

  double volume() const { return 8.0 * half_extents.prod(); }
  double footprint_area() const { return 4.0 * half_extents.x() * half_extents.y(); }
  bool contains(const Vec3& p, double slack = 0.0) const;
  AxisAlignedBox bounding_aabb() const;
  /// Footprint rectangle corners in the XY plane, counter-clockwise.
  std::array<Eigen::Vector2d, 4> footprint_corners() const;
};

struct GroundingQuery {
  std::string text;
  std::string query_id;
};

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

}  // namespace uniground
