#include "uniground/types.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace uniground {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MissingPose: return "MissingPose";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::BadPose: return "BadPose";
    case ErrorCode::UnsatisfiableSpec: return "UnsatisfiableSpec";
    case ErrorCode::ProviderFailure: return "ProviderFailure";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::BadStatus: return "BadStatus";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::PayloadTooLarge: return "PayloadTooLarge";
  }
  return "Unknown";
}

void PointCloud::validate() const {
  if (positions.size() != colors.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "point cloud has " + std::to_string(positions.size()) + " positions but " +
                    std::to_string(colors.size()) + " colors");
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!positions[i].allFinite()) {
      throw Error(ErrorCode::CorruptFile, "non-finite point at index " + std::to_string(i),
                  static_cast<long>(i));
    }
  }
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "intrinsics must have positive focal lengths");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "intrinsics must have positive image size");
  }
  if (!(cx >= 0.0) || cx >= width || !(cy >= 0.0) || cy >= height) {
    throw Error(ErrorCode::InvalidArgument, "principal point must lie inside the image");
  }
}

double Pose::orthonormality_error() const {
  const Eigen::Matrix3d residual = rotation * rotation.transpose() - Eigen::Matrix3d::Identity();
  const double ortho = residual.cwiseAbs().maxCoeff();
  const double det = std::abs(rotation.determinant() - 1.0);
  return std::max(ortho, det);
}

void Pose::reorthonormalize() {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  rotation = r;
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = target - eye;
  if (forward.norm() < 1e-12) {
    throw Error(ErrorCode::InvalidArgument, "look_at eye and target coincide");
  }
  const Vec3 z = forward.normalized();
  Vec3 x = z.cross(Vec3(0.0, 0.0, 1.0));
  if (x.norm() < 1e-9) {
    // Looking straight up or down; pick a fixed horizontal right vector.
    x = Vec3(1.0, 0.0, 0.0);
  } else {
    x.normalize();
  }
  const Vec3 y = z.cross(x);
  Pose pose;
  pose.rotation.col(0) = x;
  pose.rotation.col(1) = y;
  pose.rotation.col(2) = z;
  pose.translation = eye;
  return pose;
}

bool OrientedBox::contains(const Vec3& p, double slack) const {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  const Vec3 d = p - center;
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  return std::abs(lx) <= half_extents.x() + slack && std::abs(ly) <= half_extents.y() + slack &&
         std::abs(d.z()) <= half_extents.z() + slack;
}

AxisAlignedBox OrientedBox::bounding_aabb() const {
  const double c = std::abs(std::cos(yaw));
  const double s = std::abs(std::sin(yaw));
  const double rx = c * half_extents.x() + s * half_extents.y();
  const double ry = s * half_extents.x() + c * half_extents.y();
  AxisAlignedBox box;
  box.min_corner = center - Vec3(rx, ry, half_extents.z());
  box.max_corner = center + Vec3(rx, ry, half_extents.z());
  return box;
}

std::array<Eigen::Vector2d, 4> OrientedBox::footprint_corners() const {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  const Eigen::Vector2d ex(c * half_extents.x(), s * half_extents.x());
  const Eigen::Vector2d ey(-s * half_extents.y(), c * half_extents.y());
  const Eigen::Vector2d o(center.x(), center.y());
  return {o + ex + ey, o - ex + ey, o - ex - ey, o + ex - ey};
}

}  // namespace uniground
