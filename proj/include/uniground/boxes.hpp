#pragma once

#include <span>

#include "uniground/types.hpp"

namespace uniground {

AxisAlignedBox fit_aabb(std::span<const Vec3f> points);
AxisAlignedBox fit_aabb(const PointCloud& cloud, std::span<const int> indices);

/// Minimum-area gravity-aligned bounding box: the footprint is the smallest
/// rectangle enclosing the XY projection (rotating calipers over the convex
/// hull), z extent is the plain min/max. Yaw is canonicalized to
/// [-pi/4, pi/4) by swapping extents; degenerate footprints get yaw 0.
/// Half extents are clamped to at least 1e-6.
OrientedBox fit_oriented_box(std::span<const Vec3f> points);
OrientedBox fit_oriented_box(const PointCloud& cloud, std::span<const int> indices);

}  // namespace uniground
