#pragma once

#include <span>

#include "uniground/types.hpp"

namespace uniground {

/// Continuous pinhole projection of one world point.
/// Returns false when the point is behind the camera (z <= 0) or lands
/// outside the half-open image rectangle [0,W) x [0,H).
bool project_point(const Vec3& p_world, const Pose& pose, const CameraIntrinsics& intr,
                   Eigen::Vector2d& uv, double& depth);

struct ProjectedPoint {
  float u = 0.0f;
  float v = 0.0f;
  float depth = 0.0f;
  std::int32_t cell = -1;  // v_int * width + u_int, -1 when culled
};

/// All cloud points projected against one camera, plus a z-buffer splatted
/// from the projected points (disc of `splat_radius` pixels, min depth wins,
/// +inf where empty). The z-buffer stands in for real geometry when deciding
/// point visibility.
struct FrameGeometry {
  int width = 0;
  int height = 0;
  std::vector<ProjectedPoint> points;
  cv::Mat zbuffer;  // CV_32FC1
};

FrameGeometry project_cloud(const PointCloud& cloud, const Pose& pose,
                            const CameraIntrinsics& intr, int splat_radius = 1);

/// Z-buffer only, for callers that do not need the per-point projections.
cv::Mat build_zbuffer(const PointCloud& cloud, const Pose& pose, const CameraIntrinsics& intr,
                      int splat_radius = 1);

/// Binary instance masks for one frame plus a precomputed label map so that
/// per-cell lookups are O(1). Overlapping masks resolve to the lowest index.
struct MaskSet {
  int frame_id = -1;
  int n = 0;
  std::vector<cv::Mat> masks;  // CV_8UC1, nonzero = covered
  cv::Mat labels;              // CV_32SC1, lowest covering mask index, -1 = none

  static MaskSet from_masks(int frame_id, std::vector<cv::Mat> masks);
  bool empty() const { return n == 0; }
};

struct ViewObservation {
  int frame_id = -1;
  int visible_pixels = 0;        // distinct cells containing at least one visible point
  int total_pixels = 0;          // distinct cells hit by any non-culled point
  Eigen::VectorXf mask_feature;  // entry j = fraction of visible cells inside mask j
  cv::Rect visible_bbox;         // tight bbox of the visible cells, empty when none
};

/// A point is visible when its depth is within `depth_tolerance` of the
/// splatted z-buffer at its cell and, where the frame carries a valid depth
/// measurement (> 0), also within `depth_tolerance` of that measurement.
/// Pass an empty `depth_map` to test against the z-buffer alone.
ViewObservation observe_points(const FrameGeometry& geo, const cv::Mat& depth_map,
                               std::span<const int> indices, int frame_id,
                               double depth_tolerance = 0.05);

/// observe_points plus the mask feature: entry j counts the visible cells
/// whose lowest covering mask is j, divided by visible_pixels (zero vector
/// when nothing is visible). The vector always has masks.n entries.
ViewObservation observe_superpoint(const FrameGeometry& geo, const cv::Mat& depth_map,
                                   const MaskSet& masks, std::span<const int> indices,
                                   int frame_id, double occlusion_tol = 0.05);

/// Sorted distinct cell ids of the visible points, same visibility rule.
std::vector<std::int32_t> visible_cells(const FrameGeometry& geo, const cv::Mat& depth_map,
                                        std::span<const int> indices,
                                        double depth_tolerance = 0.05);

}  // namespace uniground
