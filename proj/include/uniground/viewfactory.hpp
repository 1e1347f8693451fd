#pragma once

#include "uniground/semantics.hpp"

namespace uniground {

/// Constrained orbit camera family: position(theta) = mean candidate center
/// + (r cos theta, r sin theta, h), looking at the mean center with world +z
/// up. The bounds keep viewpoints out of degenerate close-up or low-altitude
/// placements.
struct OrbitCameraSpec {
  double r = 0.0;
  double h = 0.0;
  double r_min = 0.0;
  double h_min = 0.0;
  std::vector<double> azimuths = {deg_to_rad(90.0), deg_to_rad(210.0), deg_to_rad(330.0)};

  void validate() const;  // r >= r_min > 0, h >= h_min > 0, azimuths non-empty
};

/// r_min = half the horizontal AABB diagonal (floor 0.5 m for degenerate
/// scenes), h_min = 1.5 m, r = max(r_min, 0.75 * diagonal),
/// h = max(h_min, scene height + 1 m).
OrbitCameraSpec orbit_spec_for_scene(const AxisAlignedBox& scene_bounds);

CameraIntrinsics default_render_intrinsics();  // 640x480, f = 500

std::vector<Pose> orbit_positions(const std::vector<Candidate>& candidates,
                                  const OrbitCameraSpec& spec);

struct Render {
  cv::Mat image;  // CV_8UC3 RGB, neutral gray background
  cv::Mat depth;  // CV_32FC1, +inf where no point landed
};

/// Z-buffered point splatting: each point paints a disc whose pixel radius
/// is max(1, round(base_splat_radius_m * fx / depth)); the nearest point
/// wins per pixel (first point wins exact ties). Bitwise deterministic.
Render render_scene(const PointCloud& cloud, const Pose& pose, const CameraIntrinsics& intr,
                    double base_splat_radius_m = 0.015);

struct GlobalRender {
  cv::Mat image;
  cv::Mat depth;
  Pose camera;
  CameraIntrinsics intrinsics;
  std::map<int, cv::Point> overlay_ids;  // candidate_id -> drawn label anchor
  std::vector<int> culled_ids;           // out of frustum or occluded, no label
  bool axes_drawn = false;
};

/// Draw the world +x/+y/+z axes (red/green/blue, text-labelled) from
/// `axes_origin`, then each candidate's id at its OBB-center projection when
/// the center is in the frustum and unoccluded within 0.2 m against the
/// render depth. Anchors are nudged apart until pairwise distances are
/// >= 10 px.
GlobalRender annotate_global(const Render& render, const Pose& camera,
                             const CameraIntrinsics& intrinsics,
                             const std::vector<Candidate>& candidates,
                             const Vec3& axes_origin, double axes_length = 1.0);

struct CandidateView {
  int frame_id = -1;  // -1 for orbit-render fallback views
  cv::Mat image;      // crop with the candidate's 2D box drawn
  cv::Rect box;       // drawn box in image coordinates
};

struct CandidateViewSet {
  int candidate_id = 0;
  std::vector<CandidateView> views;  // at most l, frame_id ascending
  bool fallback = false;             // true when built from orbit renders
};

/// From the top-2l frames by candidate pixel proportion, pick the size-l
/// subset with the maximum sum of pairwise camera distances (exhaustive,
/// ties by lexicographically smallest frame-id tuple). Each view is a 2x
/// crop around the candidate with its projected box drawn. A candidate
/// visible nowhere falls back to l orbit renders around its own center.
CandidateViewSet select_candidate_views(const Candidate& candidate, const Scene& scene,
                                        const FrameGeometryCache& cache, int l,
                                        const OrbitCameraSpec& fallback_spec,
                                        const CameraIntrinsics& fallback_intrinsics,
                                        double occlusion_tol = 0.05);

}  // namespace uniground
