#include "uniground/viewfactory.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace uniground {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
const cv::Scalar kBoxColor(255, 0, 255);
constexpr double kLabelOcclusionTol = 0.2;
constexpr double kLabelMinSeparation = 10.0;

/// Pinhole projection without the image-rectangle cull; callers that draw
/// lines or boxes want coordinates even when they land off screen.
bool camera_project(const Vec3& p_world, const Pose& pose, const CameraIntrinsics& intr,
                    cv::Point2d& px, double& depth) {
  const Vec3 pc = pose.to_camera(p_world);
  if (pc.z() <= 0.0) {
    return false;
  }
  px.x = intr.fx * pc.x() / pc.z() + intr.cx;
  px.y = intr.fy * pc.y() / pc.z() + intr.cy;
  depth = pc.z();
  return true;
}

double squared_distance(const cv::Point& a, const cv::Point& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

/// Nearest free spot to `anchor` on an expanding 12 px grid, scanned in a
/// deterministic ring order. Free means >= 10 px from every placed anchor.
cv::Point place_label(const cv::Point& anchor, const std::vector<cv::Point>& placed,
                      const cv::Size& size) {
  const auto clamp_point = [&](cv::Point p) {
    p.x = std::clamp(p.x, 10, std::max(10, size.width - 11));
    p.y = std::clamp(p.y, 10, std::max(10, size.height - 11));
    return p;
  };
  const auto is_free = [&](const cv::Point& p) {
    for (const cv::Point& q : placed) {
      if (squared_distance(p, q) < kLabelMinSeparation * kLabelMinSeparation) {
        return false;
      }
    }
    return true;
  };
  constexpr int kStep = 12;
  constexpr int kMaxRing = 64;
  for (int ring = 0; ring <= kMaxRing; ++ring) {
    for (int dy = -ring; dy <= ring; ++dy) {
      for (int dx = -ring; dx <= ring; ++dx) {
        if (std::max(std::abs(dx), std::abs(dy)) != ring) {
          continue;
        }
        const cv::Point p = clamp_point(anchor + cv::Point(dx * kStep, dy * kStep));
        if (is_free(p)) {
          return p;
        }
      }
    }
  }
  return clamp_point(anchor);
}

void draw_label_text(cv::Mat& image, const std::string& text, const cv::Point& org) {
  cv::putText(image, text, org, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 3,
              cv::LINE_8);
  cv::putText(image, text, org, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(255, 255, 255), 1,
              cv::LINE_8);
}

std::array<Vec3, 8> box_corners(const OrientedBox& obb) {
  const double c = std::cos(obb.yaw);
  const double s = std::sin(obb.yaw);
  std::array<Vec3, 8> corners;
  int k = 0;
  for (int sx : {-1, 1}) {
    for (int sy : {-1, 1}) {
      for (int sz : {-1, 1}) {
        const Vec3 local(sx * obb.half_extents.x(), sy * obb.half_extents.y(),
                         sz * obb.half_extents.z());
        corners[k++] = obb.center + Vec3(c * local.x() - s * local.y(),
                                         s * local.x() + c * local.y(), local.z());
      }
    }
  }
  return corners;
}

/// Image-space bbox of the box corners that sit in front of the camera,
/// clamped to the image; empty when every corner is behind.
cv::Rect projected_box(const OrientedBox& obb, const Pose& pose, const CameraIntrinsics& intr) {
  double x0 = kInf, y0 = kInf, x1 = -kInf, y1 = -kInf;
  bool any = false;
  for (const Vec3& corner : box_corners(obb)) {
    cv::Point2d px;
    double depth = 0.0;
    if (!camera_project(corner, pose, intr, px, depth)) {
      continue;
    }
    any = true;
    x0 = std::min(x0, px.x);
    y0 = std::min(y0, px.y);
    x1 = std::max(x1, px.x);
    y1 = std::max(y1, px.y);
  }
  if (!any) {
    return {};
  }
  const int ix0 = std::clamp(int(std::floor(x0)), 0, intr.width - 1);
  const int iy0 = std::clamp(int(std::floor(y0)), 0, intr.height - 1);
  const int ix1 = std::clamp(int(std::ceil(x1)), ix0 + 1, intr.width);
  const int iy1 = std::clamp(int(std::ceil(y1)), iy0 + 1, intr.height);
  return {ix0, iy0, ix1 - ix0, iy1 - iy0};
}

struct RankedFrame {
  int frame_id = -1;
  int frame_pos = -1;
  double proportion = 0.0;
  cv::Rect bbox;
  Vec3 camera = Vec3::Zero();
};

/// Exhaustive max pairwise-camera-distance subset of size l. `frames` must
/// already be sorted by frame_id so that enumerating index combinations in
/// lexicographic order visits frame-id tuples in lexicographic order; the
/// first maximum then breaks ties toward the smallest tuple.
std::vector<int> best_spread_subset(const std::vector<RankedFrame>& frames, int l) {
  const int m = int(frames.size());
  std::vector<int> combo(l);
  for (int i = 0; i < l; ++i) {
    combo[i] = i;
  }
  std::vector<int> best = combo;
  double best_sum = -1.0;
  while (true) {
    double sum = 0.0;
    for (int a = 0; a < l; ++a) {
      for (int b = a + 1; b < l; ++b) {
        sum += (frames[combo[a]].camera - frames[combo[b]].camera).norm();
      }
    }
    if (sum > best_sum) {
      best_sum = sum;
      best = combo;
    }
    int pos = l - 1;
    while (pos >= 0 && combo[pos] == m - l + pos) {
      --pos;
    }
    if (pos < 0) {
      break;
    }
    ++combo[pos];
    for (int i = pos + 1; i < l; ++i) {
      combo[i] = combo[i - 1] + 1;
    }
  }
  return best;
}

}  // namespace

void OrbitCameraSpec::validate() const {
  if (!(r_min > 0.0) || !std::isfinite(r_min)) {
    throw Error(ErrorCode::InvalidArgument, "orbit r_min must be positive");
  }
  if (!(h_min > 0.0) || !std::isfinite(h_min)) {
    throw Error(ErrorCode::InvalidArgument, "orbit h_min must be positive");
  }
  if (!(r >= r_min) || !std::isfinite(r)) {
    throw Error(ErrorCode::InvalidArgument, "orbit radius below r_min");
  }
  if (!(h >= h_min) || !std::isfinite(h)) {
    throw Error(ErrorCode::InvalidArgument, "orbit height below h_min");
  }
  if (azimuths.empty()) {
    throw Error(ErrorCode::InvalidArgument, "orbit spec needs at least one azimuth");
  }
  for (double theta : azimuths) {
    if (!std::isfinite(theta)) {
      throw Error(ErrorCode::InvalidArgument, "orbit azimuth must be finite");
    }
  }
}

OrbitCameraSpec orbit_spec_for_scene(const AxisAlignedBox& scene_bounds) {
  const Vec3 extent = scene_bounds.max_corner - scene_bounds.min_corner;
  if (!(extent.array() >= 0.0).all()) {
    throw Error(ErrorCode::InvalidArgument, "scene bounds are inverted");
  }
  const double diag = std::hypot(extent.x(), extent.y());
  OrbitCameraSpec spec;
  // Degenerate scenes still need a strictly positive standoff.
  spec.r_min = std::max(0.5 * diag, 0.5);
  spec.h_min = 1.5;
  spec.r = std::max(spec.r_min, 0.75 * diag);
  spec.h = std::max(spec.h_min, extent.z() + 1.0);
  return spec;
}

CameraIntrinsics default_render_intrinsics() {
  CameraIntrinsics intr;
  intr.fx = 500.0;
  intr.fy = 500.0;
  intr.cx = 320.0;
  intr.cy = 240.0;
  intr.width = 640;
  intr.height = 480;
  return intr;
}

std::vector<Pose> orbit_positions(const std::vector<Candidate>& candidates,
                                  const OrbitCameraSpec& spec) {
  spec.validate();
  if (candidates.empty()) {
    throw Error(ErrorCode::InvalidArgument, "orbit_positions needs at least one candidate");
  }
  Vec3 mean = Vec3::Zero();
  for (const Candidate& candidate : candidates) {
    mean += candidate.instance.obb.center;
  }
  mean /= double(candidates.size());
  std::vector<Pose> poses;
  poses.reserve(spec.azimuths.size());
  for (double theta : spec.azimuths) {
    const Vec3 eye = mean + Vec3(spec.r * std::cos(theta), spec.r * std::sin(theta), spec.h);
    poses.push_back(look_at(eye, mean));
  }
  return poses;
}

Render render_scene(const PointCloud& cloud, const Pose& pose, const CameraIntrinsics& intr,
                    double base_splat_radius_m) {
  if (intr.width <= 0 || intr.height <= 0 || !(intr.fx > 0.0) || !(intr.fy > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "render intrinsics are invalid");
  }
  if (!(base_splat_radius_m > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "splat radius must be positive");
  }
  const bool has_colors = cloud.colors.size() == cloud.positions.size();
  if (!cloud.colors.empty() && !has_colors) {
    throw Error(ErrorCode::DimensionMismatch, "point colors do not match positions");
  }
  Render out;
  out.image = cv::Mat(intr.height, intr.width, CV_8UC3,
                      cv::Scalar(kRenderBackground[0], kRenderBackground[1], kRenderBackground[2]));
  out.depth =
      cv::Mat(intr.height, intr.width, CV_32FC1, cv::Scalar(std::numeric_limits<float>::infinity()));
  const Rgb kUncolored{200, 200, 200};
  for (std::size_t i = 0; i < cloud.positions.size(); ++i) {
    cv::Point2d px;
    double depth = 0.0;
    if (!camera_project(cloud.positions[i].cast<double>(), pose, intr, px, depth)) {
      continue;
    }
    const int cu = int(std::floor(px.x));
    const int cv_ = int(std::floor(px.y));
    if (cu < 0 || cu >= intr.width || cv_ < 0 || cv_ >= intr.height) {
      continue;
    }
    const int radius = std::max(1, int(std::lround(base_splat_radius_m * intr.fx / depth)));
    const Rgb& rgb = has_colors ? cloud.colors[i] : kUncolored;
    const float fd = float(depth);
    for (int dy = -radius; dy <= radius; ++dy) {
      const int y = cv_ + dy;
      if (y < 0 || y >= intr.height) {
        continue;
      }
      for (int dx = -radius; dx <= radius; ++dx) {
        if (dx * dx + dy * dy > radius * radius) {
          continue;
        }
        const int x = cu + dx;
        if (x < 0 || x >= intr.width) {
          continue;
        }
        float& z = out.depth.at<float>(y, x);
        if (fd < z) {
          z = fd;
          out.image.at<cv::Vec3b>(y, x) = cv::Vec3b(rgb[0], rgb[1], rgb[2]);
        }
      }
    }
  }
  return out;
}

GlobalRender annotate_global(const Render& render, const Pose& camera,
                             const CameraIntrinsics& intrinsics,
                             const std::vector<Candidate>& candidates, const Vec3& axes_origin,
                             double axes_length) {
  if (render.image.empty() || render.image.type() != CV_8UC3 ||
      render.image.cols != intrinsics.width || render.image.rows != intrinsics.height) {
    throw Error(ErrorCode::InvalidArgument, "render does not match the intrinsics");
  }
  if (render.depth.empty() || render.depth.type() != CV_32FC1 ||
      render.depth.size() != render.image.size()) {
    throw Error(ErrorCode::InvalidArgument, "render depth is missing or mismatched");
  }
  if (!(axes_length > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "axes length must be positive");
  }
  GlobalRender out;
  out.image = render.image.clone();
  out.depth = render.depth;
  out.camera = camera;
  out.intrinsics = intrinsics;

  const std::array<Vec3, 3> directions = {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  const std::array<cv::Scalar, 3> axis_colors = {cv::Scalar(255, 0, 0), cv::Scalar(0, 255, 0),
                                                 cv::Scalar(0, 0, 255)};
  const std::array<const char*, 3> axis_names = {"x", "y", "z"};
  cv::Point2d origin_px;
  double origin_depth = 0.0;
  const bool origin_front = camera_project(axes_origin, camera, intrinsics, origin_px, origin_depth);
  int drawn_axes = 0;
  for (int a = 0; a < 3; ++a) {
    cv::Point2d tip_px;
    double tip_depth = 0.0;
    if (!origin_front ||
        !camera_project(axes_origin + axes_length * directions[a], camera, intrinsics, tip_px,
                        tip_depth)) {
      continue;
    }
    const cv::Point p0(int(std::lround(origin_px.x)), int(std::lround(origin_px.y)));
    const cv::Point p1(int(std::lround(tip_px.x)), int(std::lround(tip_px.y)));
    cv::line(out.image, p0, p1, axis_colors[a], 2, cv::LINE_8);
    draw_label_text(out.image, axis_names[a], p1 + cv::Point(4, -4));
    ++drawn_axes;
  }
  out.axes_drawn = drawn_axes == 3;

  std::vector<cv::Point> placed;
  for (const Candidate& candidate : candidates) {
    cv::Point2d px;
    double depth = 0.0;
    if (!camera_project(candidate.instance.obb.center, camera, intrinsics, px, depth) ||
        px.x < 0.0 || px.x >= intrinsics.width || px.y < 0.0 || px.y >= intrinsics.height) {
      out.culled_ids.push_back(candidate.candidate_id);
      continue;
    }
    const float zbuf = render.depth.at<float>(int(std::floor(px.y)), int(std::floor(px.x)));
    if (depth > zbuf + kLabelOcclusionTol) {
      out.culled_ids.push_back(candidate.candidate_id);
      continue;
    }
    const cv::Point anchor = place_label(
        cv::Point(int(std::lround(px.x)), int(std::lround(px.y))), placed, out.image.size());
    draw_label_text(out.image, std::to_string(candidate.candidate_id), anchor);
    out.overlay_ids[candidate.candidate_id] = anchor;
    placed.push_back(anchor);
  }
  return out;
}

CandidateViewSet select_candidate_views(const Candidate& candidate, const Scene& scene,
                                        const FrameGeometryCache& cache, int l,
                                        const OrbitCameraSpec& fallback_spec,
                                        const CameraIntrinsics& fallback_intrinsics,
                                        double occlusion_tol) {
  if (l < 1) {
    throw Error(ErrorCode::InvalidArgument, "view budget must be at least one");
  }
  if (cache.frames.size() != scene.frames.size()) {
    throw Error(ErrorCode::DimensionMismatch, "geometry cache does not match the scene");
  }
  CandidateViewSet out;
  out.candidate_id = candidate.candidate_id;

  std::vector<RankedFrame> ranked;
  for (std::size_t i = 0; i < scene.frames.size(); ++i) {
    const Frame& frame = scene.frames[i];
    const ViewObservation obs = observe_points(cache.frames[i], frame.depth,
                                               candidate.instance.point_indices, frame.frame_id,
                                               occlusion_tol);
    if (obs.visible_pixels <= 0) {
      continue;
    }
    RankedFrame rf;
    rf.frame_id = frame.frame_id;
    rf.frame_pos = int(i);
    rf.proportion =
        double(obs.visible_pixels) / (double(cache.frames[i].width) * cache.frames[i].height);
    rf.bbox = obs.visible_bbox;
    rf.camera = frame.pose.translation;
    ranked.push_back(std::move(rf));
  }

  if (ranked.empty()) {
    // Invisible everywhere: orbit the candidate itself with l evenly spaced
    // azimuths and draw its projected box on each render.
    OrbitCameraSpec spec = fallback_spec;
    spec.azimuths.clear();
    for (int j = 0; j < l; ++j) {
      spec.azimuths.push_back(deg_to_rad(90.0) + 2.0 * kPi * j / l);
    }
    out.fallback = true;
    for (const Pose& pose : orbit_positions({candidate}, spec)) {
      Render render = render_scene(scene.cloud, pose, fallback_intrinsics);
      CandidateView view;
      view.frame_id = -1;
      view.box = projected_box(candidate.instance.obb, pose, fallback_intrinsics);
      if (view.box.area() <= 0) {
        view.box = cv::Rect(0, 0, fallback_intrinsics.width, fallback_intrinsics.height);
      }
      view.image = render.image;
      cv::rectangle(view.image, view.box, kBoxColor, 2, cv::LINE_8);
      out.views.push_back(std::move(view));
    }
    return out;
  }

  std::sort(ranked.begin(), ranked.end(), [](const RankedFrame& a, const RankedFrame& b) {
    if (a.proportion != b.proportion) {
      return a.proportion > b.proportion;
    }
    return a.frame_id < b.frame_id;
  });
  if (int(ranked.size()) > 2 * l) {
    ranked.resize(std::size_t(2) * l);
  }
  std::sort(ranked.begin(), ranked.end(),
            [](const RankedFrame& a, const RankedFrame& b) { return a.frame_id < b.frame_id; });

  std::vector<int> chosen;
  if (int(ranked.size()) <= l) {
    chosen.resize(ranked.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      chosen[i] = int(i);
    }
  } else {
    chosen = best_spread_subset(ranked, l);
  }

  for (int idx : chosen) {
    const RankedFrame& rf = ranked[idx];
    const Frame& frame = scene.frames[rf.frame_pos];
    if (frame.rgb.empty() || frame.rgb.type() != CV_8UC3) {
      throw Error(ErrorCode::InvalidArgument, "frame has no rgb image", frame.frame_id);
    }
    const std::vector<cv::Rect> rects =
        multiscale_rects(rf.bbox, frame.rgb.size(), {1.0, 2.0});
    const cv::Rect crop_rect = rects.back();
    CandidateView view;
    view.frame_id = rf.frame_id;
    view.image = frame.rgb(crop_rect).clone();
    view.box = rf.bbox - crop_rect.tl();
    cv::rectangle(view.image, view.box, kBoxColor, 2, cv::LINE_8);
    out.views.push_back(std::move(view));
  }
  return out;
}

}  // namespace uniground
