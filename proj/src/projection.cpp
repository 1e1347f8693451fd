#include "uniground/projection.hpp"

#include <algorithm>
#include <limits>

namespace uniground {
namespace {

bool cell_visible(const FrameGeometry& geo, const cv::Mat& depth_map, const ProjectedPoint& p,
                  double tol) {
  if (p.cell < 0) return false;
  const int u = p.cell % geo.width;
  const int v = p.cell / geo.width;
  if (p.depth > geo.zbuffer.at<float>(v, u) + tol) return false;
  if (!depth_map.empty()) {
    const float measured = depth_map.at<float>(v, u);
    if (measured > 0.0f && p.depth > measured + tol) return false;
  }
  return true;
}

}  // namespace

bool project_point(const Vec3& p_world, const Pose& pose, const CameraIntrinsics& intr,
                   Eigen::Vector2d& uv, double& depth) {
  const Vec3 pc = pose.to_camera(p_world);
  if (pc.z() <= 0.0) return false;
  const double u = intr.fx * pc.x() / pc.z() + intr.cx;
  const double v = intr.fy * pc.y() / pc.z() + intr.cy;
  if (u < 0.0 || u >= intr.width || v < 0.0 || v >= intr.height) return false;
  uv = {u, v};
  depth = pc.z();
  return true;
}

FrameGeometry project_cloud(const PointCloud& cloud, const Pose& pose,
                            const CameraIntrinsics& intr, int splat_radius) {
  intr.validate();
  if (splat_radius < 0) {
    throw Error(ErrorCode::InvalidArgument, "splat_radius must be non-negative");
  }
  FrameGeometry geo;
  geo.width = intr.width;
  geo.height = intr.height;
  geo.points.resize(cloud.size());
  geo.zbuffer = cv::Mat(intr.height, intr.width, CV_32FC1,
                        cv::Scalar(std::numeric_limits<float>::infinity()));

  const Eigen::Matrix3d r_wc = pose.rotation.transpose();
  const Vec3 t = pose.translation;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 pc = r_wc * (cloud.positions[i].cast<double>() - t);
    ProjectedPoint& pp = geo.points[i];
    if (pc.z() <= 0.0) continue;
    const double u = intr.fx * pc.x() / pc.z() + intr.cx;
    const double v = intr.fy * pc.y() / pc.z() + intr.cy;
    if (u < 0.0 || u >= intr.width || v < 0.0 || v >= intr.height) continue;
    pp.u = static_cast<float>(u);
    pp.v = static_cast<float>(v);
    pp.depth = static_cast<float>(pc.z());
    const int ui = static_cast<int>(u);
    const int vi = static_cast<int>(v);
    pp.cell = vi * intr.width + ui;

    for (int dv = -splat_radius; dv <= splat_radius; ++dv) {
      for (int du = -splat_radius; du <= splat_radius; ++du) {
        if (du * du + dv * dv > splat_radius * splat_radius) continue;
        const int su = ui + du;
        const int sv = vi + dv;
        if (su < 0 || su >= intr.width || sv < 0 || sv >= intr.height) continue;
        float& z = geo.zbuffer.at<float>(sv, su);
        z = std::min(z, pp.depth);
      }
    }
  }
  return geo;
}

cv::Mat build_zbuffer(const PointCloud& cloud, const Pose& pose, const CameraIntrinsics& intr,
                      int splat_radius) {
  return project_cloud(cloud, pose, intr, splat_radius).zbuffer;
}

MaskSet MaskSet::from_masks(int frame_id, std::vector<cv::Mat> masks) {
  MaskSet set;
  set.frame_id = frame_id;
  set.n = static_cast<int>(masks.size());
  set.masks = std::move(masks);
  if (set.n == 0) return set;
  const cv::Size size = set.masks[0].size();
  set.labels = cv::Mat(size, CV_32SC1, cv::Scalar(-1));
  for (int j = set.n - 1; j >= 0; --j) {
    const cv::Mat& m = set.masks[static_cast<std::size_t>(j)];
    if (m.type() != CV_8UC1 || m.size() != size) {
      throw Error(ErrorCode::DimensionMismatch, "mask " + std::to_string(j) +
                                                    " does not match frame dimensions");
    }
    set.labels.setTo(j, m);
  }
  return set;
}

ViewObservation observe_points(const FrameGeometry& geo, const cv::Mat& depth_map,
                               std::span<const int> indices, int frame_id,
                               double depth_tolerance) {
  ViewObservation obs;
  obs.frame_id = frame_id;

  std::vector<std::int32_t> projected;
  std::vector<std::int32_t> visible;
  projected.reserve(indices.size());
  for (int i : indices) {
    const ProjectedPoint& p = geo.points.at(static_cast<std::size_t>(i));
    if (p.cell < 0) continue;
    projected.push_back(p.cell);
    if (cell_visible(geo, depth_map, p, depth_tolerance)) visible.push_back(p.cell);
  }
  auto count_distinct = [](std::vector<std::int32_t>& cells) {
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    return static_cast<int>(cells.size());
  };
  obs.total_pixels = count_distinct(projected);
  obs.visible_pixels = count_distinct(visible);

  if (!visible.empty()) {
    int umin = geo.width, umax = -1, vmin = geo.height, vmax = -1;
    for (std::int32_t cell : visible) {
      const int u = cell % geo.width;
      const int v = cell / geo.width;
      umin = std::min(umin, u);
      umax = std::max(umax, u);
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
    obs.visible_bbox = cv::Rect(umin, vmin, umax - umin + 1, vmax - vmin + 1);
  }
  return obs;
}

ViewObservation observe_superpoint(const FrameGeometry& geo, const cv::Mat& depth_map,
                                   const MaskSet& masks, std::span<const int> indices,
                                   int frame_id, double occlusion_tol) {
  ViewObservation obs = observe_points(geo, depth_map, indices, frame_id, occlusion_tol);
  obs.mask_feature = Eigen::VectorXf::Zero(masks.n);
  if (masks.n == 0 || obs.visible_pixels == 0) return obs;
  if (masks.labels.cols != geo.width || masks.labels.rows != geo.height) {
    throw Error(ErrorCode::DimensionMismatch, "mask set does not match frame dimensions");
  }
  for (std::int32_t cell : visible_cells(geo, depth_map, indices, occlusion_tol)) {
    const int label = masks.labels.at<std::int32_t>(cell / geo.width, cell % geo.width);
    if (label >= 0) obs.mask_feature[label] += 1.0f;
  }
  obs.mask_feature /= static_cast<float>(obs.visible_pixels);
  return obs;
}

std::vector<std::int32_t> visible_cells(const FrameGeometry& geo, const cv::Mat& depth_map,
                                        std::span<const int> indices, double depth_tolerance) {
  std::vector<std::int32_t> cells;
  for (int i : indices) {
    const ProjectedPoint& p = geo.points.at(static_cast<std::size_t>(i));
    if (cell_visible(geo, depth_map, p, depth_tolerance)) cells.push_back(p.cell);
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

}  // namespace uniground
