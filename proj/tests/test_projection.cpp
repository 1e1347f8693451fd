#include <doctest.h>

#include <random>

#include "uniground/projection.hpp"

using namespace uniground;

namespace {

CameraIntrinsics vga_like() { return {500.0, 500.0, 320.0, 320.0, 640, 641}; }

PointCloud cloud_from(const std::vector<Vec3f>& pts) {
  PointCloud cloud;
  cloud.positions = pts;
  cloud.colors.assign(pts.size(), {100, 100, 100});
  return cloud;
}

std::vector<int> all_indices(std::size_t n) {
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  return idx;
}

}  // namespace

TEST_CASE("pinhole projection of the optical axis point") {
  Eigen::Vector2d uv;
  double depth = 0.0;
  REQUIRE(project_point(Vec3(0, 0, 1), Pose{}, vga_like(), uv, depth));
  CHECK(uv.x() == doctest::Approx(320.0));
  CHECK(uv.y() == doctest::Approx(320.0));
  CHECK(depth == doctest::Approx(1.0));
}

TEST_CASE("points behind the camera or on the far edge are culled") {
  Eigen::Vector2d uv;
  double depth = 0.0;
  CHECK_FALSE(project_point(Vec3(0, 0, -1), Pose{}, vga_like(), uv, depth));
  // u = 500*0.64/1 + 320 = 640 => outside the half-open domain
  CHECK_FALSE(project_point(Vec3(0.64, 0, 1), Pose{}, vga_like(), uv, depth));
  CHECK(project_point(Vec3(0.6399, 0, 1), Pose{}, vga_like(), uv, depth));
}

TEST_CASE("zbuffer keeps the minimum depth per cell") {
  const PointCloud cloud = cloud_from({{0, 0, 2}, {0, 0, 1}});
  const cv::Mat z = build_zbuffer(cloud, Pose{}, vga_like(), 0);
  CHECK(z.at<float>(320, 320) == doctest::Approx(1.0f));
  CHECK(std::isinf(z.at<float>(0, 0)));
}

TEST_CASE("zbuffer of empty cloud is all infinite") {
  const cv::Mat z = build_zbuffer(PointCloud{}, Pose{}, vga_like(), 1);
  double lo = 0.0, hi = 0.0;
  cv::minMaxLoc(z, &lo, &hi);
  CHECK(std::isinf(lo));
}

TEST_CASE("zbuffer equals brute-force splat oracle") {
  std::mt19937 rng(21);
  std::uniform_real_distribution<float> xy(-0.3f, 0.3f);
  std::uniform_real_distribution<float> zd(0.5f, 3.0f);
  std::vector<Vec3f> pts(100);
  for (auto& p : pts) p = Vec3f(xy(rng), xy(rng), zd(rng));
  const PointCloud cloud = cloud_from(pts);
  const CameraIntrinsics intr{50.0, 50.0, 32.0, 32.0, 64, 64};
  const int radius = 2;

  const FrameGeometry geo = project_cloud(cloud, Pose{}, intr, radius);

  cv::Mat oracle(intr.height, intr.width, CV_32FC1,
                 cv::Scalar(std::numeric_limits<float>::infinity()));
  for (const auto& p : pts) {
    const double z = p.z();
    const double u = intr.fx * p.x() / z + intr.cx;
    const double v = intr.fy * p.y() / z + intr.cy;
    if (u < 0 || u >= intr.width || v < 0 || v >= intr.height) continue;
    const int ui = static_cast<int>(u), vi = static_cast<int>(v);
    for (int y = 0; y < intr.height; ++y) {
      for (int x = 0; x < intr.width; ++x) {
        const int du = x - ui, dv = y - vi;
        if (du * du + dv * dv > radius * radius) continue;
        float& cell = oracle.at<float>(y, x);
        cell = std::min(cell, static_cast<float>(z));
      }
    }
  }
  CHECK(cv::norm(geo.zbuffer, oracle, cv::NORM_INF) == 0.0);
}

TEST_CASE("observation counts match a per-point occlusion oracle") {
  // A near plane of points occludes the center of a far plane.
  std::vector<Vec3f> pts;
  std::vector<int> near_idx, far_idx;
  for (int i = -5; i <= 5; ++i) {
    for (int j = -5; j <= 5; ++j) {
      near_idx.push_back(static_cast<int>(pts.size()));
      pts.emplace_back(0.02f * i, 0.02f * j, 1.0f);
    }
  }
  for (int i = -8; i <= 8; ++i) {
    for (int j = -8; j <= 8; ++j) {
      far_idx.push_back(static_cast<int>(pts.size()));
      pts.emplace_back(0.08f * i, 0.08f * j, 2.0f);
    }
  }
  const PointCloud cloud = cloud_from(pts);
  const CameraIntrinsics intr{100.0, 100.0, 64.0, 64.0, 128, 128};
  const FrameGeometry geo = project_cloud(cloud, Pose{}, intr, 1);
  const double tol = 0.05;

  const ViewObservation near_obs = observe_points(geo, cv::Mat(), near_idx, 0, tol);
  const ViewObservation far_obs = observe_points(geo, cv::Mat(), far_idx, 0, tol);
  CHECK(near_obs.visible_pixels == near_obs.total_pixels);
  CHECK(far_obs.visible_pixels < far_obs.total_pixels);

  // Oracle: recompute visibility per point directly from the z-buffer rule.
  auto oracle_counts = [&](const std::vector<int>& idx) {
    std::vector<std::int64_t> vis, tot;
    for (int i : idx) {
      const Vec3f p = pts[static_cast<std::size_t>(i)];
      const double u = intr.fx * p.x() / p.z() + intr.cx;
      const double v = intr.fy * p.y() / p.z() + intr.cy;
      if (u < 0 || u >= intr.width || v < 0 || v >= intr.height || p.z() <= 0) continue;
      const int cell = static_cast<int>(v) * intr.width + static_cast<int>(u);
      tot.push_back(cell);
      if (p.z() <= geo.zbuffer.at<float>(static_cast<int>(v), static_cast<int>(u)) + tol) {
        vis.push_back(cell);
      }
    }
    auto distinct = [](std::vector<std::int64_t>& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      return static_cast<int>(v.size());
    };
    return std::pair{distinct(vis), distinct(tot)};
  };
  const auto [nv, nt] = oracle_counts(near_idx);
  CHECK(near_obs.visible_pixels == nv);
  CHECK(near_obs.total_pixels == nt);
  const auto [fv, ft] = oracle_counts(far_idx);
  CHECK(far_obs.visible_pixels == fv);
  CHECK(far_obs.total_pixels == ft);
}

TEST_CASE("frame depth map can veto visibility") {
  const PointCloud cloud = cloud_from({{0, 0, 2}});
  const CameraIntrinsics intr{50.0, 50.0, 32.0, 32.0, 64, 64};
  const FrameGeometry geo = project_cloud(cloud, Pose{}, intr, 0);
  const std::vector<int> idx = {0};

  cv::Mat depth(64, 64, CV_32FC1, cv::Scalar(1.0f));  // real surface at 1 m
  CHECK(observe_points(geo, depth, idx, 0).visible_pixels == 0);
  depth.setTo(2.0f);
  CHECK(observe_points(geo, depth, idx, 0).visible_pixels == 1);
  depth.setTo(0.0f);  // invalid readings do not veto
  CHECK(observe_points(geo, depth, idx, 0).visible_pixels == 1);
}

TEST_CASE("mask features cover fully contained superpoints") {
  std::vector<Vec3f> pts;
  for (int i = 0; i < 50; ++i) {
    pts.emplace_back(-0.1f + 0.004f * static_cast<float>(i), 0.0f, 1.0f);
  }
  const PointCloud cloud = cloud_from(pts);
  const CameraIntrinsics intr{100.0, 100.0, 64.0, 64.0, 128, 128};
  const FrameGeometry geo = project_cloud(cloud, Pose{}, intr, 1);

  cv::Mat m0(128, 128, CV_8UC1, cv::Scalar(0));
  m0(cv::Rect(0, 0, 128, 80)).setTo(1);  // covers the whole strip
  cv::Mat m1(128, 128, CV_8UC1, cv::Scalar(0));
  m1(cv::Rect(0, 100, 10, 10)).setTo(1);
  const MaskSet masks = MaskSet::from_masks(0, {m0, m1});

  const ViewObservation obs = observe_superpoint(geo, cv::Mat(), masks, all_indices(pts.size()), 0);
  REQUIRE(obs.mask_feature.size() == 2);
  CHECK(obs.mask_feature[0] == doctest::Approx(1.0));
  CHECK(obs.mask_feature[1] == doctest::Approx(0.0));
  CHECK(obs.visible_pixels > 0);
}

TEST_CASE("occluded superpoints get zero mask features") {
  const PointCloud cloud = cloud_from({{0, 0, 1}, {0, 0, 3}});
  const CameraIntrinsics intr{50.0, 50.0, 32.0, 32.0, 64, 64};
  const FrameGeometry geo = project_cloud(cloud, Pose{}, intr, 1);
  cv::Mat m0(64, 64, CV_8UC1, cv::Scalar(1));
  const MaskSet masks = MaskSet::from_masks(0, {m0});
  const std::vector<int> far = {1};
  const ViewObservation obs = observe_superpoint(geo, cv::Mat(), masks, far, 0);
  CHECK(obs.visible_pixels == 0);
  CHECK(obs.mask_feature.norm() == 0.0f);
}

TEST_CASE("mask feature sums stay within 1 even with overlapping masks") {
  std::mt19937 rng(33);
  std::uniform_real_distribution<float> xy(-0.4f, 0.4f);
  std::vector<Vec3f> pts(300);
  for (auto& p : pts) p = Vec3f(xy(rng), xy(rng), 1.5f);
  const PointCloud cloud = cloud_from(pts);
  const CameraIntrinsics intr{60.0, 60.0, 48.0, 48.0, 96, 96};
  const FrameGeometry geo = project_cloud(cloud, Pose{}, intr, 1);

  std::vector<cv::Mat> raw;
  std::uniform_int_distribution<int> pos(0, 60);
  for (int k = 0; k < 4; ++k) {
    cv::Mat m(96, 96, CV_8UC1, cv::Scalar(0));
    m(cv::Rect(pos(rng), pos(rng), 36, 36)).setTo(1);
    raw.push_back(m);
  }
  const MaskSet masks = MaskSet::from_masks(0, raw);
  const ViewObservation obs = observe_superpoint(geo, cv::Mat(), masks, all_indices(pts.size()), 0);
  CHECK(obs.mask_feature.minCoeff() >= 0.0f);
  CHECK(obs.mask_feature.sum() <= 1.0f + 1e-6f);

  // A partition of the image makes the features sum to exactly 1.
  cv::Mat left(96, 96, CV_8UC1, cv::Scalar(0)), right(96, 96, CV_8UC1, cv::Scalar(0));
  left(cv::Rect(0, 0, 48, 96)).setTo(1);
  right(cv::Rect(48, 0, 48, 96)).setTo(1);
  const MaskSet partition = MaskSet::from_masks(0, {left, right});
  const ViewObservation obs2 =
      observe_superpoint(geo, cv::Mat(), partition, all_indices(pts.size()), 0);
  CHECK(obs2.mask_feature.sum() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("visibility is invariant to uniform scaling") {
  std::mt19937 rng(55);
  std::uniform_real_distribution<float> xy(-0.3f, 0.3f);
  std::uniform_real_distribution<float> zd(0.8f, 2.5f);
  std::vector<Vec3f> pts(200);
  for (auto& p : pts) p = Vec3f(xy(rng), xy(rng), zd(rng));
  const CameraIntrinsics intr{60.0, 60.0, 48.0, 48.0, 96, 96};
  const double tol = 0.05;
  const float s = 3.5f;

  const FrameGeometry geo1 = project_cloud(cloud_from(pts), Pose{}, intr, 1);
  std::vector<Vec3f> scaled = pts;
  for (auto& p : scaled) p *= s;
  const FrameGeometry geo2 = project_cloud(cloud_from(scaled), Pose{}, intr, 1);

  const auto idx = all_indices(pts.size());
  const ViewObservation a = observe_points(geo1, cv::Mat(), idx, 0, tol);
  const ViewObservation b = observe_points(geo2, cv::Mat(), idx, 0, tol * s);
  CHECK(a.visible_pixels == b.visible_pixels);
  CHECK(a.total_pixels == b.total_pixels);
}
