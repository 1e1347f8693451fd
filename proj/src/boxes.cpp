#include "uniground/boxes.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace uniground {
namespace {

constexpr double kMinHalfExtent = 1e-6;

double cross2(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Monotone chain, strictly convex (collinear vertices are dropped). A fully
// collinear input yields the two extreme points, a single repeated point
// yields one.
std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
                          return a.x() == b.x() && a.y() == b.y();
                        }),
            pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return pts;
  std::vector<Eigen::Vector2d> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Map yaw into [-pi/4, pi/4); each quarter-turn step swaps the x/y extents.
double canonical_yaw(double theta, bool& swap_xy) {
  double t = std::fmod(theta, kPi);
  if (t < 0.0) t += kPi;
  swap_xy = false;
  if (t >= kPi / 2.0) {
    t -= kPi / 2.0;
    swap_xy = true;
  }
  if (t >= kPi / 4.0) {
    t -= kPi / 2.0;
    swap_xy = !swap_xy;
  }
  return t;
}

struct RotatedFit {
  double theta = 0.0;
  double umin = 0.0, umax = 0.0, vmin = 0.0, vmax = 0.0;
  double area() const { return (umax - umin) * (vmax - vmin); }
};

RotatedFit fit_at_angle(const std::vector<Eigen::Vector2d>& hull, double theta) {
  RotatedFit fit;
  fit.theta = theta;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  fit.umin = fit.vmin = std::numeric_limits<double>::infinity();
  fit.umax = fit.vmax = -std::numeric_limits<double>::infinity();
  for (const auto& p : hull) {
    const double u = c * p.x() + s * p.y();
    const double v = -s * p.x() + c * p.y();
    fit.umin = std::min(fit.umin, u);
    fit.umax = std::max(fit.umax, u);
    fit.vmin = std::min(fit.vmin, v);
    fit.vmax = std::max(fit.vmax, v);
  }
  return fit;
}

}  // namespace

AxisAlignedBox fit_aabb(std::span<const Vec3f> points) {
  if (points.empty()) {
    throw Error(ErrorCode::TooFewPoints, "cannot fit a box to zero points");
  }
  Vec3 lo = points[0].cast<double>();
  Vec3 hi = lo;
  for (const auto& p : points) {
    const Vec3 q = p.cast<double>();
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  return {lo, hi};
}

AxisAlignedBox fit_aabb(const PointCloud& cloud, std::span<const int> indices) {
  std::vector<Vec3f> pts;
  pts.reserve(indices.size());
  for (int i : indices) pts.push_back(cloud.positions.at(static_cast<std::size_t>(i)));
  return fit_aabb(pts);
}

OrientedBox fit_oriented_box(std::span<const Vec3f> points) {
  if (points.empty()) {
    throw Error(ErrorCode::TooFewPoints, "cannot fit a box to zero points");
  }
  double zmin = points[0].z(), zmax = points[0].z();
  std::vector<Eigen::Vector2d> xy;
  xy.reserve(points.size());
  for (const auto& p : points) {
    zmin = std::min(zmin, static_cast<double>(p.z()));
    zmax = std::max(zmax, static_cast<double>(p.z()));
    xy.emplace_back(p.x(), p.y());
  }

  const std::vector<Eigen::Vector2d> hull = convex_hull(xy);
  RotatedFit best;
  if (hull.size() == 1) {
    best = fit_at_angle(hull, 0.0);
  } else if (hull.size() == 2) {
    // Collinear footprint: align with the segment, perpendicular extent 0.
    const Eigen::Vector2d d = hull[1] - hull[0];
    best = fit_at_angle(hull, std::atan2(d.y(), d.x()));
  } else {
    // The minimum-area rectangle has one side flush with a hull edge.
    best.umin = 0.0;
    best.umax = std::numeric_limits<double>::infinity();
    best.vmin = 0.0;
    best.vmax = 1.0;
    for (std::size_t i = 0; i < hull.size(); ++i) {
      const Eigen::Vector2d& a = hull[i];
      const Eigen::Vector2d& b = hull[(i + 1) % hull.size()];
      const RotatedFit fit = fit_at_angle(hull, std::atan2(b.y() - a.y(), b.x() - a.x()));
      if (fit.area() < best.area()) best = fit;
    }
  }

  bool swap_xy = false;
  const double yaw = canonical_yaw(best.theta, swap_xy);
  double hx = 0.5 * (best.umax - best.umin);
  double hy = 0.5 * (best.vmax - best.vmin);
  if (swap_xy) std::swap(hx, hy);

  const double cu = 0.5 * (best.umin + best.umax);
  const double cv = 0.5 * (best.vmin + best.vmax);
  const double c = std::cos(best.theta);
  const double s = std::sin(best.theta);

  OrientedBox box;
  box.center = Vec3(c * cu - s * cv, s * cu + c * cv, 0.5 * (zmin + zmax));
  box.half_extents = Vec3(std::max(hx, kMinHalfExtent), std::max(hy, kMinHalfExtent),
                          std::max(0.5 * (zmax - zmin), kMinHalfExtent));
  box.yaw = yaw;
  return box;
}

OrientedBox fit_oriented_box(const PointCloud& cloud, std::span<const int> indices) {
  std::vector<Vec3f> pts;
  pts.reserve(indices.size());
  for (int i : indices) pts.push_back(cloud.positions.at(static_cast<std::size_t>(i)));
  return fit_oriented_box(pts);
}

}  // namespace uniground
