#include "uniground/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <set>

#include "uniground/scene_io.hpp"

namespace uniground {

namespace {

constexpr double kWallClearance = 0.3;   // object AABB to room wall
constexpr double kPairClearance = 0.3;   // between object AABBs
constexpr int kMaxAttempts = 1000;       // position draws before giving up
constexpr int kMinVisiblePixels = 200;   // per frame to count as a sighting
constexpr int kMinVisibleFrames = 2;

/// Deterministic across platforms, unlike std::uniform_real_distribution.
double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double unit = double(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * unit;
}

int uniform_int(std::mt19937_64& rng, int count) {
  return int(rng() % std::uint64_t(count));
}

ShapeKind shape_kind_from_name(const std::string& name) {
  if (name == "cube") return ShapeKind::Cube;
  if (name == "sphere") return ShapeKind::Sphere;
  if (name == "cylinder") return ShapeKind::Cylinder;
  throw Error(ErrorCode::InvalidArgument, "unknown shape name: " + name);
}

Rgb palette_color(const std::string& name) {
  for (const PaletteEntry& entry : kObjectPalette) {
    if (name == entry.name) {
      return entry.rgb;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "color outside the object palette: " + name);
}

std::vector<std::string> effective_colors(const SyntheticSpec& spec) {
  if (!spec.colors.empty()) {
    return spec.colors;
  }
  std::vector<std::string> names;
  for (const PaletteEntry& entry : kObjectPalette) {
    names.emplace_back(entry.name);
  }
  return names;
}

/// Smallest ray parameter t > t_min hitting the primitive, or +inf. The ray
/// is origin + t * dir with dir scaled so t equals camera-space depth.
double intersect(const SyntheticObject& object, const Vec3& origin, const Vec3& dir,
                 double t_min) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  switch (object.kind) {
    case ShapeKind::Cube: {
      double lo = t_min;
      double hi = kInf;
      for (int axis = 0; axis < 3; ++axis) {
        const double o = origin[axis];
        const double d = dir[axis];
        const double a = object.center[axis] - object.half_extents[axis];
        const double b = object.center[axis] + object.half_extents[axis];
        if (std::abs(d) < 1e-12) {
          if (o < a || o > b) return kInf;
          continue;
        }
        double t0 = (a - o) / d;
        double t1 = (b - o) / d;
        if (t0 > t1) std::swap(t0, t1);
        lo = std::max(lo, t0);
        hi = std::min(hi, t1);
        if (lo > hi) return kInf;
      }
      return lo > t_min ? lo : kInf;
    }
    case ShapeKind::Sphere: {
      const Vec3 oc = origin - object.center;
      const double r = object.half_extents.x();
      const double a = dir.squaredNorm();
      const double b = 2.0 * dir.dot(oc);
      const double c = oc.squaredNorm() - r * r;
      const double disc = b * b - 4.0 * a * c;
      if (disc < 0.0) return kInf;
      const double root = std::sqrt(disc);
      const double t0 = (-b - root) / (2.0 * a);
      if (t0 > t_min) return t0;
      const double t1 = (-b + root) / (2.0 * a);
      return t1 > t_min ? t1 : kInf;
    }
    case ShapeKind::Cylinder: {
      const double r = object.half_extents.x();
      const double z0 = object.center.z() - object.half_extents.z();
      const double z1 = object.center.z() + object.half_extents.z();
      double best = kInf;

      const double ox = origin.x() - object.center.x();
      const double oy = origin.y() - object.center.y();
      const double a = dir.x() * dir.x() + dir.y() * dir.y();
      if (a > 1e-12) {
        const double b = 2.0 * (ox * dir.x() + oy * dir.y());
        const double c = ox * ox + oy * oy - r * r;
        const double disc = b * b - 4.0 * a * c;
        if (disc >= 0.0) {
          const double root = std::sqrt(disc);
          for (const double t : {(-b - root) / (2.0 * a), (-b + root) / (2.0 * a)}) {
            if (t <= t_min || t >= best) continue;
            const double z = origin.z() + t * dir.z();
            if (z >= z0 && z <= z1) best = t;
          }
        }
      }
      if (std::abs(dir.z()) > 1e-12) {
        for (const double zc : {z0, z1}) {
          const double t = (zc - origin.z()) / dir.z();
          if (t <= t_min || t >= best) continue;
          const double x = origin.x() + t * dir.x() - object.center.x();
          const double y = origin.y() + t * dir.y() - object.center.y();
          if (x * x + y * y <= r * r) best = t;
        }
      }
      return best;
    }
  }
  return kInf;
}

/// Conservative screen-space bounds of the object's AABB; nullopt when the
/// object cannot appear (fully behind the camera or off screen).
struct PixelRect {
  int u0, v0, u1, v1;  // half-open
};

std::optional<PixelRect> screen_rect(const SyntheticObject& object, const Pose& pose,
                                     const CameraIntrinsics& intr) {
  const AxisAlignedBox box = object.aabb();
  double u_lo = std::numeric_limits<double>::infinity(), u_hi = -u_lo;
  double v_lo = u_lo, v_hi = -u_lo;
  bool any_behind = false;
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3 p_world{(corner & 1) ? box.max_corner.x() : box.min_corner.x(),
                       (corner & 2) ? box.max_corner.y() : box.min_corner.y(),
                       (corner & 4) ? box.max_corner.z() : box.min_corner.z()};
    const Vec3 p_cam = pose.to_camera(p_world);
    if (p_cam.z() < 1e-3) {
      any_behind = true;
      break;
    }
    const double u = intr.fx * p_cam.x() / p_cam.z() + intr.cx;
    const double v = intr.fy * p_cam.y() / p_cam.z() + intr.cy;
    u_lo = std::min(u_lo, u);
    u_hi = std::max(u_hi, u);
    v_lo = std::min(v_lo, v);
    v_hi = std::max(v_hi, v);
  }
  PixelRect rect;
  if (any_behind) {
    rect = {0, 0, intr.width, intr.height};
  } else {
    rect.u0 = std::max(0, int(std::floor(u_lo)) - 1);
    rect.v0 = std::max(0, int(std::floor(v_lo)) - 1);
    rect.u1 = std::min(intr.width, int(std::ceil(u_hi)) + 2);
    rect.v1 = std::min(intr.height, int(std::ceil(v_hi)) + 2);
  }
  if (rect.u0 >= rect.u1 || rect.v0 >= rect.v1) {
    return std::nullopt;
  }
  return rect;
}

std::vector<Pose> trajectory(const SyntheticSpec& spec) {
  if (!spec.waypoints.empty()) {
    return spec.waypoints;
  }
  // Low-elevation orbit outside the room, so axis-aligned silhouettes stay
  // close to their canonical screen shapes.
  const Vec3 target = 0.5 * (spec.room_min + spec.room_max);
  const double half_dx = 0.5 * (spec.room_max.x() - spec.room_min.x());
  const double half_dy = 0.5 * (spec.room_max.y() - spec.room_min.y());
  const double radius = std::hypot(half_dx, half_dy) + 1.2;
  const double height = target.z() + 0.12 * radius;
  std::vector<Pose> poses;
  for (int k = 0; k < spec.frame_count; ++k) {
    const double theta = 2.0 * kPi * double(k) / double(spec.frame_count);
    const Vec3 eye{target.x() + radius * std::cos(theta),
                   target.y() + radius * std::sin(theta), height};
    poses.push_back(look_at(eye, target));
  }
  return poses;
}

struct SampledShape {
  std::string shape_name;
  ShapeKind kind;
  Vec3 half_extents;
};

SampledShape sample_shape(std::mt19937_64& rng, const std::vector<std::string>& shapes) {
  SampledShape out;
  out.shape_name = shapes[std::size_t(uniform_int(rng, int(shapes.size())))];
  out.kind = shape_kind_from_name(out.shape_name);
  switch (out.kind) {
    case ShapeKind::Cube: {
      const double h = uniform(rng, 0.18, 0.32);
      out.half_extents = Vec3{h, h, h};
      break;
    }
    case ShapeKind::Sphere: {
      const double r = uniform(rng, 0.18, 0.30);
      out.half_extents = Vec3{r, r, r};
      break;
    }
    case ShapeKind::Cylinder: {
      const double r = uniform(rng, 0.14, 0.22);
      const double hz = r * uniform(rng, 1.7, 2.3);
      out.half_extents = Vec3{r, r, hz};
      break;
    }
  }
  return out;
}

bool clear_of(const std::vector<SyntheticObject>& placed, const AxisAlignedBox& box) {
  for (const SyntheticObject& other : placed) {
    const AxisAlignedBox b = other.aabb();
    const bool overlap_x = box.min_corner.x() - kPairClearance < b.max_corner.x() &&
                           b.min_corner.x() - kPairClearance < box.max_corner.x();
    const bool overlap_y = box.min_corner.y() - kPairClearance < b.max_corner.y() &&
                           b.min_corner.y() - kPairClearance < box.max_corner.y();
    const bool overlap_z = box.min_corner.z() - kPairClearance < b.max_corner.z() &&
                           b.min_corner.z() - kPairClearance < box.max_corner.z();
    if (overlap_x && overlap_y && overlap_z) {
      return false;
    }
  }
  return true;
}

std::string query_text(const std::vector<SyntheticObject>& objects, int target) {
  const SyntheticObject& t = objects[std::size_t(target)];
  if (objects.size() == 1) {
    return "the " + t.label;
  }
  int anchor = -1;
  double best = std::numeric_limits<double>::infinity();
  for (int j = 0; j < int(objects.size()); ++j) {
    if (j == target) continue;
    const double d = (objects[std::size_t(j)].center - t.center).norm();
    if (d < best) {
      best = d;
      anchor = j;
    }
  }
  return "the " + t.label + " closest to the " + objects[std::size_t(anchor)].label;
}

/// Quantize to millimeters through the same conversion the depth reader
/// applies, so in-memory frames equal their reloaded form bit for bit.
void quantize_depth(cv::Mat& depth) {
  cv::Mat mm(depth.size(), CV_16UC1);
  for (int v = 0; v < depth.rows; ++v) {
    const float* src = depth.ptr<float>(v);
    std::uint16_t* dst = mm.ptr<std::uint16_t>(v);
    for (int u = 0; u < depth.cols; ++u) {
      dst[u] = std::uint16_t(std::clamp(std::round(src[u] * 1000.0), 0.0, 65535.0));
    }
  }
  mm.convertTo(depth, CV_32F, 1.0 / 1000.0);
}

}  // namespace

void SyntheticSpec::validate() const {
  const auto require = [](bool ok, const std::string& message) {
    if (!ok) {
      throw Error(ErrorCode::InvalidArgument, "synthetic spec: " + message);
    }
  };
  require(object_count >= 1, "object_count must be at least 1");
  const Vec3 extent = room_max - room_min;
  require(extent.minCoeff() >= 1.5, "room must span at least 1.5 m per axis");
  require(!shapes.empty(), "shape vocabulary must be non-empty");
  for (const std::string& name : shapes) {
    shape_kind_from_name(name);
  }
  const std::vector<std::string> vocab = effective_colors(*this);
  std::set<std::string> unique(vocab.begin(), vocab.end());
  require(unique.size() == vocab.size(), "color vocabulary has duplicates");
  for (const std::string& name : vocab) {
    palette_color(name);
  }
  require(int(vocab.size()) >= object_count,
          "color vocabulary smaller than object count; labels would collide");
  if (waypoints.empty()) {
    require(frame_count >= kMinVisibleFrames, "orbit needs at least 2 frames");
  } else {
    require(int(waypoints.size()) >= kMinVisibleFrames, "need at least 2 waypoints");
  }
  require(width >= 64 && height >= 64, "image resolution must be at least 64x64");
  require(focal > 0.0, "focal length must be positive");
  require(points_per_object >= 1, "points_per_object must be at least 1");
}

AxisAlignedBox SyntheticObject::aabb() const {
  return AxisAlignedBox{center - half_extents, center + half_extents};
}

OrientedBox SyntheticObject::box() const {
  return OrientedBox{center, half_extents, 0.0};
}

double surface_distance(const SyntheticObject& object, const Vec3& point) {
  const Vec3 local = point - object.center;
  switch (object.kind) {
    case ShapeKind::Cube: {
      const Vec3 q = local.cwiseAbs() - object.half_extents;
      const double outside = q.cwiseMax(0.0).norm();
      const double inside = std::min(q.maxCoeff(), 0.0);
      return std::abs(outside + inside);
    }
    case ShapeKind::Sphere:
      return std::abs(local.norm() - object.half_extents.x());
    case ShapeKind::Cylinder: {
      const double radial = std::hypot(local.x(), local.y()) - object.half_extents.x();
      const double axial = std::abs(local.z()) - object.half_extents.z();
      const double outside = std::hypot(std::max(radial, 0.0), std::max(axial, 0.0));
      const double inside = std::min(std::max(radial, axial), 0.0);
      return std::abs(outside + inside);
    }
  }
  return 0.0;
}

SyntheticScene synth_scene(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);

  const std::vector<Pose> poses = trajectory(spec);
  CameraIntrinsics intr;
  intr.fx = spec.focal;
  intr.fy = spec.focal;
  intr.cx = spec.width / 2.0;
  intr.cy = spec.height / 2.0;
  intr.width = spec.width;
  intr.height = spec.height;

  // Colors drawn without replacement keep labels unique.
  std::vector<std::string> colors = effective_colors(spec);
  for (int i = int(colors.size()) - 1; i > 0; --i) {
    std::swap(colors[std::size_t(i)], colors[std::size_t(uniform_int(rng, i + 1))]);
  }
  colors.resize(std::size_t(spec.object_count));

  SyntheticScene out;
  out.scene.scene_id = "synthetic-" + std::to_string(spec.seed);

  int attempts = 0;
  const auto spend_attempt = [&attempts]() {
    if (++attempts >= kMaxAttempts) {
      throw Error(ErrorCode::UnsatisfiableSpec,
                  "could not place disjoint, visible objects in " +
                      std::to_string(kMaxAttempts) + " attempts");
    }
  };

  std::vector<std::vector<int>> hit_counts;
  while (true) {
    out.objects.clear();
    bool placed_all = true;
    for (int i = 0; i < spec.object_count; ++i) {
      const SampledShape shape = sample_shape(rng, spec.shapes);
      const Vec3 lo = spec.room_min + shape.half_extents + Vec3::Constant(kWallClearance);
      const Vec3 hi = spec.room_max - shape.half_extents - Vec3::Constant(kWallClearance);
      bool placed = false;
      for (int tries = 0; tries < 60 && !placed; ++tries) {
        spend_attempt();
        if ((hi - lo).minCoeff() < 0.0) {
          break;  // object cannot fit at all; burn the budget and bail
        }
        SyntheticObject object;
        object.color_name = colors[std::size_t(i)];
        object.shape_name = shape.shape_name;
        object.label = object.color_name + " " + object.shape_name;
        object.kind = shape.kind;
        object.color = palette_color(object.color_name);
        object.half_extents = shape.half_extents;
        object.center = Vec3{uniform(rng, lo.x(), hi.x()), uniform(rng, lo.y(), hi.y()),
                             uniform(rng, lo.z(), hi.z())};
        if (clear_of(out.objects, object.aabb())) {
          out.objects.push_back(std::move(object));
          placed = true;
        }
      }
      if (!placed) {
        placed_all = false;
        break;
      }
    }
    if (!placed_all) {
      continue;
    }

    // Render every frame; nearest hit wins, so occlusion is exact.
    out.scene.frames.clear();
    hit_counts.assign(std::size_t(spec.object_count),
                      std::vector<int>(poses.size(), 0));
    for (std::size_t f = 0; f < poses.size(); ++f) {
      Frame frame;
      frame.frame_id = int(f);
      frame.pose = poses[f];
      frame.intrinsics = intr;
      frame.rgb = cv::Mat(spec.height, spec.width, CV_8UC3,
                          cv::Scalar(kRenderBackground[0], kRenderBackground[1],
                                     kRenderBackground[2]));
      frame.depth = cv::Mat::zeros(spec.height, spec.width, CV_32FC1);

      const Vec3 origin = frame.pose.translation;
      const Eigen::Matrix3d& rot = frame.pose.rotation;
      std::vector<std::optional<PixelRect>> rects;
      rects.reserve(out.objects.size());
      for (const SyntheticObject& object : out.objects) {
        rects.push_back(screen_rect(object, frame.pose, intr));
      }

      for (int v = 0; v < spec.height; ++v) {
        cv::Vec3b* rgb_row = frame.rgb.ptr<cv::Vec3b>(v);
        float* depth_row = frame.depth.ptr<float>(v);
        for (int u = 0; u < spec.width; ++u) {
          const Vec3 dir_cam{(u + 0.5 - intr.cx) / intr.fx, (v + 0.5 - intr.cy) / intr.fy,
                             1.0};
          const Vec3 dir = rot * dir_cam;  // scaled so t is camera depth
          double best_t = std::numeric_limits<double>::infinity();
          int best_object = -1;
          for (std::size_t i = 0; i < out.objects.size(); ++i) {
            const auto& rect = rects[i];
            if (!rect || u < rect->u0 || u >= rect->u1 || v < rect->v0 || v >= rect->v1) {
              continue;
            }
            const double t = intersect(out.objects[i], origin, dir, 1e-3);
            if (t < best_t) {
              best_t = t;
              best_object = int(i);
            }
          }
          if (best_object >= 0) {
            const Rgb& color = out.objects[std::size_t(best_object)].color;
            rgb_row[u] = cv::Vec3b(color[0], color[1], color[2]);
            depth_row[u] = float(best_t);
            ++hit_counts[std::size_t(best_object)][f];
          }
        }
      }
      quantize_depth(frame.depth);
      out.scene.frames.push_back(std::move(frame));
    }

    bool all_visible = true;
    for (const std::vector<int>& counts : hit_counts) {
      int frames_seen = 0;
      for (const int count : counts) {
        if (count >= kMinVisiblePixels) ++frames_seen;
      }
      if (frames_seen < kMinVisibleFrames) {
        all_visible = false;
        break;
      }
    }
    if (all_visible) {
      break;
    }
    spend_attempt();
  }

  // Back-project the quantized depth on a pixel stride chosen so the cloud
  // lands near object_count * points_per_object points.
  long total_hits = 0;
  for (const std::vector<int>& counts : hit_counts) {
    for (const int count : counts) total_hits += count;
  }
  const long wanted = long(spec.object_count) * long(spec.points_per_object);
  const int stride =
      std::max(1, int(std::lround(std::sqrt(double(total_hits) / double(std::max(1L, wanted))))));
  for (const Frame& frame : out.scene.frames) {
    for (int v = stride / 2; v < spec.height; v += stride) {
      const cv::Vec3b* rgb_row = frame.rgb.ptr<cv::Vec3b>(v);
      const float* depth_row = frame.depth.ptr<float>(v);
      for (int u = stride / 2; u < spec.width; u += stride) {
        const double z = depth_row[u];
        if (z <= 0.0) continue;
        const Vec3 p_cam{(u + 0.5 - intr.cx) / intr.fx * z, (v + 0.5 - intr.cy) / intr.fy * z,
                         z};
        const Vec3 p = frame.pose.to_world(p_cam);
        out.scene.cloud.positions.push_back(p.cast<float>());
        out.scene.cloud.colors.push_back(Rgb{rgb_row[u][0], rgb_row[u][1], rgb_row[u][2]});
      }
    }
  }

  for (int i = 0; i < spec.object_count; ++i) {
    SyntheticQuery query;
    char id[16];
    std::snprintf(id, sizeof id, "q%03d", i);
    query.query_id = id;
    query.text = query_text(out.objects, i);
    query.target_index = i;
    out.queries.push_back(std::move(query));
  }
  return out;
}

void save_synthetic_scene(const std::filesystem::path& root, const SyntheticScene& scene) {
  save_scene(root, scene.scene);
  save_ground_truth(root / "ground_truth.json", scene.objects, scene.queries);
}

void save_ground_truth(const std::filesystem::path& file,
                       const std::vector<SyntheticObject>& objects,
                       const std::vector<SyntheticQuery>& queries) {
  nlohmann::json doc;
  auto& objs = doc["objects"] = nlohmann::json::array();
  for (const SyntheticObject& object : objects) {
    objs.push_back({
        {"label", object.label},
        {"color", object.color_name},
        {"shape", object.shape_name},
        {"center", {object.center.x(), object.center.y(), object.center.z()}},
        {"half_extents",
         {object.half_extents.x(), object.half_extents.y(), object.half_extents.z()}},
        {"yaw", 0.0},
    });
  }
  auto& qs = doc["queries"] = nlohmann::json::array();
  for (const SyntheticQuery& query : queries) {
    qs.push_back({{"query_id", query.query_id},
                  {"text", query.text},
                  {"target_index", query.target_index}});
  }
  std::ofstream out(file);
  if (!out) {
    throw Error(ErrorCode::MissingFile, "cannot write " + file.string());
  }
  out << doc.dump(2) << "\n";
}

SceneGroundTruth load_ground_truth(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw Error(ErrorCode::MissingFile, "cannot open " + file.string());
  }
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, file.string() + ": " + e.what());
  }
  SceneGroundTruth truth;
  try {
    for (const auto& entry : doc.at("objects")) {
      SyntheticObject object;
      object.label = entry.at("label").get<std::string>();
      object.color_name = entry.value("color", "");
      object.shape_name = entry.value("shape", "");
      if (!object.shape_name.empty()) {
        object.kind = shape_kind_from_name(object.shape_name);
      }
      if (!object.color_name.empty()) {
        object.color = palette_color(object.color_name);
      }
      const auto& c = entry.at("center");
      object.center = Vec3{c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
      const auto& h = entry.at("half_extents");
      object.half_extents =
          Vec3{h.at(0).get<double>(), h.at(1).get<double>(), h.at(2).get<double>()};
      truth.objects.push_back(std::move(object));
    }
    for (const auto& entry : doc.at("queries")) {
      SyntheticQuery query;
      query.query_id = entry.at("query_id").get<std::string>();
      query.text = entry.at("text").get<std::string>();
      query.target_index = entry.at("target_index").get<int>();
      if (query.target_index < 0 || query.target_index >= int(truth.objects.size())) {
        throw Error(ErrorCode::CorruptFile,
                    file.string() + ": query target out of range: " + query.query_id);
      }
      truth.queries.push_back(std::move(query));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, file.string() + ": " + e.what());
  }
  return truth;
}

OracleContext oracle_context(const SceneGroundTruth& truth) {
  OracleContext context;
  for (const SyntheticObject& object : truth.objects) {
    context.objects.push_back({object.label, object.box()});
  }
  for (const SyntheticQuery& query : truth.queries) {
    context.target_by_query[query.text] = query.target_index;
  }
  return context;
}

}  // namespace uniground
