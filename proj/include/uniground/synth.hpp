#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uniground/gateway.hpp"

namespace uniground {

/// Recipe for a generated RGB-D scene of colored primitives. Colors are drawn
/// without replacement so every generated label ("red cube") names exactly one
/// object, which keeps the templated queries unambiguous by construction.
struct SyntheticSpec {
  std::uint64_t seed = 0;
  Vec3 room_min{-2.0, -2.0, 0.0};
  Vec3 room_max{2.0, 2.0, 2.0};
  int object_count = 5;
  std::vector<std::string> shapes{kShapeNames.begin(), kShapeNames.end()};
  std::vector<std::string> colors;  // empty = full object palette
  int frame_count = 8;              // orbit length; ignored when waypoints set
  std::vector<Pose> waypoints;      // non-empty replaces the default orbit
  int width = 640;
  int height = 480;
  double focal = 500.0;
  int points_per_object = 1200;  // target back-projected density

  void validate() const;  // throws InvalidArgument
};

enum class ShapeKind { Cube, Sphere, Cylinder };

struct SyntheticObject {
  std::string label;  // "<color> <shape>"
  std::string color_name;
  std::string shape_name;
  ShapeKind kind = ShapeKind::Cube;
  Rgb color{0, 0, 0};
  Vec3 center = Vec3::Zero();
  /// Sphere: all components the radius. Cylinder: x = y = radius, z = half
  /// height. Primitives are axis aligned, so the ground-truth yaw is zero.
  Vec3 half_extents = Vec3::Zero();

  AxisAlignedBox aabb() const;
  OrientedBox box() const;
};

struct SyntheticQuery {
  std::string query_id;
  std::string text;
  int target_index = 0;
};

struct SyntheticScene {
  Scene scene;
  std::vector<SyntheticObject> objects;
  std::vector<SyntheticQuery> queries;
};

/// Distance from a point to the object's surface (zero on the surface,
/// positive inside and out). Anchors the back-projection fidelity checks.
double surface_distance(const SyntheticObject& object, const Vec3& point);

/// Ray-trace the primitives into RGB-D frames along the camera trajectory,
/// then back-project the millimeter-quantized depth into the scene cloud, so
/// the in-memory scene equals what a consumer reloads from disk. Placement is
/// rejection-sampled: boxes keep a clearance gap and every object must cover
/// >= 200 pixels in >= 2 frames; 1000 failed draws throw UnsatisfiableSpec.
/// One query per object: "the {color} {shape}" joined with "closest to" its
/// nearest neighbor when the scene has more than one object.
SyntheticScene synth_scene(const SyntheticSpec& spec);

/// save_scene plus ground_truth.json (objects, queries) beside the frames.
void save_synthetic_scene(const std::filesystem::path& root, const SyntheticScene& scene);

struct SceneGroundTruth {
  std::vector<SyntheticObject> objects;
  std::vector<SyntheticQuery> queries;
};

void save_ground_truth(const std::filesystem::path& file,
                       const std::vector<SyntheticObject>& objects,
                       const std::vector<SyntheticQuery>& queries);
SceneGroundTruth load_ground_truth(const std::filesystem::path& file);

/// Feed the ground truth to the oracle VLM providers.
OracleContext oracle_context(const SceneGroundTruth& truth);

}  // namespace uniground
