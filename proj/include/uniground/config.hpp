#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uniground/reasoner.hpp"
#include "uniground/superpoints.hpp"

namespace uniground {

/// Minimal TOML reader covering what the pipeline config needs: `[section]`
/// headers, `key = value` pairs, `#` comments, and values that are strings,
/// booleans, numbers (inf allowed) or single-line arrays of one of those.
class TomlFile {
 public:
  static TomlFile parse(const std::string& text);
  static TomlFile load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  bool boolean(const std::string& section, const std::string& key, bool fallback) const;
  double number(const std::string& section, const std::string& key, double fallback) const;
  long integer(const std::string& section, const std::string& key, long fallback) const;
  std::string str(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  std::vector<double> number_list(const std::string& section, const std::string& key,
                                  const std::vector<double>& fallback) const;
  std::vector<std::string> string_list(const std::string& section, const std::string& key,
                                       const std::vector<std::string>& fallback) const;

  /// section -> keys, for rejecting unknown entries.
  std::map<std::string, std::vector<std::string>> contents() const;

 private:
  struct Value {
    enum class Kind { Bool, Number, String, NumberList, StringList, EmptyList };
    Kind kind = Kind::String;
    bool b = false;
    double num = 0.0;
    std::string s;
    std::vector<double> nums;
    std::vector<std::string> strs;
  };

  const Value* find(const std::string& section, const std::string& key) const;

  std::map<std::string, std::map<std::string, Value>> sections_;
};

struct SuperpointConfig {
  double voxel_size = 0.02;
  double seed_spacing = 0.5;
  int k_neighbors = 12;
  double angle_thresh_deg = 15.0;
  double color_thresh = 30.0;
  SupervoxelWeights weights;
};

struct MergeConfig {
  double start = 0.9;
  double end = 0.5;
  int stages = 5;
  bool size_first = false;
  bool point_count_denominator = false;
};

struct SemanticsConfig {
  int u = 5;
  int max_views = 10;
  std::vector<double> scales;  // defaults to kDefaultScales
  int min_prompts = 10;
  int max_prompts = 50;
  double occlusion_tol = 0.05;
};

struct ViewsConfig {
  int views_per_candidate = 3;  // l
  std::vector<double> azimuths_deg = {90.0, 210.0, 330.0};
  double splat_radius_m = 0.015;
  int render_width = 640;
  int render_height = 480;
  double render_focal = 500.0;
  double axes_length = 1.0;
};

struct ReasonerConfig {
  int max_retries = 1;
  double match_threshold = 0.6;
  int naming_parallel = 4;
  PromptToggles toggles;
  std::string prompt_dir;  // empty = builtin templates
};

struct ProvidersConfig {
  std::string mode = "mock";  // mock | oracle | degraded | http
  double embed_noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  double timeout_seconds = 30.0;
  int http_retries = 2;
  std::string mask_endpoint;   // empty = $UG_MASK_ENDPOINT
  std::string embed_endpoint;  // empty = $UG_EMBED_ENDPOINT
  std::string vlm_endpoint;    // empty = $UG_VLM_ENDPOINT
};

struct HarnessConfig {
  int workers = 1;
  bool deterministic_report = false;
};

/// Every tunable of the two-stage pipeline, one struct per config section.
/// Defaults reproduce the documented behavior with no file at all.
struct PipelineConfig {
  SuperpointConfig superpoints;
  MergeConfig merge;
  SemanticsConfig semantics;
  ViewsConfig views;
  ReasonerConfig reasoner;
  ProvidersConfig providers;
  HarnessConfig harness;

  static PipelineConfig defaults();
  static PipelineConfig from_toml(const TomlFile& file);  // unknown keys rejected
  static PipelineConfig load(const std::filesystem::path& path);

  void validate() const;
  CameraIntrinsics render_intrinsics() const;
  OrbitCameraSpec orbit_spec(const AxisAlignedBox& scene_bounds) const;
  GroundOptions ground_options() const;
};

}  // namespace uniground
