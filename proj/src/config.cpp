#include "uniground/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace uniground {

namespace {

std::string trim_copy(const std::string& s) {
  std::size_t begin = 0;
  std::size_t end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) {
    ++begin;
  }
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) {
    --end;
  }
  return s.substr(begin, end - begin);
}

[[noreturn]] void fail_line(int line_no, const std::string& message) {
  throw Error(ErrorCode::CorruptFile,
              "config line " + std::to_string(line_no) + ": " + message);
}

bool valid_name(const std::string& name) {
  if (name.empty()) {
    return false;
  }
  for (char c : name) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') {
      return false;
    }
  }
  return true;
}

/// Cut an inline comment, respecting double-quoted strings.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
    } else if (c == '"') {
      in_string = true;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

std::string parse_string_token(const std::string& token, int line_no) {
  if (token.size() < 2 || token.front() != '"' || token.back() != '"') {
    fail_line(line_no, "malformed string value: " + token);
  }
  std::string out;
  for (std::size_t i = 1; i + 1 < token.size(); ++i) {
    const char c = token[i];
    if (c != '\\') {
      out += c;
      continue;
    }
    if (i + 2 >= token.size()) {
      fail_line(line_no, "dangling escape in string: " + token);
    }
    const char next = token[++i];
    switch (next) {
      case '"': out += '"'; break;
      case '\\': out += '\\'; break;
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      default: fail_line(line_no, std::string("unsupported escape \\") + next);
    }
  }
  return out;
}

double parse_number_token(const std::string& token, int line_no) {
  char* end = nullptr;
  const double value = std::strtod(token.c_str(), &end);
  if (end != token.c_str() + token.size() || token.empty()) {
    fail_line(line_no, "malformed number: " + token);
  }
  return value;
}

/// Split a single-line array body on top-level commas (quote-aware).
std::vector<std::string> split_elements(const std::string& body, int line_no) {
  std::vector<std::string> elements;
  std::string current;
  bool in_string = false;
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (in_string) {
      current += c;
      if (c == '\\' && i + 1 < body.size()) {
        current += body[++i];
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
      current += c;
    } else if (c == ',') {
      elements.push_back(trim_copy(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (in_string) {
    fail_line(line_no, "unterminated string in array");
  }
  const std::string last = trim_copy(current);
  if (!last.empty()) {
    elements.push_back(last);
  } else if (!elements.empty()) {
    fail_line(line_no, "trailing comma in array");
  }
  return elements;
}

}  // namespace

TomlFile TomlFile::parse(const std::string& text) {
  TomlFile file;
  std::istringstream lines(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(lines, raw)) {
    ++line_no;
    const std::string line = trim_copy(strip_comment(raw));
    if (line.empty()) {
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') {
        fail_line(line_no, "malformed section header: " + line);
      }
      section = trim_copy(line.substr(1, line.size() - 2));
      if (!valid_name(section)) {
        fail_line(line_no, "invalid section name: " + section);
      }
      file.sections_[section];
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      fail_line(line_no, "expected key = value: " + line);
    }
    const std::string key = trim_copy(line.substr(0, eq));
    const std::string token = trim_copy(line.substr(eq + 1));
    if (!valid_name(key)) {
      fail_line(line_no, "invalid key name: " + key);
    }
    if (token.empty()) {
      fail_line(line_no, "missing value for key: " + key);
    }
    if (file.sections_[section].count(key) != 0) {
      fail_line(line_no, "duplicate key: " + key);
    }

    Value value;
    if (token.front() == '"') {
      value.kind = Value::Kind::String;
      value.s = parse_string_token(token, line_no);
    } else if (token == "true" || token == "false") {
      value.kind = Value::Kind::Bool;
      value.b = token == "true";
    } else if (token.front() == '[') {
      if (token.back() != ']') {
        fail_line(line_no, "arrays must close on the same line: " + token);
      }
      const auto elements = split_elements(token.substr(1, token.size() - 2), line_no);
      if (elements.empty()) {
        value.kind = Value::Kind::EmptyList;
      } else if (elements.front().front() == '"') {
        value.kind = Value::Kind::StringList;
        for (const std::string& element : elements) {
          value.strs.push_back(parse_string_token(element, line_no));
        }
      } else {
        value.kind = Value::Kind::NumberList;
        for (const std::string& element : elements) {
          value.nums.push_back(parse_number_token(element, line_no));
        }
      }
    } else {
      value.kind = Value::Kind::Number;
      value.num = parse_number_token(token, line_no);
    }
    file.sections_[section][key] = std::move(value);
  }
  return file;
}

TomlFile TomlFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::MissingFile, "cannot open config file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

const TomlFile::Value* TomlFile::find(const std::string& section, const std::string& key) const {
  const auto sec = sections_.find(section);
  if (sec == sections_.end()) {
    return nullptr;
  }
  const auto it = sec->second.find(key);
  return it == sec->second.end() ? nullptr : &it->second;
}

bool TomlFile::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

bool TomlFile::boolean(const std::string& section, const std::string& key, bool fallback) const {
  const Value* value = find(section, key);
  if (value == nullptr) {
    return fallback;
  }
  if (value->kind != Value::Kind::Bool) {
    throw Error(ErrorCode::InvalidArgument, section + "." + key + " must be a boolean");
  }
  return value->b;
}

double TomlFile::number(const std::string& section, const std::string& key,
                        double fallback) const {
  const Value* value = find(section, key);
  if (value == nullptr) {
    return fallback;
  }
  if (value->kind != Value::Kind::Number) {
    throw Error(ErrorCode::InvalidArgument, section + "." + key + " must be a number");
  }
  return value->num;
}

long TomlFile::integer(const std::string& section, const std::string& key, long fallback) const {
  const Value* value = find(section, key);
  if (value == nullptr) {
    return fallback;
  }
  if (value->kind != Value::Kind::Number || value->num != std::floor(value->num) ||
      std::abs(value->num) > 1e15) {
    throw Error(ErrorCode::InvalidArgument, section + "." + key + " must be an integer");
  }
  return long(value->num);
}

std::string TomlFile::str(const std::string& section, const std::string& key,
                          const std::string& fallback) const {
  const Value* value = find(section, key);
  if (value == nullptr) {
    return fallback;
  }
  if (value->kind != Value::Kind::String) {
    throw Error(ErrorCode::InvalidArgument, section + "." + key + " must be a string");
  }
  return value->s;
}

std::vector<double> TomlFile::number_list(const std::string& section, const std::string& key,
                                          const std::vector<double>& fallback) const {
  const Value* value = find(section, key);
  if (value == nullptr) {
    return fallback;
  }
  if (value->kind == Value::Kind::EmptyList) {
    return {};
  }
  if (value->kind != Value::Kind::NumberList) {
    throw Error(ErrorCode::InvalidArgument, section + "." + key + " must be a number array");
  }
  return value->nums;
}

std::vector<std::string> TomlFile::string_list(const std::string& section, const std::string& key,
                                               const std::vector<std::string>& fallback) const {
  const Value* value = find(section, key);
  if (value == nullptr) {
    return fallback;
  }
  if (value->kind == Value::Kind::EmptyList) {
    return {};
  }
  if (value->kind != Value::Kind::StringList) {
    throw Error(ErrorCode::InvalidArgument, section + "." + key + " must be a string array");
  }
  return value->strs;
}

std::map<std::string, std::vector<std::string>> TomlFile::contents() const {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [section, keys] : sections_) {
    auto& list = out[section];
    for (const auto& [key, value] : keys) {
      list.push_back(key);
    }
  }
  return out;
}

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig config;
  config.semantics.scales = kDefaultScales;
  return config;
}

PipelineConfig PipelineConfig::from_toml(const TomlFile& file) {
  static const std::map<std::string, std::set<std::string>> known = {
      {"superpoints",
       {"voxel_size", "seed_spacing", "k_neighbors", "angle_thresh_deg", "color_thresh",
        "w_color", "w_spatial", "w_normal"}},
      {"merge", {"start", "end", "stages", "size_first", "point_count_denominator"}},
      {"semantics",
       {"u", "max_views", "scales", "min_prompts", "max_prompts", "occlusion_tol"}},
      {"views",
       {"views_per_candidate", "azimuths_deg", "splat_radius_m", "render_width",
        "render_height", "render_focal", "axes_length"}},
      {"reasoner",
       {"max_retries", "match_threshold", "naming_parallel", "spatial", "semantic",
        "visual_cot", "prompt_dir"}},
      {"providers",
       {"mode", "embed_noise_sigma", "noise_seed", "timeout_seconds", "http_retries",
        "mask_endpoint", "embed_endpoint", "vlm_endpoint"}},
      {"harness", {"workers", "deterministic_report"}},
  };
  for (const auto& [section, keys] : file.contents()) {
    const auto it = known.find(section);
    if (it == known.end()) {
      throw Error(ErrorCode::InvalidArgument, "unknown config section: [" + section + "]");
    }
    for (const std::string& key : keys) {
      if (it->second.count(key) == 0) {
        throw Error(ErrorCode::InvalidArgument,
                    "unknown config key: " + section + "." + key);
      }
    }
  }

  PipelineConfig config = defaults();
  auto& sp = config.superpoints;
  sp.voxel_size = file.number("superpoints", "voxel_size", sp.voxel_size);
  sp.seed_spacing = file.number("superpoints", "seed_spacing", sp.seed_spacing);
  sp.k_neighbors = int(file.integer("superpoints", "k_neighbors", sp.k_neighbors));
  sp.angle_thresh_deg = file.number("superpoints", "angle_thresh_deg", sp.angle_thresh_deg);
  sp.color_thresh = file.number("superpoints", "color_thresh", sp.color_thresh);
  sp.weights.color = file.number("superpoints", "w_color", sp.weights.color);
  sp.weights.spatial = file.number("superpoints", "w_spatial", sp.weights.spatial);
  sp.weights.normal = file.number("superpoints", "w_normal", sp.weights.normal);

  auto& merge = config.merge;
  merge.start = file.number("merge", "start", merge.start);
  merge.end = file.number("merge", "end", merge.end);
  merge.stages = int(file.integer("merge", "stages", merge.stages));
  merge.size_first = file.boolean("merge", "size_first", merge.size_first);
  merge.point_count_denominator =
      file.boolean("merge", "point_count_denominator", merge.point_count_denominator);

  auto& sem = config.semantics;
  sem.u = int(file.integer("semantics", "u", sem.u));
  sem.max_views = int(file.integer("semantics", "max_views", sem.max_views));
  sem.scales = file.number_list("semantics", "scales", sem.scales);
  sem.min_prompts = int(file.integer("semantics", "min_prompts", sem.min_prompts));
  sem.max_prompts = int(file.integer("semantics", "max_prompts", sem.max_prompts));
  sem.occlusion_tol = file.number("semantics", "occlusion_tol", sem.occlusion_tol);

  auto& views = config.views;
  views.views_per_candidate =
      int(file.integer("views", "views_per_candidate", views.views_per_candidate));
  views.azimuths_deg = file.number_list("views", "azimuths_deg", views.azimuths_deg);
  views.splat_radius_m = file.number("views", "splat_radius_m", views.splat_radius_m);
  views.render_width = int(file.integer("views", "render_width", views.render_width));
  views.render_height = int(file.integer("views", "render_height", views.render_height));
  views.render_focal = file.number("views", "render_focal", views.render_focal);
  views.axes_length = file.number("views", "axes_length", views.axes_length);

  auto& reasoner = config.reasoner;
  reasoner.max_retries = int(file.integer("reasoner", "max_retries", reasoner.max_retries));
  reasoner.match_threshold =
      file.number("reasoner", "match_threshold", reasoner.match_threshold);
  reasoner.naming_parallel =
      int(file.integer("reasoner", "naming_parallel", reasoner.naming_parallel));
  reasoner.toggles.spatial = file.boolean("reasoner", "spatial", reasoner.toggles.spatial);
  reasoner.toggles.semantic = file.boolean("reasoner", "semantic", reasoner.toggles.semantic);
  reasoner.toggles.visual_cot =
      file.boolean("reasoner", "visual_cot", reasoner.toggles.visual_cot);
  reasoner.prompt_dir = file.str("reasoner", "prompt_dir", reasoner.prompt_dir);

  auto& providers = config.providers;
  providers.mode = file.str("providers", "mode", providers.mode);
  providers.embed_noise_sigma =
      file.number("providers", "embed_noise_sigma", providers.embed_noise_sigma);
  providers.noise_seed =
      std::uint64_t(file.integer("providers", "noise_seed", long(providers.noise_seed)));
  providers.timeout_seconds =
      file.number("providers", "timeout_seconds", providers.timeout_seconds);
  providers.http_retries = int(file.integer("providers", "http_retries", providers.http_retries));
  providers.mask_endpoint = file.str("providers", "mask_endpoint", providers.mask_endpoint);
  providers.embed_endpoint = file.str("providers", "embed_endpoint", providers.embed_endpoint);
  providers.vlm_endpoint = file.str("providers", "vlm_endpoint", providers.vlm_endpoint);

  auto& harness = config.harness;
  harness.workers = int(file.integer("harness", "workers", harness.workers));
  harness.deterministic_report =
      file.boolean("harness", "deterministic_report", harness.deterministic_report);

  config.validate();
  return config;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  return from_toml(TomlFile::load(path));
}

void PipelineConfig::validate() const {
  const auto require = [](bool ok, const std::string& message) {
    if (!ok) {
      throw Error(ErrorCode::InvalidArgument, "config: " + message);
    }
  };
  require(superpoints.voxel_size > 0.0, "superpoints.voxel_size must be positive");
  require(superpoints.seed_spacing >= superpoints.voxel_size,
          "superpoints.seed_spacing must be at least voxel_size");
  require(superpoints.k_neighbors >= 3, "superpoints.k_neighbors must be at least 3");
  require(superpoints.angle_thresh_deg > 0.0 && superpoints.angle_thresh_deg < 90.0,
          "superpoints.angle_thresh_deg must lie in (0, 90)");
  require(superpoints.color_thresh >= 0.0, "superpoints.color_thresh must be non-negative");
  require(superpoints.weights.color >= 0.0 && superpoints.weights.spatial >= 0.0 &&
              superpoints.weights.normal >= 0.0,
          "superpoints weights must be non-negative");

  require(merge.stages >= 2, "merge.stages must be at least 2");
  require(merge.start <= 1.0 && merge.end > 0.0 && merge.start >= merge.end,
          "merge thresholds must satisfy 0 < end <= start <= 1");

  require(semantics.u >= 1, "semantics.u must be at least 1");
  require(semantics.max_views >= 1, "semantics.max_views must be at least 1");
  require(!semantics.scales.empty() && semantics.scales.front() == 1.0,
          "semantics.scales must start at 1.0");
  for (std::size_t i = 1; i < semantics.scales.size(); ++i) {
    require(semantics.scales[i] >= semantics.scales[i - 1],
            "semantics.scales must be ascending");
  }
  require(semantics.min_prompts >= 1 && semantics.max_prompts >= semantics.min_prompts,
          "semantics prompt bounds must satisfy 1 <= min <= max");
  require(semantics.occlusion_tol > 0.0, "semantics.occlusion_tol must be positive");

  require(views.views_per_candidate >= 1, "views.views_per_candidate must be at least 1");
  require(!views.azimuths_deg.empty(), "views.azimuths_deg must be non-empty");
  require(views.splat_radius_m > 0.0, "views.splat_radius_m must be positive");
  require(views.render_width > 0 && views.render_height > 0,
          "views render size must be positive");
  require(views.render_focal > 0.0, "views.render_focal must be positive");
  require(views.axes_length > 0.0, "views.axes_length must be positive");

  require(reasoner.max_retries >= 0, "reasoner.max_retries must be non-negative");
  require(reasoner.match_threshold >= -1.0 && reasoner.match_threshold <= 1.0,
          "reasoner.match_threshold must lie in [-1, 1]");
  require(reasoner.naming_parallel >= 1, "reasoner.naming_parallel must be at least 1");
  require(reasoner.toggles.spatial || reasoner.toggles.semantic || reasoner.toggles.visual_cot,
          "at least one reasoner toggle must stay on");

  require(providers.mode == "mock" || providers.mode == "oracle" ||
              providers.mode == "degraded" || providers.mode == "http",
          "providers.mode must be mock, oracle, degraded or http");
  require(providers.embed_noise_sigma >= 0.0,
          "providers.embed_noise_sigma must be non-negative");
  require(providers.timeout_seconds > 0.0, "providers.timeout_seconds must be positive");
  require(providers.http_retries >= 0, "providers.http_retries must be non-negative");

  require(harness.workers >= 1, "harness.workers must be at least 1");
}

CameraIntrinsics PipelineConfig::render_intrinsics() const {
  CameraIntrinsics intr;
  intr.fx = views.render_focal;
  intr.fy = views.render_focal;
  intr.cx = views.render_width / 2.0;
  intr.cy = views.render_height / 2.0;
  intr.width = views.render_width;
  intr.height = views.render_height;
  return intr;
}

OrbitCameraSpec PipelineConfig::orbit_spec(const AxisAlignedBox& scene_bounds) const {
  OrbitCameraSpec spec = orbit_spec_for_scene(scene_bounds);
  spec.azimuths.clear();
  for (double deg : views.azimuths_deg) {
    spec.azimuths.push_back(deg_to_rad(deg));
  }
  return spec;
}

GroundOptions PipelineConfig::ground_options() const {
  GroundOptions options;
  options.max_retries = reasoner.max_retries;
  options.match_threshold = reasoner.match_threshold;
  options.naming_parallel = reasoner.naming_parallel;
  options.toggles = reasoner.toggles;
  return options;
}

}  // namespace uniground
