#include "uniground/scene_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace uniground {
namespace {

namespace fs = std::filesystem;

constexpr std::size_t kPlyVertexBytes = 12 + 3;

std::string frame_file(const char* prefix, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%06d.%s", prefix, index, ext);
  return buf;
}

std::vector<std::string> split_tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> tokens;
  std::string tok;
  while (ss >> tok) tokens.push_back(tok);
  return tokens;
}

[[noreturn]] void corrupt(const fs::path& path, const std::string& why) {
  throw Error(ErrorCode::CorruptFile, path.string() + ": " + why);
}

void require_exists(const fs::path& path, ErrorCode code = ErrorCode::MissingFile) {
  if (!fs::exists(path)) {
    throw Error(code, "missing file: " + path.string());
  }
}

std::vector<double> load_numbers(const fs::path& path, std::size_t expected) {
  require_exists(path);
  std::ifstream in(path);
  std::vector<double> values;
  double v = 0.0;
  while (in >> v) values.push_back(v);
  if (values.size() != expected) {
    corrupt(path, "expected " + std::to_string(expected) + " numbers, got " +
                      std::to_string(values.size()));
  }
  for (double x : values) {
    if (!std::isfinite(x)) corrupt(path, "non-finite value");
  }
  return values;
}

}  // namespace

PointCloud load_ply(const fs::path& path) {
  require_exists(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) corrupt(path, "cannot open");

  std::string line;
  if (!std::getline(in, line) || split_tokens(line) != std::vector<std::string>{"ply"}) {
    corrupt(path, "not a PLY file");
  }

  long vertex_count = -1;
  bool format_ok = false;
  std::vector<std::string> property_names;
  bool in_vertex_element = false;
  while (std::getline(in, line)) {
    const auto tokens = split_tokens(line);
    if (tokens.empty() || tokens[0] == "comment" || tokens[0] == "obj_info") continue;
    if (tokens[0] == "end_header") break;
    if (tokens[0] == "format") {
      if (tokens.size() != 3 || tokens[1] != "binary_little_endian") {
        corrupt(path, "only binary_little_endian PLY is supported");
      }
      format_ok = true;
    } else if (tokens[0] == "element") {
      if (tokens.size() != 3) corrupt(path, "malformed element line");
      if (tokens[1] != "vertex") corrupt(path, "unsupported element '" + tokens[1] + "'");
      if (vertex_count >= 0) corrupt(path, "duplicate vertex element");
      vertex_count = std::stol(tokens[2]);
      if (vertex_count < 0) corrupt(path, "negative vertex count");
      in_vertex_element = true;
    } else if (tokens[0] == "property") {
      if (!in_vertex_element) corrupt(path, "property outside vertex element");
      if (tokens.size() != 3) corrupt(path, "malformed property line");
      const std::string& type = tokens[1];
      const std::string& name = tokens[2];
      const bool is_float = type == "float" || type == "float32";
      const bool is_uchar = type == "uchar" || type == "uint8";
      if (property_names.size() < 3 ? !is_float : !is_uchar) {
        corrupt(path, "unsupported property '" + type + " " + name + "'");
      }
      property_names.push_back(name);
    } else {
      corrupt(path, "unexpected header line '" + tokens[0] + "'");
    }
  }
  if (!format_ok || vertex_count < 0) corrupt(path, "incomplete header");
  const std::vector<std::string> expected = {"x", "y", "z", "red", "green", "blue"};
  if (property_names != expected) corrupt(path, "vertex properties must be x y z red green blue");

  PointCloud cloud;
  cloud.positions.resize(static_cast<std::size_t>(vertex_count));
  cloud.colors.resize(static_cast<std::size_t>(vertex_count));
  std::vector<char> row(kPlyVertexBytes);
  for (long i = 0; i < vertex_count; ++i) {
    in.read(row.data(), static_cast<std::streamsize>(row.size()));
    if (!in) corrupt(path, "truncated vertex data at vertex " + std::to_string(i));
    float xyz[3];
    std::memcpy(xyz, row.data(), 12);
    cloud.positions[static_cast<std::size_t>(i)] = Vec3f(xyz[0], xyz[1], xyz[2]);
    std::memcpy(cloud.colors[static_cast<std::size_t>(i)].data(), row.data() + 12, 3);
  }
  cloud.validate();
  return cloud;
}

void save_ply(const fs::path& path, const PointCloud& cloud) {
  cloud.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  out << "ply\n"
      << "format binary_little_endian 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  std::vector<char> row(kPlyVertexBytes);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const float xyz[3] = {cloud.positions[i].x(), cloud.positions[i].y(),
                          cloud.positions[i].z()};
    std::memcpy(row.data(), xyz, 12);
    std::memcpy(row.data() + 12, cloud.colors[i].data(), 3);
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw Error(ErrorCode::CorruptFile, "short write to " + path.string());
}

cv::Mat load_rgb_png(const fs::path& path) {
  require_exists(path);
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) corrupt(path, "cannot decode image");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

void save_rgb_png(const fs::path& path, const cv::Mat& rgb) {
  if (rgb.type() != CV_8UC3 || rgb.empty()) {
    throw Error(ErrorCode::InvalidArgument, "save_rgb_png expects a non-empty CV_8UC3 image");
  }
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) {
    throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  }
}

cv::Mat load_depth_png(const fs::path& path) {
  require_exists(path);
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) corrupt(path, "cannot decode image");
  if (raw.type() != CV_16UC1) corrupt(path, "depth must be 16-bit single channel");
  cv::Mat depth;
  raw.convertTo(depth, CV_32F, 1.0 / 1000.0);
  return depth;
}

void save_depth_png(const fs::path& path, const cv::Mat& depth_m) {
  if (depth_m.type() != CV_32FC1 || depth_m.empty()) {
    throw Error(ErrorCode::InvalidArgument, "save_depth_png expects a non-empty CV_32FC1 image");
  }
  cv::Mat mm(depth_m.size(), CV_16UC1);
  for (int r = 0; r < depth_m.rows; ++r) {
    const float* src = depth_m.ptr<float>(r);
    std::uint16_t* dst = mm.ptr<std::uint16_t>(r);
    for (int c = 0; c < depth_m.cols; ++c) {
      const double v = std::clamp(std::round(src[c] * 1000.0), 0.0, 65535.0);
      dst[c] = static_cast<std::uint16_t>(v);
    }
  }
  if (!cv::imwrite(path.string(), mm)) {
    throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  }
}

CameraIntrinsics load_intrinsics(const fs::path& path) {
  const auto v = load_numbers(path, 6);
  CameraIntrinsics intr;
  intr.fx = v[0];
  intr.fy = v[1];
  intr.cx = v[2];
  intr.cy = v[3];
  intr.width = static_cast<int>(std::lround(v[4]));
  intr.height = static_cast<int>(std::lround(v[5]));
  intr.validate();
  return intr;
}

void save_intrinsics(const fs::path& path, const CameraIntrinsics& intr) {
  intr.validate();
  std::ofstream out(path);
  out.precision(17);
  out << intr.fx << " " << intr.fy << " " << intr.cx << " " << intr.cy << " " << intr.width << " "
      << intr.height << "\n";
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
}

Pose load_pose(const fs::path& path) {
  const auto v = load_numbers(path, 16);
  for (int col = 0; col < 4; ++col) {
    const double expected = col == 3 ? 1.0 : 0.0;
    if (std::abs(v[12 + static_cast<std::size_t>(col)] - expected) > 1e-6) {
      corrupt(path, "last row must be 0 0 0 1");
    }
  }
  Pose pose;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      pose.rotation(r, c) = v[static_cast<std::size_t>(4 * r + c)];
    }
    pose.translation[r] = v[static_cast<std::size_t>(4 * r + 3)];
  }
  if (pose.orthonormality_error() > 1e-3) {
    throw Error(ErrorCode::BadPose, path.string() + ": rotation is not orthonormal");
  }
  pose.reorthonormalize();
  return pose;
}

void save_pose(const fs::path& path, const Pose& pose) {
  std::ofstream out(path);
  out.precision(17);
  const Eigen::Matrix4d m = pose.matrix();
  for (int r = 0; r < 4; ++r) {
    out << m(r, 0) << " " << m(r, 1) << " " << m(r, 2) << " " << m(r, 3) << "\n";
  }
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
}

Scene load_scene(const fs::path& root) {
  require_exists(root);
  Scene scene;
  scene.scene_id = root.filename().string();
  scene.cloud = load_ply(root / "cloud.ply");

  const fs::path frames_dir = root / "frames";
  require_exists(frames_dir);
  const CameraIntrinsics intr = load_intrinsics(frames_dir / "intrinsics.txt");

  int max_index = -1;
  for (const auto& entry : fs::directory_iterator(frames_dir)) {
    const std::string name = entry.path().filename().string();
    int idx = -1;
    if (std::sscanf(name.c_str(), "color_%d.png", &idx) == 1) {
      max_index = std::max(max_index, idx);
    }
  }
  if (max_index < 0) {
    throw Error(ErrorCode::MissingFile, "no frames in " + frames_dir.string());
  }

  scene.frames.reserve(static_cast<std::size_t>(max_index) + 1);
  for (int i = 0; i <= max_index; ++i) {
    Frame frame;
    frame.frame_id = i;
    frame.intrinsics = intr;
    frame.rgb = load_rgb_png(frames_dir / frame_file("color", i, "png"));
    frame.depth = load_depth_png(frames_dir / frame_file("depth", i, "png"));
    const fs::path pose_path = frames_dir / frame_file("pose", i, "txt");
    if (!fs::exists(pose_path)) {
      throw Error(ErrorCode::MissingPose, "missing pose for frame " + std::to_string(i), i);
    }
    frame.pose = load_pose(pose_path);
    if (frame.rgb.cols != intr.width || frame.rgb.rows != intr.height ||
        frame.depth.cols != intr.width || frame.depth.rows != intr.height) {
      throw Error(ErrorCode::DimensionMismatch,
                  "frame " + std::to_string(i) + " size does not match intrinsics", i);
    }
    scene.frames.push_back(std::move(frame));
  }
  return scene;
}

void save_scene(const fs::path& root, const Scene& scene) {
  fs::create_directories(root / "frames");
  save_ply(root / "cloud.ply", scene.cloud);
  if (scene.frames.empty()) {
    throw Error(ErrorCode::InvalidArgument, "scene has no frames");
  }
  save_intrinsics(root / "frames" / "intrinsics.txt", scene.frames[0].intrinsics);
  for (const Frame& frame : scene.frames) {
    const int i = frame.frame_id;
    save_rgb_png(root / "frames" / frame_file("color", i, "png"), frame.rgb);
    save_depth_png(root / "frames" / frame_file("depth", i, "png"), frame.depth);
    save_pose(root / "frames" / frame_file("pose", i, "txt"), frame.pose);
  }
}

}  // namespace uniground
