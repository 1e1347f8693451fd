#include "uniground/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>

namespace uniground {
namespace {

// ---------------------------------------------------------------------------
// MockMaskProvider internals.

struct Component {
  cv::Mat mask;
  int area = 0;
  long long first_pixel = 0;  // row-major index of the first pixel
};

std::vector<Component> color_components(const cv::Mat& image, Rgb background) {
  const int w = image.cols;
  const int h = image.rows;
  cv::Mat labels(h, w, CV_32S, cv::Scalar(-1));
  std::vector<Component> components;
  std::vector<cv::Point> stack;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (labels.at<int>(y, x) >= 0) continue;
      const cv::Vec3b color = image.at<cv::Vec3b>(y, x);
      if (color[0] == background[0] && color[1] == background[1] && color[2] == background[2]) {
        labels.at<int>(y, x) = std::numeric_limits<int>::max();
        continue;
      }
      const int id = static_cast<int>(components.size());
      Component component;
      component.mask = cv::Mat::zeros(h, w, CV_8UC1);
      component.first_pixel = static_cast<long long>(y) * w + x;
      stack.push_back({x, y});
      labels.at<int>(y, x) = id;
      while (!stack.empty()) {
        const cv::Point p = stack.back();
        stack.pop_back();
        component.mask.at<std::uint8_t>(p.y, p.x) = 255;
        ++component.area;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = p.x + dx;
            const int ny = p.y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            if (labels.at<int>(ny, nx) >= 0) continue;
            if (image.at<cv::Vec3b>(ny, nx) != color) continue;
            labels.at<int>(ny, nx) = id;
            stack.push_back({nx, ny});
          }
        }
      }
      components.push_back(std::move(component));
    }
  }
  return components;
}

// ---------------------------------------------------------------------------
// MockEmbeddingProvider internals. Dimension layout (kDim = 64):
//   [0, 30)   joint color-shape block, dim = 3 * color + shape
//   [30, 40)  color marginals
//   [40, 43)  shape marginals
//   [43, 60)  noun vocabulary (synonym pairs share a latent axis)
//   [60, 64)  hash bucket for unrecognized text
constexpr int kJointBase = 0;
constexpr int kColorBase = 30;
constexpr int kShapeBase = 40;
constexpr int kHashBase = 60;
constexpr double kMarginalWeight = 0.3;
constexpr double kRepeatWeight = 0.35;

struct NounEntry {
  const char* word;
  int self_dim;
  int latent_dim;  // -1 for words without a synonym twin
};

constexpr std::array<NounEntry, 14> kNounTable = {{
    {"chair", 43, -1},
    {"table", 44, -1},
    {"door", 45, -1},
    {"window", 46, -1},
    {"bed", 47, -1},
    {"desk", 48, -1},
    {"lamp", 49, -1},
    {"shelf", 50, -1},
    {"sofa", 52, 51},
    {"couch", 53, 51},
    {"cupboard", 55, 54},
    {"cabinet", 56, 54},
    {"rug", 58, 57},
    {"carpet", 59, 57},
}};

int color_index(const std::string& word) {
  for (std::size_t i = 0; i < kObjectPalette.size(); ++i) {
    if (word == kObjectPalette[i].name) return static_cast<int>(i);
  }
  return -1;
}

int shape_index(const std::string& word) {
  if (word == "cube" || word == "box" || word == "block") return 0;
  if (word == "sphere" || word == "ball" || word == "orb") return 1;
  if (word == "cylinder" || word == "tube" || word == "can") return 2;
  return -1;
}

const NounEntry* noun_entry(const std::string& word) {
  for (const NounEntry& entry : kNounTable) {
    if (word == entry.word) return &entry;
  }
  return nullptr;
}

std::vector<std::string> tokenize_lower(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size, std::uint64_t hash) {
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= data[i];
    hash *= 0x100000001b3ull;
  }
  return hash;
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;

/// Spread an unrecognized input over the hash bucket dims, unit length.
void fill_hash_bucket(Eigen::VectorXf& v, std::uint64_t hash) {
  double norm2 = 0.0;
  double values[4];
  for (int i = 0; i < 4; ++i) {
    const std::uint64_t r = splitmix64(hash + static_cast<std::uint64_t>(i));
    values[i] = static_cast<double>(r >> 11) * 0x1p-52 - 1.0;  // [-1, 1)
    norm2 += values[i] * values[i];
  }
  if (norm2 < 1e-12) {
    v[kHashBase + 3] = 1.0f;
    return;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (int i = 0; i < 4; ++i) v[kHashBase + i] = static_cast<float>(values[i] * inv);
}

Eigen::VectorXf embed_text(const std::string& text) {
  Eigen::VectorXf v = Eigen::VectorXf::Zero(MockEmbeddingProvider::kDim);
  const std::vector<std::string> tokens = tokenize_lower(text);

  std::vector<int> colors(tokens.size()), shapes(tokens.size());
  std::vector<const NounEntry*> nouns(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    colors[i] = color_index(tokens[i]);
    shapes[i] = shape_index(tokens[i]);
    nouns[i] = noun_entry(tokens[i]);
  }

  // Shape words claim the nearest unclaimed color up to two tokens back.
  std::vector<int> paired_color(tokens.size(), -1);
  std::vector<bool> consumed(tokens.size(), false);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (shapes[i] < 0) continue;
    for (std::size_t back = 1; back <= 2 && back <= i; ++back) {
      const std::size_t j = i - back;
      if (colors[j] >= 0 && !consumed[j]) {
        paired_color[i] = colors[j];
        consumed[j] = true;
        break;
      }
    }
  }

  bool first = true;
  const auto mention_weight = [&first] {
    const double w = first ? 1.0 : kRepeatWeight;
    first = false;
    return w;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (shapes[i] >= 0) {
      const double w = mention_weight();
      v[kShapeBase + shapes[i]] += static_cast<float>(
          paired_color[i] >= 0 ? kMarginalWeight * w : w);
      if (paired_color[i] >= 0) {
        v[kJointBase + 3 * paired_color[i] + shapes[i]] += static_cast<float>(w);
        v[kColorBase + paired_color[i]] += static_cast<float>(kMarginalWeight * w);
      }
    } else if (colors[i] >= 0 && !consumed[i]) {
      v[kColorBase + colors[i]] += static_cast<float>(mention_weight());
    } else if (nouns[i] != nullptr) {
      const double w = mention_weight();
      if (nouns[i]->latent_dim >= 0) {
        v[nouns[i]->latent_dim] += static_cast<float>(w * std::sqrt(0.8));
        v[nouns[i]->self_dim] += static_cast<float>(w * std::sqrt(0.2));
      } else {
        v[nouns[i]->self_dim] += static_cast<float>(w);
      }
    }
  }

  if (first) {
    fill_hash_bucket(v, fnv1a(reinterpret_cast<const std::uint8_t*>(text.data()),
                              text.size(), kFnvOffset));
  }
  v.normalize();
  return v;
}

/// Nearest palette color within a conservative cutoff; -1 for everything
/// else (background gray and off-palette pixels fall outside the cutoff).
int classify_pixel(const cv::Vec3b& rgb) {
  constexpr int kCutoff = 3600;
  int best = -1;
  int best_d2 = kCutoff + 1;
  for (std::size_t i = 0; i < kObjectPalette.size(); ++i) {
    const Rgb& p = kObjectPalette[i].rgb;
    const int dr = static_cast<int>(rgb[0]) - p[0];
    const int dg = static_cast<int>(rgb[1]) - p[1];
    const int db = static_cast<int>(rgb[2]) - p[2];
    const int d2 = dr * dr + dg * dg + db * db;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(i);
    }
  }
  return best;
}

double gaussian(double x, double mean, double sigma) {
  const double z = (x - mean) / sigma;
  return std::exp(-0.5 * z * z);
}

Eigen::VectorXf embed_image(const cv::Mat& rgb) {
  if (rgb.empty() || rgb.type() != CV_8UC3) {
    throw Error(ErrorCode::InvalidArgument, "embed expects a non-empty CV_8UC3 RGB image");
  }
  const int w = rgb.cols;
  const int h = rgb.rows;
  cv::Mat labels(h, w, CV_8S);
  std::array<double, 10> mass{};
  const double cx = 0.5 * w;
  const double cy = 0.5 * h;
  constexpr double kCenterSigma = 0.18;
  for (int y = 0; y < h; ++y) {
    const cv::Vec3b* row = rgb.ptr<cv::Vec3b>(y);
    std::int8_t* lab = labels.ptr<std::int8_t>(y);
    const double ny = (y + 0.5 - cy) / h;
    for (int x = 0; x < w; ++x) {
      const int c = classify_pixel(row[x]);
      lab[x] = static_cast<std::int8_t>(c);
      if (c < 0) continue;
      const double nx = (x + 0.5 - cx) / w;
      mass[c] += std::exp(-0.5 * (nx * nx + ny * ny) / (kCenterSigma * kCenterSigma));
    }
  }

  Eigen::VectorXf v = Eigen::VectorXf::Zero(MockEmbeddingProvider::kDim);
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  if (total <= 0.0) {
    v[kHashBase + 3] = 1.0f;
    return v;
  }
  int dominant = 0;
  for (int c = 1; c < 10; ++c) {
    if (mass[c] > mass[dominant]) dominant = c;
  }

  // Silhouette statistics of the dominant color, unweighted.
  int min_x = w, max_x = -1, min_y = h, max_y = -1, count = 0;
  for (int y = 0; y < h; ++y) {
    const std::int8_t* lab = labels.ptr<std::int8_t>(y);
    for (int x = 0; x < w; ++x) {
      if (lab[x] != dominant) continue;
      ++count;
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
    }
  }
  const double bw = max_x - min_x + 1;
  const double bh = max_y - min_y + 1;
  const double fill = count / (bw * bh);
  const double log_aspect = std::log(bh / bw);

  // Fill/aspect prototypes: cube (1.0, 1:1), sphere (pi/4, 1:1),
  // cylinder (~1.0 side-on, 2:1 tall).
  std::array<double, 3> shape_score = {
      gaussian(fill, 1.0, 0.07) * gaussian(log_aspect, 0.0, 0.3),
      gaussian(fill, std::numbers::pi / 4.0, 0.07) * gaussian(log_aspect, 0.0, 0.25),
      gaussian(fill, 0.95, 0.12) * gaussian(log_aspect, std::log(2.0), 0.3),
  };
  const double score_sum = shape_score[0] + shape_score[1] + shape_score[2] + 1e-12;
  for (double& s : shape_score) s /= score_sum;

  for (int c = 0; c < 10; ++c) {
    if (mass[c] > 0.0) v[kColorBase + c] = static_cast<float>(kMarginalWeight * mass[c] / total);
  }
  const double dominant_share = mass[dominant] / total;
  for (int s = 0; s < 3; ++s) {
    v[kJointBase + 3 * dominant + s] = static_cast<float>(dominant_share * shape_score[s]);
    v[kShapeBase + s] = static_cast<float>(kMarginalWeight * shape_score[s]);
  }
  v.normalize();
  return v;
}

// ---------------------------------------------------------------------------
// Oracle internals.

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string parse_task(const std::string& prompt) {
  for (const std::string& line : split_lines(prompt)) {
    if (line.rfind("TASK: ", 0) == 0) return trim(line.substr(6));
  }
  return "";
}

std::map<int, std::string> parse_names_section(const std::string& prompt) {
  std::map<int, std::string> names;
  for (const std::string& line : split_lines(prompt)) {
    if (line.rfind("NAMES:", 0) != 0) continue;
    std::string rest = line.substr(6);
    std::size_t start = 0;
    while (start < rest.size()) {
      std::size_t end = rest.find(';', start);
      if (end == std::string::npos) end = rest.size();
      const std::string part = trim(rest.substr(start, end - start));
      const std::size_t eq = part.find('=');
      if (eq != std::string::npos) {
        try {
          names[std::stoi(part.substr(0, eq))] = trim(part.substr(eq + 1));
        } catch (const std::exception&) {
        }
      }
      start = end + 1;
    }
    break;
  }
  return names;
}

std::string selection_reply(int selected_id, const std::string& explanation) {
  nlohmann::json body;
  body["selected_id"] = selected_id;
  body["relations"] = nlohmann::json::array();
  body["explanation"] = explanation;
  return "```json\n" + body.dump() + "\n```";
}

const GroundTruthObject* find_target(const OracleContext& context, const std::string& prompt) {
  const auto query = parse_query_line(prompt);
  if (!query) return nullptr;
  const auto it = context.target_by_query.find(*query);
  if (it == context.target_by_query.end()) return nullptr;
  if (it->second < 0 || it->second >= static_cast<int>(context.objects.size())) return nullptr;
  return &context.objects[it->second];
}

std::string oracle_name(const OracleContext& context, const std::string& prompt) {
  const auto center = parse_center_line(prompt);
  if (!center || context.objects.empty()) return "unknown";
  const GroundTruthObject* best = nullptr;
  double best_distance = std::numeric_limits<double>::infinity();
  for (const GroundTruthObject& object : context.objects) {
    if (object.box.contains(*center, 1e-6)) return object.label;
    const double distance = (object.box.center - *center).norm();
    if (distance < best_distance) {
      best_distance = distance;
      best = &object;
    }
  }
  return best->label;
}

int nearest_candidate(const std::vector<std::pair<int, Vec3>>& candidates, const Vec3& target) {
  int best_id = candidates.front().first;
  double best_distance = std::numeric_limits<double>::infinity();
  for (const auto& [id, center] : candidates) {
    const double distance = (center - target).norm();
    if (distance < best_distance) {
      best_distance = distance;
      best_id = id;
    }
  }
  return best_id;
}

std::string oracle_select(const OracleContext& context, const std::string& prompt) {
  const auto candidates = parse_candidate_lines(prompt);
  if (candidates.empty()) return selection_reply(0, "no candidates listed");
  const GroundTruthObject* target = find_target(context, prompt);
  if (target == nullptr) {
    return selection_reply(candidates.front().first, "query not annotated");
  }
  return selection_reply(nearest_candidate(candidates, target->box.center),
                         "candidate center nearest the annotated target");
}

}  // namespace

MockMaskProvider::MockMaskProvider(Rgb background) : background_(background) {}

MaskResponse MockMaskProvider::segment(const MaskRequest& request) {
  if (request.image.empty() || request.image.type() != CV_8UC3) {
    throw Error(ErrorCode::InvalidArgument, "segment expects a non-empty CV_8UC3 RGB image");
  }
  std::vector<Component> components = color_components(request.image, background_);

  MaskResponse response;
  if (request.prompts.empty()) {
    std::vector<int> order(components.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (components[a].area != components[b].area) return components[a].area > components[b].area;
      return components[a].first_pixel < components[b].first_pixel;
    });
    for (int index : order) response.masks.push_back({components[index].mask, 1.0});
    return response;
  }

  int best = -1;
  int best_hits = 0;
  for (std::size_t i = 0; i < components.size(); ++i) {
    int hits = 0;
    for (const PointPrompt& p : request.prompts) {
      if (!p.positive) continue;
      if (p.u < 0 || p.v < 0 || p.u >= request.image.cols || p.v >= request.image.rows) continue;
      if (components[i].mask.at<std::uint8_t>(p.v, p.u)) ++hits;
    }
    if (hits > best_hits ||
        (hits == best_hits && hits > 0 && best >= 0 &&
         components[i].first_pixel < components[best].first_pixel)) {
      best_hits = hits;
      best = static_cast<int>(i);
    }
  }
  if (best >= 0 && best_hits > 0) response.masks.push_back({components[best].mask, 1.0});
  return response;
}

EmbedResponse MockEmbeddingProvider::embed(const EmbedRequest& request) {
  const bool has_image = !request.image.empty();
  const bool has_text = !request.text.empty();
  if (has_image == has_text) {
    throw Error(ErrorCode::InvalidArgument, "embed request needs exactly one of image/text");
  }
  return {has_image ? embed_image(request.image) : embed_text(request.text)};
}

NoisyEmbeddingProvider::NoisyEmbeddingProvider(std::uint64_t seed, double sigma)
    : seed_(seed), sigma_(sigma) {
  if (sigma < 0.0) throw Error(ErrorCode::InvalidArgument, "sigma must be non-negative");
}

EmbedResponse NoisyEmbeddingProvider::embed(const EmbedRequest& request) {
  MockEmbeddingProvider base;
  Eigen::VectorXf v = base.embed(request).vector;

  std::uint64_t hash = kFnvOffset;
  if (!request.text.empty()) {
    hash = fnv1a(reinterpret_cast<const std::uint8_t*>(request.text.data()),
                 request.text.size(), hash);
  } else {
    for (int y = 0; y < request.image.rows; ++y) {
      hash = fnv1a(request.image.ptr<std::uint8_t>(y),
                   static_cast<std::size_t>(request.image.cols) * 3, hash);
    }
  }
  hash = splitmix64(hash ^ seed_);

  // Hand-rolled Box-Muller keeps the stream identical across platforms.
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const std::uint64_t r1 = splitmix64(hash + static_cast<std::uint64_t>(2 * i));
    const std::uint64_t r2 = splitmix64(hash + static_cast<std::uint64_t>(2 * i + 1));
    const double u1 = (static_cast<double>(r1 >> 11) + 1.0) * 0x1p-53;
    const double u2 = static_cast<double>(r2 >> 11) * 0x1p-53;
    const double normal = std::sqrt(-2.0 * std::log(u1)) *
                          std::cos(2.0 * std::numbers::pi * u2);
    v[i] += static_cast<float>(sigma_ * normal);
  }
  const float norm = v.norm();
  if (norm < 1e-9f) {
    v.setZero();
    v[MockEmbeddingProvider::kDim - 1] = 1.0f;
  } else {
    v /= norm;
  }
  return {std::move(v)};
}

ScriptedVlmProvider::ScriptedVlmProvider(std::vector<std::string> script)
    : script_(std::move(script)) {}

VlmResponse ScriptedVlmProvider::complete(const VlmRequest&) {
  std::lock_guard lock(mutex_);
  if (script_.empty()) throw Error(ErrorCode::ProviderFailure, "script is empty");
  ++calls_;
  const std::size_t index = std::min(cursor_, script_.size() - 1);
  ++cursor_;
  return {script_[index]};
}

void ScriptedVlmProvider::reset() {
  std::lock_guard lock(mutex_);
  cursor_ = 0;
}

int ScriptedVlmProvider::call_count() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

OracleVlmProvider::OracleVlmProvider(OracleContext context) : context_(std::move(context)) {}

VlmResponse OracleVlmProvider::complete(const VlmRequest& request) {
  const std::string task = parse_task(request.prompt);
  if (task == "name") return {oracle_name(context_, request.prompt)};
  if (task == "select" || task == "ground") return {oracle_select(context_, request.prompt)};
  return {"unknown"};
}

DegradedOracleVlmProvider::DegradedOracleVlmProvider(OracleContext context)
    : context_(std::move(context)) {}

VlmResponse DegradedOracleVlmProvider::complete(const VlmRequest& request) {
  const std::string task = parse_task(request.prompt);
  const bool has_images = !request.images.empty();
  if (task == "name") {
    if (!has_images) return {"unknown"};
    return {oracle_name(context_, request.prompt)};
  }
  if (task != "select" && task != "ground") return {"unknown"};

  const auto candidates = parse_candidate_lines(request.prompt);
  if (candidates.empty()) return {selection_reply(0, "no candidates listed")};
  const auto names = parse_names_section(request.prompt);
  if (!names.empty() && has_images) return {oracle_select(context_, request.prompt)};
  if (!names.empty()) {
    // Names without renders: pick the first candidate whose name matches the
    // target label; spatial disambiguation is impossible.
    if (const GroundTruthObject* target = find_target(context_, request.prompt)) {
      for (const auto& [id, center] : candidates) {
        const auto it = names.find(id);
        if (it != names.end() && it->second == target->label) {
          return {selection_reply(id, "first candidate with the target's name")};
        }
      }
    }
  }
  return {selection_reply(candidates.front().first, "insufficient context, guessing")};
}

std::string format_center_line(const Vec3& center) {
  char buffer[96];
  std::snprintf(buffer, sizeof buffer, "CENTER: %.6f %.6f %.6f", center.x(), center.y(),
                center.z());
  return buffer;
}

std::string format_candidate_line(int candidate_id, const Vec3& center) {
  char buffer[112];
  std::snprintf(buffer, sizeof buffer, "CANDIDATE %d: center %.6f %.6f %.6f", candidate_id,
                center.x(), center.y(), center.z());
  return buffer;
}

std::optional<Vec3> parse_center_line(const std::string& prompt) {
  for (const std::string& line : split_lines(prompt)) {
    Vec3 center;
    if (std::sscanf(line.c_str(), "CENTER: %lf %lf %lf", &center.x(), &center.y(),
                    &center.z()) == 3) {
      return center;
    }
  }
  return std::nullopt;
}

std::vector<std::pair<int, Vec3>> parse_candidate_lines(const std::string& prompt) {
  std::vector<std::pair<int, Vec3>> candidates;
  for (const std::string& line : split_lines(prompt)) {
    int id = 0;
    Vec3 center;
    if (std::sscanf(line.c_str(), "CANDIDATE %d: center %lf %lf %lf", &id, &center.x(),
                    &center.y(), &center.z()) == 4) {
      candidates.emplace_back(id, center);
    }
  }
  return candidates;
}

std::optional<std::string> parse_query_line(const std::string& prompt) {
  for (const std::string& line : split_lines(prompt)) {
    if (line.rfind("QUERY: ", 0) == 0) return line.substr(7);
  }
  return std::nullopt;
}

}  // namespace uniground
