#include "uniground/semantics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace uniground {

void SemanticEmbedding::validate() const {
  if (view_count < 1) {
    throw Error(ErrorCode::InvalidArgument, "embedding averaged over zero views");
  }
  if (vector.size() == 0 || std::abs(vector.norm() - 1.0f) > 1e-6f) {
    throw Error(ErrorCode::InvalidArgument, "embedding vector is not unit length");
  }
}

FrameGeometryCache FrameGeometryCache::build(const Scene& scene, int splat_radius) {
  FrameGeometryCache cache;
  cache.frames.reserve(scene.frames.size());
  for (const Frame& frame : scene.frames) {
    cache.frames.push_back(
        project_cloud(scene.cloud, frame.pose, frame.intrinsics, splat_radius));
  }
  return cache;
}

std::vector<int> select_semantic_views(const Instance& instance, const Scene& scene,
                                       const FrameGeometryCache& cache, int max_views,
                                       double occlusion_tol) {
  if (max_views < 1) throw Error(ErrorCode::InvalidArgument, "max_views must be >= 1");
  if (cache.frames.size() != scene.frames.size()) {
    throw Error(ErrorCode::DimensionMismatch, "geometry cache does not match the scene");
  }
  std::vector<std::pair<int, int>> ranked;  // (visible_pixels, frame_id)
  for (std::size_t f = 0; f < scene.frames.size(); ++f) {
    const ViewObservation obs =
        observe_points(cache.frames[f], scene.frames[f].depth, instance.point_indices,
                       scene.frames[f].frame_id, occlusion_tol);
    if (obs.visible_pixels > 0) ranked.emplace_back(obs.visible_pixels, obs.frame_id);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> frame_ids;
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(max_views); ++i) {
    frame_ids.push_back(ranked[i].second);
  }
  return frame_ids;
}

int choose_prompt_stride(int visible_count, int min_prompts, int max_prompts) {
  if (visible_count < 1 || min_prompts < 1 || max_prompts < min_prompts) {
    throw Error(ErrorCode::InvalidArgument, "invalid prompt budget");
  }
  return std::max(1, (visible_count + max_prompts - 1) / max_prompts);
}

cv::Mat defect_correct(const Instance& instance, const Frame& frame,
                       const FrameGeometry& geometry, int downsample_stride,
                       MaskProvider& provider, double occlusion_tol) {
  if (downsample_stride < 1) {
    throw Error(ErrorCode::InvalidArgument, "downsample_stride must be >= 1");
  }
  const std::vector<std::int32_t> cells =
      visible_cells(geometry, frame.depth, instance.point_indices, occlusion_tol);
  if (cells.empty()) {
    throw Error(ErrorCode::InvalidArgument, "instance is not visible in this frame",
                frame.frame_id);
  }

  cv::Mat raw = cv::Mat::zeros(geometry.height, geometry.width, CV_8UC1);
  for (std::int32_t cell : cells) {
    raw.at<std::uint8_t>(cell / geometry.width, cell % geometry.width) = 255;
  }

  MaskRequest request;
  request.image = frame.rgb;
  for (std::size_t i = 0; i < cells.size(); i += static_cast<std::size_t>(downsample_stride)) {
    request.prompts.push_back(
        {cells[i] % geometry.width, cells[i] / geometry.width, true});
  }

  try {
    MaskResponse response = provider.segment(request);
    if (response.masks.empty()) return raw;
    return response.masks.front().mask;
  } catch (const Error& e) {
    std::cerr << "defect_correct: provider failed (" << e.what()
              << "), using raw projection for frame " << frame.frame_id << "\n";
    return raw;
  }
}

std::vector<cv::Rect> multiscale_rects(const cv::Rect& tight, const cv::Size& image_size,
                                       const std::vector<double>& scales) {
  if (scales.empty() || scales.front() != 1.0) {
    throw Error(ErrorCode::InvalidArgument, "scales must start at 1.0");
  }
  if (tight.width <= 0 || tight.height <= 0 || tight.x < 0 || tight.y < 0 ||
      tight.x + tight.width > image_size.width || tight.y + tight.height > image_size.height) {
    throw Error(ErrorCode::InvalidArgument, "tight rect is outside the image");
  }
  const double cx = tight.x + 0.5 * tight.width;
  const double cy = tight.y + 0.5 * tight.height;
  std::vector<cv::Rect> rects;
  double previous = 0.0;
  for (double s : scales) {
    if (s < 1.0 || s < previous) {
      throw Error(ErrorCode::InvalidArgument, "scales must be >= 1 and ascending");
    }
    previous = s;
    if (!std::isfinite(s)) {
      rects.emplace_back(0, 0, image_size.width, image_size.height);
      continue;
    }
    // Edges rounded outward so rectangles nest as the scale grows.
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - 0.5 * s * tight.width)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - 0.5 * s * tight.height)));
    const int x1 = std::min(image_size.width,
                            static_cast<int>(std::ceil(cx + 0.5 * s * tight.width)));
    const int y1 = std::min(image_size.height,
                            static_cast<int>(std::ceil(cy + 0.5 * s * tight.height)));
    rects.emplace_back(x0, y0, x1 - x0, y1 - y0);
  }
  return rects;
}

std::vector<cv::Mat> multiscale_crops(const cv::Mat& mask, const cv::Mat& rgb,
                                      const std::vector<double>& scales) {
  if (mask.empty() || mask.type() != CV_8UC1 || rgb.empty() || rgb.type() != CV_8UC3 ||
      mask.size() != rgb.size()) {
    throw Error(ErrorCode::InvalidArgument, "mask and rgb must be same-size CV_8UC1/CV_8UC3");
  }
  int min_x = mask.cols, max_x = -1, min_y = mask.rows, max_y = -1;
  for (int y = 0; y < mask.rows; ++y) {
    const std::uint8_t* row = mask.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.cols; ++x) {
      if (!row[x]) continue;
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
    }
  }
  if (max_x < 0) throw Error(ErrorCode::InvalidArgument, "mask is empty");

  const cv::Rect tight(min_x, min_y, max_x - min_x + 1, max_y - min_y + 1);
  std::vector<cv::Mat> crops;
  for (const cv::Rect& rect : multiscale_rects(tight, rgb.size(), scales)) {
    crops.push_back(rgb(rect));
  }
  return crops;
}

SemanticEmbedding embed_instance(const std::vector<std::vector<cv::Mat>>& crops_per_view,
                                 EmbeddingProvider& provider) {
  if (crops_per_view.empty()) {
    throw Error(ErrorCode::InvalidArgument, "embed_instance needs at least one view");
  }
  Eigen::VectorXd sum;
  int views_used = 0;
  std::string last_failure = "no views";
  for (const std::vector<cv::Mat>& crops : crops_per_view) {
    if (crops.empty()) {
      throw Error(ErrorCode::InvalidArgument, "a view has no crops");
    }
    try {
      Eigen::VectorXd view_sum;
      for (const cv::Mat& crop : crops) {
        const Eigen::VectorXf v = provider.embed(EmbedRequest::from_image(crop)).vector;
        if (view_sum.size() == 0) {
          view_sum = Eigen::VectorXd::Zero(v.size());
        } else if (view_sum.size() != v.size()) {
          throw Error(ErrorCode::DimensionMismatch, "provider changed embedding dimension");
        }
        view_sum += v.cast<double>();
      }
      view_sum /= static_cast<double>(crops.size());
      if (sum.size() == 0) {
        sum = Eigen::VectorXd::Zero(view_sum.size());
      } else if (sum.size() != view_sum.size()) {
        throw Error(ErrorCode::DimensionMismatch, "provider changed embedding dimension");
      }
      sum += view_sum;
      ++views_used;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DimensionMismatch || e.code() == ErrorCode::InvalidArgument) {
        throw;
      }
      last_failure = e.what();
    }
  }
  if (views_used == 0) {
    throw Error(ErrorCode::ProviderFailure,
                "embedding failed on every view: " + last_failure);
  }
  sum /= static_cast<double>(views_used);
  const double norm = sum.norm();
  if (norm < 1e-12) {
    throw Error(ErrorCode::ProviderFailure, "view embeddings cancelled to zero");
  }
  SemanticEmbedding embedding;
  embedding.vector = (sum / norm).cast<float>();
  embedding.view_count = views_used;
  return embedding;
}

std::vector<Candidate> filter_top_u(const std::vector<EmbeddedInstance>& instances,
                                    const GroundingQuery& query, int u,
                                    EmbeddingProvider& provider) {
  if (u < 1) throw Error(ErrorCode::InvalidArgument, "u must be >= 1");
  if (instances.empty()) {
    throw Error(ErrorCode::InvalidArgument, "no embedded instances to filter");
  }
  const Eigen::VectorXf query_vector =
      provider.embed(EmbedRequest::from_text(query.text)).vector;
  const float query_norm = query_vector.norm();

  std::vector<std::pair<double, int>> ranked;  // (score, index)
  for (std::size_t i = 0; i < instances.size(); ++i) {
    instances[i].embedding.validate();
    if (instances[i].embedding.vector.size() != query_vector.size()) {
      throw Error(ErrorCode::DimensionMismatch, "query/instance embedding dimensions differ");
    }
    const double score =
        static_cast<double>(instances[i].embedding.vector.dot(query_vector) / query_norm);
    ranked.emplace_back(std::clamp(score, -1.0, 1.0), static_cast<int>(i));
  }
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return instances[a.second].instance.instance_id < instances[b.second].instance.instance_id;
  });

  std::vector<Candidate> candidates;
  const std::size_t keep = std::min<std::size_t>(u, ranked.size());
  for (std::size_t i = 0; i < keep; ++i) {
    Candidate candidate;
    candidate.instance = instances[ranked[i].second].instance;
    candidate.embedding = instances[ranked[i].second].embedding;
    candidate.score = ranked[i].first;
    candidate.candidate_id = static_cast<int>(i) + 1;
    candidates.push_back(std::move(candidate));
  }
  return candidates;
}

}  // namespace uniground
