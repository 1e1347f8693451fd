#pragma once

#include <limits>

#include "uniground/gateway.hpp"
#include "uniground/instances.hpp"

namespace uniground {

/// Multi-view average of crop embeddings, re-normalized.
struct SemanticEmbedding {
  Eigen::VectorXf vector;
  int view_count = 0;

  void validate() const;  // unit norm within 1e-6, view_count >= 1
};

struct EmbeddedInstance {
  Instance instance;
  SemanticEmbedding embedding;
};

struct Candidate {
  Instance instance;
  SemanticEmbedding embedding;
  double score = 0.0;    // cosine similarity to the query, in [-1, 1]
  int candidate_id = 0;  // dense 1..u, descending score
};

/// Per-frame projections of the scene cloud, shared by every instance so the
/// cloud is projected once per frame.
struct FrameGeometryCache {
  std::vector<FrameGeometry> frames;  // parallel to scene.frames

  static FrameGeometryCache build(const Scene& scene, int splat_radius = 1);
};

/// Frame ids ranked by the instance's visible-pixel count, descending, ties
/// by frame_id ascending; at most max_views entries, frames with zero
/// visibility excluded. Empty result means the instance is invisible
/// everywhere and the caller must fall back to rendered views.
std::vector<int> select_semantic_views(const Instance& instance, const Scene& scene,
                                       const FrameGeometryCache& cache, int max_views,
                                       double occlusion_tol = 0.05);

/// Stride that keeps ceil(n / stride) prompts within [min_prompts, max_prompts]
/// whenever n allows it.
int choose_prompt_stride(int visible_count, int min_prompts = 10, int max_prompts = 50);

/// Re-segment the instance in one frame: every stride-th visible projected
/// pixel becomes a positive point prompt and the provider's highest-confidence
/// mask is returned. Provider failure (or an empty response) falls back to
/// the raw projected-pixel mask.
cv::Mat defect_correct(const Instance& instance, const Frame& frame,
                       const FrameGeometry& geometry, int downsample_stride,
                       MaskProvider& provider, double occlusion_tol = 0.05);

/// Crop rectangle per scale: the tight rect expanded about its center by the
/// scale factor (edges rounded outward), clamped to the image. A non-finite
/// scale means the full image. Scales must be >= 1, ascending, starting at 1.
std::vector<cv::Rect> multiscale_rects(const cv::Rect& tight, const cv::Size& image_size,
                                       const std::vector<double>& scales);

/// The image regions of multiscale_rects for the tight bbox of `mask`.
/// Throws on an empty mask.
std::vector<cv::Mat> multiscale_crops(const cv::Mat& mask, const cv::Mat& rgb,
                                      const std::vector<double>& scales);

inline const std::vector<double> kDefaultScales = {
    1.0, 1.5, 2.25, std::numeric_limits<double>::infinity()};

/// Per-view mean of the crop embeddings, then the L2-normalized mean of the
/// per-view vectors. Views whose provider calls fail are skipped; every view
/// failing is an error.
SemanticEmbedding embed_instance(const std::vector<std::vector<cv::Mat>>& crops_per_view,
                                 EmbeddingProvider& provider);

/// Embed the query text verbatim with the same provider and keep the u
/// highest-cosine instances; ties break by instance_id ascending and
/// candidate ids run 1..u in score order.
std::vector<Candidate> filter_top_u(const std::vector<EmbeddedInstance>& instances,
                                    const GroundingQuery& query, int u,
                                    EmbeddingProvider& provider);

}  // namespace uniground
