#pragma once

#include <atomic>
#include <memory>

#include "uniground/config.hpp"
#include "uniground/instances.hpp"
#include "uniground/synth.hpp"

namespace uniground {

/// Traffic counters shared by the counting provider wrappers; character
/// counts approximate token consumption for the cost accounting.
struct ProviderUsage {
  std::atomic<long> mask_calls{0};
  std::atomic<long> embed_calls{0};
  std::atomic<long> vlm_calls{0};
  std::atomic<long> vlm_prompt_chars{0};
  std::atomic<long> vlm_reply_chars{0};
};

struct ProviderSet {
  std::shared_ptr<MaskProvider> mask;
  std::shared_ptr<EmbeddingProvider> embed;
  std::shared_ptr<VlmProvider> vlm;
  std::shared_ptr<ProviderUsage> usage;
};

/// Provider bundle for the configured mode, each wrapped in a usage counter.
/// "mock" runs fully offline (the VLM fails closed, so selection degrades to
/// score fallback). "oracle" and "degraded" answer from the ground truth and
/// require `oracle`. "http" builds gateway providers from the configured
/// endpoints, falling back to UG_MASK_ENDPOINT / UG_EMBED_ENDPOINT /
/// UG_VLM_ENDPOINT. embed_noise_sigma > 0 swaps in the noisy mock embedder
/// (offline modes only).
ProviderSet make_providers(const ProvidersConfig& config,
                           const OracleContext* oracle = nullptr);

/// Everything the query-independent half produces: superpoints, merged
/// instances and their embeddings, plus the per-frame projection cache that
/// stage 2 reuses. Read-only once built, so queries can share it.
struct Stage1Result {
  std::vector<Superpoint> superpoints;
  std::vector<int> stage_counts;  // instance count after each merge stage
  std::vector<Instance> instances;
  std::vector<EmbeddedInstance> embedded;
  FrameGeometryCache geometry;
  double seconds = 0.0;
};

/// Normals -> supervoxels -> region growing -> per-view observations against
/// provider masks -> progressive merging -> per-instance view selection,
/// defect-corrected crops and embeddings.
Stage1Result run_stage1(const Scene& scene, const PipelineConfig& config,
                        const ProviderSet& providers);

struct QueryGrounding {
  std::vector<Candidate> candidates;
  std::vector<GlobalRender> renders;
  std::vector<CandidateViewSet> view_sets;
  ReasoningTrace trace;
  OrientedBox obb;       // selected instance's oriented box
  AxisAlignedBox aabb;   // selected instance's axis-aligned box
  double seconds = 0.0;
};

/// Query-dependent half: top-u retrieval, orbit renders with id and axis
/// annotations, per-candidate evidence views, then the reasoning loop.
QueryGrounding ground_query(const Scene& scene, const Stage1Result& stage1,
                            const GroundingQuery& query, const PipelineConfig& config,
                            const ProviderSet& providers);

/// Defaults retuned for generated scenes: their back-projected clouds are an
/// order of magnitude sparser than sensor scans (wider voxels and seeds), and
/// curved primitives seen from a handful of orbit views need the merge
/// schedule to descend further before opposite-side arcs join. Cross-object
/// affinities stay exactly zero under the component masks, so the lower floor
/// cannot bleed objects together.
PipelineConfig synthetic_scene_config();

}  // namespace uniground
