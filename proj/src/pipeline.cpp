#include "uniground/pipeline.hpp"

#include <chrono>
#include <cstdlib>

#include "uniground/boxes.hpp"
#include "uniground/reasoner.hpp"

namespace uniground {

namespace {

class CountingMaskProvider : public MaskProvider {
 public:
  CountingMaskProvider(std::shared_ptr<MaskProvider> inner, std::shared_ptr<ProviderUsage> usage)
      : inner_(std::move(inner)), usage_(std::move(usage)) {}

  MaskResponse segment(const MaskRequest& request) override {
    usage_->mask_calls.fetch_add(1, std::memory_order_relaxed);
    return inner_->segment(request);
  }

 private:
  std::shared_ptr<MaskProvider> inner_;
  std::shared_ptr<ProviderUsage> usage_;
};

class CountingEmbeddingProvider : public EmbeddingProvider {
 public:
  CountingEmbeddingProvider(std::shared_ptr<EmbeddingProvider> inner,
                            std::shared_ptr<ProviderUsage> usage)
      : inner_(std::move(inner)), usage_(std::move(usage)) {}

  EmbedResponse embed(const EmbedRequest& request) override {
    usage_->embed_calls.fetch_add(1, std::memory_order_relaxed);
    return inner_->embed(request);
  }

 private:
  std::shared_ptr<EmbeddingProvider> inner_;
  std::shared_ptr<ProviderUsage> usage_;
};

class CountingVlmProvider : public VlmProvider {
 public:
  CountingVlmProvider(std::shared_ptr<VlmProvider> inner, std::shared_ptr<ProviderUsage> usage)
      : inner_(std::move(inner)), usage_(std::move(usage)) {}

  VlmResponse complete(const VlmRequest& request) override {
    usage_->vlm_calls.fetch_add(1, std::memory_order_relaxed);
    usage_->vlm_prompt_chars.fetch_add(long(request.prompt.size()), std::memory_order_relaxed);
    const VlmResponse response = inner_->complete(request);
    usage_->vlm_reply_chars.fetch_add(long(response.text.size()), std::memory_order_relaxed);
    return response;
  }

 private:
  std::shared_ptr<VlmProvider> inner_;
  std::shared_ptr<ProviderUsage> usage_;
};

std::string endpoint_or_env(const std::string& configured, const char* env_name) {
  if (!configured.empty()) {
    return configured;
  }
  const char* env = std::getenv(env_name);
  if (env != nullptr && env[0] != '\0') {
    return env;
  }
  throw Error(ErrorCode::InvalidArgument,
              std::string("http provider endpoint not configured; set ") + env_name);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

PipelineConfig synthetic_scene_config() {
  PipelineConfig config = PipelineConfig::defaults();
  config.superpoints.voxel_size = 0.07;
  config.superpoints.seed_spacing = 0.18;
  config.merge.end = 0.15;
  config.merge.stages = 6;
  config.providers.mode = "oracle";
  return config;
}

ProviderSet make_providers(const ProvidersConfig& config, const OracleContext* oracle) {
  ProviderSet set;
  set.usage = std::make_shared<ProviderUsage>();

  std::shared_ptr<MaskProvider> mask;
  std::shared_ptr<EmbeddingProvider> embed;
  std::shared_ptr<VlmProvider> vlm;

  if (config.mode == "http") {
    ProviderConfig base;
    base.timeout_seconds = config.timeout_seconds;
    base.max_retries = config.http_retries;

    ProviderConfig mask_config = base;
    mask_config.endpoint = endpoint_or_env(config.mask_endpoint, "UG_MASK_ENDPOINT");
    mask = std::make_shared<HttpMaskProvider>(mask_config);

    ProviderConfig embed_config = base;
    embed_config.endpoint = endpoint_or_env(config.embed_endpoint, "UG_EMBED_ENDPOINT");
    embed = std::make_shared<HttpEmbeddingProvider>(embed_config);

    ProviderConfig vlm_config = base;
    vlm_config.endpoint = endpoint_or_env(config.vlm_endpoint, "UG_VLM_ENDPOINT");
    vlm = std::make_shared<HttpVlmProvider>(vlm_config);
  } else {
    mask = std::make_shared<MockMaskProvider>();
    if (config.embed_noise_sigma > 0.0) {
      embed = std::make_shared<NoisyEmbeddingProvider>(config.noise_seed,
                                                       config.embed_noise_sigma);
    } else {
      embed = std::make_shared<MockEmbeddingProvider>();
    }
    if (config.mode == "mock") {
      vlm = std::make_shared<ScriptedVlmProvider>(std::vector<std::string>{});
    } else {
      if (oracle == nullptr) {
        throw Error(ErrorCode::InvalidArgument,
                    config.mode + " provider mode needs scene ground truth");
      }
      if (config.mode == "oracle") {
        vlm = std::make_shared<OracleVlmProvider>(*oracle);
      } else {
        vlm = std::make_shared<DegradedOracleVlmProvider>(*oracle);
      }
    }
  }

  set.mask = std::make_shared<CountingMaskProvider>(std::move(mask), set.usage);
  set.embed = std::make_shared<CountingEmbeddingProvider>(std::move(embed), set.usage);
  set.vlm = std::make_shared<CountingVlmProvider>(std::move(vlm), set.usage);
  return set;
}

Stage1Result run_stage1(const Scene& scene, const PipelineConfig& config,
                        const ProviderSet& providers) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  if (scene.cloud.empty()) {
    throw Error(ErrorCode::InvalidArgument, "stage 1 needs a non-empty cloud");
  }
  if (scene.frames.empty()) {
    throw Error(ErrorCode::InvalidArgument, "stage 1 needs at least one frame");
  }
  for (std::size_t f = 0; f < scene.frames.size(); ++f) {
    if (scene.frames[f].frame_id != int(f)) {
      throw Error(ErrorCode::InvalidArgument, "frame ids must be consecutive from zero");
    }
  }

  Stage1Result out;
  const SuperpointConfig& sp_config = config.superpoints;
  const std::vector<Vec3> normals = estimate_normals(scene.cloud, sp_config.k_neighbors);
  std::vector<Superpoint> voxels =
      supervoxel_cluster(scene.cloud, normals, sp_config.voxel_size, sp_config.seed_spacing,
                         sp_config.weights);
  const AdjacencyGraph voxel_graph = build_adjacency(voxels, scene.cloud, sp_config.voxel_size);
  out.superpoints = region_grow(voxels, voxel_graph, normals,
                                deg_to_rad(sp_config.angle_thresh_deg), sp_config.color_thresh);
  const AdjacencyGraph graph =
      build_adjacency(out.superpoints, scene.cloud, sp_config.voxel_size);

  out.geometry = FrameGeometryCache::build(scene);

  // One unprompted segmentation per frame; observations feed the affinity's
  // semantic-consistency factor.
  std::vector<MaskSet> mask_sets;
  mask_sets.reserve(scene.frames.size());
  for (const Frame& frame : scene.frames) {
    MaskRequest request;
    request.image = frame.rgb;
    MaskResponse response = providers.mask->segment(request);
    std::vector<cv::Mat> masks;
    masks.reserve(response.masks.size());
    for (MaskResult& result : response.masks) {
      masks.push_back(std::move(result.mask));
    }
    mask_sets.push_back(MaskSet::from_masks(frame.frame_id, std::move(masks)));
  }

  ObservationSet observations(out.superpoints.size());
  for (std::size_t s = 0; s < out.superpoints.size(); ++s) {
    auto& per_view = observations[s];
    per_view.reserve(scene.frames.size());
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
      per_view.push_back(observe_superpoint(out.geometry.frames[f], scene.frames[f].depth,
                                            mask_sets[f], out.superpoints[s].point_indices,
                                            scene.frames[f].frame_id,
                                            config.semantics.occlusion_tol));
    }
  }

  const MergeSchedule schedule =
      linear_schedule(config.merge.start, config.merge.end, config.merge.stages);
  MergeOptions merge_options;
  merge_options.size_first = config.merge.size_first;
  merge_options.point_count_denominator = config.merge.point_count_denominator;
  out.instances = progressive_merge(out.superpoints, graph, observations, schedule, scene.cloud,
                                    merge_options, &out.stage_counts);

  // Embed every instance from defect-corrected multi-scale crops of its best
  // views; instances invisible in all frames fall back to orbit-render views.
  const AxisAlignedBox scene_bounds = fit_aabb(scene.cloud.positions);
  const OrbitCameraSpec fallback_spec = config.orbit_spec(scene_bounds);
  const CameraIntrinsics fallback_intr = config.render_intrinsics();
  for (const Instance& instance : out.instances) {
    const std::vector<int> view_ids = select_semantic_views(
        instance, scene, out.geometry, config.semantics.max_views,
        config.semantics.occlusion_tol);
    std::vector<std::vector<cv::Mat>> crops_per_view;
    if (!view_ids.empty()) {
      for (const int frame_id : view_ids) {
        const Frame& frame = scene.frames[std::size_t(frame_id)];
        const FrameGeometry& geometry = out.geometry.frames[std::size_t(frame_id)];
        const int visible =
            int(visible_cells(geometry, frame.depth, instance.point_indices,
                              config.semantics.occlusion_tol)
                    .size());
        const int stride = choose_prompt_stride(visible, config.semantics.min_prompts,
                                                config.semantics.max_prompts);
        const cv::Mat mask = defect_correct(instance, frame, geometry, stride,
                                            *providers.mask, config.semantics.occlusion_tol);
        crops_per_view.push_back(
            multiscale_crops(mask, frame.rgb, config.semantics.scales));
      }
    } else {
      Candidate probe;
      probe.instance = instance;
      probe.candidate_id = instance.instance_id + 1;
      const CandidateViewSet fallback = select_candidate_views(
          probe, scene, out.geometry, config.views.views_per_candidate, fallback_spec,
          fallback_intr, config.semantics.occlusion_tol);
      for (const CandidateView& view : fallback.views) {
        crops_per_view.push_back({view.image});
      }
    }
    EmbeddedInstance embedded;
    embedded.instance = instance;
    embedded.embedding = embed_instance(crops_per_view, *providers.embed);
    out.embedded.push_back(std::move(embedded));
  }

  out.seconds = seconds_since(start);
  return out;
}

QueryGrounding ground_query(const Scene& scene, const Stage1Result& stage1,
                            const GroundingQuery& query, const PipelineConfig& config,
                            const ProviderSet& providers) {
  const auto start = std::chrono::steady_clock::now();
  if (stage1.embedded.empty()) {
    throw Error(ErrorCode::InvalidArgument, "stage 1 produced no instances to ground against");
  }

  QueryGrounding out;
  out.candidates =
      filter_top_u(stage1.embedded, query, config.semantics.u, *providers.embed);

  const AxisAlignedBox scene_bounds = fit_aabb(scene.cloud.positions);
  const OrbitCameraSpec orbit = config.orbit_spec(scene_bounds);
  const CameraIntrinsics intrinsics = config.render_intrinsics();
  const Vec3 axes_origin{scene_bounds.center().x(), scene_bounds.center().y(),
                         scene_bounds.min_corner.z()};
  for (const Pose& pose : orbit_positions(out.candidates, orbit)) {
    const Render render =
        render_scene(scene.cloud, pose, intrinsics, config.views.splat_radius_m);
    out.renders.push_back(annotate_global(render, pose, intrinsics, out.candidates,
                                          axes_origin, config.views.axes_length));
  }

  for (const Candidate& candidate : out.candidates) {
    out.view_sets.push_back(select_candidate_views(
        candidate, scene, stage1.geometry, config.views.views_per_candidate, orbit,
        intrinsics, config.semantics.occlusion_tol));
  }

  const GroundingResult result =
      ground(query, out.candidates, out.renders, out.view_sets, *providers.vlm,
             *providers.embed, config.ground_options());
  out.trace = result.trace;
  out.obb = result.box;
  for (const Candidate& candidate : out.candidates) {
    if (candidate.candidate_id == out.trace.selected) {
      out.aabb = candidate.instance.aabb;
      break;
    }
  }
  out.seconds = seconds_since(start);
  return out;
}

}  // namespace uniground
