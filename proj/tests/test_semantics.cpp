#include "uniground/semantics.hpp"

#include <doctest.h>

#include <opencv2/imgproc.hpp>

#include <random>
#include <set>

using namespace uniground;

namespace {

CameraIntrinsics small_intrinsics() {
  CameraIntrinsics intr;
  intr.fx = 60.0;
  intr.fy = 60.0;
  intr.cx = 32.0;
  intr.cy = 24.0;
  intr.width = 64;
  intr.height = 48;
  return intr;
}

Frame make_frame(int frame_id, const Pose& pose) {
  Frame frame;
  frame.frame_id = frame_id;
  frame.pose = pose;
  frame.intrinsics = small_intrinsics();
  frame.rgb = cv::Mat(48, 64, CV_8UC3, cv::Scalar(120, 120, 120));
  return frame;
}

/// Five points on a line at z=2; frame 10 sees all five, frame 11 sees
/// three, frame 12 looks away, frame 13 repeats frame 10. Dyadic spacing
/// keeps the landing pixels exact: u in {17, 24, 32, 39, 47}.
Scene line_scene() {
  Scene scene;
  scene.scene_id = "line";
  for (int i = 0; i < 5; ++i) {
    scene.cloud.positions.push_back({static_cast<float>(0.25 * i - 0.5), 0.0f, 2.0f});
    scene.cloud.colors.push_back({200, 50, 50});
  }
  scene.frames.push_back(make_frame(10, Pose{}));
  Pose shifted;
  shifted.translation = Vec3{1.0, 0.0, 0.0};
  scene.frames.push_back(make_frame(11, shifted));
  Pose reversed;
  reversed.rotation = Eigen::AngleAxisd(kPi, Vec3::UnitY()).toRotationMatrix();
  scene.frames.push_back(make_frame(12, reversed));
  scene.frames.push_back(make_frame(13, Pose{}));
  return scene;
}

Instance whole_cloud_instance(const Scene& scene) {
  Instance instance;
  instance.instance_id = 0;
  for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
    instance.point_indices.push_back(static_cast<int>(i));
  }
  return instance;
}

Eigen::VectorXf basis(int dim, int axis) {
  Eigen::VectorXf v = Eigen::VectorXf::Zero(dim);
  v[axis] = 1.0f;
  return v;
}

/// 1x1 crop whose red channel selects a basis axis.
cv::Mat tagged_crop(int axis) {
  return {1, 1, CV_8UC3, cv::Scalar(axis, 0, 0)};
}

FunctionEmbeddingProvider axis_provider(int dim) {
  return FunctionEmbeddingProvider([dim](const EmbedRequest& request) -> EmbedResponse {
    REQUIRE(!request.image.empty());
    return {basis(dim, request.image.at<cv::Vec3b>(0, 0)[0])};
  });
}

}  // namespace

TEST_SUITE_BEGIN("semantics");

TEST_CASE("semantic views rank frames by visible pixels with id tie-break") {
  const Scene scene = line_scene();
  const FrameGeometryCache cache = FrameGeometryCache::build(scene);
  const Instance instance = whole_cloud_instance(scene);

  CHECK(select_semantic_views(instance, scene, cache, 10) == std::vector<int>{10, 13, 11});
  CHECK(select_semantic_views(instance, scene, cache, 1) == std::vector<int>{10});
  CHECK(select_semantic_views(instance, scene, cache, 2) == std::vector<int>{10, 13});
  CHECK_THROWS_AS(select_semantic_views(instance, scene, cache, 0), Error);
}

TEST_CASE("semantic views match a projection-count oracle") {
  std::mt19937 rng(91);
  std::uniform_real_distribution<double> coord(-0.6, 0.6);

  // One shared depth plane so the z-buffer never rejects anything and the
  // distinct-cell oracle below is exact.
  Scene scene;
  scene.scene_id = "random";
  for (int i = 0; i < 40; ++i) {
    scene.cloud.positions.push_back(
        {static_cast<float>(coord(rng)), static_cast<float>(0.5 * coord(rng)), 2.0f});
    scene.cloud.colors.push_back({10, 200, 30});
  }
  for (int f = 0; f < 6; ++f) {
    Pose pose;
    pose.translation = Vec3{coord(rng), coord(rng), -0.5 * f};
    scene.frames.push_back(make_frame(100 + f, pose));
  }

  Instance instance;
  instance.instance_id = 1;
  for (int i = 0; i < 40; i += 2) instance.point_indices.push_back(i);

  // Oracle: count distinct landing cells per frame by direct projection
  // (points share one depth plane per cell region, so nothing is occluded).
  std::vector<std::pair<int, int>> expected;
  for (const Frame& frame : scene.frames) {
    std::set<std::int64_t> cells;
    for (int index : instance.point_indices) {
      Eigen::Vector2d uv;
      double depth = 0.0;
      if (project_point(scene.cloud.positions[index].cast<double>(), frame.pose,
                        frame.intrinsics, uv, depth)) {
        cells.insert(static_cast<std::int64_t>(uv.y()) * frame.intrinsics.width +
                     static_cast<std::int64_t>(uv.x()));
      }
    }
    if (!cells.empty()) expected.emplace_back(-static_cast<int>(cells.size()), frame.frame_id);
  }
  std::sort(expected.begin(), expected.end());
  std::vector<int> expected_ids;
  for (const auto& [neg, id] : expected) expected_ids.push_back(id);

  const FrameGeometryCache cache = FrameGeometryCache::build(scene);
  CHECK(select_semantic_views(whole_cloud_instance(scene), scene, cache, 10) !=
        std::vector<int>{});
  CHECK(select_semantic_views(instance, scene, cache, 10) == expected_ids);
}

TEST_CASE("prompt stride keeps prompt counts inside the budget") {
  CHECK(choose_prompt_stride(5) == 1);
  CHECK(choose_prompt_stride(50) == 1);
  CHECK(choose_prompt_stride(51) == 2);
  CHECK(choose_prompt_stride(5000) == 100);
  for (int n = 1; n <= 2000; ++n) {
    const int stride = choose_prompt_stride(n);
    const int count = (n + stride - 1) / stride;
    CHECK(count <= 50);
    if (n >= 10) CHECK(count >= 10);
  }
  CHECK_THROWS_AS(choose_prompt_stride(0), Error);
}

TEST_CASE("defect correction prompts every stride-th visible pixel") {
  const Scene scene = line_scene();
  const FrameGeometryCache cache = FrameGeometryCache::build(scene);
  const Instance instance = whole_cloud_instance(scene);

  std::vector<PointPrompt> seen;
  cv::Mat provided = cv::Mat::zeros(48, 64, CV_8UC1);
  cv::rectangle(provided, {17, 23}, {47, 25}, cv::Scalar(255), cv::FILLED);
  FunctionMaskProvider provider([&](const MaskRequest& request) -> MaskResponse {
    seen = request.prompts;
    return {{{provided, 1.0}}};
  });

  const cv::Mat corrected =
      defect_correct(instance, scene.frames[0], cache.frames[0], 2, provider);
  CHECK(cv::countNonZero(corrected != provided) == 0);

  // Five visible pixels at v=24; stride 2 keeps the 1st, 3rd and 5th.
  REQUIRE(seen.size() == 3);
  CHECK(seen[0].u == 17);
  CHECK(seen[1].u == 32);
  CHECK(seen[2].u == 47);
  for (const PointPrompt& p : seen) {
    CHECK(p.v == 24);
    CHECK(p.positive);
  }
}

TEST_CASE("defect correction falls back to the raw projection") {
  const Scene scene = line_scene();
  const FrameGeometryCache cache = FrameGeometryCache::build(scene);
  const Instance instance = whole_cloud_instance(scene);

  cv::Mat expected_raw = cv::Mat::zeros(48, 64, CV_8UC1);
  for (int u : {17, 24, 32, 39, 47}) expected_raw.at<std::uint8_t>(24, u) = 255;

  SUBCASE("provider throws") {
    FunctionMaskProvider provider([](const MaskRequest&) -> MaskResponse {
      throw Error(ErrorCode::Timeout, "injected timeout");
    });
    const cv::Mat mask =
        defect_correct(instance, scene.frames[0], cache.frames[0], 1, provider);
    CHECK(cv::countNonZero(mask != expected_raw) == 0);
  }

  SUBCASE("provider returns nothing") {
    FunctionMaskProvider provider([](const MaskRequest&) -> MaskResponse { return {}; });
    const cv::Mat mask =
        defect_correct(instance, scene.frames[0], cache.frames[0], 1, provider);
    CHECK(cv::countNonZero(mask != expected_raw) == 0);
  }

  SUBCASE("invisible instance is an error") {
    FunctionMaskProvider provider([](const MaskRequest&) -> MaskResponse { return {}; });
    CHECK_THROWS_AS(defect_correct(instance, scene.frames[2], cache.frames[2], 1, provider),
                    Error);
  }
}

TEST_CASE("defect correction recovers a holey silhouette under a truth provider") {
  // A 31x21 grid plane; the instance lost every 5th point.
  Scene scene;
  scene.scene_id = "plane";
  for (int i = 0; i <= 30; ++i) {
    for (int j = 0; j <= 20; ++j) {
      scene.cloud.positions.push_back(
          {static_cast<float>(i / 30.0 - 0.5), static_cast<float>(j / 30.0 - 0.33), 2.0f});
      scene.cloud.colors.push_back({220, 30, 30});
    }
  }
  scene.frames.push_back(make_frame(0, Pose{}));
  const FrameGeometryCache cache = FrameGeometryCache::build(scene);

  // True silhouette: every cell any grid point lands in.
  cv::Mat truth = cv::Mat::zeros(48, 64, CV_8UC1);
  for (const Vec3f& p : scene.cloud.positions) {
    Eigen::Vector2d uv;
    double depth = 0.0;
    REQUIRE(project_point(p.cast<double>(), scene.frames[0].pose, scene.frames[0].intrinsics,
                          uv, depth));
    truth.at<std::uint8_t>(static_cast<int>(uv.y()), static_cast<int>(uv.x())) = 255;
  }

  Instance holey;
  holey.instance_id = 0;
  for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
    if (i % 5 != 0) holey.point_indices.push_back(static_cast<int>(i));
  }

  FunctionMaskProvider truth_provider([&](const MaskRequest& request) -> MaskResponse {
    for (const PointPrompt& p : request.prompts) {
      REQUIRE(truth.at<std::uint8_t>(p.v, p.u) == 255);
    }
    return {{{truth, 1.0}}};
  });

  const int visible = static_cast<int>(
      visible_cells(cache.frames[0], scene.frames[0].depth, holey.point_indices).size());
  const cv::Mat corrected = defect_correct(holey, scene.frames[0], cache.frames[0],
                                           choose_prompt_stride(visible), truth_provider);
  const int covered = cv::countNonZero(corrected & truth);
  CHECK(covered >= static_cast<int>(0.95 * cv::countNonZero(truth)));
}

TEST_CASE("multiscale rectangles expand about the center and clamp") {
  const cv::Size image(100, 100);

  SUBCASE("documented example: centered 10x10, scale 2 doubles the rect") {
    const auto rects = multiscale_rects({45, 45, 10, 10}, image, {1.0, 2.0});
    REQUIRE(rects.size() == 2);
    CHECK(rects[0] == cv::Rect(45, 45, 10, 10));
    CHECK(rects[1] == cv::Rect(40, 40, 20, 20));
  }

  SUBCASE("full-image tight rect is fixed under any scale") {
    const auto rects = multiscale_rects({0, 0, 100, 100}, image, {1.0, 2.0, 3.0});
    for (const cv::Rect& r : rects) CHECK(r == cv::Rect(0, 0, 100, 100));
  }

  SUBCASE("non-finite scale means the whole image") {
    const auto rects = multiscale_rects(
        {10, 10, 5, 5}, image, {1.0, std::numeric_limits<double>::infinity()});
    CHECK(rects[1] == cv::Rect(0, 0, 100, 100));
  }

  SUBCASE("scale lists must be ascending from 1.0") {
    CHECK_THROWS_AS(multiscale_rects({0, 0, 10, 10}, image, {}), Error);
    CHECK_THROWS_AS(multiscale_rects({0, 0, 10, 10}, image, {1.5}), Error);
    CHECK_THROWS_AS(multiscale_rects({0, 0, 10, 10}, image, {1.0, 3.0, 2.0}), Error);
    CHECK_THROWS_AS(multiscale_rects({0, 0, 10, 10}, image, {1.0, 0.5}), Error);
  }
}

TEST_CASE("multiscale rectangles nest and stay inside the image") {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int iw = 20 + static_cast<int>(rng() % 200);
    const int ih = 20 + static_cast<int>(rng() % 200);
    const int w = 1 + static_cast<int>(rng() % (iw - 1));
    const int h = 1 + static_cast<int>(rng() % (ih - 1));
    const int x = static_cast<int>(rng() % (iw - w + 1));
    const int y = static_cast<int>(rng() % (ih - h + 1));
    const cv::Rect tight(x, y, w, h);

    std::uniform_real_distribution<double> step(0.01, 1.5);
    std::vector<double> scales = {1.0};
    scales.push_back(scales.back() + step(rng));
    scales.push_back(scales.back() + step(rng));
    scales.push_back(std::numeric_limits<double>::infinity());

    const auto rects = multiscale_rects(tight, {iw, ih}, scales);
    REQUIRE(rects.size() == scales.size());
    CHECK(rects.front() == tight);
    CHECK(rects.back() == cv::Rect(0, 0, iw, ih));
    for (std::size_t i = 0; i < rects.size(); ++i) {
      CHECK((rects[i] & cv::Rect(0, 0, iw, ih)) == rects[i]);
      CHECK((rects[i] & tight) == tight);
      if (i > 0) {
        CHECK((rects[i] & rects[i - 1]) == rects[i - 1]);
        CHECK(rects[i].area() >= rects[i - 1].area());
      }
    }
  }
}

TEST_CASE("multiscale crops slice the rgb image at the mask bbox") {
  cv::Mat rgb(40, 60, CV_8UC3);
  for (int y = 0; y < 40; ++y) {
    for (int x = 0; x < 60; ++x) {
      rgb.at<cv::Vec3b>(y, x) = {static_cast<std::uint8_t>(x), static_cast<std::uint8_t>(y), 7};
    }
  }
  cv::Mat mask = cv::Mat::zeros(40, 60, CV_8UC1);
  cv::rectangle(mask, {20, 10}, {29, 19}, cv::Scalar(255), cv::FILLED);

  const auto crops = multiscale_crops(mask, rgb, {1.0, 2.0});
  REQUIRE(crops.size() == 2);
  CHECK(crops[0].cols == 10);
  CHECK(crops[0].rows == 10);
  CHECK(crops[0].at<cv::Vec3b>(0, 0) == cv::Vec3b(20, 10, 7));
  CHECK(crops[1].cols == 20);
  CHECK(crops[1].rows == 20);
  CHECK(crops[1].at<cv::Vec3b>(0, 0) == cv::Vec3b(15, 5, 7));

  CHECK_THROWS_AS(multiscale_crops(cv::Mat::zeros(40, 60, CV_8UC1), rgb, {1.0}), Error);
}

TEST_CASE("instance embedding averages crops within views then across views") {
  constexpr int kDim = 6;
  auto provider = axis_provider(kDim);

  SUBCASE("identical vectors across views collapse to that vector") {
    const auto embedding =
        embed_instance({{tagged_crop(2)}, {tagged_crop(2)}, {tagged_crop(2)}}, provider);
    embedding.validate();
    CHECK(embedding.view_count == 3);
    CHECK(embedding.vector.isApprox(basis(kDim, 2)));
  }

  SUBCASE("two orthonormal views average to the diagonal") {
    const auto embedding = embed_instance({{tagged_crop(0)}, {tagged_crop(1)}}, provider);
    Eigen::VectorXf expected = Eigen::VectorXf::Zero(kDim);
    expected[0] = expected[1] = static_cast<float>(1.0 / std::sqrt(2.0));
    CHECK(embedding.vector.isApprox(expected, 1e-6f));
  }

  SUBCASE("per-view averaging happens before the cross-view mean") {
    // View A: crops on axes 0 and 1 (mean 0.5,0.5); view B: axis 2.
    const auto embedding =
        embed_instance({{tagged_crop(0), tagged_crop(1)}, {tagged_crop(2)}}, provider);
    Eigen::VectorXf expected(kDim);
    expected << 0.25f, 0.25f, 0.5f, 0.0f, 0.0f, 0.0f;
    expected.normalize();
    CHECK(embedding.vector.isApprox(expected, 1e-6f));

    // Duplicating one view's crop list changes nothing.
    const auto doubled = embed_instance(
        {{tagged_crop(0), tagged_crop(1), tagged_crop(0), tagged_crop(1)}, {tagged_crop(2)}},
        provider);
    CHECK(doubled.vector.isApprox(embedding.vector, 1e-6f));
  }

  SUBCASE("view order does not matter") {
    const auto forward = embed_instance(
        {{tagged_crop(0)}, {tagged_crop(1), tagged_crop(3)}, {tagged_crop(4)}}, provider);
    const auto backward = embed_instance(
        {{tagged_crop(4)}, {tagged_crop(1), tagged_crop(3)}, {tagged_crop(0)}}, provider);
    CHECK(forward.vector.isApprox(backward.vector, 1e-6f));
  }

  SUBCASE("failing views are skipped; all views failing is an error") {
    int calls = 0;
    FunctionEmbeddingProvider flaky([&](const EmbedRequest& request) -> EmbedResponse {
      ++calls;
      const int axis = request.image.at<cv::Vec3b>(0, 0)[0];
      if (axis == 9) throw Error(ErrorCode::Timeout, "injected");
      return {basis(kDim, axis)};
    });
    const auto embedding =
        embed_instance({{tagged_crop(9)}, {tagged_crop(1)}}, flaky);
    CHECK(embedding.view_count == 1);
    CHECK(embedding.vector.isApprox(basis(kDim, 1)));

    CHECK_THROWS_AS(embed_instance({{tagged_crop(9)}}, flaky), Error);
    CHECK_THROWS_AS(embed_instance({}, flaky), Error);
    CHECK_THROWS_AS(embed_instance({{}}, flaky), Error);
  }
}

TEST_CASE("top-u filtering keeps the highest cosines in order") {
  constexpr int kDim = 8;
  FunctionEmbeddingProvider provider([](const EmbedRequest& request) -> EmbedResponse {
    REQUIRE(request.text == "the target phrase");
    Eigen::VectorXf q = Eigen::VectorXf::Zero(kDim);
    q[0] = 1.0f;
    return {q};
  });

  std::mt19937 rng(53);
  std::uniform_real_distribution<double> angle(0.0, kPi);
  std::vector<EmbeddedInstance> instances;
  std::vector<std::pair<double, int>> oracle;  // (-cos, id)
  for (int i = 0; i < 8; ++i) {
    // Instance 5 ties instance 2 exactly to exercise the id tie-break.
    const double theta = (i == 5) ? std::acos(-oracle[2].first) : angle(rng);
    EmbeddedInstance entry;
    entry.instance.instance_id = i;
    entry.embedding.vector = Eigen::VectorXf::Zero(kDim);
    entry.embedding.vector[0] = static_cast<float>(std::cos(theta));
    entry.embedding.vector[1] = static_cast<float>(std::sin(theta));
    entry.embedding.view_count = 1;
    instances.push_back(entry);
    oracle.emplace_back(-static_cast<double>(entry.embedding.vector[0]), i);
  }
  std::sort(oracle.begin(), oracle.end());

  GroundingQuery query;
  query.text = "the target phrase";
  const auto candidates = filter_top_u(instances, query, 5, provider);
  REQUIRE(candidates.size() == 5);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    CHECK(candidates[i].instance.instance_id == oracle[i].second);
    CHECK(candidates[i].score == doctest::Approx(-oracle[i].first).epsilon(1e-6));
    CHECK(candidates[i].candidate_id == static_cast<int>(i) + 1);
    if (i > 0) CHECK(candidates[i].score <= candidates[i - 1].score);
  }

  SUBCASE("u larger than the pool returns everything") {
    CHECK(filter_top_u(instances, query, 99, provider).size() == instances.size());
  }

  SUBCASE("a query equal to an instance embedding ranks it first with score 1") {
    EmbeddedInstance exact;
    exact.instance.instance_id = 100;
    exact.embedding.vector = Eigen::VectorXf::Zero(kDim);
    exact.embedding.vector[0] = 1.0f;
    exact.embedding.view_count = 2;
    auto pool = instances;
    pool.push_back(exact);
    const auto top = filter_top_u(pool, query, 3, provider);
    CHECK(top[0].instance.instance_id == 100);
    CHECK(top[0].score == doctest::Approx(1.0));
  }

  SUBCASE("equal scores fall back to instance id order") {
    std::vector<EmbeddedInstance> twins;
    for (int id : {7, 3}) {
      EmbeddedInstance twin;
      twin.instance.instance_id = id;
      twin.embedding.vector = basis(kDim, 1);
      twin.embedding.view_count = 1;
      twins.push_back(twin);
    }
    const auto top = filter_top_u(twins, query, 2, provider);
    CHECK(top[0].instance.instance_id == 3);
    CHECK(top[1].instance.instance_id == 7);
  }

  SUBCASE("invalid arguments throw") {
    CHECK_THROWS_AS(filter_top_u(instances, query, 0, provider), Error);
    CHECK_THROWS_AS(filter_top_u({}, query, 5, provider), Error);
  }

  SUBCASE("text embedding failures propagate") {
    FunctionEmbeddingProvider broken(
        [](const EmbedRequest&) -> EmbedResponse { throw Error(ErrorCode::Timeout, "down"); });
    CHECK_THROWS_AS(filter_top_u(instances, query, 5, broken), Error);
  }
}

TEST_SUITE_END();
