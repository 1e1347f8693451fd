#include "uniground/reasoner.hpp"

#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>

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

Candidate make_candidate(int id, const Vec3& center, double score) {
  Candidate candidate;
  candidate.candidate_id = id;
  candidate.instance.instance_id = id;
  candidate.instance.obb.center = center;
  candidate.instance.obb.half_extents = Vec3(0.2, 0.2, 0.2);
  candidate.instance.obb.yaw = 0.0;
  candidate.embedding.vector = Eigen::VectorXf::Unit(4, 0);
  candidate.embedding.view_count = 1;
  candidate.score = score;
  return candidate;
}

CandidateViewSet trivial_views(int id) {
  CandidateViewSet set;
  set.candidate_id = id;
  CandidateView view;
  view.frame_id = 1;
  view.image = cv::Mat(8, 8, CV_8UC3, cv::Scalar(120, 120, 120));
  view.box = cv::Rect(2, 2, 4, 4);
  set.views.push_back(view);
  return set;
}

GlobalRender make_render(const Pose& pose) {
  GlobalRender render;
  render.image = cv::Mat(16, 16, CV_8UC3, cv::Scalar(120, 120, 120));
  render.depth = cv::Mat(16, 16, CV_32FC1, cv::Scalar(std::numeric_limits<float>::infinity()));
  render.camera = pose;
  render.intrinsics = small_intrinsics();
  render.axes_drawn = true;
  return render;
}

std::string sel_json(int id, const std::string& explanation = "t") {
  return "```json\n{\"selected_id\": " + std::to_string(id) +
         ", \"relations\": [], \"explanation\": \"" + explanation + "\"}\n```";
}

const AxisLanguageMap::Entry* find_entry(const std::vector<AxisLanguageMap::Entry>& entries,
                                         const std::string& phrase) {
  for (const auto& entry : entries) {
    if (entry.phrase == phrase) {
      return &entry;
    }
  }
  return nullptr;
}

}  // namespace

TEST_CASE("axis language map follows each camera frame") {
  SUBCASE("tilted orbit camera") {
    const Pose pose = look_at(Vec3(2, 0, 1.5), Vec3(0, 0, 0));
    std::vector<GlobalRender> renders = {make_render(pose), make_render(pose)};
    const AxisLanguageMap map = AxisLanguageMap::build(renders);
    REQUIRE(map.per_render.size() == 2);
    const auto& entries = map.per_render[0];
    // forward = (-0.8, 0, -0.6): horizontal depth axis is -x, right is +y.
    const auto* right = find_entry(entries, "right of");
    const auto* left = find_entry(entries, "left of");
    const auto* behind = find_entry(entries, "behind");
    const auto* front = find_entry(entries, "in front of");
    const auto* above = find_entry(entries, "above");
    REQUIRE(right != nullptr);
    REQUIRE(left != nullptr);
    REQUIRE(behind != nullptr);
    REQUIRE(front != nullptr);
    REQUIRE(above != nullptr);
    CHECK((right->direction - Vec3(0, 1, 0)).norm() <= 1e-9);
    CHECK((left->direction - Vec3(0, -1, 0)).norm() <= 1e-9);
    CHECK((behind->direction - Vec3(-1, 0, 0)).norm() <= 1e-9);
    CHECK((front->direction - Vec3(1, 0, 0)).norm() <= 1e-9);
    CHECK((above->direction - Vec3(0, 0, 1)).norm() <= 1e-12);
    const std::string text = map.to_text();
    CHECK(text.find("VIEW 1: ") != std::string::npos);
    CHECK(text.find("VIEW 2: ") != std::string::npos);
    CHECK(text.find("right of = (0.00, 1.00, 0.00)") != std::string::npos);
  }
  SUBCASE("straight-down camera uses image-down for depth phrases") {
    const Pose pose = look_at(Vec3(0, 0, 5), Vec3(0, 0, 0));
    const AxisLanguageMap map = AxisLanguageMap::build({make_render(pose)});
    REQUIRE(map.per_render.size() == 1);
    const auto* behind = find_entry(map.per_render[0], "behind");
    REQUIRE(behind != nullptr);
    CHECK((behind->direction - Vec3(0, -1, 0)).norm() <= 1e-9);
  }
}

TEST_CASE("object name parsing is strict but forgiving") {
  CHECK(parse_object_name("  Red Cube.\n").value() == "red cube");
  CHECK(parse_object_name("```\nchair\n```").value() == "chair");
  CHECK(parse_object_name("```text\nsofa\n```").value() == "sofa");
  CHECK(parse_object_name("\"lamp\"").value() == "lamp");
  CHECK(parse_object_name("unknown").value() == "unknown");
  CHECK(parse_object_name("corner desk-lamp").value() == "corner desk-lamp");
  CHECK_FALSE(parse_object_name("{\"a\": 1}").has_value());
  CHECK_FALSE(parse_object_name("???").has_value());
  CHECK_FALSE(parse_object_name("12 34").has_value());
  CHECK_FALSE(parse_object_name("").has_value());
  CHECK_FALSE(parse_object_name("one two three four five six seven").has_value());
  CHECK_FALSE(parse_object_name(std::string(70, 'a')).has_value());

  CHECK(extract_structured_block("  plain text  ") == "plain text");
  CHECK(extract_structured_block("prefix ```json\n{\"k\":1}\n``` suffix") == "{\"k\":1}");
  CHECK(extract_structured_block("```\nno closing fence") == "no closing fence");
}

TEST_CASE("selection replies must satisfy the JSON schema") {
  const auto ok = parse_selection_reply(
      "```json\n{\"selected_id\": 3, \"relations\": [\"left of 2\", 7], "
      "\"explanation\": \"closest\"}\n```");
  REQUIRE(ok.has_value());
  CHECK(ok->selected_id == 3);
  REQUIRE(ok->relations.size() == 2);
  CHECK(ok->relations[0] == "left of 2");
  CHECK(ok->relations[1] == "7");
  CHECK(ok->explanation == "closest");

  const auto bare = parse_selection_reply(
      "{\"selected_id\": -2, \"relations\": [], \"explanation\": \"x\"}");
  REQUIRE(bare.has_value());
  CHECK(bare->selected_id == -2);

  CHECK_FALSE(parse_selection_reply("not json").has_value());
  CHECK_FALSE(parse_selection_reply("[1, 2]").has_value());
  CHECK_FALSE(parse_selection_reply(
                  "{\"selected_id\": 3.5, \"relations\": [], \"explanation\": \"x\"}")
                  .has_value());
  CHECK_FALSE(
      parse_selection_reply("{\"selected_id\": 1, \"relations\": []}").has_value());
  CHECK_FALSE(parse_selection_reply(
                  "{\"selected_id\": 1, \"relations\": \"abc\", \"explanation\": \"x\"}")
                  .has_value());
  CHECK_FALSE(parse_selection_reply("{\"selected_id\": 99999999999999999999, \"relations\": [], "
                                    "\"explanation\": \"x\"}")
                  .has_value());
}

TEST_CASE("candidate naming issues one turn per candidate with one retry") {
  const std::vector<Candidate> one = {make_candidate(1, Vec3(1, 0, 0.5), 0.9)};
  const std::vector<CandidateViewSet> one_views = {trivial_views(1)};

  SUBCASE("clean reply is trimmed and lowercased") {
    ScriptedVlmProvider vlm({"  Red Cube.  "});
    std::vector<TurnRecord> transcript;
    const auto names = name_candidates(one, one_views, vlm, 4, &transcript);
    CHECK(names.at(1) == "red cube");
    CHECK(vlm.call_count() == 1);
    REQUIRE(transcript.size() == 1);
    CHECK(transcript[0].role == "naming");
    CHECK(transcript[0].candidate_id == 1);
    CHECK(transcript[0].image_count == 1);
    CHECK(transcript[0].prompt.find("TASK: name") != std::string::npos);
    CHECK(transcript[0].prompt.find("CENTER: 1.000000 0.000000 0.500000") != std::string::npos);
  }
  SUBCASE("malformed reply earns exactly one retry") {
    ScriptedVlmProvider vlm({"???", "sofa"});
    const auto names = name_candidates(one, one_views, vlm);
    CHECK(names.at(1) == "sofa");
    CHECK(vlm.call_count() == 2);
  }
  SUBCASE("two malformed replies record unknown") {
    ScriptedVlmProvider vlm({"###", "12 34"});
    std::vector<TurnRecord> transcript;
    const auto names = name_candidates(one, one_views, vlm, 4, &transcript);
    CHECK(names.at(1) == "unknown");
    CHECK(vlm.call_count() == 2);
    CHECK(transcript.size() == 2);
  }
  SUBCASE("five candidates issue five turns") {
    std::vector<Candidate> candidates;
    std::vector<CandidateViewSet> view_sets;
    for (int id = 1; id <= 5; ++id) {
      candidates.push_back(make_candidate(id, Vec3(id, 0, 0.5), 1.0 - 0.1 * id));
      view_sets.push_back(trivial_views(id));
    }
    for (int parallel : {1, 4}) {
      ScriptedVlmProvider vlm({"chair"});
      const auto names = name_candidates(candidates, view_sets, vlm, parallel);
      CHECK(vlm.call_count() == 5);
      REQUIRE(names.size() == 5);
      for (const auto& [id, name] : names) {
        CHECK(name == "chair");
      }
    }
  }
  SUBCASE("provider outage propagates after the retry") {
    std::atomic<int> calls{0};
    FunctionVlmProvider vlm([&](const VlmRequest&) -> VlmResponse {
      ++calls;
      throw Error(ErrorCode::Timeout, "offline");
    });
    CHECK_THROWS_AS(name_candidates(one, one_views, vlm), Error);
    CHECK(calls.load() == 2);
  }
  SUBCASE("a single provider error is retried") {
    std::atomic<int> calls{0};
    FunctionVlmProvider vlm([&](const VlmRequest&) -> VlmResponse {
      if (calls.fetch_add(1) == 0) {
        throw Error(ErrorCode::BadStatus, "flaky");
      }
      return {"lamp"};
    });
    const auto names = name_candidates(one, one_views, vlm);
    CHECK(names.at(1) == "lamp");
    CHECK(calls.load() == 2);
  }
  SUBCASE("oracle echoes ground-truth labels") {
    OracleContext context;
    context.objects.push_back({"red cube", OrientedBox{Vec3(1, 0, 0.5), Vec3(0.2, 0.2, 0.2), 0}});
    context.objects.push_back({"blue sphere", OrientedBox{Vec3(3, 2, 0.3), Vec3(0.3, 0.3, 0.3), 0}});
    OracleVlmProvider vlm(context);
    const std::vector<Candidate> candidates = {make_candidate(1, Vec3(1, 0, 0.5), 0.9),
                                               make_candidate(2, Vec3(3, 2, 0.3), 0.8)};
    const std::vector<CandidateViewSet> view_sets = {trivial_views(1), trivial_views(2)};
    const auto names = name_candidates(candidates, view_sets, vlm);
    CHECK(names.at(1) == "red cube");
    CHECK(names.at(2) == "blue sphere");
  }
  SUBCASE("argument validation") {
    ScriptedVlmProvider vlm({"chair"});
    CHECK_THROWS_AS(name_candidates({}, one_views, vlm), Error);
    CHECK_THROWS_AS(name_candidates(one, {}, vlm), Error);
    CHECK_THROWS_AS(name_candidates(one, {trivial_views(9)}, vlm), Error);
    CHECK_THROWS_AS(name_candidates(one, one_views, vlm, 0), Error);
  }
}

TEST_CASE("target matching thresholds cosine similarity") {
  MockEmbeddingProvider embedder;
  const auto cosine = [&](const std::string& a, const std::string& b) {
    const Eigen::VectorXf va = embedder.embed(EmbedRequest::from_text(a)).vector;
    const Eigen::VectorXf vb = embedder.embed(EmbedRequest::from_text(b)).vector;
    return double(va.dot(vb)) / (va.norm() * vb.norm());
  };

  SUBCASE("exact name match clears the default threshold") {
    const std::map<int, std::string> names = {{1, "chair"}, {2, "table"}};
    const GroundingQuery query{"the chair near the door", "q1"};
    const auto matched = match_target(query, names, embedder);
    CHECK(matched == std::set<int>{1});
    // independently recomputed cosines agree with the set
    for (const auto& [id, name] : names) {
      CHECK((cosine(query.text, name) >= 0.6) == (matched.count(id) == 1));
    }
  }
  SUBCASE("synonyms match at 0.8 but not at a 0.9 threshold") {
    const std::map<int, std::string> names = {{1, "sofa"}};
    const GroundingQuery query{"couch", "q2"};
    CHECK(match_target(query, names, embedder) == std::set<int>{1});
    CHECK(match_target(query, names, embedder, 0.9).empty());
    CHECK(cosine("couch", "sofa") == doctest::Approx(0.8).epsilon(1e-6));
  }
  SUBCASE("unrelated and unknown names never match") {
    const GroundingQuery query{"the chair", "q3"};
    CHECK(match_target(query, {{1, "zzz qqq"}}, embedder).empty());
    CHECK(match_target(query, {{1, "unknown"}}, embedder).empty());
  }
  SUBCASE("embedder failure yields the empty set") {
    FunctionEmbeddingProvider broken(
        [](const EmbedRequest&) -> EmbedResponse { throw Error(ErrorCode::Timeout, "down"); });
    const auto matched = match_target(GroundingQuery{"the chair", "q4"}, {{1, "chair"}}, broken);
    CHECK(matched.empty());
  }
  SUBCASE("empty names map throws") {
    CHECK_THROWS_AS(match_target(GroundingQuery{"x", "q5"}, {}, embedder), Error);
  }
}

TEST_CASE("spatial selection re-prompts once then falls back") {
  const std::vector<Candidate> candidates = {make_candidate(1, Vec3(0, 0, 0), 0.9),
                                             make_candidate(2, Vec3(1, 0, 0), 0.95),
                                             make_candidate(3, Vec3(2, 0, 0), 0.2)};
  const std::map<int, std::string> names = {{1, "chair"}, {2, "table"}, {3, "lamp"}};
  const std::vector<GlobalRender> renders = {
      make_render(look_at(Vec3(2, 0, 1.5), Vec3(0, 0, 0))),
      make_render(look_at(Vec3(-2, 0, 1.5), Vec3(0, 0, 0)))};
  const AxisLanguageMap axis_map = AxisLanguageMap::build(renders);
  const GroundingQuery query{"the red cube", "q6"};

  SUBCASE("valid reply passes through") {
    ScriptedVlmProvider vlm(
        {"```json\n{\"selected_id\": 3, \"relations\": [\"left of 2\"], \"explanation\": "
         "\"ok\"}\n```"});
    const auto result = spatial_select(query, renders, axis_map, candidates, names, {}, vlm);
    CHECK(result.selected_id == 3);
    CHECK(result.rounds_used == 0);
    CHECK_FALSE(result.fallback);
    REQUIRE(result.relations.size() == 1);
    CHECK(result.relations[0] == "left of 2");
    CHECK(result.explanation == "ok");
    CHECK(vlm.call_count() == 1);
  }
  SUBCASE("schema violation is re-prompted once") {
    ScriptedVlmProvider vlm({"sorry, no JSON here", sel_json(2)});
    std::vector<TurnRecord> transcript;
    const auto result =
        spatial_select(query, renders, axis_map, candidates, names, {}, vlm, 1, &transcript);
    CHECK(result.selected_id == 2);
    CHECK(result.rounds_used == 1);
    CHECK_FALSE(result.fallback);
    CHECK(vlm.call_count() == 2);
    REQUIRE(transcript.size() == 2);
    CHECK(transcript[1].prompt.find("did not follow") != std::string::npos);
  }
  SUBCASE("two violations fall back to the best matched candidate") {
    ScriptedVlmProvider vlm({"still not json"});
    const auto result =
        spatial_select(query, renders, axis_map, candidates, names, {1, 3}, vlm);
    CHECK(result.fallback);
    CHECK(result.selected_id == 1);  // top score within {1, 3}
    CHECK(result.rounds_used == 1);
    CHECK(vlm.call_count() == 2);
  }
  SUBCASE("fallback with no matches picks the overall top score") {
    ScriptedVlmProvider vlm({"nope"});
    const auto result = spatial_select(query, renders, axis_map, candidates, names, {}, vlm, 0);
    CHECK(result.fallback);
    CHECK(result.selected_id == 2);
    CHECK(result.rounds_used == 0);
    CHECK(vlm.call_count() == 1);
  }
  SUBCASE("provider errors count as violations") {
    std::atomic<int> calls{0};
    FunctionVlmProvider flaky([&](const VlmRequest&) -> VlmResponse {
      if (calls.fetch_add(1) == 0) {
        throw Error(ErrorCode::Timeout, "slow");
      }
      return {sel_json(1)};
    });
    const auto result = spatial_select(query, renders, axis_map, candidates, names, {}, flaky);
    CHECK(result.selected_id == 1);
    CHECK(result.rounds_used == 1);
    CHECK_FALSE(result.fallback);
  }
  SUBCASE("prompt carries the machine-readable sections") {
    std::string seen_prompt;
    std::size_t seen_images = 0;
    FunctionVlmProvider capture([&](const VlmRequest& request) -> VlmResponse {
      seen_prompt = request.prompt;
      seen_images = request.images.size();
      return {sel_json(1)};
    });
    spatial_select(query, renders, axis_map, candidates, names, {2}, capture);
    CHECK(seen_images == renders.size());
    CHECK(seen_prompt.find("TASK: select") != std::string::npos);
    CHECK(seen_prompt.find("QUERY: the red cube") != std::string::npos);
    CHECK(seen_prompt.find("CANDIDATE 1: center") != std::string::npos);
    CHECK(seen_prompt.find("CANDIDATE 3: center") != std::string::npos);
    CHECK(seen_prompt.find("NAMES: 1=chair; 2=table; 3=lamp") != std::string::npos);
    CHECK(seen_prompt.find("MATCHED: 2") != std::string::npos);
    CHECK(seen_prompt.find("VIEW 1: ") != std::string::npos);
  }
  SUBCASE("missing renders throw") {
    ScriptedVlmProvider vlm({sel_json(1)});
    CHECK_THROWS_AS(spatial_select(query, {}, axis_map, candidates, names, {}, vlm), Error);
  }
}

TEST_CASE("grounding corrects inconsistencies and projects selections") {
  MockEmbeddingProvider embedder;
  const std::vector<GlobalRender> renders = {
      make_render(look_at(Vec3(2, 0, 1.5), Vec3(0, 0, 0)))};

  SUBCASE("inconsistent selection triggers one correction turn") {
    std::vector<Candidate> candidates;
    std::vector<CandidateViewSet> view_sets;
    for (int id = 1; id <= 4; ++id) {
      candidates.push_back(make_candidate(id, Vec3(id, 0, 0.5), 1.0 - 0.1 * id));
      view_sets.push_back(trivial_views(id));
    }
    ScriptedVlmProvider vlm(
        {"table", "red cube", "table", "table", sel_json(4, "first pick"), sel_json(2, "fixed")});
    GroundOptions options;
    options.naming_parallel = 1;
    const auto result = ground(GroundingQuery{"the red cube", "g1"}, candidates, renders, view_sets,
                               vlm, embedder, options);
    CHECK(result.trace.matched_target == std::set<int>{2});
    CHECK(result.trace.selected == 2);
    CHECK(result.trace.correction_rounds == 1);
    CHECK(result.trace.explanation == "fixed");
    CHECK(vlm.call_count() == 6);  // 4 naming + 1 spatial + 1 correction
    CHECK((result.box.center - Vec3(2, 0, 0.5)).norm() <= 1e-12);
    REQUIRE(result.trace.transcript.size() == 6);
    CHECK(result.trace.transcript[4].role == "spatial");
    CHECK(result.trace.transcript[5].role == "correction");
    CHECK(result.trace.transcript[5].prompt.find("PREVIOUS: 4") != std::string::npos);
    CHECK(result.trace.transcript[5].image_count == 2);  // render + selected view
  }
  SUBCASE("invalid ids project to the top-scored candidate") {
    const std::vector<Candidate> candidates = {make_candidate(1, Vec3(0, 0, 0), 0.5),
                                               make_candidate(2, Vec3(1, 0, 0), 0.9),
                                               make_candidate(3, Vec3(2, 0, 0), 0.7)};
    const std::vector<CandidateViewSet> view_sets = {trivial_views(1), trivial_views(2),
                                                     trivial_views(3)};
    ScriptedVlmProvider vlm({"aaa", "aaa", "aaa", sel_json(9), sel_json(9)});
    GroundOptions options;
    options.naming_parallel = 1;
    const auto result = ground(GroundingQuery{"the chair", "g2"}, candidates, renders, view_sets,
                               vlm, embedder, options);
    CHECK(result.trace.selected == 2);
    CHECK(result.trace.correction_rounds == 1);
    CHECK(vlm.call_count() == 5);
    CHECK((result.box.center - Vec3(1, 0, 0)).norm() <= 1e-12);
  }
  SUBCASE("a singleton candidate set survives pure garbage") {
    const std::vector<Candidate> candidates = {make_candidate(1, Vec3(0, 0, 0), 0.5)};
    const std::vector<CandidateViewSet> view_sets = {trivial_views(1)};
    ScriptedVlmProvider vlm({"zzz", "junk one", "junk two"});
    const auto result = ground(GroundingQuery{"anything", "g3"}, candidates, renders, view_sets,
                               vlm, embedder);
    CHECK(result.trace.selected == 1);
    CHECK(result.trace.correction_rounds <= 1);
  }
  SUBCASE("zero retries means no correction turns") {
    const std::vector<Candidate> candidates = {make_candidate(1, Vec3(0, 0, 0), 0.5),
                                               make_candidate(2, Vec3(1, 0, 0), 0.9)};
    const std::vector<CandidateViewSet> view_sets = {trivial_views(1), trivial_views(2)};
    ScriptedVlmProvider vlm({"aaa", "aaa", "garbage"});
    GroundOptions options;
    options.naming_parallel = 1;
    options.max_retries = 0;
    const auto result = ground(GroundingQuery{"the chair", "g2"}, candidates, renders, view_sets,
                               vlm, embedder, options);
    CHECK(result.trace.selected == 2);
    CHECK(result.trace.correction_rounds == 0);
    CHECK(vlm.call_count() == 3);  // 2 naming + 1 spatial, then score fallback
  }
  SUBCASE("a total provider outage still grounds to the top score") {
    const std::vector<Candidate> candidates = {make_candidate(1, Vec3(0, 0, 0), 0.4),
                                               make_candidate(2, Vec3(1, 0, 0), 0.8)};
    const std::vector<CandidateViewSet> view_sets = {trivial_views(1), trivial_views(2)};
    FunctionVlmProvider dead(
        [](const VlmRequest&) -> VlmResponse { throw Error(ErrorCode::Timeout, "dead"); });
    const auto result = ground(GroundingQuery{"the chair", "g2"}, candidates, renders, view_sets,
                               dead, embedder);
    CHECK(result.trace.selected == 2);
    CHECK(result.trace.names.at(1) == "unknown");
    CHECK(result.trace.names.at(2) == "unknown");
    CHECK(result.trace.correction_rounds <= 1);
  }
  SUBCASE("argument validation") {
    const std::vector<Candidate> candidates = {make_candidate(1, Vec3(0, 0, 0), 0.5)};
    const std::vector<CandidateViewSet> view_sets = {trivial_views(1)};
    ScriptedVlmProvider vlm({"x"});
    CHECK_THROWS_AS(
        ground(GroundingQuery{"q", "g4"}, {}, renders, view_sets, vlm, embedder), Error);
    CHECK_THROWS_AS(
        ground(GroundingQuery{"q", "g4"}, candidates, {}, view_sets, vlm, embedder), Error);
    CHECK_THROWS_AS(
        ground(GroundingQuery{"q", "g4"}, candidates, renders, {trivial_views(5)}, vlm, embedder),
        Error);
  }
}

TEST_CASE("prompt toggles prune the reasoning recipe") {
  MockEmbeddingProvider embedder;
  const std::vector<Candidate> candidates = {make_candidate(1, Vec3(1, 0, 0.5), 0.9),
                                             make_candidate(2, Vec3(3, 2, 0.3), 0.8)};
  const std::vector<CandidateViewSet> view_sets = {trivial_views(1), trivial_views(2)};
  const std::vector<GlobalRender> renders = {
      make_render(look_at(Vec3(2, 0, 1.5), Vec3(0, 0, 0))),
      make_render(look_at(Vec3(-2, 0, 1.5), Vec3(0, 0, 0)))};

  SUBCASE("semantic off skips naming and the NAMES section") {
    std::vector<std::string> prompts;
    FunctionVlmProvider vlm([&](const VlmRequest& request) -> VlmResponse {
      prompts.push_back(request.prompt);
      return {sel_json(2)};
    });
    GroundOptions options;
    options.toggles.semantic = false;
    const auto result = ground(GroundingQuery{"the blue sphere", "t1"}, candidates, renders,
                               view_sets, vlm, embedder, options);
    CHECK(result.trace.selected == 2);
    CHECK(result.trace.names.empty());
    CHECK(result.trace.matched_target.empty());
    REQUIRE(prompts.size() == 1);  // no naming turns
    CHECK(prompts[0].find("TASK: select") != std::string::npos);
    CHECK(prompts[0].find("NAMES:") == std::string::npos);
  }
  SUBCASE("spatial off drops render images and axis text") {
    std::size_t select_images = 99;
    std::string select_prompt;
    FunctionVlmProvider vlm([&](const VlmRequest& request) -> VlmResponse {
      if (request.prompt.find("TASK: select") != std::string::npos) {
        select_images = request.images.size();
        select_prompt = request.prompt;
        return {sel_json(1)};
      }
      return {"red cube"};
    });
    GroundOptions options;
    options.toggles.spatial = false;
    const auto result = ground(GroundingQuery{"the red cube", "t2"}, candidates, renders,
                               view_sets, vlm, embedder, options);
    CHECK(result.trace.selected == 1);
    CHECK(result.trace.names.at(1) == "red cube");
    CHECK(select_images == 0);
    CHECK(select_prompt.find("AXES:") == std::string::npos);
    CHECK(select_prompt.find("CANDIDATE 1: center") != std::string::npos);
  }
  SUBCASE("visual chain-of-thought off collapses to one combined turn") {
    ScriptedVlmProvider vlm({sel_json(2, "combined pick")});
    GroundOptions options;
    options.toggles.visual_cot = false;
    const auto result = ground(GroundingQuery{"the blue sphere", "t3"}, candidates, renders,
                               view_sets, vlm, embedder, options);
    CHECK(vlm.call_count() == 1);
    CHECK(result.trace.selected == 2);
    CHECK(result.trace.names.empty());
    CHECK(result.trace.correction_rounds == 0);
    REQUIRE(result.trace.transcript.size() == 1);
    CHECK(result.trace.transcript[0].role == "combined");
    CHECK(result.trace.transcript[0].prompt.find("TASK: ground") != std::string::npos);
    // 2 renders + 1 view per candidate
    CHECK(result.trace.transcript[0].image_count == 4);
    CHECK((result.box.center - Vec3(3, 2, 0.3)).norm() <= 1e-12);
  }
  SUBCASE("combined turn retries then falls back on garbage") {
    ScriptedVlmProvider vlm({"not json"});
    GroundOptions options;
    options.toggles.visual_cot = false;
    const auto result = ground(GroundingQuery{"anything", "t4"}, candidates, renders, view_sets,
                               vlm, embedder, options);
    CHECK(vlm.call_count() == 2);  // initial + one retry
    CHECK(result.trace.selected == 1);  // top score
    CHECK(result.trace.correction_rounds == 1);
  }
  SUBCASE("degraded oracle accuracy orders the toggle rows") {
    OracleContext context;
    context.objects.push_back(
        {"red cube", OrientedBox{Vec3(1, 0, 0.5), Vec3(0.2, 0.2, 0.2), 0}});
    context.objects.push_back(
        {"blue sphere", OrientedBox{Vec3(3, 2, 0.3), Vec3(0.3, 0.3, 0.3), 0}});
    const std::string query = "the blue sphere closest to the red cube";
    context.target_by_query[query] = 1;

    const auto run = [&](PromptToggles toggles) {
      DegradedOracleVlmProvider vlm(context);
      GroundOptions options;
      options.toggles = toggles;
      return ground(GroundingQuery{query, "t5"}, candidates, renders, view_sets, vlm, embedder,
                    options);
    };
    CHECK(run({true, true, true}).trace.selected == 2);    // full context
    CHECK(run({false, true, true}).trace.selected == 2);   // names alone still resolve it
    CHECK(run({true, false, true}).trace.selected == 1);   // no names: first listed
    CHECK(run({true, true, false}).trace.selected == 1);   // combined turn has no names
  }
}

TEST_CASE("grounding fuzz stays within the candidate set") {
  MockEmbeddingProvider embedder;
  std::mt19937 rng(424242);
  std::uniform_int_distribution<int> num_candidates(1, 6);
  std::uniform_int_distribution<int> retries(0, 2);
  std::uniform_int_distribution<int> category(0, 5);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::mutex reply_mutex;

  for (int trial = 0; trial < 300; ++trial) {
    const int k = num_candidates(rng);
    std::vector<Candidate> candidates;
    std::vector<CandidateViewSet> view_sets;
    std::set<int> ids;
    for (int id = 1; id <= k; ++id) {
      candidates.push_back(make_candidate(id, Vec3(id, 0.5 * id, 0.5), score(rng)));
      view_sets.push_back(trivial_views(id));
      ids.insert(id);
    }
    const std::vector<GlobalRender> renders = {
        make_render(look_at(Vec3(2, 0, 1.5), Vec3(0, 0, 0)))};

    std::mt19937 reply_rng(10'000 + trial);
    FunctionVlmProvider adversary([&](const VlmRequest&) -> VlmResponse {
      std::lock_guard<std::mutex> lock(reply_mutex);
      std::uniform_int_distribution<int> id_pick(-3, k + 3);
      switch (category(reply_rng)) {
        case 0:
          return {"complete nonsense !!"};
        case 1:
          return {"```json\n{broken\n```"};
        case 2:
          return {sel_json(id_pick(reply_rng))};
        case 3:
          return {"{\"selected_id\": \"three\", \"relations\": [], \"explanation\": \"x\"}"};
        case 4:
          throw Error(ErrorCode::BadStatus, "adversarial outage");
        default:
          return {"a perfectly plausible name"};
      }
    });

    GroundOptions options;
    options.max_retries = retries(rng);
    options.naming_parallel = (trial % 2 == 0) ? 1 : 4;
    const auto result = ground(GroundingQuery{"the red cube near the wall", std::to_string(trial)}, candidates,
                               renders, view_sets, adversary, embedder, options);
    REQUIRE(ids.count(result.trace.selected) == 1);
    REQUIRE(result.trace.correction_rounds <= options.max_retries);
    const Vec3 expected_center(result.trace.selected, 0.5 * result.trace.selected, 0.5);
    REQUIRE((result.box.center - expected_center).norm() <= 1e-12);
  }
}

TEST_CASE("oracle grounding returns the annotated target end to end") {
  OracleContext context;
  context.objects.push_back(
      {"red cube", OrientedBox{Vec3(0.5, 0.5, 0.5), Vec3(0.2, 0.2, 0.2), 0}});
  context.objects.push_back(
      {"blue sphere", OrientedBox{Vec3(3, 2, 0.3), Vec3(0.3, 0.3, 0.3), 0}});
  const std::string query_text = "the red cube closest to the blue sphere";
  context.target_by_query[query_text] = 0;

  PointCloud cloud;
  for (int i = -2; i <= 2; ++i) {
    for (int j = -2; j <= 2; ++j) {
      cloud.positions.push_back(Vec3f(0.5f + 0.0625f * i, 0.5f + 0.0625f * j, 0.5f));
      cloud.colors.push_back(Rgb{220, 30, 30});
      cloud.positions.push_back(Vec3f(3.0f + 0.0625f * i, 2.0f + 0.0625f * j, 0.3f));
      cloud.colors.push_back(Rgb{40, 60, 220});
    }
  }
  const std::vector<Candidate> candidates = {make_candidate(1, Vec3(0.5, 0.5, 0.5), 0.9),
                                             make_candidate(2, Vec3(3, 2, 0.3), 0.8)};
  const std::vector<CandidateViewSet> view_sets = {trivial_views(1), trivial_views(2)};

  AxisAlignedBox bounds;
  bounds.min_corner = Vec3(0, 0, 0);
  bounds.max_corner = Vec3(3.5, 2.5, 1.0);
  const OrbitCameraSpec spec = orbit_spec_for_scene(bounds);
  const CameraIntrinsics intr = small_intrinsics();
  std::vector<GlobalRender> renders;
  for (const Pose& pose : orbit_positions(candidates, spec)) {
    const Render render = render_scene(cloud, pose, intr);
    renders.push_back(annotate_global(render, pose, intr, candidates, Vec3(1.75, 1.25, 0)));
  }
  REQUIRE(renders.size() == 3);

  MockEmbeddingProvider embedder;

  SUBCASE("full oracle") {
    OracleVlmProvider vlm(context);
    const auto result = ground(GroundingQuery{query_text, "g5"}, candidates, renders, view_sets,
                               vlm, embedder);
    CHECK(result.trace.names.at(1) == "red cube");
    CHECK(result.trace.names.at(2) == "blue sphere");
    CHECK(result.trace.matched_target.count(1) == 1);
    CHECK(result.trace.selected == 1);
    CHECK(result.trace.correction_rounds == 0);
    CHECK((result.box.center - Vec3(0.5, 0.5, 0.5)).norm() <= 1e-12);
    CHECK(result.trace.transcript.size() == 3);  // 2 naming + 1 spatial
  }
  SUBCASE("degraded oracle with full context behaves identically") {
    DegradedOracleVlmProvider vlm(context);
    const auto result = ground(GroundingQuery{query_text, "g5"}, candidates, renders, view_sets,
                               vlm, embedder);
    CHECK(result.trace.selected == 1);
  }
}

TEST_CASE("trace json writes and prompt files override builtins") {
  const std::filesystem::path base =
      std::filesystem::temp_directory_path() / "ug_reasoner_test";
  std::filesystem::remove_all(base);

  SUBCASE("trace round trip") {
    ReasoningTrace trace;
    trace.names = {{1, "chair"}, {2, "table"}};
    trace.matched_target = {1};
    trace.relations = {"left of 2"};
    trace.selected = 1;
    trace.explanation = "closest to the door";
    trace.correction_rounds = 1;
    TurnRecord record;
    record.role = "spatial";
    record.prompt = "TASK: select";
    record.response = "{}";
    record.schema_id = "selection.v1";
    record.image_count = 3;
    trace.transcript.push_back(record);

    const std::string dir = (base / "query_0001").string();
    write_trace(trace, dir);
    std::ifstream in(dir + "/trace.json");
    REQUIRE(in.good());
    nlohmann::json body;
    in >> body;
    CHECK(body["selected"] == 1);
    CHECK(body["correction_rounds"] == 1);
    CHECK(body["names"]["1"] == "chair");
    CHECK(body["names"]["2"] == "table");
    CHECK(body["matched_target"] == nlohmann::json::array({1}));
    CHECK(body["relations"][0] == "left of 2");
    REQUIRE(body["transcript"].size() == 1);
    CHECK(body["transcript"][0]["role"] == "spatial");
    CHECK(body["transcript"][0]["image_count"] == 3);
  }
  SUBCASE("prompt library file override") {
    const std::filesystem::path dir = base / "prompts";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "name_candidate.txt") << "CUSTOM NAMING PROMPT\n";
    const PromptLibrary library = PromptLibrary::load(dir.string());
    CHECK(library.get("name_candidate") == "CUSTOM NAMING PROMPT");
    CHECK(library.get("spatial_select") == PromptLibrary::builtin().get("spatial_select"));
    CHECK_THROWS_AS(library.get("no_such_prompt"), Error);
  }

  std::filesystem::remove_all(base);
}
