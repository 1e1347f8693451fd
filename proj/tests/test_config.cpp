#include <doctest.h>

#include <cmath>

#include "uniground/config.hpp"

using namespace uniground;

TEST_CASE("toml reader handles the supported value shapes") {
  const TomlFile file = TomlFile::parse(R"(
# top comment
title = "scene # one"   # inline comment after a string with a hash
flag = true
other = false

[section]
count = 12
ratio = -0.25
big = 1e3
limit = inf
name = "a \"quoted\" path\n"
nums = [1.0, 2.5, 3]
words = ["red", "green, blue"]
empty = []
)");

  CHECK(file.str("", "title", "") == "scene # one");
  CHECK(file.boolean("", "flag", false));
  CHECK_FALSE(file.boolean("", "other", true));
  CHECK(file.integer("section", "count", 0) == 12);
  CHECK(file.number("section", "ratio", 0.0) == -0.25);
  CHECK(file.number("section", "big", 0.0) == 1000.0);
  CHECK(std::isinf(file.number("section", "limit", 0.0)));
  CHECK(file.str("section", "name", "") == "a \"quoted\" path\n");
  CHECK(file.number_list("section", "nums", {}) == std::vector<double>{1.0, 2.5, 3.0});
  CHECK(file.string_list("section", "words", {}) ==
        std::vector<std::string>{"red", "green, blue"});
  CHECK(file.number_list("section", "empty", {9.0}).empty());
  CHECK(file.string_list("section", "empty", {"x"}).empty());

  CHECK(file.has("section", "count"));
  CHECK_FALSE(file.has("section", "missing"));
  CHECK(file.number("section", "missing", 7.5) == 7.5);

  const auto contents = file.contents();
  CHECK(contents.count("") == 1);
  CHECK(contents.at("section").size() == 8);
}

TEST_CASE("toml reader rejects malformed input") {
  CHECK_THROWS_AS(TomlFile::parse("[unclosed\n"), Error);
  CHECK_THROWS_AS(TomlFile::parse("just words\n"), Error);
  CHECK_THROWS_AS(TomlFile::parse("key =\n"), Error);
  CHECK_THROWS_AS(TomlFile::parse("bad key = 1\n"), Error);
  CHECK_THROWS_AS(TomlFile::parse("k = \"open\n"), Error);
  CHECK_THROWS_AS(TomlFile::parse("k = 12abc\n"), Error);
  CHECK_THROWS_AS(TomlFile::parse("k = [1, 2\n"), Error);
  CHECK_THROWS_AS(TomlFile::parse("k = [1, 2,]\n"), Error);
  CHECK_THROWS_AS(TomlFile::parse("k = 1\nk = 2\n"), Error);
  CHECK_THROWS_AS(TomlFile::parse("k = \"a\\q\"\n"), Error);

  try {
    TomlFile::parse("good = 1\nbad line\n");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CorruptFile);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  CHECK_THROWS_AS(TomlFile::load("/nonexistent/config.toml"), Error);
  try {
    TomlFile::load("/nonexistent/config.toml");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFile);
  }
}

TEST_CASE("toml getters enforce value types") {
  const TomlFile file = TomlFile::parse("n = 1.5\ns = \"x\"\nb = true\nl = [1]\n");
  CHECK_THROWS_AS(file.boolean("", "n", false), Error);
  CHECK_THROWS_AS(file.number("", "s", 0.0), Error);
  CHECK_THROWS_AS(file.integer("", "n", 0), Error);
  CHECK_THROWS_AS(file.str("", "b", ""), Error);
  CHECK_THROWS_AS(file.number_list("", "n", {}), Error);
  CHECK_THROWS_AS(file.string_list("", "l", {}), Error);
  try {
    file.integer("", "n", 0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidArgument);
  }
}

TEST_CASE("pipeline config defaults mirror the documented knobs") {
  const PipelineConfig config = PipelineConfig::defaults();
  config.validate();

  CHECK(config.superpoints.voxel_size == 0.02);
  CHECK(config.superpoints.seed_spacing == 0.5);
  CHECK(config.superpoints.angle_thresh_deg == 15.0);
  CHECK(config.superpoints.color_thresh == 30.0);
  CHECK(config.superpoints.weights.color == 0.2);
  CHECK(config.superpoints.weights.spatial == 0.4);
  CHECK(config.superpoints.weights.normal == 1.0);
  CHECK(config.merge.start == 0.9);
  CHECK(config.merge.end == 0.5);
  CHECK(config.merge.stages == 5);
  CHECK(config.semantics.u == 5);
  CHECK(config.semantics.max_views == 10);
  CHECK(config.semantics.scales == kDefaultScales);
  CHECK(config.semantics.occlusion_tol == 0.05);
  CHECK(config.views.views_per_candidate == 3);
  CHECK(config.views.azimuths_deg == std::vector<double>{90.0, 210.0, 330.0});
  CHECK(config.views.splat_radius_m == 0.015);
  CHECK(config.reasoner.max_retries == 1);
  CHECK(config.reasoner.match_threshold == 0.6);
  CHECK(config.reasoner.naming_parallel == 4);
  CHECK(config.reasoner.toggles.spatial);
  CHECK(config.reasoner.toggles.semantic);
  CHECK(config.reasoner.toggles.visual_cot);
  CHECK(config.providers.mode == "mock");
  CHECK(config.harness.workers == 1);

  const CameraIntrinsics intr = config.render_intrinsics();
  CHECK(intr.width == 640);
  CHECK(intr.height == 480);
  CHECK(intr.fx == 500.0);
  CHECK(intr.fy == 500.0);
  CHECK(intr.cx == 320.0);
  CHECK(intr.cy == 240.0);

  const GroundOptions options = config.ground_options();
  CHECK(options.max_retries == 1);
  CHECK(options.match_threshold == 0.6);
  CHECK(options.naming_parallel == 4);
}

TEST_CASE("pipeline config overlays file values onto defaults") {
  const TomlFile file = TomlFile::parse(R"(
[superpoints]
seed_spacing = 0.2

[merge]
stages = 3

[semantics]
u = 2
scales = [1.0, 2.0, inf]

[views]
azimuths_deg = [0.0, 180.0]
render_width = 320
render_height = 240

[reasoner]
semantic = false
max_retries = 0

[providers]
mode = "oracle"
embed_noise_sigma = 0.5

[harness]
deterministic_report = true
)");
  const PipelineConfig config = PipelineConfig::from_toml(file);

  CHECK(config.superpoints.seed_spacing == 0.2);
  CHECK(config.superpoints.voxel_size == 0.02);
  CHECK(config.merge.stages == 3);
  CHECK(config.semantics.u == 2);
  REQUIRE(config.semantics.scales.size() == 3);
  CHECK(std::isinf(config.semantics.scales.back()));
  CHECK(config.views.azimuths_deg == std::vector<double>{0.0, 180.0});
  CHECK_FALSE(config.reasoner.toggles.semantic);
  CHECK(config.reasoner.toggles.spatial);
  CHECK(config.reasoner.max_retries == 0);
  CHECK(config.providers.mode == "oracle");
  CHECK(config.providers.embed_noise_sigma == 0.5);
  CHECK(config.harness.deterministic_report);

  const AxisAlignedBox bounds{{0.0, 0.0, 0.0}, {4.0, 3.0, 2.0}};
  const OrbitCameraSpec spec = config.orbit_spec(bounds);
  REQUIRE(spec.azimuths.size() == 2);
  CHECK(spec.azimuths[0] == doctest::Approx(0.0));
  CHECK(spec.azimuths[1] == doctest::Approx(kPi));
  CHECK(spec.r == orbit_spec_for_scene(bounds).r);
  CHECK(spec.h == orbit_spec_for_scene(bounds).h);
}

TEST_CASE("pipeline config rejects unknown names and bad values") {
  CHECK_THROWS_AS(PipelineConfig::from_toml(TomlFile::parse("[mystery]\nx = 1\n")), Error);
  CHECK_THROWS_AS(PipelineConfig::from_toml(TomlFile::parse("[merge]\ntypo = 1\n")), Error);
  try {
    PipelineConfig::from_toml(TomlFile::parse("[merge]\ntypo = 1\n"));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidArgument);
    CHECK(std::string(e.what()).find("merge.typo") != std::string::npos);
  }

  CHECK_THROWS_AS(PipelineConfig::from_toml(TomlFile::parse("[merge]\nstages = 1\n")), Error);
  CHECK_THROWS_AS(PipelineConfig::from_toml(TomlFile::parse("[merge]\nend = 0.95\n")), Error);
  CHECK_THROWS_AS(
      PipelineConfig::from_toml(TomlFile::parse("[semantics]\nscales = [2.0, 1.0]\n")), Error);
  CHECK_THROWS_AS(
      PipelineConfig::from_toml(TomlFile::parse("[providers]\nmode = \"psychic\"\n")), Error);
  CHECK_THROWS_AS(PipelineConfig::from_toml(TomlFile::parse(
                      "[reasoner]\nspatial = false\nsemantic = false\nvisual_cot = false\n")),
                  Error);
  CHECK_THROWS_AS(PipelineConfig::from_toml(TomlFile::parse("[harness]\nworkers = 0\n")), Error);
  CHECK_THROWS_AS(PipelineConfig::from_toml(TomlFile::parse("[views]\nazimuths_deg = []\n")),
                  Error);

  PipelineConfig config = PipelineConfig::defaults();
  config.reasoner.match_threshold = 1.5;
  CHECK_THROWS_AS(config.validate(), Error);
}
