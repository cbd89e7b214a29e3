#include <fstream>
#include <sstream>

#include "mve/error.hpp"
#include "mve/pipeline.hpp"
#include "support.hpp"

using namespace mve;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.reference.n_views = 4;
  c.reference.width = c.reference.height = 32;
  c.target.n_views = 2;
  c.target.width = c.target.height = 32;
  c.target.radius_or_step = 3.6;
  c.severities = {0.3, 0.6};
  c.n_ref = 2;
  c.apply_seed(11);
  c.validate();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config json round-trips") {
    const RunConfig c = demo_config();
    const std::string j = to_json(c);
    CHECK(to_json(parse_run_config(j)) == j);
  }

  TEST_CASE("the shipped demo config matches the built-in demo") {
    CHECK(to_json(load_run_config(fs::path(MVE_SOURCE_DIR) / "tools/configs/demo.json")) == to_json(demo_config()));
  }

  TEST_CASE("configs with unknown keys, bad severities or section seeds are rejected") {
    CHECK_THROWS_AS(parse_run_config(R"({"scenes":{"count":10}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"severities":[1.5]})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"severities":[]})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train":{"seed":4}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"model":{"codec":{"seed":4}}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"format":"other"})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{"), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
  }

  TEST_CASE("geometry that breaks the latent grid is rejected") {
    CHECK_THROWS_AS(parse_run_config(R"({"target":{"width":60}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"n_ref":0})"), ConfigError);
  }

  TEST_CASE("component seeds derive from the global seed") {
    RunConfig a, b;
    a.apply_seed(1);
    b.apply_seed(2);
    CHECK(a.scene.seed != b.scene.seed);
    CHECK(a.model.seed != b.model.seed);
    CHECK(a.train.seed != b.train.seed);
    CHECK(a.scene.seed != a.model.seed);
    CHECK(a.model.codec.seed != a.model.denoiser.seed);
    RunConfig again;
    again.apply_seed(1);
    CHECK(to_json(again) == to_json(a));
  }

  TEST_CASE("stages need their inputs") {
    const RunConfig c = tiny_config();
    const PipelineContext ctx{.out = test::scratch_dir("pipe_missing")};
    CHECK_THROWS_AS(cmd_render(c, ctx), DataError);
    CHECK_THROWS_AS(cmd_pack(c, ctx), DataError);
    CHECK_THROWS_AS(cmd_enhance(c, ctx), DataError);
    CHECK_THROWS_AS(cmd_eval(c, ctx), DataError);
  }

  TEST_CASE("gen, render and pack produce deterministic outputs") {
    const RunConfig c = tiny_config();
    const PipelineContext a{.out = test::scratch_dir("pipe_a")}, b{.out = test::scratch_dir("pipe_b")};
    for (const auto* ctx : {&a, &b}) {
      cmd_gen(c, *ctx);
      cmd_render(c, *ctx);
      cmd_pack(c, *ctx);
    }
    for (const char* f : {"scene.json", "degraded_000.json", "degraded_001.json", "cameras_reference.json",
                          "cameras_target.json", "renders/ref_000_rgb.mveimg", "renders/target_001_degraded.mveimg",
                          "packets/packet_000.mvepkt", "packets/packet_001.mvepkt"}) {
      INFO(f);
      REQUIRE(fs::exists(a.out / f));
      CHECK(slurp(a.out / f) == slurp(b.out / f));
    }
    const Packet p0 = read_packet(a.out / "packets/packet_000.mvepkt");
    const Packet p1 = read_packet(a.out / "packets/packet_001.mvepkt");
    CHECK(p0.n_ref == 2);
    CHECK(p0.n_target == 1);
    const double t0 = p0.views[p0.target_indices()[0]].camera.timestamp;
    const double t1 = p1.views[p1.target_indices()[0]].camera.timestamp;
    CHECK(t0 < t1);
  }

  TEST_CASE("the traversal layout revisits the target path once per severity") {
    RunConfig c = tiny_config();
    c.severities = {0.2, 0.4, 0.6};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.target_layout = TargetLayout::traversals;
    c.validate();
    CHECK(c.total_targets() == 6);
    CHECK(to_json(parse_run_config(to_json(c))) == to_json(c));
    CHECK_THROWS_AS(parse_run_config(R"({"target_layout":"loop"})"), ConfigError);
    const PipelineContext ctx{.out = test::scratch_dir("pipe_trav")};
    cmd_gen(c, ctx);
    cmd_render(c, ctx);
    cmd_pack(c, ctx);
    const auto cams = load_cameras(ctx.out / "cameras_target.json");
    REQUIRE(cams.size() == 6);
    for (int i = 0; i < 2; ++i)
      for (int k = 1; k < 3; ++k) {
        CHECK(cams[i].world_to_camera.matrix() == cams[2 * k + i].world_to_camera.matrix());
        CHECK(cams[2 * k + i].timestamp == doctest::Approx(cams[i].timestamp + 2 * k * c.target.dt));
      }
    const Packet p0 = read_packet(ctx.out / "packets/packet_000.mvepkt");
    const Packet p1 = read_packet(ctx.out / "packets/packet_002.mvepkt");
    CHECK(p0.n_target == 2);
    CHECK(p1.n_target == 2);
    CHECK(p0.views[p0.target_indices()[0]].camera.timestamp < p1.views[p1.target_indices()[0]].camera.timestamp);
  }

  TEST_CASE("a different seed changes the scene") {
    RunConfig c = tiny_config();
    const PipelineContext a{.out = test::scratch_dir("pipe_s1")}, b{.out = test::scratch_dir("pipe_s2")};
    cmd_gen(c, a);
    c.apply_seed(12);
    cmd_gen(c, b);
    CHECK(slurp(a.out / "scene.json") != slurp(b.out / "scene.json"));
  }

  TEST_CASE("a corrupted scene file is reported as a data error") {
    const RunConfig c = tiny_config();
    const PipelineContext ctx{.out = test::scratch_dir("pipe_corrupt")};
    cmd_gen(c, ctx);
    std::ofstream(ctx.out / "scene.json") << "{ not json";
    CHECK_THROWS_AS(cmd_render(c, ctx), DataError);
  }

  TEST_CASE("codec corpus mixes clean and degraded renders") {
    RunConfig c = tiny_config();
    c.corpus.scenes = 2;
    c.corpus.views_per_scene = 4;
    const auto corpus = codec_corpus(c);
    CHECK(corpus.size() == 8);
    CHECK(codec_corpus(c)[4].data == corpus[4].data);
  }
}
