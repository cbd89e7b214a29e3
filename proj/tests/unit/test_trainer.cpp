#include <fstream>
#include <set>

#include "mve/checkpoint.hpp"
#include "mve/selfcheck.hpp"
#include "mve/trainer.hpp"
#include "support.hpp"

using namespace mve;

namespace {

struct Fixture {
  EnhancerModel model;
  PreparedPacket packet;
};

Fixture make_fixture(std::uint64_t seed = 1) {
  EnhancerConfig cfg;
  cfg.seed = seed;
  cfg.denoiser.seed = seed + 1;
  cfg.codec.seed = seed + 2;
  Fixture f{EnhancerModel::make(cfg, LatentCodec::make(cfg.codec)), {}};
  SceneSpec spec;
  spec.seed = seed;
  const GaussianScene clean = generate_scene(spec), degraded = corrupt_scene(clean, 0.6, seed);
  TrajectorySpec t;
  t.n_views = 4;
  t.width = t.height = 32;
  const auto cams = sample_trajectory(t);
  const Packet p = assemble_packet({cams[0], cams[1]}, {cams[2], cams[3]},
                                   {.clean = &clean, .degraded = &degraded, .render = {}}, {2, 12});
  f.packet = prepare_packet(f.model, p);
  return f;
}

TrainConfig small_train() {
  TrainConfig c;
  c.min_views = 3;
  c.max_views = 4;
  c.lr = 1e-3;
  c.iterations = 4;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("decode subsets are distinct and in range") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 1 + static_cast<int>(rng.below(8));
      const int k = 1 + static_cast<int>(rng.below(n));
      const auto s = sample_decode_subset(n, k, rng);
      CHECK(static_cast<int>(s.size()) == k);
      CHECK(std::set<int>(s.begin(), s.end()).size() == s.size());
      for (int i : s) CHECK((i >= 0 && i < n));
    }
  }

  TEST_CASE("invalid train configs are rejected") {
    TrainConfig c = small_train();
    c.min_views = 1;
    CHECK_THROWS(c.validate());
    c = small_train();
    c.max_views = 2;
    CHECK_THROWS(c.validate());
    c = small_train();
    c.dropout = 1.5;
    CHECK_THROWS(c.validate());
  }

  TEST_CASE("prepared packet layout") {
    const Fixture f = make_fixture();
    CHECK(f.packet.refs == std::vector<int>{0, 1});
    CHECK(f.packet.targets == std::vector<int>{2, 3});
    CHECK(f.packet.latents.shape() == ag::Shape{4, 8, 4, 4});
    CHECK(f.packet.target_v.shape() == ag::Shape{2, 8, 4, 4});
    CHECK(f.packet.gt_images.shape() == ag::Shape{2, 3, 32, 32});
  }

  TEST_CASE("training only moves trainable parameters") {
    Fixture f = make_fixture(2);
    const auto enc = f.model.codec.encoder_params().checksum();
    const auto dec = f.model.codec.decoder_params().checksum();
    const auto trainable = f.model.trainable_params().checksum();
    Trainer tr(f.model, small_train(), "{}");
    for (int i = 0; i < 3; ++i) tr.step(f.packet);
    CHECK(f.model.codec.encoder_params().checksum() == enc);
    CHECK(f.model.codec.decoder_params().checksum() == dec);
    CHECK(f.model.trainable_params().checksum() != trainable);
  }

  TEST_CASE("repeated steps on one packet reduce its loss") {
    Fixture f = make_fixture(3);
    TrainConfig c = small_train();
    c.dropout = 0.0;
    c.min_views = c.max_views = 4;
    const auto eval = [&] {
      Rng rng(11);
      ag::NoGradGuard g;
      return forward_step(f.model, f.packet, c, rng).total.item();
    };
    const double before = eval();
    Trainer tr(f.model, c, "{}");
    for (int i = 0; i < 25; ++i) tr.step(f.packet);
    CHECK(eval() < before);
  }

  TEST_CASE("training is deterministic for a fixed seed") {
    Fixture a = make_fixture(4), b = make_fixture(4);
    Trainer ta(a.model, small_train(), "{}"), tb(b.model, small_train(), "{}");
    train(ta, {a.packet});
    train(tb, {b.packet});
    CHECK(a.model.all_params().checksum() == b.model.all_params().checksum());
  }

  TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
    TrainConfig c = small_train();
    Fixture a = make_fixture(5);
    Trainer ta(a.model, c, "{}");
    train(ta, {a.packet});

    Fixture b = make_fixture(5);
    TrainConfig half = c;
    half.iterations = 2;
    Trainer tb(b.model, half, "{}");
    train(tb, {b.packet});
    const std::string bytes = serialize_checkpoint(tb.checkpoint());

    Fixture r = make_fixture(5);
    Trainer tr(r.model, c, "{}");
    tr.restore(deserialize_checkpoint(bytes));
    CHECK(tr.iteration() == 2);
    train(tr, {r.packet});
    CHECK(r.model.all_params().checksum() == a.model.all_params().checksum());
    CHECK(tr.rng() == ta.rng());
  }

  TEST_CASE("restore rejects a different config echo") {
    Fixture f = make_fixture(6);
    Trainer t(f.model, small_train(), R"({"x":1})");
    const Checkpoint c = t.checkpoint();
    Trainer other(f.model, small_train(), R"({"x":2})");
    CHECK_THROWS(other.restore(c));
    CHECK_NOTHROW(other.restore(c, true));
  }

  TEST_CASE("a non-finite loss skips the update") {
    Fixture f = make_fixture(7);
    f.packet.gt_images.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig c = small_train();
    c.decode_subset = 2;
    const auto before = f.model.trainable_params().checksum();
    nn::Adam opt(f.model.trainable_params(), {.lr = c.lr, .clip_norm = c.clip_norm});
    Rng rng(1);
    const StepMetrics m = train_step(f.model, opt, f.packet, c, rng);
    CHECK(m.skipped);
    CHECK(f.model.trainable_params().checksum() == before);
  }

  TEST_CASE("packets without ground truth cannot be prepared") {
    Fixture f = make_fixture(8);
    SceneSpec spec;
    const GaussianScene s = generate_scene(spec);
    TrajectorySpec t;
    t.n_views = 2;
    t.width = t.height = 32;
    const auto cams = sample_trajectory(t);
    Packet p = assemble_packet({cams[0]}, {cams[1]}, {.clean = &s, .degraded = &s, .render = {}}, {2, 12});
    p.views[1].ground_truth.reset();
    CHECK_THROWS(prepare_packet(f.model, p));
  }

  TEST_CASE("train log writes one csv row per iteration") {
    Fixture f = make_fixture(9);
    const auto dir = test::scratch_dir("train_log");
    Trainer t(f.model, small_train(), "{}");
    train(t, {f.packet}, {.metrics_csv = dir / "m.csv", .checkpoint = dir / "m.ckpt", .on_step = {}});
    std::ifstream in(dir / "m.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == kTrainCsvHeader);
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 4);
    CHECK(std::filesystem::exists(dir / "m.ckpt"));
  }
}
