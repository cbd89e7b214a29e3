#include "mve/checkpoint.hpp"
#include "mve/error.hpp"
#include "mve/selfcheck.hpp"
#include "support.hpp"

using namespace mve;

namespace {

EnhancerModel model_with_seed(std::uint64_t seed) {
  EnhancerConfig cfg;
  cfg.seed = seed;
  cfg.denoiser.seed = seed + 1;
  cfg.codec.seed = seed + 2;
  return EnhancerModel::make(cfg, LatentCodec::make(cfg.codec));
}

Checkpoint small_checkpoint() {
  Checkpoint c;
  c.kind = "test";
  c.config_json = R"({"a":1})";
  c.config_hash = fnv1a64(c.config_json);
  c.step = 7;
  c.meta = {{"k", "v"}, {"z", "w"}};
  nn::ParamSet ps;
  ps.add("w", ag::Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6.5}));
  ps.add("b", ag::Tensor::from({1}, {-0.25}));
  c.add(ps);
  return c;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("fnv1a64 reference values") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  }

  TEST_CASE("serialization round-trips exactly") {
    const Checkpoint c = small_checkpoint();
    const std::string bytes = serialize_checkpoint(c);
    CHECK(deserialize_checkpoint(bytes) == c);
    CHECK(serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes);
  }

  TEST_CASE("damaged files are rejected") {
    const std::string bytes = serialize_checkpoint(small_checkpoint());
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), DataError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), DataError);
    CHECK_THROWS_AS(deserialize_checkpoint(""), DataError);
    CHECK_THROWS_AS(read_checkpoint(test::scratch_dir("ckpt_missing") / "none.ckpt"), DataError);
  }

  TEST_CASE("config hash mismatch is rejected unless allowed") {
    const Checkpoint c = small_checkpoint();
    CHECK_NOTHROW(check_config(c, R"({"a":1})", false));
    CHECK_THROWS_AS(check_config(c, R"({"a":2})", false), ConfigError);
    CHECK_NOTHROW(check_config(c, R"({"a":2})", true));
  }

  TEST_CASE("load_into requires matching names and shapes") {
    const Checkpoint c = small_checkpoint();
    nn::ParamSet ok;
    ok.add("w", ag::Tensor::zeros({2, 3}));
    ok.add("b", ag::Tensor::zeros({1}));
    c.load_into(ok);
    CHECK(ok.get("w").data()[5] == 6.5);
    nn::ParamSet wrong;
    wrong.add("w", ag::Tensor::zeros({3, 2}));
    CHECK_THROWS(c.load_into(wrong));
    nn::ParamSet missing;
    missing.add("q", ag::Tensor::zeros({1}));
    CHECK_THROWS(c.load_into(missing));
  }

  TEST_CASE("codec round-trip keeps parameters and latent scale") {
    LatentCodec codec = LatentCodec::make({});
    codec.set_latent_scale(0.37);
    const LatentCodec back = load_codec(deserialize_checkpoint(serialize_checkpoint(codec_checkpoint(codec))));
    CHECK(back.latent_scale() == 0.37);
    CHECK(back.encoder_params().checksum() == codec.encoder_params().checksum());
    CHECK(back.decoder_params().checksum() == codec.decoder_params().checksum());
  }

  TEST_CASE("enhancer round-trip restores every parameter") {
    EnhancerModel m = model_with_seed(3);
    perturb_params(m.trainable_params(), 0.05, 9);
    const std::string echo = R"({"model":1})";
    const auto dir = test::scratch_dir("ckpt_enh");
    write_checkpoint(enhancer_checkpoint(m, echo, 5), dir / "m.ckpt");
    const Checkpoint c = read_checkpoint(dir / "m.ckpt");
    const EnhancerModel back = load_enhancer(c, m.config, echo);
    CHECK(back.all_params().checksum() == m.all_params().checksum());
    CHECK_THROWS_AS(load_enhancer(c, m.config, R"({"model":2})"), ConfigError);
    CHECK_NOTHROW(load_enhancer(c, m.config, R"({"model":2})", true));
  }

  TEST_CASE("untrained and foreign checkpoints are rejected") {
    const EnhancerModel m = model_with_seed(4);
    const Checkpoint untrained = enhancer_checkpoint(m, "{}", 0);
    CHECK_THROWS(load_enhancer(untrained, m.config, "{}"));
    CHECK_NOTHROW(load_enhancer(untrained, m.config, "{}", false, true));
    CHECK_THROWS(load_enhancer(codec_checkpoint(m.codec), m.config, "{}", true, true));
  }
}
