#include "mve/codec.hpp"
#include "mve/error.hpp"
#include "support.hpp"

using namespace mve;

namespace {

Image noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h, 3);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

}  // namespace

TEST_SUITE("latent_codec") {
  TEST_CASE("encode and decode honor the 8x shape contract") {
    const LatentCodec codec = LatentCodec::make({});
    const Latent z = codec.encode(noise_image(64, 64, 1));
    CHECK(z.channels == 8);
    CHECK(z.height == 8);
    CHECK(z.width == 8);
    const Image back = codec.decode(z);
    CHECK(back.width == 64);
    CHECK(back.height == 64);
    CHECK(back.channels == 3);
    const Latent wide = codec.encode(noise_image(48, 32, 2));
    CHECK(wide.height == 4);
    CHECK(wide.width == 6);
  }

  TEST_CASE("non-multiple-of-8 sizes are rejected") {
    const LatentCodec codec = LatentCodec::make({});
    CHECK_THROWS_AS(codec.encode(noise_image(60, 64, 3)), DataError);
  }

  TEST_CASE("encoding is deterministic and uses the mean latent") {
    const LatentCodec codec = LatentCodec::make({});
    const Image img = noise_image(32, 32, 4);
    CHECK(codec.encode(img) == codec.encode(img));
    const ag::Tensor m = codec.encode_moments(image_to_tensor(img));
    const Latent z = codec.encode(img);
    for (std::size_t i = 0; i < z.data.size(); ++i) CHECK(z.data[i] == m.data()[i] * codec.latent_scale());
  }

  TEST_CASE("latent scale is undone by decode") {
    LatentCodec codec = LatentCodec::make({});
    const Image img = noise_image(32, 32, 5);
    const Image a = codec.decode(codec.encode(img));
    codec.set_latent_scale(3.5);
    const Image b = codec.decode(codec.encode(img));
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(b.data[i] == doctest::Approx(a.data[i]).epsilon(1e-12));
  }

  TEST_CASE("zero-initialized adapters leave decode bit-identical") {
    const LatentCodec codec = LatentCodec::make({});
    const DecoderAdapters ad = DecoderAdapters::make(codec, 4, 4.0, 9);
    REQUIRE(ad.layers().size() == codec.decoder_layers().size());
    for (std::size_t i = 0; i < ad.layers().size(); ++i) {
      const auto& conv = codec.decoder_layers()[i];
      const int limit = std::min(conv.out_channels(), conv.in_channels() * conv.kernel() * conv.kernel());
      CHECK(ad.layers()[i].rank() == std::min(4, limit));
      CHECK(ad.layers()[i].rank() >= 1);
      for (double v : ad.layers()[i].up.data()) CHECK(v == 0.0);
    }
    const Latent z = codec.encode(noise_image(64, 64, 6));
    CHECK(codec.decode(z, &ad) == codec.decode(z));
  }

  TEST_CASE("trained adapters change the decode") {
    const LatentCodec codec = LatentCodec::make({});
    const DecoderAdapters ad = DecoderAdapters::make(codec, 4, 4.0, 9);
    for (const auto& it : ad.params().items()) {
      ag::Tensor t = it.tensor;
      for (auto& v : t.mutable_data()) v += 0.05;
    }
    const Latent z = codec.encode(noise_image(32, 32, 7));
    CHECK_FALSE(codec.decode(z, &ad) == codec.decode(z));
  }

  TEST_CASE("freezing stops gradient flow into codec weights") {
    LatentCodec codec = LatentCodec::make({});
    codec.freeze_encoder();
    codec.freeze_decoder();
    const DecoderAdapters ad = DecoderAdapters::make(codec, 2, 2.0, 1);
    const ag::Tensor x = image_to_tensor(noise_image(16, 16, 8));
    ag::sum(codec.decode(codec.encode(x), &ad)).backward();
    for (const auto& it : codec.encoder_params().items()) CHECK_FALSE(it.tensor.has_grad());
    for (const auto& it : codec.decoder_params().items()) CHECK_FALSE(it.tensor.has_grad());
    bool any = false;
    for (const auto& it : ad.params().items()) any = any || it.tensor.has_grad();
    CHECK(any);
  }

  TEST_CASE("image and tensor layouts convert losslessly") {
    const Image a = noise_image(24, 16, 10), b = noise_image(24, 16, 11);
    const std::vector<Image> both{a, b};
    const ag::Tensor t = images_to_tensor(both);
    CHECK(t.shape() == ag::Shape{2, 3, 16, 24});
    CHECK(tensor_to_image(t, 0) == a);
    CHECK(tensor_to_image(t, 1) == b);
    CHECK(t.data()[1 * 16 * 24 + 5] == a.data[5 * 3 + 1]);
  }

  TEST_CASE("different seeds give different parameters") {
    const LatentCodec a = LatentCodec::make({.seed = 1}), b = LatentCodec::make({.seed = 2});
    CHECK(a.encoder_params().checksum() != b.encoder_params().checksum());
    CHECK(LatentCodec::make({.seed = 1}).decoder_params().checksum() == a.decoder_params().checksum());
  }

  TEST_CASE("pretraining requires at least 100 images") {
    LatentCodec codec = LatentCodec::make({});
    std::vector<Image> few(99, Image(16, 16, 3, 0.5));
    CHECK_THROWS_AS(pretrain_codec(few, {}, codec), ConfigError);
  }

  TEST_CASE("short pretraining reduces loss and freezes the encoder") {
    LatentCodec codec = LatentCodec::make({});
    std::vector<Image> corpus;
    for (int i = 0; i < 100; ++i) {
      Image img(16, 16, 3);
      for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
          for (int k = 0; k < 3; ++k) img.at(r, c, k) = 0.5 + 0.4 * std::sin(0.3 * (i % 7 + 1) * (r + 2 * k) + 0.2 * c);
      corpus.push_back(img);
    }
    CodecTrainConfig cfg;
    cfg.iterations = 60;
    cfg.batch = 4;
    cfg.min_psnr = 1000.0;
    const std::uint64_t before = codec.encoder_params().checksum();
    const CodecTrainReport r = pretrain_codec(corpus, cfg, codec);
    CHECK(r.iterations == 60);
    CHECK(r.heldout_images == 10);
    CHECK(r.train_images == 90);
    CHECK_FALSE(r.converged);
    CHECK(std::isfinite(r.heldout_psnr));
    CHECK(codec.encoder_params().checksum() != before);
    for (const auto& it : codec.encoder_params().items()) CHECK_FALSE(it.tensor.requires_grad());
  }
}
