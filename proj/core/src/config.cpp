#include "mve/config.hpp"

#include <json.hpp>
#include <set>

#include "mve/error.hpp"

namespace mve {

using nlohmann::json;

namespace {

json parse(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

void allow_keys(const json& j, const std::set<std::string>& keys, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw ConfigError(what + ": unknown key '" + k + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(what + "." + key + ": " + e.what());
  }
}

json codec_obj(const CodecConfig& c) {
  return {{"latent_channels", c.latent_channels},
          {"adapter_rank", c.adapter_rank},
          {"adapter_alpha", c.adapter_alpha},
          {"seed", c.seed}};
}

CodecConfig codec_from(const json& j) {
  const std::string w = "codec";
  allow_keys(j, {"latent_channels", "adapter_rank", "adapter_alpha", "seed"}, w);
  CodecConfig c;
  read(j, "latent_channels", c.latent_channels, w);
  read(j, "adapter_rank", c.adapter_rank, w);
  read(j, "adapter_alpha", c.adapter_alpha, w);
  read(j, "seed", c.seed, w);
  if (c.latent_channels < 1 || c.adapter_rank < 1) throw ConfigError("codec: latent_channels and adapter_rank must be >= 1");
  return c;
}

json enhancer_obj(const EnhancerConfig& c) {
  return {{"codec", codec_obj(c.codec)},
          {"denoiser",
           {{"widths", c.denoiser.widths},
            {"groups", c.denoiser.groups},
            {"heads", c.denoiser.heads},
            {"seed", c.denoiser.seed}}},
          {"timesteps", c.timesteps},
          {"tau", c.tau},
          {"cfg_scale", c.cfg_scale},
          {"use_conditions", c.use_conditions},
          {"seed", c.seed}};
}

EnhancerConfig enhancer_from(const json& j) {
  const std::string w = "model";
  allow_keys(j, {"codec", "denoiser", "timesteps", "tau", "cfg_scale", "use_conditions", "seed"}, w);
  EnhancerConfig c;
  if (j.contains("codec")) c.codec = codec_from(j.at("codec"));
  if (j.contains("denoiser")) {
    const json& d = j.at("denoiser");
    allow_keys(d, {"widths", "groups", "heads", "seed"}, "model.denoiser");
    read(d, "widths", c.denoiser.widths, "model.denoiser");
    read(d, "groups", c.denoiser.groups, "model.denoiser");
    read(d, "heads", c.denoiser.heads, "model.denoiser");
    read(d, "seed", c.denoiser.seed, "model.denoiser");
  }
  c.denoiser.latent_channels = c.codec.latent_channels;
  read(j, "timesteps", c.timesteps, w);
  read(j, "tau", c.tau, w);
  read(j, "cfg_scale", c.cfg_scale, w);
  read(j, "use_conditions", c.use_conditions, w);
  read(j, "seed", c.seed, w);
  if (c.tau < 1 || c.tau > c.timesteps) throw ConfigError("model: tau must lie in [1, timesteps]");
  return c;
}

json train_obj(const TrainConfig& c) {
  return {{"min_views", c.min_views},   {"max_views", c.max_views}, {"decode_subset", c.decode_subset},
          {"lr", c.lr},                 {"clip_norm", c.clip_norm}, {"iterations", c.iterations},
          {"dropout", c.dropout},       {"seed", c.seed},           {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_from(const json& j) {
  const std::string w = "train";
  allow_keys(j,
             {"min_views", "max_views", "decode_subset", "lr", "clip_norm", "iterations", "dropout", "seed", "log_every",
              "checkpoint_every"},
             w);
  TrainConfig c;
  read(j, "min_views", c.min_views, w);
  read(j, "max_views", c.max_views, w);
  read(j, "decode_subset", c.decode_subset, w);
  read(j, "lr", c.lr, w);
  read(j, "clip_norm", c.clip_norm, w);
  read(j, "iterations", c.iterations, w);
  read(j, "dropout", c.dropout, w);
  read(j, "seed", c.seed, w);
  read(j, "log_every", c.log_every, w);
  read(j, "checkpoint_every", c.checkpoint_every, w);
  c.validate();
  return c;
}

}  // namespace

std::string to_json(const CodecConfig& c) { return codec_obj(c).dump(); }

std::string to_json(const CodecTrainConfig& c) {
  return json{{"iterations", c.iterations}, {"batch", c.batch},       {"lr", c.lr},
              {"kl_weight", c.kl_weight},   {"holdout_fraction", c.holdout_fraction},
              {"min_psnr", c.min_psnr},     {"seed", c.seed}}
      .dump();
}

std::string to_json(const EnhancerConfig& c) { return enhancer_obj(c).dump(); }
std::string to_json(const TrainConfig& c) { return train_obj(c).dump(); }

std::string to_json(const RunEcho& e) {
  return json{{"format", "mve-run"}, {"version", 1}, {"model", enhancer_obj(e.model)}, {"train", train_obj(e.train)}}
      .dump();
}

CodecConfig parse_codec_config(const std::string& text) { return codec_from(parse(text, "codec")); }

CodecTrainConfig parse_codec_train_config(const std::string& text) {
  const json j = parse(text, "codec_train");
  const std::string w = "codec_train";
  allow_keys(j, {"iterations", "batch", "lr", "kl_weight", "holdout_fraction", "min_psnr", "seed"}, w);
  CodecTrainConfig c;
  read(j, "iterations", c.iterations, w);
  read(j, "batch", c.batch, w);
  read(j, "lr", c.lr, w);
  read(j, "kl_weight", c.kl_weight, w);
  read(j, "holdout_fraction", c.holdout_fraction, w);
  read(j, "min_psnr", c.min_psnr, w);
  read(j, "seed", c.seed, w);
  if (c.iterations < 1 || c.batch < 1 || !(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0))
    throw ConfigError("codec_train: invalid iterations, batch or holdout_fraction");
  return c;
}

EnhancerConfig parse_enhancer_config(const std::string& text) { return enhancer_from(parse(text, "model")); }
TrainConfig parse_train_config(const std::string& text) { return train_from(parse(text, "train")); }

RunEcho parse_run_echo(const std::string& text) {
  const json j = parse(text, "run echo");
  allow_keys(j, {"format", "version", "model", "train"}, "run echo");
  if (j.value("format", "") != "mve-run" || j.value("version", 0) != 1) throw ConfigError("run echo: unsupported format");
  return {enhancer_from(j.at("model")), train_from(j.at("train"))};
}

std::string codec_config_json(const LatentCodec& codec) {
  json layers = json::object();
  for (const auto& ps : {codec.encoder_params(), codec.decoder_params()})
    for (const auto& it : ps.items()) layers[it.name] = it.tensor.shape();
  return json{{"format", "mve-codec"}, {"version", 1}, {"config", codec_obj(codec.config())}, {"layers", layers}}.dump();
}

CodecConfig parse_codec_echo(const std::string& text) {
  const json j = parse(text, "codec echo");
  allow_keys(j, {"format", "version", "config", "layers"}, "codec echo");
  if (j.value("format", "") != "mve-codec" || j.value("version", 0) != 1) throw ConfigError("codec echo: unsupported format");
  return codec_from(j.at("config"));
}

}  // namespace mve
