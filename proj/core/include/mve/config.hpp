#pragma once

// JSON (de)serialization of model and training configs. Parsers reject
// unknown keys with ConfigError.

#include <string>

#include "mve/codec.hpp"
#include "mve/denoiser.hpp"
#include "mve/trainer.hpp"

namespace mve {

struct RunEcho {
  EnhancerConfig model;
  TrainConfig train;
};

std::string to_json(const CodecConfig& c);
std::string to_json(const CodecTrainConfig& c);
std::string to_json(const EnhancerConfig& c);
std::string to_json(const TrainConfig& c);
/// Canonical echo stored in enhancer checkpoints.
std::string to_json(const RunEcho& e);

CodecConfig parse_codec_config(const std::string& json);
CodecTrainConfig parse_codec_train_config(const std::string& json);
EnhancerConfig parse_enhancer_config(const std::string& json);
TrainConfig parse_train_config(const std::string& json);
RunEcho parse_run_echo(const std::string& json);

/// Codec config plus layer shapes, as stored in codec checkpoints.
std::string codec_config_json(const LatentCodec& codec);
CodecConfig parse_codec_echo(const std::string& json);

}  // namespace mve
