#pragma once

// Versioned binary container for named parameter tensors with an embedded
// config echo.
//
// Little-endian layout:
//   magic "MVECKPT\0" (8 bytes), u32 version
//   str kind, str config_json, u64 config_hash, i64 step
//   u32 n_meta, n_meta x (str key, str value)      keys sorted
//   u32 n_tensors, n_tensors x (str name, u32 rank, u32 dims[rank], f64 values)
// where str is u64 length followed by raw bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mve/denoiser.hpp"

namespace mve {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(std::string_view bytes);

struct StoredTensor {
  std::string name;
  ag::Shape shape;
  std::vector<double> values;
  bool operator==(const StoredTensor&) const = default;
};

struct Checkpoint {
  std::string kind;
  std::string config_json;
  std::uint64_t config_hash = 0;
  std::int64_t step = 0;
  std::map<std::string, std::string> meta;
  std::vector<StoredTensor> tensors;

  void add(const nn::ParamSet& params);
  const StoredTensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  /// Copy stored values into every tensor of `params` (names and shapes
  /// must match).
  void load_into(const nn::ParamSet& params) const;
  bool operator==(const Checkpoint&) const = default;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Reject when the stored hash differs from fnv1a64(expected_json), unless
/// `allow_mismatch`.
void check_config(const Checkpoint& ckpt, const std::string& expected_json, bool allow_mismatch);

// ---- codec -------------------------------------------------------------------

Checkpoint codec_checkpoint(const LatentCodec& codec);
LatentCodec load_codec(const Checkpoint& ckpt);

// ---- enhancer ----------------------------------------------------------------

/// Full model parameters under kind "enhancer". `config_json` is the run
/// config echo.
Checkpoint enhancer_checkpoint(const EnhancerModel& model, const std::string& config_json, std::int64_t step);
/// Rebuild a model from `cfg` and load parameters. Rejects other kinds,
/// untrained (step 0) checkpoints unless `allow_untrained`, and config hash
/// mismatches unless `allow_mismatch`.
EnhancerModel load_enhancer(const Checkpoint& ckpt, const EnhancerConfig& cfg, const std::string& expected_json,
                            bool allow_mismatch = false, bool allow_untrained = false);

}  // namespace mve
