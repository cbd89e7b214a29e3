#include "mve/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "binary_io.hpp"
#include "mve/config.hpp"
#include "mve/error.hpp"

namespace mve {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'E', 'C', 'K', 'P', 'T', '\0'};

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void Checkpoint::add(const nn::ParamSet& params) {
  for (const auto& it : params.items()) {
    if (has(it.name)) throw std::invalid_argument("checkpoint: duplicate tensor " + it.name);
    tensors.push_back({it.name, it.tensor.shape(), it.tensor.values()});
  }
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const StoredTensor& t) { return t.name == name; });
}

const StoredTensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw DataError("checkpoint: missing tensor " + name);
}

void Checkpoint::load_into(const nn::ParamSet& params) const {
  for (const auto& it : params.items()) {
    const StoredTensor& s = get(it.name);
    if (s.shape != it.tensor.shape())
      throw DataError("checkpoint: tensor " + it.name + " has shape " + ag::shape_str(s.shape) + ", model expects " +
                      ag::shape_str(it.tensor.shape()));
    ag::Tensor t = it.tensor;
    std::copy(s.values.begin(), s.values.end(), t.mutable_data().begin());
  }
}

std::string serialize_checkpoint(const Checkpoint& c) {
  detail::Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(c.kind);
  w.str(c.config_json);
  w.u64(c.config_hash);
  w.u64(static_cast<std::uint64_t>(c.step));
  w.u32(static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (ag::numel_of(t.shape) != t.values.size()) throw std::invalid_argument("checkpoint: tensor " + t.name + " size mismatch");
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double x : t.values) w.f64(x);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::Reader r(bytes, "checkpoint");
  r.need(sizeof kMagic);
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw DataError("not a checkpoint file (bad magic)");
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  Checkpoint c;
  c.kind = r.str();
  c.config_json = r.str();
  c.config_hash = r.u64();
  c.step = static_cast<std::int64_t>(r.u64());
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    c.meta[k] = r.str();
  }
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    StoredTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw DataError("checkpoint: implausible tensor rank");
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<int>(r.u32()));
    const std::size_t count = ag::numel_of(t.shape);
    r.need(count * 8);
    t.values.resize(count);
    for (auto& x : t.values) x = r.f64();
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return c;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  detail::write_file(path.string(), serialize_checkpoint(ckpt), "checkpoint");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path.string(), "checkpoint"));
}

void check_config(const Checkpoint& ckpt, const std::string& expected_json, bool allow_mismatch) {
  const std::uint64_t want = fnv1a64(expected_json);
  if (ckpt.config_hash != fnv1a64(ckpt.config_json))
    throw DataError("checkpoint: stored config echo does not match its hash");
  if (ckpt.config_hash != want && !allow_mismatch)
    throw ConfigError("checkpoint config hash " + hex(ckpt.config_hash) + " does not match current config hash " +
                      hex(want) + " (pass the override flag to load anyway)");
}

Checkpoint codec_checkpoint(const LatentCodec& codec) {
  Checkpoint c;
  c.kind = "codec";
  c.config_json = codec_config_json(codec);
  c.config_hash = fnv1a64(c.config_json);
  c.add(codec.encoder_params());
  c.add(codec.decoder_params());
  c.tensors.push_back({"codec.latent_scale", {1}, {codec.latent_scale()}});
  return c;
}

LatentCodec load_codec(const Checkpoint& ckpt) {
  if (ckpt.kind != "codec" && ckpt.kind != "enhancer")
    throw DataError("checkpoint kind '" + ckpt.kind + "' does not contain a codec");
  const CodecConfig cfg = ckpt.kind == "codec" ? parse_codec_echo(ckpt.config_json)
                                                : parse_run_echo(ckpt.config_json).model.codec;
  LatentCodec codec = LatentCodec::make(cfg);
  ckpt.load_into(codec.encoder_params());
  ckpt.load_into(codec.decoder_params());
  codec.set_latent_scale(ckpt.get("codec.latent_scale").values.at(0));
  codec.freeze_encoder();
  return codec;
}

Checkpoint enhancer_checkpoint(const EnhancerModel& model, const std::string& config_json, std::int64_t step) {
  Checkpoint c;
  c.kind = "enhancer";
  c.config_json = config_json;
  c.config_hash = fnv1a64(config_json);
  c.step = step;
  c.add(model.all_params());
  c.tensors.push_back({"codec.latent_scale", {1}, {model.codec.latent_scale()}});
  return c;
}

EnhancerModel load_enhancer(const Checkpoint& ckpt, const EnhancerConfig& cfg, const std::string& expected_json,
                            bool allow_mismatch, bool allow_untrained) {
  if (ckpt.kind != "enhancer")
    throw DataError("checkpoint kind '" + ckpt.kind + "' is not an enhancer checkpoint (format version " +
                    std::to_string(kCheckpointVersion) + ")");
  check_config(ckpt, expected_json, allow_mismatch);
  if (ckpt.step <= 0 && !allow_untrained) throw DataError("checkpoint holds an untrained model (step 0)");
  LatentCodec codec = LatentCodec::make(cfg.codec);
  ckpt.load_into(codec.encoder_params());
  ckpt.load_into(codec.decoder_params());
  codec.set_latent_scale(ckpt.get("codec.latent_scale").values.at(0));
  EnhancerModel m = EnhancerModel::make(cfg, std::move(codec));
  ckpt.load_into(m.trainable_params());
  return m;
}

}  // namespace mve
