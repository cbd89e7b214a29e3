#include "mve/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <ostream>
#include <set>

#include "mve/checkpoint.hpp"
#include "mve/denoiser.hpp"
#include "mve/error.hpp"
#include "mve/report.hpp"
#include "mve/trainer.hpp"

namespace mve {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t derive_seed(std::uint64_t seed, const char* tag) {
  std::uint64_t z = seed ^ fnv1a64(tag);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void allow_keys(const json& j, const std::set<std::string>& keys, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (k == "seed" && !keys.count(k)) throw ConfigError(what + ": component seeds are derived from the global seed");
    if (!keys.count(k)) throw ConfigError(what + ": unknown key '" + k + "'");
  }
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

void read_vec3(const json& j, const char* key, Vec3& out, const std::string& what) {
  if (!j.contains(key)) return;
  std::vector<double> v;
  read(j, key, v, what);
  if (v.size() != 3) throw ConfigError(what + "." + key + ": expected 3 numbers");
  out = Vec3(v[0], v[1], v[2]);
}

json vec3(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json traj_obj(const TrajectorySpec& t) {
  return {{"kind", t.kind == TrajectoryKind::ring ? "ring" : "line"},
          {"n_views", t.n_views},
          {"look_at", vec3(t.look_at)},
          {"radius_or_step", t.radius_or_step},
          {"elevation", t.elevation},
          {"start_angle", t.start_angle},
          {"line_origin", vec3(t.line_origin)},
          {"line_direction", vec3(t.line_direction)},
          {"width", t.width},
          {"height", t.height},
          {"fov_x", t.fov_x},
          {"t0", t.t0},
          {"dt", t.dt}};
}

TrajectorySpec traj_from(const json& j, ViewRole role, const std::string& w) {
  allow_keys(j,
             {"kind", "n_views", "look_at", "radius_or_step", "elevation", "start_angle", "line_origin",
              "line_direction", "width", "height", "fov_x", "t0", "dt"},
             w);
  TrajectorySpec t;
  std::string kind = "ring";
  read(j, "kind", kind, w);
  if (kind != "ring" && kind != "line") throw ConfigError(w + ".kind: expected 'ring' or 'line'");
  t.kind = kind == "ring" ? TrajectoryKind::ring : TrajectoryKind::line;
  read(j, "n_views", t.n_views, w);
  read_vec3(j, "look_at", t.look_at, w);
  read(j, "radius_or_step", t.radius_or_step, w);
  read(j, "elevation", t.elevation, w);
  read(j, "start_angle", t.start_angle, w);
  read_vec3(j, "line_origin", t.line_origin, w);
  read_vec3(j, "line_direction", t.line_direction, w);
  read(j, "width", t.width, w);
  read(j, "height", t.height, w);
  read(j, "fov_x", t.fov_x, w);
  read(j, "t0", t.t0, w);
  read(j, "dt", t.dt, w);
  t.role = role;
  return t;
}

json scene_obj(const SceneSpec& s) {
  json palette = json::array();
  for (const auto& c : s.palette) palette.push_back(vec3(c));
  return {{"count", s.count},         {"bounds", {{"lo", vec3(s.bounds.lo)}, {"hi", vec3(s.bounds.hi)}}},
          {"palette", palette},       {"min_scale", s.min_scale},
          {"max_scale", s.max_scale}, {"min_opacity", s.min_opacity},
          {"max_opacity", s.max_opacity}};
}

SceneSpec scene_from(const json& j) {
  const std::string w = "scene";
  allow_keys(j, {"count", "bounds", "palette", "min_scale", "max_scale", "min_opacity", "max_opacity"}, w);
  SceneSpec s;
  read(j, "count", s.count, w);
  if (j.contains("bounds")) {
    allow_keys(j.at("bounds"), {"lo", "hi"}, "scene.bounds");
    read_vec3(j.at("bounds"), "lo", s.bounds.lo, "scene.bounds");
    read_vec3(j.at("bounds"), "hi", s.bounds.hi, "scene.bounds");
  }
  if (j.contains("palette")) {
    std::vector<std::vector<double>> p;
    read(j, "palette", p, w);
    for (const auto& c : p) {
      if (c.size() != 3) throw ConfigError("scene.palette: colors need 3 components");
      s.palette.emplace_back(c[0], c[1], c[2]);
    }
  }
  read(j, "min_scale", s.min_scale, w);
  read(j, "max_scale", s.max_scale, w);
  read(j, "min_opacity", s.min_opacity, w);
  read(j, "max_opacity", s.max_opacity, w);
  return s;
}

json strip_seed(json j) {
  j.erase("seed");
  if (j.contains("codec")) j["codec"].erase("seed");
  if (j.contains("denoiser")) j["denoiser"].erase("seed");
  return j;
}

void reject_seed(const json& j, const std::string& what) {
  if (j.contains("seed")) throw ConfigError(what + ": component seeds are derived from the global seed");
}

void note(const PipelineContext& ctx, const std::string& msg) {
  if (ctx.log) *ctx.log << msg << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_echo(const RunConfig& cfg, const PipelineContext& ctx) {
  fs::create_directories(ctx.out);
  write_text(ctx.out / "config.echo.json", to_json(cfg) + "\n");
}

void require_file(const fs::path& p, const char* stage) {
  if (!fs::exists(p)) throw DataError("missing " + p.string() + " (run '" + stage + "' first)");
}

std::string idx(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return buf;
}

/// [begin, end) of target group k.
std::pair<int, int> group_range(int n_targets, int groups, int k) {
  return {k * n_targets / groups, (k + 1) * n_targets / groups};
}

RenderOptions render_opts(const RunConfig& cfg) {
  RenderOptions o;
  o.threads = cfg.threads;
  return o;
}

fs::path checkpoint_path(const PipelineContext& ctx) { return ctx.checkpoint.value_or(ctx.out / "model.ckpt"); }

std::vector<Packet> read_packets(const RunConfig& cfg, const PipelineContext& ctx) {
  std::vector<Packet> out;
  for (std::size_t k = 0; k < cfg.severities.size(); ++k) {
    const fs::path p = ctx.out / "packets" / ("packet_" + idx(static_cast<int>(k)) + ".mvepkt");
    require_file(p, "pack");
    out.push_back(read_packet(p));
  }
  return out;
}

}  // namespace

int RunConfig::total_targets() const {
  return target_layout == TargetLayout::split ? target.n_views : target.n_views * static_cast<int>(severities.size());
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  scene.seed = derive_seed(s, "scene");
  model.seed = derive_seed(s, "model");
  model.codec.seed = derive_seed(s, "codec");
  model.denoiser.seed = derive_seed(s, "denoiser");
  codec_train.seed = derive_seed(s, "codec_train");
  train.seed = derive_seed(s, "train");
}

void RunConfig::validate() const {
  if (severities.empty()) throw ConfigError("severities: need at least one value");
  for (double s : severities)
    if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("severities: values must lie in [0,1]");
  if (target_layout == TargetLayout::split && target.n_views < static_cast<int>(severities.size()))
    throw ConfigError("target.n_views must be >= the number of severities");
  if (reference.n_views < 1) throw ConfigError("reference.n_views must be >= 1");
  if (reference.width != target.width || reference.height != target.height)
    throw ConfigError("reference and target image sizes differ");
  if (target.width % 8 != 0 || target.height % 8 != 0 || (target.width / 8) % 4 != 0 || (target.height / 8) % 4 != 0)
    throw ConfigError("image sizes must be multiples of 32");
  if (n_ref < 1) throw ConfigError("n_ref must be >= 1");
  if (bounds.min_views < 2 || bounds.max_views < bounds.min_views) throw ConfigError("bounds: need 2 <= min_views <= max_views");
  if (corpus.scenes < 1 || corpus.views_per_scene < 1) throw ConfigError("corpus: scenes and views_per_scene must be >= 1");
  if (eval.n_buckets < 0 || eval.horizon < 0.0) throw ConfigError("eval: n_buckets and horizon must be >= 0");
  if (target.t0 < 0.0 || target.dt <= 0.0) throw ConfigError("target: need t0 >= 0 and dt > 0");
  train.validate();
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  allow_keys(j,
             {"format", "version", "seed", "out", "scene", "reference", "target", "severities", "target_layout", "n_ref", "bounds", "corpus",
              "codec_train", "model", "train", "eval"},
             "run config");
  if (j.value("format", "mve-run-config") != "mve-run-config") throw ConfigError("run config: unknown format");
  if (j.value("version", 1) != 1) throw ConfigError("run config: unsupported version " + j.at("version").dump());
  RunConfig c;
  const std::string w = "run config";
  read(j, "seed", c.seed, w);
  read(j, "out", c.out, w);
  if (j.contains("scene")) c.scene = scene_from(j.at("scene"));
  c.reference.role = ViewRole::reference;
  c.target.role = ViewRole::target;
  if (j.contains("reference")) c.reference = traj_from(j.at("reference"), ViewRole::reference, "reference");
  if (j.contains("target")) c.target = traj_from(j.at("target"), ViewRole::target, "target");
  read(j, "severities", c.severities, w);
  if (j.contains("target_layout")) {
    const std::string layout = j.at("target_layout").is_string() ? j.at("target_layout").get<std::string>() : "";
    if (layout == "split")
      c.target_layout = TargetLayout::split;
    else if (layout == "traversals")
      c.target_layout = TargetLayout::traversals;
    else
      throw ConfigError("run config: target_layout must be \"split\" or \"traversals\"");
  }
  read(j, "n_ref", c.n_ref, w);
  if (j.contains("bounds")) {
    allow_keys(j.at("bounds"), {"min_views", "max_views"}, "bounds");
    read(j.at("bounds"), "min_views", c.bounds.min_views, "bounds");
    read(j.at("bounds"), "max_views", c.bounds.max_views, "bounds");
  }
  if (j.contains("corpus")) {
    const json& cj = j.at("corpus");
    allow_keys(cj, {"scenes", "views_per_scene", "max_severity"}, "corpus");
    read(cj, "scenes", c.corpus.scenes, "corpus");
    read(cj, "views_per_scene", c.corpus.views_per_scene, "corpus");
    read(cj, "max_severity", c.corpus.max_severity, "corpus");
  }
  if (j.contains("codec_train")) {
    reject_seed(j.at("codec_train"), "codec_train");
    c.codec_train = parse_codec_train_config(j.at("codec_train").dump());
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_seed(m, "model");
    if (m.contains("codec")) reject_seed(m.at("codec"), "model.codec");
    if (m.contains("denoiser")) reject_seed(m.at("denoiser"), "model.denoiser");
    c.model = parse_enhancer_config(m.dump());
  }
  if (j.contains("train")) {
    reject_seed(j.at("train"), "train");
    c.train = parse_train_config(j.at("train").dump());
  }
  if (j.contains("eval")) {
    allow_keys(j.at("eval"), {"n_buckets", "horizon"}, "eval");
    read(j.at("eval"), "n_buckets", c.eval.n_buckets, "eval");
    read(j.at("eval"), "horizon", c.eval.horizon, "eval");
  }
  c.apply_seed(c.seed);
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::string to_json(const RunConfig& c) {
  json j{{"format", "mve-run-config"},
         {"version", 1},
         {"seed", c.seed},
         {"out", c.out},
         {"scene", scene_obj(c.scene)},
         {"reference", traj_obj(c.reference)},
         {"target", traj_obj(c.target)},
         {"severities", c.severities},
         {"target_layout", c.target_layout == TargetLayout::split ? "split" : "traversals"},
         {"n_ref", c.n_ref},
         {"bounds", {{"min_views", c.bounds.min_views}, {"max_views", c.bounds.max_views}}},
         {"corpus",
          {{"scenes", c.corpus.scenes},
           {"views_per_scene", c.corpus.views_per_scene},
           {"max_severity", c.corpus.max_severity}}},
         {"codec_train", strip_seed(json::parse(to_json(c.codec_train)))},
         {"model", strip_seed(json::parse(to_json(c.model)))},
         {"train", strip_seed(json::parse(to_json(c.train)))},
         {"eval", {{"n_buckets", c.eval.n_buckets}, {"horizon", c.eval.horizon}}}};
  return j.dump(2);
}

RunConfig demo_config() {
  RunConfig c;
  c.reference.role = ViewRole::reference;
  c.reference.n_views = 16;
  c.reference.radius_or_step = 4.0;
  c.reference.elevation = 1.5;
  c.target.role = ViewRole::target;
  c.target.n_views = 4;
  c.target.radius_or_step = 3.6;
  c.target.elevation = 1.0;
  c.target.start_angle = 0.2;
  c.severities = {0.6};
  c.train.iterations = 300;
  c.train.lr = 1e-3;
  c.apply_seed(1);
  return c;
}

std::string model_echo(const RunConfig& cfg) { return to_json(RunEcho{cfg.model, cfg.train}); }

void cmd_gen(const RunConfig& cfg, const PipelineContext& ctx) {
  cfg.validate();
  write_echo(cfg, ctx);
  const GaussianScene clean = generate_scene(cfg.scene);
  save_scene(clean, ctx.out / "scene.json");
  for (std::size_t k = 0; k < cfg.severities.size(); ++k) {
    CorruptionStats st;
    const GaussianScene d = corrupt_scene(clean, cfg.severities[k], derive_seed(cfg.seed, "corrupt"), &st);
    save_scene(d, ctx.out / ("degraded_" + idx(static_cast<int>(k)) + ".json"));
    note(ctx, "severity " + std::to_string(cfg.severities[k]) + ": removed " + std::to_string(st.removed) +
                  ", floaters " + std::to_string(st.floaters));
  }
  save_cameras(sample_trajectory(cfg.reference), ctx.out / "cameras_reference.json");
  std::vector<CameraView> targets = sample_trajectory(cfg.target);
  if (cfg.target_layout == TargetLayout::traversals) {
    const std::vector<CameraView> pass = targets;
    const double shift = cfg.target.n_views * cfg.target.dt;
    for (std::size_t k = 1; k < cfg.severities.size(); ++k)
      for (CameraView c : pass) {
        c.timestamp += static_cast<double>(k) * shift;
        targets.push_back(c);
      }
  }
  save_cameras(targets, ctx.out / "cameras_target.json");
  note(ctx, "gen: " + std::to_string(clean.primitives.size()) + " primitives, " + std::to_string(cfg.reference.n_views) +
                " reference and " + std::to_string(targets.size()) + " target cameras");
}

namespace {

struct GenOutputs {
  GaussianScene clean;
  std::vector<GaussianScene> degraded;
  std::vector<CameraView> refs, targets;
};

GenOutputs read_gen(const RunConfig& cfg, const PipelineContext& ctx) {
  GenOutputs g;
  require_file(ctx.out / "scene.json", "gen");
  g.clean = load_scene(ctx.out / "scene.json");
  for (std::size_t k = 0; k < cfg.severities.size(); ++k) {
    const fs::path p = ctx.out / ("degraded_" + idx(static_cast<int>(k)) + ".json");
    require_file(p, "gen");
    g.degraded.push_back(load_scene(p));
  }
  require_file(ctx.out / "cameras_reference.json", "gen");
  require_file(ctx.out / "cameras_target.json", "gen");
  g.refs = load_cameras(ctx.out / "cameras_reference.json");
  g.targets = load_cameras(ctx.out / "cameras_target.json");
  if (static_cast<int>(g.targets.size()) < static_cast<int>(cfg.severities.size()))
    throw DataError("fewer target cameras than severities");
  return g;
}

void save_rgb(const RenderedImage& img, const fs::path& stem) {
  write_rgb(img, stem.string() + ".mveimg");
  write_ppm(img, stem.string() + ".ppm");
}

}  // namespace

void cmd_render(const RunConfig& cfg, const PipelineContext& ctx) {
  const GenOutputs g = read_gen(cfg, ctx);
  write_echo(cfg, ctx);
  const fs::path dir = ctx.out / "renders";
  fs::create_directories(dir);
  const RenderOptions opts = render_opts(cfg);
  for (std::size_t i = 0; i < g.refs.size(); ++i) {
    const std::string stem = "ref_" + idx(static_cast<int>(i));
    save_rgb(render_rgb(g.clean, g.refs[i], opts), dir / (stem + "_rgb"));
    write_cmap(render_cmap(g.clean, g.refs[i], opts), dir / (stem + "_cmap.mveimg"));
  }
  const int n_t = static_cast<int>(g.targets.size()), groups = static_cast<int>(cfg.severities.size());
  for (int k = 0; k < groups; ++k) {
    const auto [b, e] = group_range(n_t, groups, k);
    for (int i = b; i < e; ++i) {
      const std::string stem = "target_" + idx(i);
      save_rgb(render_rgb(g.clean, g.targets[i], opts), dir / (stem + "_clean"));
      save_rgb(render_rgb(g.degraded[k], g.targets[i], opts), dir / (stem + "_degraded"));
      write_cmap(render_cmap(g.degraded[k], g.targets[i], opts), dir / (stem + "_cmap.mveimg"));
    }
  }
  note(ctx, "render: wrote " + std::to_string(g.refs.size() + 2 * g.targets.size()) + " RGB images to " + dir.string());
}

void cmd_pack(const RunConfig& cfg, const PipelineContext& ctx) {
  const GenOutputs g = read_gen(cfg, ctx);
  write_echo(cfg, ctx);
  const fs::path dir = ctx.out / "packets";
  fs::create_directories(dir);
  const int n_t = static_cast<int>(g.targets.size()), groups = static_cast<int>(cfg.severities.size());
  for (int k = 0; k < groups; ++k) {
    const auto [b, e] = group_range(n_t, groups, k);
    const std::vector<CameraView> targets(g.targets.begin() + b, g.targets.begin() + e);
    std::vector<CameraView> refs;
    for (int i : select_references(targets, g.refs, cfg.n_ref)) refs.push_back(g.refs[i]);
    const Packet p = assemble_packet(refs, targets, {.clean = &g.clean, .degraded = &g.degraded[k], .render = render_opts(cfg)},
                                     cfg.bounds);
    write_packet(p, dir / ("packet_" + idx(k) + ".mvepkt"));
    note(ctx, "pack: packet " + std::to_string(k) + " with " + std::to_string(p.n_ref) + " references and " +
                  std::to_string(p.n_target) + " targets (severity " + std::to_string(cfg.severities[k]) + ")");
  }
}

std::vector<RenderedImage> codec_corpus(const RunConfig& cfg) {
  std::vector<RenderedImage> out;
  Rng rng(derive_seed(cfg.seed, "corpus"));
  const RenderOptions opts = render_opts(cfg);
  for (int s = 0; s < cfg.corpus.scenes; ++s) {
    SceneSpec spec = cfg.scene;
    spec.seed = rng.next_u64();
    const GaussianScene clean = generate_scene(spec);
    const GaussianScene degraded = corrupt_scene(clean, rng.uniform(0.0, cfg.corpus.max_severity), rng.next_u64());
    for (int v = 0; v < cfg.corpus.views_per_scene; ++v) {
      TrajectorySpec t = cfg.target;
      t.n_views = 2;
      t.radius_or_step = rng.uniform(3.0, 5.0);
      t.elevation = rng.uniform(0.0, 2.5);
      t.start_angle = rng.uniform(0.0, 6.283185307179586);
      t.kind = TrajectoryKind::ring;
      const CameraView cam = sample_trajectory(t).front();
      out.push_back(render_rgb(v % 2 == 0 ? clean : degraded, cam, opts));
    }
  }
  return out;
}

LatentCodec obtain_codec(const RunConfig& cfg, const PipelineContext& ctx, CodecTrainReport* report) {
  const fs::path path = ctx.codec.value_or(ctx.out / "codec.ckpt");
  if (fs::exists(path)) {
    const Checkpoint ck = read_checkpoint(path);
    LatentCodec codec = load_codec(ck);
    if (to_json(codec.config()) != to_json(cfg.model.codec) && !ctx.allow_config_mismatch)
      throw ConfigError("codec checkpoint " + path.string() + " was built with a different codec config");
    note(ctx, "codec: loaded " + path.string());
    return codec;
  }
  note(ctx, "codec: pretraining on synthetic corpus");
  const std::vector<RenderedImage> corpus = codec_corpus(cfg);
  LatentCodec codec = LatentCodec::make(cfg.model.codec);
  const CodecTrainReport r = pretrain_codec(corpus, cfg.codec_train, codec);
  if (report) *report = r;
  note(ctx, "codec: held-out PSNR " + std::to_string(r.heldout_psnr) + " dB over " + std::to_string(r.heldout_images) +
                " images");
  if (!r.converged)
    throw NumericalError("codec pretraining did not reach the " + std::to_string(cfg.codec_train.min_psnr) +
                         " dB gate (held-out PSNR " + std::to_string(r.heldout_psnr) + " dB)");
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  write_checkpoint(codec_checkpoint(codec), path);
  return codec;
}

TrainOutcome cmd_train(const RunConfig& cfg, const PipelineContext& ctx) {
  const std::vector<Packet> packets = read_packets(cfg, ctx);
  write_echo(cfg, ctx);
  LatentCodec codec = obtain_codec(cfg, ctx);
  EnhancerModel model = EnhancerModel::make(cfg.model, std::move(codec));
  std::vector<PreparedPacket> data;
  for (const auto& p : packets) data.push_back(prepare_packet(model, p));
  Trainer trainer(model, cfg.train, model_echo(cfg));
  const fs::path ckpt = checkpoint_path(ctx);
  if (ctx.resume && fs::exists(ckpt)) {
    trainer.restore(read_checkpoint(ckpt), ctx.allow_config_mismatch);
    note(ctx, "train: resumed at iteration " + std::to_string(trainer.iteration()));
  }
  TrainLog log;
  log.metrics_csv = ctx.out / "train_metrics.csv";
  log.checkpoint = ckpt;
  const int every = std::max(1, cfg.train.iterations / 10);
  log.on_step = [&](std::int64_t it, const StepMetrics& m) {
    if ((it + 1) % every == 0 || it == 0)
      note(ctx, "train: iteration " + std::to_string(it + 1) + " loss " + std::to_string(m.total_loss) + " (latent " +
                    std::to_string(m.latent_loss) + ", pixel " + std::to_string(m.pixel_loss) + ")");
  };
  const TrainSummary s = train(trainer, data, log);
  TrainOutcome o;
  o.iterations = static_cast<int>(trainer.iteration());
  o.skipped = s.skipped;
  if (!s.history.empty()) {
    o.initial_loss = s.history.front().total_loss;
    o.final_loss = s.history.back().total_loss;
  }
  note(ctx, "train: wrote " + ckpt.string());
  return o;
}

void cmd_enhance(const RunConfig& cfg, const PipelineContext& ctx) {
  const std::vector<Packet> packets = read_packets(cfg, ctx);
  const fs::path ckpt = checkpoint_path(ctx);
  require_file(ckpt, "train");
  write_echo(cfg, ctx);
  const EnhancerModel model = load_enhancer(read_checkpoint(ckpt), cfg.model, model_echo(cfg), ctx.allow_config_mismatch);
  const fs::path dir = ctx.out / "enhanced";
  fs::create_directories(dir);
  const int n_t = cfg.total_targets(), groups = static_cast<int>(packets.size());
  for (int k = 0; k < groups; ++k) {
    const std::vector<RenderedImage> out = enhance(model, packets[k]);
    const int b = group_range(n_t, groups, k).first;
    for (std::size_t i = 0; i < out.size(); ++i) save_rgb(out[i], dir / ("target_" + idx(b + static_cast<int>(i))));
  }
  note(ctx, "enhance: wrote " + std::to_string(n_t) + " enhanced views to " + dir.string());
}

EvalOutcome cmd_eval(const RunConfig& cfg, const PipelineContext& ctx) {
  const std::vector<Packet> packets = read_packets(cfg, ctx);
  write_echo(cfg, ctx);
  EvalOutcome o;
  const int n_t = cfg.total_targets(), groups = static_cast<int>(packets.size());
  const std::string scene = "scene-" + std::to_string(cfg.seed);
  double last_t = 0.0;
  double sum_d = 0.0, sum_e = 0.0;
  for (int k = 0; k < groups; ++k) {
    const int b = group_range(n_t, groups, k).first;
    const std::vector<int> targets = packets[k].target_indices();
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const PacketView& v = packets[k].views[targets[i]];
      if (!v.ground_truth) throw DataError("eval: packet target without ground truth");
      const int view = b + static_cast<int>(i);
      const fs::path enhanced = ctx.out / "enhanced" / ("target_" + idx(view) + ".mveimg");
      require_file(enhanced, "enhance");
      const RenderedImage e = read_float_image(enhanced);
      o.rows.push_back(measure(v.rgb, *v.ground_truth, scene, view, v.camera.timestamp, "distorted"));
      o.rows.push_back(measure(e, *v.ground_truth, scene, view, v.camera.timestamp, "enhanced"));
      sum_d += o.rows[o.rows.size() - 2].psnr;
      sum_e += o.rows.back().psnr;
      last_t = std::max(last_t, v.camera.timestamp);
    }
  }
  const double n = static_cast<double>(o.rows.size() / 2);
  o.distorted_psnr = sum_d / n;
  o.enhanced_psnr = sum_e / n;
  ReportOptions ro;
  ro.n_buckets = cfg.eval.n_buckets > 0 ? cfg.eval.n_buckets : groups;
  ro.horizon = cfg.eval.horizon > 0.0 ? cfg.eval.horizon : last_t + cfg.target.dt;
  write_report(o.rows, ReportFormat::Csv, ctx.out / "metrics.csv", ro);
  write_report(o.rows, ReportFormat::Table, ctx.out / "metrics_table.txt", ro);
  write_report(o.rows, ReportFormat::Plot, ctx.out / "metrics_plot.svg", ro);
  note(ctx, "eval: mean PSNR distorted " + std::to_string(o.distorted_psnr) + " dB, enhanced " +
                std::to_string(o.enhanced_psnr) + " dB");
  note(ctx, bucket_table(o.rows, ro.n_buckets, ro.horizon));
  return o;
}

EvalOutcome run_demo(const RunConfig& cfg, const PipelineContext& ctx) {
  cmd_gen(cfg, ctx);
  cmd_render(cfg, ctx);
  cmd_pack(cfg, ctx);
  cmd_train(cfg, ctx);
  cmd_enhance(cfg, ctx);
  return cmd_eval(cfg, ctx);
}

}  // namespace mve
