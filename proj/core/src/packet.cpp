#include "mve/packet.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "binary_io.hpp"
#include "mve/error.hpp"

namespace mve {

bool operator==(const IndicatorMask& a, const IndicatorMask& b) {
  return a.height == b.height && a.width == b.width && a.value == b.value;
}

double view_overlap_score(const CameraView& a, const CameraView& b, double max_pairwise_dist, double alpha,
                          double beta) {
  if (max_pairwise_dist < 0.0) throw std::invalid_argument("view_overlap_score: negative max distance");
  const Vec3 va = a.world_to_camera.rotation.row(2).transpose();
  const Vec3 vb = b.world_to_camera.rotation.row(2).transpose();
  const double na = va.norm(), nb = vb.norm();
  if (na < 1e-12 || nb < 1e-12) throw std::invalid_argument("view_overlap_score: zero-length view direction");
  const double cosine = va.dot(vb) / (na * nb);
  const double dist_term =
      max_pairwise_dist < 1e-9 ? 1.0 : 1.0 - (a.center() - b.center()).norm() / max_pairwise_dist;
  return alpha * cosine + beta * dist_term;
}

std::vector<int> select_references(const std::vector<CameraView>& targets, const std::vector<CameraView>& pool, int n,
                                   double alpha, double beta) {
  if (targets.empty()) throw std::invalid_argument("select_references: no targets");
  if (pool.empty()) throw std::invalid_argument("select_references: empty pool");
  if (n < 1) throw std::invalid_argument("select_references: N must be >= 1");

  std::vector<CameraView> all = targets;
  all.insert(all.end(), pool.begin(), pool.end());
  const double max_d = max_pairwise_distance(all);

  std::vector<double> score(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& t : targets) best = std::max(best, view_overlap_score(pool[i], t, max_d, alpha, beta));
    score[i] = best;
  }
  std::vector<int> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return score[a] > score[b]; });
  idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(n)));
  return idx;
}

std::vector<int> Packet::reference_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (views[i].camera.role == ViewRole::reference) out.push_back(i);
  return out;
}

std::vector<int> Packet::target_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (views[i].camera.role == ViewRole::target) out.push_back(i);
  return out;
}

void Packet::validate() const {
  if (n_ref < 1 || n_target < 1) throw DataError("packet needs at least one reference and one target view");
  if (size() != n_ref + n_target) throw DataError("packet view count does not match n_ref + n_target");
  if (anchor_index < 0 || anchor_index >= size() || views[anchor_index].camera.role != ViewRole::target)
    throw DataError("packet anchor must index a target view");
  if (static_cast<int>(reference_indices().size()) != n_ref) throw DataError("packet reference count mismatch");
  for (const auto& v : views) {
    if (v.rgb.width != width || v.rgb.height != height || v.rgb.channels != 3 || v.cmap.width() != width ||
        v.cmap.height() != height || v.plucker.width != width || v.plucker.height != height)
      throw DataError("packet views do not share H x W");
    if (v.ground_truth && !v.ground_truth->same_dims(v.rgb)) throw DataError("ground truth dims mismatch");
  }
}

Packet assemble_packet(const std::vector<CameraView>& refs, const std::vector<CameraView>& targets,
                       const PacketSources& sources, const PacketBounds& bounds) {
  if (refs.empty() || targets.empty()) throw ConfigError("packet needs at least one reference and one target view");
  const int total = static_cast<int>(refs.size() + targets.size());
  if (total < bounds.min_views || total > bounds.max_views)
    throw ConfigError("packet size " + std::to_string(total) + " outside [" + std::to_string(bounds.min_views) + ", " +
                      std::to_string(bounds.max_views) + "]");
  if (!sources.clean || !sources.degraded) throw std::invalid_argument("assemble_packet: missing scene sources");

  std::vector<CameraView> cams;
  for (auto c : refs) {
    c.role = ViewRole::reference;
    cams.push_back(c);
  }
  for (auto c : targets) {
    c.role = ViewRole::target;
    cams.push_back(c);
  }
  const int w = cams[0].width, h = cams[0].height;
  for (const auto& c : cams)
    if (c.width != w || c.height != h) throw ConfigError("packet cameras must share image size");
  if (w % 8 != 0 || h % 8 != 0) throw ConfigError("packet image size must be a multiple of 8");

  const std::size_t anchor = refs.size();
  const NormalizedPoses norm = normalize_poses(cams, anchor);

  Packet p;
  p.n_ref = static_cast<int>(refs.size());
  p.n_target = static_cast<int>(targets.size());
  p.anchor_index = static_cast<int>(anchor);
  p.scale = norm.scale;
  p.width = w;
  p.height = h;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const bool is_target = cams[i].role == ViewRole::target;
    PacketView v;
    v.camera = norm.cameras[i];
    v.rgb = render_rgb(is_target ? *sources.degraded : *sources.clean, cams[i], sources.render);
    if (is_target) v.ground_truth = render_rgb(*sources.clean, cams[i], sources.render);
    v.cmap = transform_cmap(render_cmap(*sources.degraded, cams[i], sources.render), norm.anchor_from_world, norm.scale);
    v.plucker = plucker_field(v.camera, h, w);
    v.mask = IndicatorMask::for_role(cams[i].role, h, w);
    p.views.push_back(std::move(v));
  }
  p.validate();
  return p;
}

// ---- container ---------------------------------------------------------------

namespace {

constexpr char kMagic[7] = {'M', 'V', 'E', 'P', 'K', 'T', '\0'};
constexpr std::uint8_t kLayoutCode = 1;

using detail::Reader;
using detail::Writer;

void put_samples(Writer& w, const std::vector<double>& v) {
  for (double x : v) w.f32(x);
}

void get_samples(Reader& r, std::vector<double>& v) {
  for (auto& x : v) x = r.f32();
}

}  // namespace

std::string serialize_packet(const Packet& p) {
  p.validate();
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u8(kPacketVersion);
  w.u32(static_cast<std::uint32_t>(p.n_ref));
  w.u32(static_cast<std::uint32_t>(p.n_target));
  w.u32(static_cast<std::uint32_t>(p.anchor_index));
  w.u32(static_cast<std::uint32_t>(p.width));
  w.u32(static_cast<std::uint32_t>(p.height));
  w.f64(p.scale);
  w.u8(kLayoutCode);
  for (const auto& v : p.views) {
    const Mat4 m = v.camera.world_to_camera.matrix();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) w.f64(m(r, c));
    const auto& k = v.camera.intrinsics;
    for (double x : {k.fx, k.fy, k.cx, k.cy}) w.f64(x);
    w.u8(static_cast<std::uint8_t>(v.camera.role));
    w.f64(v.camera.timestamp);
    w.u8(v.ground_truth ? 1 : 0);
    put_samples(w, v.rgb.data);
    for (std::size_t q = 0; q < v.cmap.coords.pixel_count(); ++q) {
      for (int c = 0; c < 3; ++c) w.f32(v.cmap.coords.data[q * 3 + c]);
      w.f32(v.cmap.validity.data[q]);
    }
    put_samples(w, v.plucker.data);
    if (v.ground_truth) put_samples(w, v.ground_truth->data);
  }
  return w.take();
}

Packet deserialize_packet(const std::string& bytes) {
  Reader r(bytes, "packet file");
  r.need(sizeof kMagic);
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw DataError("not a packet file (bad magic)");
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.u8();
  const std::uint8_t version = r.u8();
  if (version != kPacketVersion) throw DataError("unsupported packet version " + std::to_string(version));
  Packet p;
  p.n_ref = static_cast<int>(r.u32());
  p.n_target = static_cast<int>(r.u32());
  p.anchor_index = static_cast<int>(r.u32());
  p.width = static_cast<int>(r.u32());
  p.height = static_cast<int>(r.u32());
  p.scale = r.f64();
  if (r.u8() != kLayoutCode) throw DataError("unknown packet channel layout");
  if (p.n_ref < 1 || p.n_target < 1 || p.n_ref + p.n_target > 4096 || p.width <= 0 || p.height <= 0 ||
      p.width % 8 != 0 || p.height % 8 != 0)
    throw DataError("implausible packet header");
  const int w = p.width, h = p.height;
  for (int i = 0; i < p.n_ref + p.n_target; ++i) {
    PacketView v;
    Mat4 m;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) m(a, b) = r.f64();
    v.camera.world_to_camera = RigidTransform::from_matrix(m);
    v.camera.intrinsics.fx = r.f64();
    v.camera.intrinsics.fy = r.f64();
    v.camera.intrinsics.cx = r.f64();
    v.camera.intrinsics.cy = r.f64();
    const std::uint8_t role = r.u8();
    if (role > 1) throw DataError("bad role byte in packet");
    v.camera.role = static_cast<ViewRole>(role);
    v.camera.timestamp = r.f64();
    v.camera.width = w;
    v.camera.height = h;
    const bool has_gt = r.u8() != 0;
    v.rgb = Image(w, h, 3);
    get_samples(r, v.rgb.data);
    v.cmap = CMap{Image(w, h, 3), Image(w, h, 1)};
    for (std::size_t q = 0; q < v.cmap.coords.pixel_count(); ++q) {
      for (int c = 0; c < 3; ++c) v.cmap.coords.data[q * 3 + c] = r.f32();
      v.cmap.validity.data[q] = r.f32();
    }
    v.plucker = Image(w, h, 6);
    get_samples(r, v.plucker.data);
    if (has_gt) {
      v.ground_truth = Image(w, h, 3);
      get_samples(r, v.ground_truth->data);
    }
    v.mask = IndicatorMask::for_role(v.camera.role, h, w);
    p.views.push_back(std::move(v));
  }
  if (!r.done()) throw DataError("trailing bytes after packet payload");
  p.validate();
  return p;
}

void write_packet(const Packet& packet, const std::filesystem::path& path) {
  detail::write_file(path.string(), serialize_packet(packet), "packet");
}

Packet read_packet(const std::filesystem::path& path) { return deserialize_packet(detail::read_file(path.string(), "packet")); }

}  // namespace mve
