#pragma once

// Reference selection and assembly of multi-view packets.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mve/geometry.hpp"
#include "mve/render.hpp"

namespace mve {

inline constexpr double kOverlapAlpha = 0.8;
inline constexpr double kOverlapBeta = 0.2;

/// alpha * cos(angle between view directions) + beta * (1 - d / max_d).
/// When max_pairwise_dist < 1e-9 the distance term is 1.
double view_overlap_score(const CameraView& a, const CameraView& b, double max_pairwise_dist,
                          double alpha = kOverlapAlpha, double beta = kOverlapBeta);

/// Indices of the N pool cameras with the highest max-over-targets overlap
/// score, best first; ties go to the lower pool index. The distance
/// normalizer is the max pairwise distance over targets and pool together.
std::vector<int> select_references(const std::vector<CameraView>& targets, const std::vector<CameraView>& pool,
                                   int n, double alpha = kOverlapAlpha, double beta = kOverlapBeta);

struct PacketView {
  CameraView camera;  // pose normalized to the anchor frame
  RenderedImage rgb;  // clean render for references, degraded render for targets
  CMap cmap;          // anchor frame, scale-normalized
  PluckerField plucker;
  IndicatorMask mask;
  std::optional<RenderedImage> ground_truth;  // clean render of a target

  bool operator==(const PacketView& o) const = default;
};

bool operator==(const IndicatorMask& a, const IndicatorMask& b);

struct Packet {
  std::vector<PacketView> views;  // references first, then targets
  int n_ref = 0;
  int n_target = 0;
  int anchor_index = 0;
  double scale = 1.0;
  int width = 0;
  int height = 0;

  int size() const { return static_cast<int>(views.size()); }
  std::vector<int> reference_indices() const;
  std::vector<int> target_indices() const;
  void validate() const;
  bool operator==(const Packet& o) const = default;
};

struct PacketBounds {
  int min_views = 2;
  int max_views = 24;
};

struct PacketSources {
  const GaussianScene* clean = nullptr;
  const GaussianScene* degraded = nullptr;
  RenderOptions render;
};

/// Pose-normalize to the first target, render reference RGB from the clean
/// scene and target RGB from the degraded one (clean target renders are kept
/// as ground truth), render and anchor-transform C-maps from the degraded
/// scene, build Plücker fields and masks.
Packet assemble_packet(const std::vector<CameraView>& refs, const std::vector<CameraView>& targets,
                       const PacketSources& sources, const PacketBounds& bounds = {});

// ---- packet container --------------------------------------------------------
//
// Little-endian binary layout:
//   magic "MVEPKT\0" (7 bytes), u8 version
//   u32 n_ref, u32 n_target, u32 anchor_index, u32 width, u32 height, f64 scale
//   u8 channel-layout code (1 = rgb3|cmap4(x,y,z,validity)|plucker6(m,d))
//   per view:
//     f64[16] world_to_camera row-major, f64[4] fx fy cx cy, u8 role,
//     f64 timestamp, u8 has_ground_truth,
//     f32 rgb[H*W*3], f32 cmap[H*W*4], f32 plucker[H*W*6], [f32 gt[H*W*3]]

inline constexpr std::uint8_t kPacketVersion = 1;

std::string serialize_packet(const Packet& packet);
Packet deserialize_packet(const std::string& bytes);
void write_packet(const Packet& packet, const std::filesystem::path& path);
Packet read_packet(const std::filesystem::path& path);

}  // namespace mve
