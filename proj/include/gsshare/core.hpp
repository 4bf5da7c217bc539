#pragma once

// Domain types shared by every module: Gaussians, anchors, cameras, frames and maps.
//
// Conventions (fixed once, used everywhere):
//  * CameraPose stores the camera->world rotation and the camera center in world space.
//  * Camera space is right-handed, looking down +z, with +x right and +y down in the image.
//  * Pixel (col, row) has its center at image coordinate (u, v) = (col, row).

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "gsshare/error.hpp"
#include "gsshare/image.hpp"

namespace gsshare {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using Rgb = Eigen::Vector3d;
using GridCell = std::array<int32_t, 3>;

inline constexpr double kDefaultEpsilon = 0.03;  // voxel size in meters
inline constexpr int kDefaultAnchorK = 10;       // Gaussians per anchor
inline constexpr int kFullEmbeddingDim = 50;
inline constexpr int kIncrementEmbeddingDim = 25;
inline constexpr int kAttrsPerGaussian = 8;      // color 3 + opacity 1 + rotation 4

enum class GaussianKind : uint8_t { Isotropic3D = 0, Flat2D = 1 };

struct Gaussian {
  Vec3 position = Vec3::Zero();
  Vec3 scale = Vec3::Zero();  // per-axis standard deviation, local frame
  Quat rotation = Quat::Identity();
  double opacity = 0.0;
  Rgb color = Rgb::Zero();
  GaussianKind kind = GaussianKind::Isotropic3D;
};

// Unit quaternion with non-negative real part. Idempotent; a zero quaternion maps to identity.
Quat canonical_rotation(const Quat& q);

// Flat Gaussian whose zero-scale axis is the local z axis, rotated onto `normal`.
Gaussian make_flat(const Vec3& position, double in_plane_scale, const Vec3& normal,
                   double opacity, const Rgb& color);
Gaussian make_isotropic(const Vec3& position, double scale, double opacity, const Rgb& color);

// Re-establishes every Gaussian invariant: unit rotation, clamped opacity/color,
// non-negative scales and the kind-specific scale pattern.
Gaussian sanitized(Gaussian g);

Mat3 rotation_matrix(const Quat& q);
Mat3 covariance(const Gaussian& g);
// Rotated local z axis; meaningful for Flat2D.
Vec3 flat_normal(const Gaussian& g);

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

// Horizontal field of view in degrees, principal point at the image center.
CameraIntrinsics make_intrinsics(int width, int height, double hfov_deg);

struct CameraPose {
  Quat rotation = Quat::Identity();  // camera -> world
  Vec3 translation = Vec3::Zero();   // camera center in world
  CameraIntrinsics intrinsics;

  Mat3 world_to_camera_rotation() const { return rotation_matrix(rotation).transpose(); }
  Vec3 to_camera(const Vec3& p_world) const;
  Vec3 to_world(const Vec3& p_camera) const;
  Vec3 forward() const;  // viewing direction in world space
  void validate() const;
};

CameraPose look_at(const Vec3& eye, const Vec3& target, const CameraIntrinsics& intr,
                   const Vec3& world_up = Vec3(0, 0, 1));

struct PoseDistance {
  double rotation_deg = 0.0;
  double translation_m = 0.0;
};

PoseDistance pose_distance(const CameraPose& a, const CameraPose& b);

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
  bool in_frustum = false;  // z > 0 and (u, v) inside [-0.5, W-0.5) x [-0.5, H-0.5)
};

Projection project(const Vec3& p_world, const CameraPose& cam);
Vec3 lift_pixel(double u, double v, double depth, const CameraPose& cam);

struct FrameRGBD {
  Image color;  // H x W x 3, [0,1]
  Image depth;  // H x W x 1, meters, 0 = invalid
  CameraPose pose;
  int contributor_id = 0;

  void validate() const;
};

// Ordered Gaussians grouped K per anchor: anchor a owns slots [a*K, (a+1)*K).
// A map with no anchors is unanchored (the virtual map).
struct GaussianMap {
  std::vector<Gaussian> gaussians;
  std::vector<GridCell> anchors;
  uint32_t stage_id = 0;
  int anchor_k = kDefaultAnchorK;
  double epsilon = kDefaultEpsilon;

  size_t anchor_count() const { return anchors.size(); }
  bool anchored() const { return !anchors.empty(); }
  Vec3 anchor_position(size_t a) const {
    return Vec3(anchors[a][0], anchors[a][1], anchors[a][2]) * epsilon;
  }
  void validate() const;
};

// Compact per-anchor record: K scale rows, K offset rows and the shared embedding.
struct AnchorFeature {
  Vec3 anchor_position = Vec3::Zero();
  Eigen::MatrixX3d scales;   // K x 3
  Eigen::MatrixX3d offsets;  // K x 3
  Eigen::VectorXd embedding;
};

// Per-anchor attribute row: [color(3), opacity, rotation(w,x,y,z)] per Gaussian.
Eigen::VectorXd anchor_attributes(const GaussianMap& map, size_t anchor);
void set_anchor_attributes(GaussianMap& map, size_t anchor, const Eigen::VectorXd& attrs);

}  // namespace gsshare
