#include "gsshare/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gsshare {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadVersion: return "BadVersion";
    case ErrorCode::CrcMismatch: return "CrcMismatch";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::CorruptStream: return "CorruptStream";
    case ErrorCode::SymbolOutOfAlphabet: return "SymbolOutOfAlphabet";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::AnchorMismatch: return "AnchorMismatch";
    case ErrorCode::OutOfOrderUpdate: return "OutOfOrderUpdate";
    case ErrorCode::DuplicateStage: return "DuplicateStage";
    case ErrorCode::UnknownStage: return "UnknownStage";
    case ErrorCode::FutureStage: return "FutureStage";
    case ErrorCode::NoBoundary: return "NoBoundary";
    case ErrorCode::CameraInSolid: return "CameraInSolid";
    case ErrorCode::EmptyServer: return "EmptyServer";
    case ErrorCode::Protocol: return "Protocol";
    case ErrorCode::Transport: return "Transport";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

Quat canonical_rotation(const Quat& q) {
  const double n = q.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) return Quat::Identity();
  // Dividing an already unit quaternion by its rounded norm can move it by an ulp; leaving
  // near-unit input alone makes the operation idempotent.
  Quat r = std::abs(n - 1.0) <= 8 * std::numeric_limits<double>::epsilon()
               ? q
               : Quat(q.w() / n, q.x() / n, q.y() / n, q.z() / n);
  if (r.w() < 0.0) r = Quat(-r.w(), -r.x(), -r.y(), -r.z());
  return r;
}

Mat3 rotation_matrix(const Quat& q) { return q.toRotationMatrix(); }

Mat3 covariance(const Gaussian& g) {
  const Mat3 r = rotation_matrix(g.rotation);
  const Vec3 s2 = g.scale.cwiseProduct(g.scale);
  Mat3 cov = r * s2.asDiagonal() * r.transpose();
  return 0.5 * (cov + cov.transpose());
}

Vec3 flat_normal(const Gaussian& g) { return rotation_matrix(g.rotation).col(2); }

Gaussian make_flat(const Vec3& position, double in_plane_scale, const Vec3& normal,
                   double opacity, const Rgb& color) {
  Gaussian g;
  g.position = position;
  g.scale = Vec3(in_plane_scale, in_plane_scale, 0.0);
  g.rotation = canonical_rotation(Quat::FromTwoVectors(Vec3::UnitZ(), normal.normalized()));
  g.opacity = opacity;
  g.color = color;
  g.kind = GaussianKind::Flat2D;
  return sanitized(g);
}

Gaussian make_isotropic(const Vec3& position, double scale, double opacity, const Rgb& color) {
  Gaussian g;
  g.position = position;
  g.scale = Vec3::Constant(scale);
  g.opacity = opacity;
  g.color = color;
  g.kind = GaussianKind::Isotropic3D;
  return sanitized(g);
}

Gaussian sanitized(Gaussian g) {
  g.rotation = canonical_rotation(g.rotation);
  g.opacity = std::clamp(g.opacity, 0.0, 1.0);
  g.color = g.color.cwiseMax(0.0).cwiseMin(1.0);
  g.scale = g.scale.cwiseMax(0.0);
  if (g.kind == GaussianKind::Flat2D) {
    g.scale.z() = 0.0;
  } else {
    const double m = g.scale.mean();
    g.scale = Vec3::Constant(m);
  }
  return g;
}

CameraIntrinsics make_intrinsics(int width, int height, double hfov_deg) {
  CameraIntrinsics k;
  k.width = width;
  k.height = height;
  k.cx = (width - 1) * 0.5;
  k.cy = (height - 1) * 0.5;
  k.fx = (width * 0.5) / std::tan(hfov_deg * M_PI / 360.0);
  k.fy = k.fx;
  return k;
}

Vec3 CameraPose::to_camera(const Vec3& p_world) const {
  return world_to_camera_rotation() * (p_world - translation);
}

Vec3 CameraPose::to_world(const Vec3& p_camera) const {
  return rotation_matrix(rotation) * p_camera + translation;
}

Vec3 CameraPose::forward() const { return rotation_matrix(rotation).col(2); }

void CameraPose::validate() const {
  const auto& k = intrinsics;
  if (!(k.fx > 0 && k.fy > 0) || !(k.cx > 0 && k.cx < k.width) || !(k.cy > 0 && k.cy < k.height))
    throw Error(ErrorCode::InvalidArgument, "camera intrinsics out of range");
  if (std::abs(rotation.norm() - 1.0) > 1e-6)
    throw Error(ErrorCode::InvalidArgument, "camera rotation is not a unit quaternion");
}

CameraPose look_at(const Vec3& eye, const Vec3& target, const CameraIntrinsics& intr,
                   const Vec3& world_up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 up = world_up.normalized();
  if (std::abs(z.dot(up)) > 0.999) up = (std::abs(z.x()) < 0.9) ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 y = (-up - z * z.dot(-up)).normalized();
  const Vec3 x = y.cross(z);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  CameraPose pose;
  pose.rotation = canonical_rotation(Quat(r));
  pose.translation = eye;
  pose.intrinsics = intr;
  return pose;
}

PoseDistance pose_distance(const CameraPose& a, const CameraPose& b) {
  const Quat d = a.rotation.conjugate() * b.rotation;
  const double angle = 2.0 * std::atan2(d.vec().norm(), std::abs(d.w()));
  return {angle * 180.0 / M_PI, (a.translation - b.translation).norm()};
}

Projection project(const Vec3& p_world, const CameraPose& cam) {
  const Vec3 pc = cam.to_camera(p_world);
  Projection out;
  out.z = pc.z();
  if (pc.z() <= 0.0) return out;
  const auto& k = cam.intrinsics;
  out.u = k.fx * pc.x() / pc.z() + k.cx;
  out.v = k.fy * pc.y() / pc.z() + k.cy;
  out.in_frustum = out.u >= -0.5 && out.u < k.width - 0.5 && out.v >= -0.5 && out.v < k.height - 0.5;
  return out;
}

Vec3 lift_pixel(double u, double v, double depth, const CameraPose& cam) {
  const auto& k = cam.intrinsics;
  const Vec3 pc((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
  return cam.to_world(pc);
}

void FrameRGBD::validate() const {
  pose.validate();
  const auto& k = pose.intrinsics;
  if (color.width() != k.width || color.height() != k.height || color.channels() != 3 ||
      depth.width() != k.width || depth.height() != k.height || depth.channels() != 1)
    throw Error(ErrorCode::DimensionMismatch, "frame buffers do not match camera size");
  for (double d : depth.data())
    if (!(d >= 0.0)) throw Error(ErrorCode::InvalidArgument, "negative or NaN depth");
}

void GaussianMap::validate() const {
  if (anchored() && gaussians.size() != anchors.size() * static_cast<size_t>(anchor_k))
    throw Error(ErrorCode::DimensionMismatch, "gaussian count is not anchors * K");
  for (const auto& g : gaussians) {
    if (std::abs(g.rotation.norm() - 1.0) > 1e-6)
      throw Error(ErrorCode::InvalidArgument, "non-unit rotation");
    if (g.opacity < 0 || g.opacity > 1 || (g.color.array() < 0).any() ||
        (g.color.array() > 1).any() || (g.scale.array() < 0).any())
      throw Error(ErrorCode::InvalidArgument, "gaussian attribute out of range");
  }
}

Eigen::VectorXd anchor_attributes(const GaussianMap& map, size_t anchor) {
  const int k = map.anchor_k;
  Eigen::VectorXd attrs(k * kAttrsPerGaussian);
  for (int i = 0; i < k; ++i) {
    const Gaussian& g = map.gaussians[anchor * k + i];
    const int o = i * kAttrsPerGaussian;
    attrs.segment<3>(o) = g.color;
    attrs[o + 3] = g.opacity;
    attrs[o + 4] = g.rotation.w();
    attrs[o + 5] = g.rotation.x();
    attrs[o + 6] = g.rotation.y();
    attrs[o + 7] = g.rotation.z();
  }
  return attrs;
}

void set_anchor_attributes(GaussianMap& map, size_t anchor, const Eigen::VectorXd& attrs) {
  const int k = map.anchor_k;
  if (attrs.size() != k * kAttrsPerGaussian)
    throw Error(ErrorCode::DimensionMismatch, "attribute row has wrong length");
  for (int i = 0; i < k; ++i) {
    Gaussian& g = map.gaussians[anchor * k + i];
    const int o = i * kAttrsPerGaussian;
    g.color = attrs.segment<3>(o);
    g.opacity = attrs[o + 3];
    g.rotation = Quat(attrs[o + 4], attrs[o + 5], attrs[o + 6], attrs[o + 7]);
    g = sanitized(g);
  }
}

}  // namespace gsshare
