#pragma once

// Procedural box rooms with cuboid furniture and an exact ray-cast renderer.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsshare/core.hpp"

namespace gsshare {

enum class TextureType { Checker, Gradient, ValueNoise };

struct Texture {
  TextureType type = TextureType::Checker;
  Rgb c1 = Rgb(0.2, 0.2, 0.2);
  Rgb c2 = Rgb(0.8, 0.8, 0.8);
  double size = 0.25;   // checker cell edge (m)
  uint64_t seed = 0;    // value noise
  double scale = 4.0;   // value-noise lattice cells per meter
};

// Faces are ordered -x, +x, -y, +y, -z, +z.
struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
  std::array<Texture, 6> faces;
};

struct SyntheticScene {
  Box room;                     // seen from inside
  std::vector<Box> furniture;   // seen from outside
  uint64_t seed = 0;
  double free_margin = 0.2;     // clearance required by the free-space predicate
  CameraIntrinsics intrinsics = make_intrinsics(64, 48, 70.0);

  void validate() const;
};

nlohmann::json scene_to_json(const SyntheticScene& s);
SyntheticScene scene_from_json(const nlohmann::json& j);

// Room 3.2 x 2.6 x 2.4 m with three to four cuboids on the floor and random textures.
SyntheticScene make_scene(uint64_t seed);

// Texture color at in-face coordinates (u, v) measured from the face's lower corner.
// `extent` is the face size along u and v, used by gradients.
Rgb texture_color(const Texture& t, double u, double v, double extent_u, double extent_v);

struct RayHit {
  double t = 0.0;      // ray parameter; the direction's camera z is 1, so t is camera depth
  int box = -1;        // -1 is the room
  int face = 0;
  Vec3 point = Vec3::Zero();
  Rgb color = Rgb::Zero();
};

// First hit of origin + t * dir for t > 0. Empty only when the origin is outside the room.
std::optional<RayHit> raycast(const SyntheticScene& s, const Vec3& origin, const Vec3& dir);

// Inside the room and outside every cuboid, with `margin` clearance.
bool in_free_space(const SyntheticScene& s, const Vec3& p, double margin);

// Color and camera-z depth per pixel. Throws CameraInSolid when the center is not in free space.
FrameRGBD raycast_render(const SyntheticScene& s, const CameraPose& cam);

// Each contributor walks a Catmull-Rom spline through free-space waypoints in its own slab of
// the room along x, looking at spline-interpolated targets. Frames are grouped by contributor.
std::vector<FrameRGBD> generate_trajectories(const SyntheticScene& s, int n_contributors,
                                             int frames_each, uint64_t seed);

struct EvalViews {
  std::vector<FrameRGBD> interp;
  std::vector<FrameRGBD> extrap;
};

// Splits views by the extrapolation predicate against `inputs`.
EvalViews label_views(const std::vector<FrameRGBD>& views, const std::vector<CameraPose>& inputs);

// n_positions uniform free-space centers times n_rotations random viewing directions.
EvalViews generate_eval_views(const SyntheticScene& s, int n_positions, int n_rotations,
                              uint64_t seed, const std::vector<CameraPose>& inputs);

}  // namespace gsshare
