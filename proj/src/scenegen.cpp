#include "gsshare/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gsshare/enhance.hpp"

namespace gsshare {

namespace {

using nlohmann::json;

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); }

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice(uint64_t seed, int64_t i, int64_t j) {
  const uint64_t h = splitmix(splitmix(seed ^ static_cast<uint64_t>(i)) ^ static_cast<uint64_t>(j) * 0x2545f4914f6cdd1dULL);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec_from(const json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

const char* texture_name(TextureType t) {
  switch (t) {
    case TextureType::Checker: return "checker";
    case TextureType::Gradient: return "gradient";
    case TextureType::ValueNoise: return "value-noise";
  }
  return "checker";
}

json texture_json(const Texture& t) {
  return {{"type", texture_name(t.type)}, {"c1", vec_json(t.c1)}, {"c2", vec_json(t.c2)},
          {"size", t.size}, {"seed", t.seed}, {"scale", t.scale}};
}

Texture texture_from(const json& j) {
  Texture t;
  const std::string type = j.at("type").get<std::string>();
  if (type == "checker") t.type = TextureType::Checker;
  else if (type == "gradient") t.type = TextureType::Gradient;
  else if (type == "value-noise") t.type = TextureType::ValueNoise;
  else throw Error(ErrorCode::InvalidArgument, "unknown texture type " + type);
  t.c1 = vec_from(j.at("c1"));
  t.c2 = vec_from(j.at("c2"));
  t.size = j.value("size", t.size);
  t.seed = j.value("seed", t.seed);
  t.scale = j.value("scale", t.scale);
  return t;
}

json box_json(const Box& b) {
  json faces = json::array();
  for (const auto& f : b.faces) faces.push_back(texture_json(f));
  return {{"lo", vec_json(b.lo)}, {"hi", vec_json(b.hi)}, {"faces", faces}};
}

Box box_from(const json& j) {
  Box b;
  b.lo = vec_from(j.at("lo"));
  b.hi = vec_from(j.at("hi"));
  const auto& faces = j.at("faces");
  if (faces.size() != 6) throw Error(ErrorCode::InvalidArgument, "a box needs six face textures");
  for (int i = 0; i < 6; ++i) b.faces[i] = texture_from(faces.at(i));
  return b;
}

Texture random_texture(std::mt19937_64& rng) {
  Texture t;
  const int kind = static_cast<int>(rng() % 3);
  t.type = static_cast<TextureType>(kind);
  for (int c = 0; c < 3; ++c) {
    t.c1[c] = uniform(rng, 0.05, 0.95);
    t.c2[c] = uniform(rng, 0.05, 0.95);
  }
  t.size = uniform(rng, 0.15, 0.5);
  t.seed = rng();
  t.scale = uniform(rng, 2.0, 6.0);
  return t;
}

Rgb face_color(const Box& b, int face, const Vec3& p) {
  const int a = face / 2;
  const int ua = (a + 1) % 3, va = (a + 2) % 3;
  return texture_color(b.faces[face], p[ua] - b.lo[ua], p[va] - b.lo[va], b.hi[ua] - b.lo[ua],
                       b.hi[va] - b.lo[va]);
}

bool inside(const Box& b, const Vec3& p, double margin) {
  return (p.array() > b.lo.array() + margin).all() && (p.array() < b.hi.array() - margin).all();
}

Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double t) {
  const double t2 = t * t, t3 = t2 * t;
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
}

// Point at global parameter s in [0, 1] of the spline through `pts` (ends clamped).
Vec3 spline_at(const std::vector<Vec3>& pts, double s) {
  const int segs = static_cast<int>(pts.size()) - 1;
  const double f = std::clamp(s, 0.0, 1.0) * segs;
  const int i = std::min(segs - 1, static_cast<int>(std::floor(f)));
  const double t = f - i;
  auto at = [&](int k) { return pts[std::clamp(k, 0, segs)]; };
  return catmull_rom(at(i - 1), at(i), at(i + 1), at(i + 2), t);
}

}  // namespace

void SyntheticScene::validate() const {
  if (!((room.hi.array() > room.lo.array()).all())) throw Error(ErrorCode::InvalidArgument, "room box is empty");
  for (const auto& f : furniture) {
    if (!((f.hi.array() > f.lo.array()).all())) throw Error(ErrorCode::InvalidArgument, "furniture box is empty");
    if ((f.lo.array() < room.lo.array()).any() || (f.hi.array() > room.hi.array()).any())
      throw Error(ErrorCode::InvalidArgument, "furniture outside the room");
  }
}

json scene_to_json(const SyntheticScene& s) {
  json furniture = json::array();
  for (const auto& b : s.furniture) furniture.push_back(box_json(b));
  const auto& k = s.intrinsics;
  return {{"seed", s.seed}, {"free_margin", s.free_margin}, {"room", box_json(s.room)},
          {"furniture", furniture},
          {"camera", {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}}}};
}

SyntheticScene scene_from_json(const json& j) {
  SyntheticScene s;
  try {
    s.seed = j.value("seed", uint64_t{0});
    s.free_margin = j.value("free_margin", s.free_margin);
    s.room = box_from(j.at("room"));
    for (const auto& b : j.value("furniture", json::array())) s.furniture.push_back(box_from(b));
    if (j.contains("camera")) {
      const auto& c = j.at("camera");
      s.intrinsics.fx = c.at("fx");
      s.intrinsics.fy = c.at("fy");
      s.intrinsics.cx = c.at("cx");
      s.intrinsics.cy = c.at("cy");
      s.intrinsics.width = c.at("width");
      s.intrinsics.height = c.at("height");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad scene json: ") + e.what());
  }
  s.validate();
  return s;
}

SyntheticScene make_scene(uint64_t seed) {
  std::mt19937_64 rng(seed);
  SyntheticScene s;
  s.seed = seed;
  s.room.lo = Vec3::Zero();
  s.room.hi = Vec3(3.2, 2.6, 2.4);
  for (auto& f : s.room.faces) f = random_texture(rng);
  const int n = 3 + static_cast<int>(rng() % 2);
  // Pieces stand along the walls so the middle of the room stays walkable.
  for (int i = 0; i < n; ++i) {
    Box b;
    const Vec3 size(uniform(rng, 0.4, 0.9), uniform(rng, 0.4, 0.8), uniform(rng, 0.4, 1.1));
    const int wall = i % 4;
    Vec3 lo;
    lo.z() = 0.0;
    if (wall < 2) {
      lo.x() = wall == 0 ? 0.0 : s.room.hi.x() - size.x();
      lo.y() = uniform(rng, 0.0, s.room.hi.y() - size.y());
    } else {
      lo.y() = wall == 2 ? 0.0 : s.room.hi.y() - size.y();
      lo.x() = uniform(rng, 0.0, s.room.hi.x() - size.x());
    }
    b.lo = lo;
    // lo + size can round one ulp past a wall the piece is pushed against.
    b.hi = (lo + size).cwiseMin(s.room.hi);
    for (auto& f : b.faces) f = random_texture(rng);
    s.furniture.push_back(b);
  }
  s.validate();
  return s;
}

Rgb texture_color(const Texture& t, double u, double v, double extent_u, double extent_v) {
  switch (t.type) {
    case TextureType::Checker: {
      const int64_t iu = static_cast<int64_t>(std::floor(u / t.size));
      const int64_t iv = static_cast<int64_t>(std::floor(v / t.size));
      return ((iu + iv) & 1) ? t.c2 : t.c1;
    }
    case TextureType::Gradient: {
      const double w = std::clamp(0.5 * (u / extent_u + v / extent_v), 0.0, 1.0);
      return (1.0 - w) * t.c1 + w * t.c2;
    }
    case TextureType::ValueNoise: {
      const double x = u * t.scale, y = v * t.scale;
      const double fx = std::floor(x), fy = std::floor(y);
      const int64_t ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
      const double sx = smooth(x - fx), sy = smooth(y - fy);
      const double n0 = (1 - sx) * lattice(t.seed, ix, iy) + sx * lattice(t.seed, ix + 1, iy);
      const double n1 = (1 - sx) * lattice(t.seed, ix, iy + 1) + sx * lattice(t.seed, ix + 1, iy + 1);
      const double n = (1 - sy) * n0 + sy * n1;
      return (1.0 - n) * t.c1 + n * t.c2;
    }
  }
  return t.c1;
}

bool in_free_space(const SyntheticScene& s, const Vec3& p, double margin) {
  if (!inside(s.room, p, margin)) return false;
  for (const auto& b : s.furniture)
    if (inside(b, p, -margin)) return false;
  return true;
}

std::optional<RayHit> raycast(const SyntheticScene& s, const Vec3& origin, const Vec3& dir) {
  if (!inside(s.room, origin, 0.0)) return std::nullopt;
  RayHit best;
  best.t = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) continue;
    const double t = ((dir[a] > 0 ? s.room.hi[a] : s.room.lo[a]) - origin[a]) / dir[a];
    if (t < best.t) {
      best.t = t;
      best.face = 2 * a + (dir[a] > 0 ? 1 : 0);
    }
  }
  for (size_t bi = 0; bi < s.furniture.size(); ++bi) {
    const Box& b = s.furniture[bi];
    double t_near = -std::numeric_limits<double>::infinity(), t_far = std::numeric_limits<double>::infinity();
    int face = -1;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (dir[a] == 0.0) {
        miss = origin[a] <= b.lo[a] || origin[a] >= b.hi[a];
        continue;
      }
      double t0 = (b.lo[a] - origin[a]) / dir[a], t1 = (b.hi[a] - origin[a]) / dir[a];
      int f = 2 * a;
      if (t0 > t1) {
        std::swap(t0, t1);
        f = 2 * a + 1;
      }
      if (t0 > t_near) {
        t_near = t0;
        face = f;
      }
      t_far = std::min(t_far, t1);
    }
    if (miss || face < 0 || !(t_near <= t_far) || !(t_near > 0.0)) continue;
    if (t_near < best.t) {
      best.t = t_near;
      best.box = static_cast<int>(bi);
      best.face = face;
    }
  }
  best.point = origin + best.t * dir;
  const Box& hit_box = best.box < 0 ? s.room : s.furniture[best.box];
  best.color = face_color(hit_box, best.face, best.point);
  return best;
}

FrameRGBD raycast_render(const SyntheticScene& s, const CameraPose& cam) {
  if (!in_free_space(s, cam.translation, 0.0)) throw Error(ErrorCode::CameraInSolid, "camera is not in free space");
  const auto& k = cam.intrinsics;
  FrameRGBD f;
  f.pose = cam;
  f.color = Image(k.width, k.height, 3);
  f.depth = Image(k.width, k.height, 1);
  const Mat3 r = rotation_matrix(cam.rotation);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      const Vec3 dir = r * Vec3((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      const auto hit = raycast(s, cam.translation, dir);
      for (int c = 0; c < 3; ++c) f.color.at(x, y, c) = hit->color[c];
      f.depth.at(x, y) = hit->t;
    }
  return f;
}

std::vector<FrameRGBD> generate_trajectories(const SyntheticScene& s, int n_contributors,
                                             int frames_each, uint64_t seed) {
  if (n_contributors < 1 || frames_each < 1) throw Error(ErrorCode::InvalidArgument, "need at least one contributor and frame");
  s.validate();
  std::vector<FrameRGBD> frames;
  const double span = (s.room.hi.x() - s.room.lo.x()) / n_contributors;
  for (int c = 0; c < n_contributors; ++c) {
    std::mt19937_64 rng(splitmix(seed) ^ splitmix(static_cast<uint64_t>(c) + 1));
    const double x0 = s.room.lo.x() + c * span, x1 = x0 + span;
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      std::vector<Vec3> eyes, targets;
      for (int w = 0; w < 4; ++w) {
        Vec3 p;
        int tries = 0;
        do {
          p = Vec3(uniform(rng, x0, x1), uniform(rng, s.room.lo.y(), s.room.hi.y()), uniform(rng, 0.9, 1.7));
        } while (!in_free_space(s, p, s.free_margin) && ++tries < 500);
        eyes.push_back(p);
        targets.push_back(Vec3(uniform(rng, s.room.lo.x(), s.room.hi.x()), uniform(rng, s.room.lo.y(), s.room.hi.y()),
                               uniform(rng, 0.2, 1.6)));
      }
      std::vector<CameraPose> poses;
      bool ok = true;
      for (int i = 0; i < frames_each && ok; ++i) {
        const double t = frames_each == 1 ? 0.0 : static_cast<double>(i) / (frames_each - 1);
        const Vec3 eye = spline_at(eyes, t), target = spline_at(targets, t);
        ok = in_free_space(s, eye, s.free_margin) && (target - eye).norm() > 0.5;
        if (ok) poses.push_back(look_at(eye, target, s.intrinsics));
      }
      if (!ok) continue;
      for (const auto& p : poses) {
        FrameRGBD f = raycast_render(s, p);
        f.contributor_id = c;
        frames.push_back(std::move(f));
      }
      placed = true;
    }
    if (!placed) throw Error(ErrorCode::InvalidArgument, "cannot place a free-space trajectory");
  }
  return frames;
}

EvalViews label_views(const std::vector<FrameRGBD>& views, const std::vector<CameraPose>& inputs) {
  EvalViews out;
  for (const auto& v : views) (is_extrapolated(v.pose, inputs) ? out.extrap : out.interp).push_back(v);
  return out;
}

EvalViews generate_eval_views(const SyntheticScene& s, int n_positions, int n_rotations,
                              uint64_t seed, const std::vector<CameraPose>& inputs) {
  if (n_positions < 1 || n_rotations < 1) throw Error(ErrorCode::InvalidArgument, "view counts must be positive");
  std::mt19937_64 rng(splitmix(seed ^ 0x5eedULL));
  std::vector<FrameRGBD> views;
  for (int p = 0; p < n_positions; ++p) {
    Vec3 eye;
    int tries = 0;
    do {
      eye = Vec3(uniform(rng, s.room.lo.x(), s.room.hi.x()), uniform(rng, s.room.lo.y(), s.room.hi.y()),
                 uniform(rng, 0.9, 1.7));
    } while (!in_free_space(s, eye, s.free_margin) && ++tries < 1000);
    if (tries >= 1000) throw Error(ErrorCode::InvalidArgument, "no free space for eval views");
    for (int r = 0; r < n_rotations; ++r) {
      Vec3 target;
      do {
        target = Vec3(uniform(rng, s.room.lo.x(), s.room.hi.x()), uniform(rng, s.room.lo.y(), s.room.hi.y()),
                      uniform(rng, 0.2, 1.6));
      } while ((target - eye).norm() < 0.5);
      views.push_back(raycast_render(s, look_at(eye, target, s.intrinsics)));
    }
  }
  return label_views(views, inputs);
}

}  // namespace gsshare
