#include "gsshare/enhance.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

#include <Eigen/Cholesky>
#include <json.hpp>

#include "gsshare/io.hpp"

namespace gsshare {

namespace {

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Vec3 uniform_in(const Bounds& b, std::mt19937_64& rng) {
  const double x = unit_uniform(rng), y = unit_uniform(rng), z = unit_uniform(rng);
  return b.lo + Vec3(x, y, z).cwiseProduct(b.hi - b.lo);
}

}  // namespace

bool is_extrapolated(const CameraPose& pose, const std::vector<CameraPose>& inputs) {
  for (const auto& in : inputs) {
    const PoseDistance d = pose_distance(pose, in);
    if (d.rotation_deg < kCloseRotationDeg && d.translation_m < kCloseTranslationM) return false;
  }
  return true;
}

VirtualPoses sample_virtual_poses(const Bounds& bounds, const std::vector<CameraPose>& inputs,
                                  const CameraIntrinsics& intrinsics, int n, uint64_t seed,
                                  const std::function<bool(const Vec3&)>& free_space) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "need at least one virtual pose");
  std::mt19937_64 rng(seed);
  VirtualPoses out;
  const long max_attempts = 100L * n;
  for (long attempt = 0; attempt < max_attempts && static_cast<int>(out.poses.size()) < n; ++attempt) {
    const Vec3 eye = uniform_in(bounds, rng);
    const Vec3 target = uniform_in(bounds, rng);
    if (free_space && !free_space(eye)) continue;
    if ((target - eye).norm() < 0.5) continue;
    const CameraPose pose = look_at(eye, target, intrinsics);
    if (is_extrapolated(pose, inputs)) out.poses.push_back(pose);
  }
  out.incomplete = static_cast<int>(out.poses.size()) < n;
  return out;
}

std::vector<uint8_t> detect_holes(const Image& opacity, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorCode::InvalidArgument, "hole threshold outside (0,1)");
  std::vector<uint8_t> mask(opacity.pixel_count());
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = opacity.data()[i * opacity.channels()] < threshold;
  return mask;
}

Image inpaint(const Image& image, const std::vector<uint8_t>& mask, int max_iters, double tol,
              InpaintStats* stats) {
  if (mask.size() != image.pixel_count()) throw Error(ErrorCode::DimensionMismatch, "mask size differs");
  Image out = image;
  const int w = image.width(), h = image.height(), ch = image.channels();
  std::vector<uint32_t> holes;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) holes.push_back(static_cast<uint32_t>(i));
  InpaintStats st;
  if (holes.empty()) {
    if (stats) *stats = st;
    return out;
  }
  if (holes.size() == mask.size()) throw Error(ErrorCode::NoBoundary, "mask covers the whole image");

  std::vector<std::array<int32_t, 4>> nbr(holes.size());
  for (size_t k = 0; k < holes.size(); ++k) {
    const int x = holes[k] % w, y = holes[k] / w;
    const int xs[4] = {x - 1, x + 1, x, x};
    const int ys[4] = {y, y, y - 1, y + 1};
    for (int j = 0; j < 4; ++j)
      nbr[k][j] = (xs[j] >= 0 && xs[j] < w && ys[j] >= 0 && ys[j] < h) ? ys[j] * w + xs[j] : -1;
  }

  auto data = out.data();
  std::vector<double> known_mean(ch, 0.0);
  size_t known = 0;
  for (size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) {
      for (int c = 0; c < ch; ++c) known_mean[c] += data[i * ch + c];
      ++known;
    }
  for (uint32_t p : holes)
    for (int c = 0; c < ch; ++c) data[static_cast<size_t>(p) * ch + c] = known_mean[c] / known;

  auto neighbor_mean = [&](size_t k, int c) {
    double s = 0.0;
    int cnt = 0;
    for (int32_t q : nbr[k])
      if (q >= 0) {
        s += data[static_cast<size_t>(q) * ch + c];
        ++cnt;
      }
    return s / cnt;
  };

  constexpr double kOmega = 1.8;
  for (st.iterations = 0; st.iterations < max_iters; ++st.iterations) {
    for (size_t k = 0; k < holes.size(); ++k)
      for (int c = 0; c < ch; ++c) {
        double& v = data[static_cast<size_t>(holes[k]) * ch + c];
        v += kOmega * (neighbor_mean(k, c) - v);
      }
    st.residual = 0.0;
    for (size_t k = 0; k < holes.size(); ++k)
      for (int c = 0; c < ch; ++c)
        st.residual = std::max(st.residual, std::abs(data[static_cast<size_t>(holes[k]) * ch + c] - neighbor_mean(k, c)));
    if (st.residual <= tol) {
      ++st.iterations;
      break;
    }
  }
  if (stats) *stats = st;
  return out;
}

Image per_pixel_l1(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::DimensionMismatch, "image shapes differ");
  Image out(a.width(), a.height(), 1);
  const int ch = a.channels();
  for (size_t i = 0; i < a.pixel_count(); ++i) {
    double s = 0.0;
    for (int c = 0; c < ch; ++c) s += std::abs(a.data()[i * ch + c] - b.data()[i * ch + c]);
    out.data()[i] = s / ch;
  }
  return out;
}

Image compute_confidence_target(const Image& calib_render, const Image& observed, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be positive");
  Image t = per_pixel_l1(calib_render, observed);
  for (double& v : t.data()) v = std::clamp((tau - v) / tau, 0.0, 1.0);
  return t;
}

Eigen::MatrixXd confidence_features(const RenderedViews& views, double hole_threshold) {
  const Image& col = views.color;
  const int w = col.width(), h = col.height();
  const size_t np = col.pixel_count();
  Eigen::MatrixXd f(np, kConfidenceFeatures);

  // Multi-source BFS distance (4-neighborhood) to the nearest hole pixel.
  const std::vector<uint8_t> holes = detect_holes(views.opacity, hole_threshold);
  std::vector<int> dist(np, -1);
  std::deque<size_t> queue;
  for (size_t i = 0; i < np; ++i)
    if (holes[i]) {
      dist[i] = 0;
      queue.push_back(i);
    }
  while (!queue.empty()) {
    const size_t i = queue.front();
    queue.pop_front();
    const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
    const int xs[4] = {x - 1, x + 1, x, x};
    const int ys[4] = {y, y, y - 1, y + 1};
    for (int j = 0; j < 4; ++j) {
      if (xs[j] < 0 || xs[j] >= w || ys[j] < 0 || ys[j] >= h) continue;
      const size_t q = static_cast<size_t>(ys[j]) * w + xs[j];
      if (dist[q] < 0) {
        dist[q] = dist[i] + 1;
        queue.push_back(q);
      }
    }
  }

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      double mean[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
      int cnt = 0;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || xx >= w || yy < 0 || yy >= h) continue;
          for (int c = 0; c < 3; ++c) {
            const double v = col.at(xx, yy, c);
            mean[c] += v;
            sq[c] += v * v;
          }
          ++cnt;
        }
      double var = 0.0;
      for (int c = 0; c < 3; ++c) {
        mean[c] /= cnt;
        var += std::max(0.0, sq[c] / cnt - mean[c] * mean[c]);
      }
      double gx = 0.0, gy = 0.0;
      if (x > 0 && x + 1 < w) gx = 0.5 * (views.depth.at(x + 1, y) - views.depth.at(x - 1, y));
      if (y > 0 && y + 1 < h) gy = 0.5 * (views.depth.at(x, y + 1) - views.depth.at(x, y - 1));
      const double d = dist[i] < 0 ? 10.0 : std::min(10, dist[i]);
      f.row(i) << 1.0, mean[0], mean[1], mean[2], var, views.opacity.at(x, y), std::hypot(gx, gy), d / 10.0;
    }
  return f;
}

namespace {

Eigen::MatrixXd standardized(const Eigen::MatrixXd& f, const ConfidencePredictor& p) {
  Eigen::MatrixXd z(f.rows(), kConfidenceFeatures - 1);
  for (int j = 1; j < kConfidenceFeatures; ++j) {
    const double s = p.feature_scale[j];
    if (s > 0.0)
      z.col(j - 1) = (f.col(j).array() - p.feature_mean[j]) / s;
    else
      z.col(j - 1).setZero();
  }
  return z;
}

}  // namespace

ConfidencePredictor fit_confidence_regression(const std::vector<RenderedViews>& renders,
                                              const std::vector<Image>& target_images, double ridge) {
  if (renders.empty() || renders.size() != target_images.size())
    throw Error(ErrorCode::InsufficientData, "need one target per render");
  ConfidencePredictor p;
  p.ridge = ridge;
  std::vector<Eigen::MatrixXd> feats;
  std::vector<Eigen::VectorXd> targets;
  Eigen::Index rows = 0;
  for (size_t i = 0; i < renders.size(); ++i) {
    const Image& t = target_images[i];
    if (t.pixel_count() != renders[i].color.pixel_count() || t.channels() != 1)
      throw Error(ErrorCode::DimensionMismatch, "target does not match its render");
    feats.push_back(confidence_features(renders[i]));
    targets.push_back(Eigen::Map<const Eigen::VectorXd>(t.data().data(), t.size()));
    rows += feats.back().rows();
  }
  Eigen::MatrixXd f(rows, kConfidenceFeatures);
  Eigen::VectorXd y(rows);
  Eigen::Index r = 0;
  for (size_t i = 0; i < feats.size(); ++i) {
    f.middleRows(r, feats[i].rows()) = feats[i];
    y.segment(r, targets[i].size()) = targets[i];
    r += feats[i].rows();
  }

  const double n = static_cast<double>(rows);
  p.feature_mean = f.colwise().mean().transpose();
  p.feature_scale = Eigen::VectorXd::Zero(kConfidenceFeatures);
  for (int j = 1; j < kConfidenceFeatures; ++j) {
    const double var = (f.col(j).array() - p.feature_mean[j]).square().sum() / n;
    p.feature_scale[j] = var > 1e-20 ? std::sqrt(var) : 0.0;
  }
  const Eigen::MatrixXd z = standardized(f, p);
  const double y_mean = y.mean();
  Eigen::MatrixXd a = z.transpose() * z / n;
  a.diagonal().array() += ridge;
  const Eigen::VectorXd rhs = z.transpose() * (y.array() - y_mean).matrix() / n;
  p.weights.resize(kConfidenceFeatures);
  p.weights[0] = y_mean;
  p.weights.tail(kConfidenceFeatures - 1) = a.ldlt().solve(rhs);
  return p;
}

ConfidencePredictor fit_confidence_predictor(const std::vector<CalibrationPair>& pairs, double ridge) {
  if (pairs.empty()) throw Error(ErrorCode::InsufficientData, "no calibration pairs");
  double max_l1 = 0.0;
  for (const auto& pr : pairs) {
    const Image l1 = per_pixel_l1(pr.render.color, pr.observed);
    for (double v : l1.data()) max_l1 = std::max(max_l1, v);
  }
  const double tau = std::max(max_l1, 1e-12);
  std::vector<RenderedViews> renders;
  std::vector<Image> targets;
  for (const auto& pr : pairs) {
    renders.push_back(pr.render);
    targets.push_back(compute_confidence_target(pr.render.color, pr.observed, tau));
  }
  ConfidencePredictor p = fit_confidence_regression(renders, targets, ridge);
  p.tau = tau;
  return p;
}

Image predict_confidence(const ConfidencePredictor& pred, const RenderedViews& views) {
  const Eigen::MatrixXd z = standardized(confidence_features(views), pred);
  const Eigen::VectorXd y = (z * pred.weights.tail(kConfidenceFeatures - 1)).array() + pred.weights[0];
  Image out(views.color.width(), views.color.height(), 1);
  for (Eigen::Index i = 0; i < y.size(); ++i) out.data()[i] = std::clamp(y[i], 0.0, 1.0);
  return out;
}

PseudoSet make_pseudo_gt(const GaussianMap& virtual_map, const std::vector<CameraPose>& poses,
                         const ConfidencePredictor& pred, double hole_threshold) {
  if (virtual_map.gaussians.empty()) throw Error(ErrorCode::InsufficientData, "virtual map is empty");
  PseudoSet set;
  for (const auto& pose : poses) {
    const RenderedViews r = render(virtual_map, pose, Rgb::Zero());
    const std::vector<uint8_t> holes = detect_holes(r.opacity, hole_threshold);
    PseudoGT p;
    try {
      p.image = inpaint(r.color, holes, 20000, 1e-5);
      p.depth = inpaint(r.depth, holes, 20000, 1e-5);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoBoundary) throw;
      ++set.skipped;
      continue;
    }
    p.pose = pose;
    p.opacity = r.opacity;
    p.confidence = predict_confidence(pred, r);
    for (size_t i = 0; i < holes.size(); ++i)
      if (holes[i] && r.opacity.data()[i] < kUnrecoverableOpacity) p.confidence.data()[i] = 0.0;
    set.items.push_back(std::move(p));
  }
  return set;
}

double virtual_loss(const Image& global_render, const PseudoGT& pseudo) {
  const Image e = per_pixel_l1(global_render, pseudo.image);
  if (!e.same_shape(pseudo.confidence)) throw Error(ErrorCode::DimensionMismatch, "confidence shape differs");
  double s = 0.0;
  for (size_t i = 0; i < e.size(); ++i) s += e.data()[i] * pseudo.confidence.data()[i];
  return s / static_cast<double>(e.size());
}

void export_pseudo_bundle(const std::filesystem::path& dir, const PseudoSet& set, double tau) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"tau", tau}, {"skipped", set.skipped}, {"items", nlohmann::json::array()}};
  for (size_t i = 0; i < set.items.size(); ++i) {
    char stem[16];
    std::snprintf(stem, sizeof(stem), "%04zu", i);
    const auto& p = set.items[i];
    write_png(dir / ("image_" + std::string(stem) + ".png"), p.image);
    write_pfm(dir / ("depth_" + std::string(stem) + ".pfm"), p.depth);
    write_png(dir / ("confidence_" + std::string(stem) + ".png"), p.confidence);
    manifest["items"].push_back({{"index", i}, {"pose", pose_to_json(p.pose)}});
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace gsshare
