#include "gsshare/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gsshare/simd.hpp"

namespace gsshare {

namespace {

void require_same_shape(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::DimensionMismatch, "image shapes differ");
}

// Order-independent mean: sorting first makes the sum independent of input order.
double stable_mean(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

// Valid-region separable filter of one channel.
std::vector<double> filter_valid(const std::vector<double>& img, int w, int h,
                                 const std::vector<double>& win) {
  const int n = static_cast<int>(win.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<size_t>(ow) * h), out(static_cast<size_t>(ow) * oh);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += win[i] * img[static_cast<size_t>(y) * w + x + i];
      tmp[static_cast<size_t>(y) * ow + x] = s;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += win[i] * tmp[static_cast<size_t>(y + i) * ow + x];
      out[static_cast<size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b);
  if (a.empty()) throw Error(ErrorCode::InsufficientData, "empty images");
  return simd::kernels().sum_sq_diff(a.data().data(), b.data().data(), a.size()) /
         static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b);
  if (a.empty()) throw Error(ErrorCode::InsufficientData, "empty images");
  int size = std::min({11, a.width(), a.height()});
  if (size % 2 == 0) --size;
  const std::vector<double> win = gaussian_window(size, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int w = a.width(), h = a.height();
  const size_t np = a.pixel_count();
  double total = 0.0;
  size_t count = 0;
  for (int c = 0; c < a.channels(); ++c) {
    std::vector<double> pa(np), pb(np), aa(np), bb(np), ab(np);
    for (size_t i = 0; i < np; ++i) {
      pa[i] = a.data()[i * a.channels() + c];
      pb[i] = b.data()[i * b.channels() + c];
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, w, h, win), mu_b = filter_valid(pb, w, h, win);
    const auto e_aa = filter_valid(aa, w, h, win), e_bb = filter_valid(bb, w, h, win);
    const auto e_ab = filter_valid(ab, w, h, win);
    for (size_t i = 0; i < mu_a.size(); ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double l1(const Image& a, const Image& b) {
  require_same_shape(a, b);
  if (a.empty()) throw Error(ErrorCode::InsufficientData, "empty images");
  return simd::kernels().sum_abs_diff(a.data().data(), b.data().data(), a.size()) /
         static_cast<double>(a.size());
}

double depth_l1(const Image& da, const Image& db, const std::vector<uint8_t>& valid) {
  require_same_shape(da, db);
  if (valid.size() != da.pixel_count()) throw Error(ErrorCode::DimensionMismatch, "mask size differs");
  double s = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) {
      s += std::abs(da.data()[i] - db.data()[i]);
      ++n;
    }
  if (n == 0) throw Error(ErrorCode::InsufficientData, "no valid depth pixels");
  return s / static_cast<double>(n);
}

Image normals_from_depth(const Image& depth, const CameraPose& cam, std::vector<uint8_t>* valid) {
  const int w = depth.width(), h = depth.height();
  Image out(w, h, 3);
  if (valid) valid->assign(depth.pixel_count(), 0);
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x) {
      const double d = depth.at(x, y), dl = depth.at(x - 1, y), dr = depth.at(x + 1, y);
      const double du = depth.at(x, y - 1), dd = depth.at(x, y + 1);
      if (!(d > 0 && dl > 0 && dr > 0 && du > 0 && dd > 0)) continue;
      const Vec3 tx = lift_pixel(x + 1, y, dr, cam) - lift_pixel(x - 1, y, dl, cam);
      const Vec3 ty = lift_pixel(x, y + 1, dd, cam) - lift_pixel(x, y - 1, du, cam);
      Vec3 n = tx.cross(ty);
      if (!(n.norm() > 1e-12)) continue;
      n.normalize();
      if (n.dot(cam.translation - lift_pixel(x, y, d, cam)) < 0.0) n = -n;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = n[c];
      if (valid) (*valid)[static_cast<size_t>(y) * w + x] = 1;
    }
  return out;
}

NormalLoss normal_loss(const RenderedViews& rendered, const Image& gt_depth, const CameraPose& cam,
                       double edge_threshold) {
  if (!(edge_threshold > 0.0)) throw Error(ErrorCode::InvalidArgument, "edge threshold must be positive");
  require_same_shape(rendered.depth, gt_depth);
  std::vector<uint8_t> gt_valid;
  const Image gt = normals_from_depth(gt_depth, cam, &gt_valid);
  NormalLoss out;
  double sum = 0.0;
  const int w = gt_depth.width();
  for (int y = 0; y < gt_depth.height(); ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      if (!gt_valid[i] || !rendered.normal_valid[i]) continue;
      if (std::abs(rendered.depth.at(x, y) - gt_depth.at(x, y)) > edge_threshold) continue;
      double dot = 0.0;
      for (int c = 0; c < 3; ++c) dot += rendered.normal.at(x, y, c) * gt.at(x, y, c);
      sum += 1.0 - dot;
      ++out.pixels;
    }
  out.no_valid_pixels = out.pixels == 0;
  out.value = out.pixels ? sum / static_cast<double>(out.pixels) : 0.0;
  return out;
}

double scale_regularization(const GaussianMap& map) {
  if (map.gaussians.empty()) return 0.0;
  double s = 0.0;
  for (const auto& g : map.gaussians) {
    std::array<double, 3> v{g.scale.x(), g.scale.y(), g.scale.z()};
    std::sort(v.begin(), v.end());
    s += v[1] * v[2];
  }
  return s / static_cast<double>(map.gaussians.size());
}

void LossWeights::validate() const {
  for (double v : {w_obs, w_ssim, w_reg, w_depth, w_normal, w_total_t, w_total_v, lambda_q})
    if (!(v >= 0.0)) throw Error(ErrorCode::InvalidArgument, "loss weights must be non-negative");
}

LossBreakdown training_loss(const GaussianMap& map, const std::vector<FrameRGBD>& frames,
                            const LossWeights& w) {
  w.validate();
  if (frames.empty()) throw Error(ErrorCode::InsufficientData, "training loss needs frames");
  std::vector<double> t_l1, t_ssim, t_depth, t_normal;
  for (const auto& f : frames) {
    const RenderedViews r = render(map, f.pose, Rgb::Zero());
    t_l1.push_back(l1(r.color, f.color));
    t_ssim.push_back(1.0 - ssim(r.color, f.color));
    std::vector<uint8_t> valid(f.depth.pixel_count());
    bool any = false;
    for (size_t i = 0; i < valid.size(); ++i) any |= (valid[i] = f.depth.data()[i] > 0.0) != 0;
    t_depth.push_back(any ? depth_l1(r.depth, f.depth, valid) : 0.0);
    t_normal.push_back(normal_loss(r, f.depth, f.pose).value);
  }
  LossBreakdown b;
  b.l1 = stable_mean(t_l1);
  b.ssim_term = std::max(0.0, stable_mean(t_ssim));
  b.reg = scale_regularization(map);
  b.depth = stable_mean(t_depth);
  b.normal = stable_mean(t_normal);
  b.weighted = {w.w_obs * b.l1, w.w_ssim * b.ssim_term, w.w_reg * b.reg, w.w_depth * b.depth,
                w.w_normal * b.normal};
  for (double v : b.weighted) b.total += v;
  return b;
}

TotalLoss total_loss(const GaussianMap& map, const std::vector<FrameRGBD>& frames,
                     const std::vector<PseudoGT>& pseudo, const LossWeights& w) {
  TotalLoss t;
  t.training = training_loss(map, frames, w).total;
  std::vector<double> v;
  for (const auto& p : pseudo) v.push_back(virtual_loss(render(map, p.pose, Rgb::Zero()).color, p));
  t.virtual_mean = stable_mean(v);
  t.total = w.w_total_t * t.training + w.w_total_v * t.virtual_mean;
  return t;
}

double update_objective(double bits, double distortion, double lambda_q) {
  return lambda_q * bits + distortion;
}

GaussianMap prune_by_opacity(const GaussianMap& map, double threshold, size_t* pruned) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error(ErrorCode::InvalidArgument, "threshold outside [0,1]");
  GaussianMap out = map;
  size_t n = 0;
  for (auto& g : out.gaussians)
    if (g.opacity < threshold) {
      g.opacity = 0.0;
      ++n;
    }
  if (pruned) *pruned = n;
  return out;
}

std::string metrics_csv_header() { return "stage_id,set,psnr_db,ssim,depth_l1_cm,bytes"; }

std::string metrics_csv_row(uint32_t stage_id, const std::string& set, double psnr_db, double ssim_v,
                            double depth_l1_cm, size_t bytes) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%u,%s,%.6f,%.6f,%.6f,%zu", stage_id, set.c_str(), psnr_db, ssim_v,
                depth_l1_cm, bytes);
  return buf;
}

}  // namespace gsshare
