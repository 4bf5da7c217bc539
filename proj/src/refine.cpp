#include "gsshare/refine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gsshare/render.hpp"

namespace gsshare {

namespace {

struct Hit {
  uint32_t splat;
  double alpha;
  double transmittance;  // before this splat
};

double rho(double d, ImageObjective obj) {
  return obj == ImageObjective::L2 ? d * d : std::sqrt(d * d + kCharbonnierEps);
}

double rho_prime(double d, ImageObjective obj) {
  return obj == ImageObjective::L2 ? 2.0 * d : d / std::sqrt(d * d + kCharbonnierEps);
}

double smoothed_l1_mean(const Image& render, const Image& target, const Image* confidence) {
  const int ch = render.channels();
  double s = 0.0;
  for (size_t p = 0; p < render.pixel_count(); ++p) {
    double e = 0.0;
    for (int c = 0; c < ch; ++c) e += rho(render.data()[p * ch + c] - target.data()[p * ch + c], ImageObjective::CharbonnierL1);
    s += confidence ? e * confidence->data()[p] : e;
  }
  return s / static_cast<double>(render.size());
}

}  // namespace

ColorOpacityGrad grad_color_opacity(const GaussianMap& map, const Image& target,
                                    const Image& confidence, const CameraPose& cam,
                                    ImageObjective objective, const RenderOptions& opts) {
  const auto& k = cam.intrinsics;
  if (target.width() != k.width || target.height() != k.height || target.channels() != 3)
    throw Error(ErrorCode::DimensionMismatch, "target does not match the camera");
  const bool has_conf = !confidence.empty();
  if (has_conf && (confidence.width() != k.width || confidence.height() != k.height))
    throw Error(ErrorCode::DimensionMismatch, "confidence does not match the camera");

  ColorOpacityGrad g;
  g.d_color.assign(map.gaussians.size(), Rgb::Zero());
  g.d_opacity.assign(map.gaussians.size(), 0.0);
  g.blend_weight.assign(map.gaussians.size(), 0.0);

  const PreparedView view = prepare_view(map, cam, opts);
  std::vector<Hit> hits;
  std::vector<uint32_t> row_list;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      if (x % view.tile_size == 0) {
        row_list.clear();
        for (uint32_t idx : view.tiles[static_cast<size_t>(y / view.tile_size) * view.tiles_x + x / view.tile_size]) {
          const simd::Splat& s = view.splats[idx];
          if (!(y - s.v > s.radius || s.v - y > s.radius)) row_list.push_back(idx);
        }
      }
      hits.clear();
      double t = 1.0;
      Rgb color = Rgb::Zero();
      for (size_t i = 0; i < row_list.size() && t >= simd::kTerminateTransmittance; ++i) {
        const simd::Splat& s = view.splats[row_list[i]];
        if (!simd::splat_covers(s, x, y)) continue;
        const double a = simd::splat_alpha(s, x, y);
        hits.push_back({row_list[i], a, t});
        for (int c = 0; c < 3; ++c) color[c] += a * t * s.color[c];
        t *= 1.0 - a;
      }
      const double w = has_conf ? confidence.at(x, y) : 1.0;
      Rgb dl_dc;
      for (int c = 0; c < 3; ++c) {
        const double d = color[c] - target.at(x, y, c);
        g.loss += w * rho(d, objective);
        dl_dc[c] = w * rho_prime(d, objective);
      }
      // Back to front: `behind` is the normalized composite of everything after hit i.
      Rgb behind = Rgb::Zero();
      for (size_t i = hits.size(); i-- > 0;) {
        const Hit& h = hits[i];
        const simd::Splat& s = view.splats[h.splat];
        const Rgb ci(s.color[0], s.color[1], s.color[2]);
        const double wgt = h.alpha * h.transmittance;
        g.d_color[s.source] += wgt * dl_dc;
        g.blend_weight[s.source] += wgt;
        const double d_alpha = h.transmittance * dl_dc.dot(ci - behind);
        g.d_opacity[s.source] += d_alpha * (h.alpha / s.opacity);
        behind = h.alpha * ci + (1.0 - h.alpha) * behind;
      }
    }
  return g;
}

double refine_objective(const GaussianMap& map, const std::vector<FrameRGBD>& frames,
                        const std::vector<PseudoGT>& pseudo, const LossWeights& w,
                        const RenderOptions& opts) {
  double obs = 0.0, virt = 0.0;
  std::vector<double> terms;
  for (const auto& f : frames) terms.push_back(smoothed_l1_mean(render(map, f.pose, Rgb::Zero(), opts).color, f.color, nullptr));
  std::sort(terms.begin(), terms.end());
  for (double v : terms) obs += v;
  if (!frames.empty()) obs /= static_cast<double>(frames.size());
  terms.clear();
  for (const auto& p : pseudo)
    terms.push_back(smoothed_l1_mean(render(map, p.pose, Rgb::Zero(), opts).color, p.image, &p.confidence));
  std::sort(terms.begin(), terms.end());
  for (double v : terms) virt += v;
  if (!pseudo.empty()) virt /= static_cast<double>(pseudo.size());
  return w.w_total_t * w.w_obs * obs + w.w_total_v * virt;
}

RefineResult refine_map(const GaussianMap& map, const std::vector<FrameRGBD>& frames,
                        const std::vector<PseudoGT>& pseudo, const LossWeights& w, int iters,
                        double step_size, const RenderOptions& opts) {
  if (iters < 0) throw Error(ErrorCode::InvalidArgument, "iters must be non-negative");
  if (!(step_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "step size must be positive");
  w.validate();
  const size_t n = map.gaussians.size();

  struct Evaluation {
    double value = 0.0;
    std::vector<Rgb> gc;
    std::vector<double> go, h;
  };
  // Objective and its scaled gradient in one pass over every view.
  auto evaluate = [&](const GaussianMap& m) {
    Evaluation e;
    e.gc.assign(n, Rgb::Zero());
    e.go.assign(n, 0.0);
    e.h.assign(n, 0.0);
    auto accumulate = [&](const ColorOpacityGrad& g, double scale) {
      e.value += scale * g.loss;
      for (size_t i = 0; i < n; ++i) {
        e.gc[i] += scale * g.d_color[i];
        e.go[i] += scale * g.d_opacity[i];
        e.h[i] += scale * g.blend_weight[i];
      }
    };
    const Image no_conf;
    for (const auto& f : frames) {
      const double scale = w.w_total_t * w.w_obs / (frames.size() * 3.0 * f.color.pixel_count());
      accumulate(grad_color_opacity(m, f.color, no_conf, f.pose, ImageObjective::CharbonnierL1, opts), scale);
    }
    for (const auto& p : pseudo) {
      const double scale = w.w_total_v / (pseudo.size() * 3.0 * p.image.pixel_count());
      accumulate(grad_color_opacity(m, p.image, p.confidence, p.pose, ImageObjective::CharbonnierL1, opts), scale);
    }
    return e;
  };

  RefineResult res;
  res.map = map;
  Evaluation cur = evaluate(res.map);
  res.trace.push_back(cur.value);
  double next_step = step_size;
  for (int it = 0; it < iters; ++it) {
    bool accepted = false;
    double step = next_step;
    for (int bt = 0; bt <= 20 && !accepted; ++bt, step *= 0.5) {
      GaussianMap cand = res.map;
      for (size_t i = 0; i < n; ++i) {
        const double inv = 1.0 / (cur.h[i] + 1e-9);
        Gaussian& gs = cand.gaussians[i];
        for (int c = 0; c < 3; ++c) gs.color[c] = std::clamp(gs.color[c] - step * inv * cur.gc[i][c], 0.0, 1.0);
        gs.opacity = std::clamp(gs.opacity - step * inv * cur.go[i], 0.0, 1.0);
      }
      Evaluation next = evaluate(cand);
      if (next.value <= cur.value) {
        res.map = std::move(cand);
        cur = std::move(next);
        accepted = true;
        next_step = std::min(step_size, 2.0 * step);
      } else {
        ++res.backtracks;
      }
    }
    // No step size helps: the iterate is stationary up to the projection.
    if (!accepted) break;
    res.trace.push_back(cur.value);
  }
  return res;
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<double>& trace) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "iteration,loss\n";
  out.precision(17);
  for (size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
}

}  // namespace gsshare
