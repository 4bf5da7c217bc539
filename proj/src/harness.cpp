#include "gsshare/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "gsshare/bitstream.hpp"
#include "gsshare/enhance.hpp"
#include "gsshare/map_build.hpp"
#include "gsshare/protocol.hpp"
#include "gsshare/refine.hpp"
#include "gsshare/render.hpp"
#include "gsshare/transport.hpp"

namespace gsshare {

namespace {

using nlohmann::json;

const std::set<std::string> kVariants = {"baseline", "+virt", "+incr"};

bool has_variant(const ExperimentConfig& c, const std::string& v) {
  return std::find(c.variants.begin(), c.variants.end(), v) != c.variants.end();
}

struct SetScore {
  double psnr = 0.0, ssim = 0.0, depth_cm = 0.0;
};

RenderOptions render_options(const ExperimentConfig& c) {
  RenderOptions o;
  o.alpha_cutoff = c.alpha_cutoff;
  return o;
}

SetScore score(const GaussianMap& map, const std::vector<FrameRGBD>& views, const RenderOptions& opts) {
  SetScore s;
  for (const auto& v : views) {
    const RenderedViews r = render(map, v.pose, Rgb::Zero(), opts);
    s.psnr += psnr(r.color, v.color);
    s.ssim += ssim(r.color, v.color);
    std::vector<uint8_t> valid(v.depth.pixel_count());
    for (size_t i = 0; i < valid.size(); ++i) valid[i] = v.depth.data()[i] > 0.0;
    s.depth_cm += 100.0 * depth_l1(r.depth, v.depth, valid);
  }
  const double n = static_cast<double>(views.size());
  s.psnr /= n;
  s.ssim /= n;
  s.depth_cm /= n;
  return s;
}

std::vector<CameraPose> poses_of(const std::vector<FrameRGBD>& frames) {
  std::vector<CameraPose> p;
  for (const auto& f : frames) p.push_back(f.pose);
  return p;
}

}  // namespace

std::vector<PseudoGT> stage_pseudo_gt(const SyntheticScene& scene, const std::vector<FrameRGBD>& frames,
                                      const ExperimentConfig& cfg, uint32_t stage) {
  const GaussianMap vmap = build_virtual_map(frames, cfg.stride);
  std::vector<CalibrationPair> pairs;
  const int n_cal = std::min<int>(cfg.calibration_frames, static_cast<int>(frames.size()));
  for (int i = 0; i < n_cal; ++i) {
    const FrameRGBD& f = frames[static_cast<size_t>(i) * frames.size() / n_cal];
    pairs.push_back({render(vmap, f.pose, Rgb::Zero(), render_options(cfg)), f.color});
  }
  const ConfidencePredictor pred = fit_confidence_predictor(pairs);
  Bounds b;
  b.lo = scene.room.lo.array() + scene.free_margin;
  b.hi = scene.room.hi.array() - scene.free_margin;
  b.lo.z() = std::max(b.lo.z(), 0.9);
  b.hi.z() = std::min(b.hi.z(), 1.7);
  const VirtualPoses vp = sample_virtual_poses(
      b, poses_of(frames), scene.intrinsics, cfg.virtual_views, cfg.seed * 7919 + stage,
      [&](const Vec3& p) { return in_free_space(scene, p, scene.free_margin); });
  return make_pseudo_gt(vmap, vp.poses, pred, cfg.hole_threshold).items;
}

std::vector<GaussianMap> train_stages(const SyntheticScene& scene,
                                      const std::vector<std::vector<FrameRGBD>>& inputs,
                                      const ExperimentConfig& cfg, bool use_virtual) {
  AnchorInitOptions opts;
  opts.k = cfg.anchor_k;
  opts.initial_opacity = cfg.initial_opacity;
  std::vector<GaussianMap> targets;
  std::vector<FrameRGBD> so_far;
  GaussianMap target;
  LossWeights w = cfg.weights;
  if (!use_virtual) w.w_total_v = 0.0;
  for (int s = 0; s < cfg.stages; ++s) {
    so_far.insert(so_far.end(), inputs[s].begin(), inputs[s].end());
    if (s == 0)
      target = build_global_map(so_far, cfg.stride, cfg.epsilon, opts);
    else
      extend_global_map(target, inputs[s], cfg.stride, opts);
    target.stage_id = static_cast<uint32_t>(s);
    std::vector<PseudoGT> pseudo;
    if (use_virtual) pseudo = stage_pseudo_gt(scene, so_far, cfg, static_cast<uint32_t>(s));
    target = refine_map(target, so_far, pseudo, w, cfg.refine_iters, cfg.step_size, render_options(cfg)).map;
    target.stage_id = static_cast<uint32_t>(s);
    targets.push_back(target);
  }
  return targets;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (stages < 1) throw Error(ErrorCode::InvalidArgument, "stages must be >= 1");
  if (frames_each < 1 || eval_positions < 1 || eval_rotations < 1 || stride < 1 || anchor_k < 1)
    throw Error(ErrorCode::InvalidArgument, "counts must be positive");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
  if (refine_iters < 0 || !(step_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "bad refine settings");
  if (!(alpha_cutoff > 0.0 && alpha_cutoff < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha_cutoff must be in (0, 1)");
  if (virtual_views < 1 || calibration_frames < 1) throw Error(ErrorCode::InvalidArgument, "bad enhancement settings");
  if (variants.empty()) throw Error(ErrorCode::InvalidArgument, "no variants");
  for (const auto& v : variants)
    if (!kVariants.count(v)) throw Error(ErrorCode::InvalidArgument, "unknown variant " + v);
  weights.validate();
}

json config_to_json(const ExperimentConfig& c) {
  const LossWeights& w = c.weights;
  return {{"seed", c.seed}, {"scene_path", c.scene_path}, {"stages", c.stages},
          {"frames_each", c.frames_each}, {"eval_positions", c.eval_positions},
          {"eval_rotations", c.eval_rotations}, {"stride", c.stride}, {"epsilon", c.epsilon},
          {"anchor_k", c.anchor_k}, {"initial_opacity", c.initial_opacity},
          {"refine_iters", c.refine_iters}, {"step_size", c.step_size},
          {"virtual_views", c.virtual_views}, {"calibration_frames", c.calibration_frames},
          {"hole_threshold", c.hole_threshold}, {"alpha_cutoff", c.alpha_cutoff},
          {"variants", c.variants},
          {"weights",
           {{"w_obs", w.w_obs}, {"w_ssim", w.w_ssim}, {"w_reg", w.w_reg}, {"w_depth", w.w_depth},
            {"w_normal", w.w_normal}, {"w_total_t", w.w_total_t}, {"w_total_v", w.w_total_v},
            {"lambda_q", w.lambda_q}}}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  json merged = config_to_json(c);
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!merged.contains(it.key())) throw Error(ErrorCode::InvalidArgument, "unknown config key " + it.key());
    if (it.key() == "weights") {
      for (auto wi = it->begin(); wi != it->end(); ++wi) {
        if (!merged["weights"].contains(wi.key())) throw Error(ErrorCode::InvalidArgument, "unknown weight " + wi.key());
        merged["weights"][wi.key()] = *wi;
      }
    } else {
      merged[it.key()] = *it;
    }
  }
  try {
    c.seed = merged["seed"];
    c.scene_path = merged["scene_path"];
    c.stages = merged["stages"];
    c.frames_each = merged["frames_each"];
    c.eval_positions = merged["eval_positions"];
    c.eval_rotations = merged["eval_rotations"];
    c.stride = merged["stride"];
    c.epsilon = merged["epsilon"];
    c.anchor_k = merged["anchor_k"];
    c.initial_opacity = merged["initial_opacity"];
    c.refine_iters = merged["refine_iters"];
    c.step_size = merged["step_size"];
    c.virtual_views = merged["virtual_views"];
    c.calibration_frames = merged["calibration_frames"];
    c.hole_threshold = merged["hole_threshold"];
    c.alpha_cutoff = merged["alpha_cutoff"];
    c.variants = merged["variants"].get<std::vector<std::string>>();
    const auto& w = merged["weights"];
    c.weights.w_obs = w["w_obs"];
    c.weights.w_ssim = w["w_ssim"];
    c.weights.w_reg = w["w_reg"];
    c.weights.w_depth = w["w_depth"];
    c.weights.w_normal = w["w_normal"];
    c.weights.w_total_t = w["w_total_t"];
    c.weights.w_total_v = w["w_total_v"];
    c.weights.lambda_q = w["lambda_q"];
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, "config is not valid JSON: " + std::string(e.what()));
  }
}

double ExperimentResult::psnr(const std::string& variant, const std::string& set, uint32_t stage) const {
  for (const auto& r : rows)
    if (r.variant == variant && r.set == set && r.stage == stage) return r.psnr_db;
  return std::numeric_limits<double>::quiet_NaN();
}

std::string experiment_csv_header() {
  return "stage,variant,set,psnr_db,ssim,depth_l1_cm,bytes,cum_bytes,compression_ratio,cum_compression_ratio";
}

std::string experiment_csv_row(const ExperimentRow& r) {
  std::ostringstream o;
  o << r.stage << ',' << r.variant << ',' << r.set << ',' << fmt(r.psnr_db) << ',' << fmt(r.ssim) << ','
    << fmt(r.depth_l1_cm) << ',' << r.bytes << ',' << r.cum_bytes << ',' << fmt(r.compression_ratio) << ','
    << fmt(r.cum_compression_ratio);
  return o.str();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;

  SyntheticScene scene;
  if (cfg.scene_path.empty()) {
    scene = make_scene(cfg.seed);
  } else {
    std::ifstream in(cfg.scene_path);
    if (!in) throw Error(ErrorCode::Io, "cannot read scene " + cfg.scene_path);
    scene = scene_from_json(json::parse(in));
  }

  // Every other trajectory frame is uploaded; the rest are held out as candidate views.
  const std::vector<FrameRGBD> walk = generate_trajectories(scene, cfg.stages, 2 * cfg.frames_each, cfg.seed);
  std::vector<std::vector<FrameRGBD>> inputs(cfg.stages);
  std::vector<FrameRGBD> heldout, all_inputs;
  for (size_t i = 0; i < walk.size(); ++i) {
    const size_t within = i % (2 * cfg.frames_each);
    if (within % 2 == 0) {
      inputs[walk[i].contributor_id].push_back(walk[i]);
      all_inputs.push_back(walk[i]);
    } else {
      heldout.push_back(walk[i]);
    }
  }
  const std::vector<CameraPose> input_poses = poses_of(all_inputs);
  const EvalViews sampled = generate_eval_views(scene, cfg.eval_positions, cfg.eval_rotations, cfg.seed, input_poses);
  const EvalViews held = label_views(heldout, input_poses);
  res.eval.interp = held.interp;
  res.eval.interp.insert(res.eval.interp.end(), sampled.interp.begin(), sampled.interp.end());
  res.eval.extrap = sampled.extrap;
  res.eval.extrap.insert(res.eval.extrap.end(), held.extrap.begin(), held.extrap.end());

  std::vector<GaussianMap> plain, virt;
  try {
    if (has_variant(cfg, "baseline")) plain = train_stages(scene, inputs, cfg, false);
    if (has_variant(cfg, "+virt") || has_variant(cfg, "+incr")) virt = train_stages(scene, inputs, cfg, true);
  } catch (const Error& e) {
    throw Error(e.code(), std::string("training: ") + e.what());
  }

  BlockCodecOptions full_opts;
  full_opts.lambda_q = cfg.weights.lambda_q;
  BlockCodecOptions inc_opts = increment_codec_options();
  inc_opts.lambda_q = cfg.weights.lambda_q;

  auto emit = [&](uint32_t stage, const std::string& variant, const GaussianMap& map, size_t bytes,
                  size_t cum, double raw_cum) {
    for (const auto* set : {"interp", "extrap"}) {
      const auto& views = std::string(set) == "interp" ? res.eval.interp : res.eval.extrap;
      if (views.empty()) continue;
      const SetScore s = score(map, views, render_options(cfg));
      ExperimentRow r;
      r.stage = stage;
      r.variant = variant;
      r.set = set;
      r.views = views.size();
      r.psnr_db = s.psnr;
      r.ssim = s.ssim;
      r.depth_l1_cm = s.depth_cm;
      r.bytes = bytes;
      r.cum_bytes = cum;
      r.compression_ratio = static_cast<double>(raw_size_bytes(map)) / static_cast<double>(bytes);
      r.cum_compression_ratio = raw_cum / static_cast<double>(cum);
      res.rows.push_back(r);
    }
  };

  for (const std::string variant : {"baseline", "+virt"}) {
    if (!has_variant(cfg, variant)) continue;
    const auto& targets = variant == "baseline" ? plain : virt;
    size_t cum = 0;
    double raw_cum = 0.0;
    for (int s = 0; s < cfg.stages; ++s) {
      const EncodedMap enc = serialize_full(targets[s], full_opts);
      const GaussianMap decoded = deserialize_full(enc.bytes);
      cum += enc.bytes.size();
      raw_cum += static_cast<double>(raw_size_bytes(decoded));
      if (variant == "+virt") res.full_cum_bytes = cum;
      emit(static_cast<uint32_t>(s), variant, decoded, enc.bytes.size(), cum, raw_cum);
    }
  }

  if (has_variant(cfg, "+incr")) {
    ServerState server(full_opts, inc_opts);
    for (const auto& f : all_inputs) server.add_frame(f);
    ClientState client;
    size_t cum = 0, full_cum = 0;
    double raw_cum = 0.0;
    for (int s = 0; s < cfg.stages; ++s) {
      const PublishedStage published = server.publish(virt[s]);
      full_cum += published.full_equivalent_bytes;
      DuplexPair pipe = make_duplex_pair();
      std::thread serving([&] { serve_connection(server, *pipe.b); });
      const FetchResult got = fetch(*pipe.a, client);
      pipe.a->close();
      serving.join();
      const StageRecord rec = server.db().get(static_cast<uint32_t>(s));
      cum += rec.transmitted_bytes;
      raw_cum += static_cast<double>(raw_size_bytes(*client.map));
      res.client_matches_server.push_back(serialize_exact(*client.map) == serialize_exact(published.map));
      (void)got;
      emit(static_cast<uint32_t>(s), "+incr", *client.map, rec.transmitted_bytes, cum, raw_cum);
    }
    res.incr_cum_bytes = cum;
    res.full_cum_bytes = full_cum;
  }

  if (!virt.empty()) res.final_map = virt.back();
  else if (!plain.empty()) res.final_map = plain.back();

  std::ostringstream csv;
  csv << experiment_csv_header() << '\n';
  for (const auto& r : res.rows) csv << experiment_csv_row(r) << '\n';
  res.csv = csv.str();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

std::vector<double> default_lambda_schedule() {
  std::vector<double> l;
  for (int i = 0; i < 11; ++i) l.push_back(0.0005 + 0.002 * i);
  return l;
}

std::vector<RdRow> rd_sweep(const GaussianMap& map, const std::vector<FrameRGBD>& views,
                            const std::vector<double>& lambdas, const BlockCodecOptions& base,
                            const RenderOptions& render_opts) {
  if (lambdas.empty()) throw Error(ErrorCode::InvalidArgument, "no lambda values");
  std::vector<RdRow> rows;
  const double raw = static_cast<double>(raw_size_bytes(map));
  for (double lambda : lambdas) {
    if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be non-negative");
    BlockCodecOptions opts = base;
    opts.lambda_q = lambda;
    const EncodedMap enc = serialize_full(map, opts);
    const GaussianMap decoded = deserialize_full(enc.bytes);
    RdRow r;
    r.lambda_q = lambda;
    r.step = enc.rd.step;
    r.bytes = enc.bytes.size();
    r.compression_ratio = raw / static_cast<double>(r.bytes);
    if (!views.empty()) {
      for (const auto& v : views) r.psnr_db += psnr(render(decoded, v.pose, Rgb::Zero(), render_opts).color, v.color);
      r.psnr_db /= static_cast<double>(views.size());
    }
    rows.push_back(r);
  }
  return rows;
}

std::string rd_csv(const std::vector<RdRow>& rows) {
  std::ostringstream o;
  o << "lambda_q,step,bytes,psnr_db,compression_ratio\n";
  for (const auto& r : rows)
    o << fmt(r.lambda_q) << ',' << fmt(r.step) << ',' << r.bytes << ',' << fmt(r.psnr_db) << ','
      << fmt(r.compression_ratio) << '\n';
  return o.str();
}

std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<Series>& series) {
  constexpr double kW = 640, kH = 420, kL = 70, kR = 150, kT = 40, kB = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); };
  auto py = [&](double y) { return kH - kB - (y - y0) / (y1 - y0) * (kH - kT - kB); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream o;
  o.precision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  o << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << kH - kB + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << xv << "</text>\n";
    o << "<text x=\"" << kL - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << yv << "</text>\n";
  }
  o << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label << "</text>\n";
  o << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
    << (kT + kH - kB) / 2 << ")\">" << y_label << "</text>\n";
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kColors[si % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    o << "\"/>\n";
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
        o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = kT + 18.0 * si;
    o << "<line x1=\"" << kW - kR + 12 << "\" y1=\"" << ly << "\" x2=\"" << kW - kR + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << kW - kR + 38 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">" << s.label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace gsshare
