#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gsshare/bitstream.hpp"
#include "gsshare/enhance.hpp"
#include "gsshare/harness.hpp"
#include "gsshare/io.hpp"
#include "gsshare/map_build.hpp"
#include "gsshare/metrics.hpp"
#include "gsshare/protocol.hpp"
#include "gsshare/refine.hpp"
#include "gsshare/render.hpp"
#include "gsshare/scenegen.hpp"
#include "gsshare/transport.hpp"

namespace fs = std::filesystem;
using namespace gsshare;

namespace {

struct Common {
  uint64_t seed = 1;
  std::string config;
  std::string out;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "random seed")->each([&c](const std::string&) { c.seed_set = true; });
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--out", c.out, "output path");
}

ExperimentConfig config_of(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed_set) cfg.seed = c.seed;
  return cfg;
}

void require_out(const Common& c) {
  if (c.out.empty()) throw Error(ErrorCode::InvalidArgument, "--out is required");
}

GaussianMap load_map(const fs::path& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "GSMX") return deserialize_exact(bytes);
  return deserialize_full(bytes);
}

void save_map(const fs::path& path, const GaussianMap& map, const BlockCodecOptions& opts = {}) {
  if (path.extension() == ".gsb")
    write_file(path, serialize_full(map, opts).bytes);
  else
    write_file(path, serialize_exact(map));
}

SyntheticScene load_scene(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  try {
    return scene_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("scene is not valid JSON: ") + e.what());
  }
}

std::vector<std::vector<FrameRGBD>> split_by_contributor(const std::vector<FrameRGBD>& frames) {
  std::map<int, std::vector<FrameRGBD>> by;
  for (const auto& f : frames) by[f.contributor_id].push_back(f);
  std::vector<std::vector<FrameRGBD>> out;
  for (auto& [id, v] : by) out.push_back(std::move(v));
  return out;
}

void parse_addr(const std::string& addr, std::string& host, uint16_t& port) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "address must be host:port");
  host = addr.substr(0, colon);
  port = static_cast<uint16_t>(std::stoi(addr.substr(colon + 1)));
}

void write_experiment_plots(const fs::path& dir, const ExperimentResult& res) {
  std::map<std::string, Series> by;
  for (const auto& r : res.rows) {
    if (r.set != "extrap") continue;
    Series& s = by[r.variant];
    s.label = r.variant;
    s.x.push_back(r.stage);
    s.y.push_back(r.psnr_db);
  }
  std::vector<Series> series;
  for (auto& [k, s] : by) series.push_back(s);
  write_text(dir / "stage_psnr.svg", svg_line_plot("Extrapolated PSNR per stage", "stage", "PSNR (dB)", series));

  std::map<std::string, Series> size;
  for (const auto& r : res.rows) {
    if (r.set != "extrap") continue;
    Series& s = size[r.variant];
    s.label = r.variant;
    s.x.push_back(static_cast<double>(r.cum_bytes) / 1024.0);
    s.y.push_back(r.psnr_db);
  }
  series.clear();
  for (auto& [k, s] : size) series.push_back(s);
  write_text(dir / "size_psnr.svg", svg_line_plot("Transmitted size vs PSNR", "cumulative KiB", "PSNR (dB)", series));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Collaborative Gaussian map building, compression and sharing"};
  app.require_subcommand(1);

  Common common;

  auto* gen = app.add_subcommand("gen-scene", "generate a synthetic scene and contributor frames");
  add_common(gen, common);
  int contributors = 3, frames_each = 25;
  gen->add_option("--contributors", contributors, "number of contributors");
  gen->add_option("--frames", frames_each, "frames per contributor");

  auto* build = app.add_subcommand("build-map", "build an anchored map from RGB-D frames");
  add_common(build, common);
  std::string frames_dir;
  bool virtual_map = false;
  build->add_option("--frames", frames_dir, "frame directory")->required();
  build->add_flag("--virtual", virtual_map, "build the isotropic virtual map instead");

  auto* encode = app.add_subcommand("encode", "encode a map into a .gsb bitstream");
  add_common(encode, common);
  std::string map_path;
  double lambda = -1.0;
  encode->add_option("--map", map_path, "input map")->required();
  encode->add_option("--lambda", lambda, "rate-distortion weight");

  auto* decode = app.add_subcommand("decode", "decode a .gsb bitstream");
  add_common(decode, common);
  std::string in_path;
  decode->add_option("--in", in_path, "bitstream")->required();

  auto* rend = app.add_subcommand("render", "render a map from a pose");
  add_common(rend, common);
  std::string pose_path, depth_out;
  rend->add_option("--map", map_path, "map (.gsb or exact)")->required();
  rend->add_option("--pose", pose_path, "pose JSON")->required();
  rend->add_option("--depth", depth_out, "optional depth PFM output");

  auto* enh = app.add_subcommand("enhance", "produce pseudo ground truth at virtual poses");
  add_common(enh, common);
  std::string scene_path;
  enh->add_option("--frames", frames_dir, "frame directory")->required();
  enh->add_option("--scene", scene_path, "scene JSON (free-space test and bounds)")->required();

  auto* ref = app.add_subcommand("refine", "refine map colors and opacities");
  add_common(ref, common);
  int iters = -1;
  bool with_virtual = false;
  std::string trace_path;
  ref->add_option("--map", map_path, "input map")->required();
  ref->add_option("--frames", frames_dir, "frame directory")->required();
  ref->add_option("--scene", scene_path, "scene JSON, needed with --virtual");
  ref->add_option("--iters", iters, "iterations");
  ref->add_flag("--virtual", with_virtual, "add pseudo ground truth");
  ref->add_option("--trace", trace_path, "loss trace CSV");

  auto* serve = app.add_subcommand("serve", "publish stages from a scene directory and serve them over TCP");
  add_common(serve, common);
  std::string scene_dir;
  int port = 7878, max_clients = 0, stage_limit = -1;
  serve->add_option("--scene", scene_dir, "directory written by gen-scene")->required();
  serve->add_option("--port", port, "TCP port");
  serve->add_option("--max-clients", max_clients, "exit after serving this many clients");
  serve->add_option("--stage", stage_limit, "publish stages up to this one");

  auto* fet = app.add_subcommand("fetch", "fetch the latest map from a server");
  add_common(fet, common);
  std::string addr;
  fet->add_option("--addr", addr, "host:port")->required();
  fet->add_option("--stage", stage_limit, "start as if already at this stage");

  auto* exp = app.add_subcommand("run-experiment", "run the staged sharing experiment");
  add_common(exp, common);
  std::vector<std::string> variants;
  exp->add_option("--variant", variants, "baseline, +virt, +incr (repeatable)");

  auto* rd = app.add_subcommand("rd-sweep", "sweep the rate-distortion weight");
  add_common(rd, common);
  std::vector<double> lambdas;
  rd->add_option("--lambda", lambdas, "lambda values (default: 0.0005..0.0205 step 0.002)");

  auto* met = app.add_subcommand("metrics", "compare two images");
  add_common(met, common);
  std::string img_a, img_b;
  met->add_option("--a", img_a, "first PNG")->required();
  met->add_option("--b", img_b, "second PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) {
      require_out(common);
      const SyntheticScene scene = make_scene(common.seed);
      fs::create_directories(common.out);
      write_text(fs::path(common.out) / "scene.json", scene_to_json(scene).dump(2) + "\n");
      save_frames(fs::path(common.out) / "frames", generate_trajectories(scene, contributors, frames_each, common.seed));
      std::printf("wrote scene and %d frames to %s\n", contributors * frames_each, common.out.c_str());
    } else if (*build) {
      require_out(common);
      const ExperimentConfig cfg = config_of(common);
      const auto frames = load_frames(frames_dir);
      GaussianMap map;
      if (virtual_map) {
        map = build_virtual_map(frames, cfg.stride);
        write_file(common.out, serialize_exact(map));
      } else {
        AnchorInitOptions opts;
        opts.k = cfg.anchor_k;
        opts.initial_opacity = cfg.initial_opacity;
        map = build_global_map(frames, cfg.stride, cfg.epsilon, opts);
        save_map(common.out, map);
      }
      std::printf("%zu anchors, %zu gaussians\n", map.anchor_count(), map.gaussians.size());
    } else if (*encode) {
      require_out(common);
      const ExperimentConfig cfg = config_of(common);
      BlockCodecOptions opts;
      opts.lambda_q = lambda >= 0.0 ? lambda : cfg.weights.lambda_q;
      const GaussianMap map = load_map(map_path);
      const EncodedMap enc = serialize_full(map, opts);
      write_file(common.out, enc.bytes);
      std::printf("%zu bytes, step %g, ratio %.2f\n", enc.bytes.size(), enc.rd.step,
                  static_cast<double>(raw_size_bytes(map)) / enc.bytes.size());
    } else if (*decode) {
      require_out(common);
      const GaussianMap map = deserialize_full(read_file(in_path));
      write_file(common.out, serialize_exact(map));
      std::printf("stage %u, %zu anchors, %zu gaussians\n", map.stage_id, map.anchor_count(), map.gaussians.size());
    } else if (*rend) {
      require_out(common);
      const GaussianMap map = load_map(map_path);
      const RenderedViews r = render(map, read_pose(pose_path), Rgb::Zero());
      write_png(common.out, r.color);
      if (!depth_out.empty()) write_pfm(depth_out, r.depth);
      if (r.skipped_degenerate) std::printf("skipped %d degenerate gaussians\n", r.skipped_degenerate);
    } else if (*enh) {
      require_out(common);
      ExperimentConfig cfg = config_of(common);
      const auto frames = load_frames(frames_dir);
      const auto pseudo = stage_pseudo_gt(load_scene(scene_path), frames, cfg, 0);
      PseudoSet set;
      set.items = pseudo;
      export_pseudo_bundle(common.out, set, 0.0);
      std::printf("%zu pseudo views\n", pseudo.size());
    } else if (*ref) {
      require_out(common);
      const ExperimentConfig cfg = config_of(common);
      const auto frames = load_frames(frames_dir);
      std::vector<PseudoGT> pseudo;
      LossWeights w = cfg.weights;
      if (with_virtual) {
        if (scene_path.empty()) throw Error(ErrorCode::InvalidArgument, "--virtual needs --scene");
        pseudo = stage_pseudo_gt(load_scene(scene_path), frames, cfg, 0);
      } else {
        w.w_total_v = 0.0;
      }
      const RefineResult res = refine_map(load_map(map_path), frames, pseudo, w,
                                          iters >= 0 ? iters : cfg.refine_iters, cfg.step_size,
                                          RenderOptions{cfg.alpha_cutoff});
      save_map(common.out, res.map);
      if (!trace_path.empty()) write_loss_trace(trace_path, res.trace);
      std::printf("loss %.6f -> %.6f\n", res.trace.front(), res.trace.back());
    } else if (*serve) {
      ExperimentConfig cfg = config_of(common);
      const SyntheticScene scene = load_scene(fs::path(scene_dir) / "scene.json");
      const auto frames = load_frames(fs::path(scene_dir) / "frames");
      auto inputs = split_by_contributor(frames);
      if (stage_limit >= 0 && static_cast<size_t>(stage_limit + 1) < inputs.size()) inputs.resize(stage_limit + 1);
      cfg.stages = static_cast<int>(inputs.size());
      BlockCodecOptions full_opts;
      full_opts.lambda_q = cfg.weights.lambda_q;
      BlockCodecOptions inc_opts = increment_codec_options();
      inc_opts.lambda_q = cfg.weights.lambda_q;
      ServerState server(full_opts, inc_opts);
      for (const auto& f : frames) server.add_frame(f);
      for (const auto& target : train_stages(scene, inputs, cfg, true)) {
        const PublishedStage& p = server.publish(target);
        std::printf("published stage %u\n", p.stage_id);
      }
      TcpListener listener(static_cast<uint16_t>(port));
      std::printf("listening on 127.0.0.1:%u\n", listener.port());
      std::fflush(stdout);
      std::atomic<bool> stop{false};
      serve_loop(server, listener, stop, static_cast<size_t>(max_clients));
    } else if (*fet) {
      require_out(common);
      std::string host;
      uint16_t p = 0;
      parse_addr(addr, host, p);
      auto conn = tcp_connect(host, p);
      ClientState client;
      if (stage_limit >= 0) {
        // Testing aid: claim a stage without holding its map; the server answers from there.
        Message hello;
        hello.type = MsgType::Hello;
        hello.stage = static_cast<uint32_t>(stage_limit);
        send_message(*conn, hello);
        const Message reply = receive_message(*conn);
        if (reply.type == MsgType::Error) raise_error(reply);
        std::printf("server replied with message type %d for stage %u\n", static_cast<int>(reply.type), reply.stage);
        return 0;
      }
      const FetchResult got = fetch(*conn, client);
      fs::create_directories(common.out);
      write_file(fs::path(common.out) / "map.gsx", serialize_exact(*client.map));
      std::printf("stage %u after %d full and %d increment messages, %zu bytes\n", client.map->stage_id,
                  got.full_messages, got.increment_messages, got.bytes_received);
    } else if (*exp) {
      require_out(common);
      ExperimentConfig cfg = config_of(common);
      if (!variants.empty()) cfg.variants = variants;
      const ExperimentResult res = run_experiment(cfg);
      fs::create_directories(common.out);
      write_text(fs::path(common.out) / "results.csv", res.csv);
      write_experiment_plots(common.out, res);
      nlohmann::json summary = {{"incr_cum_bytes", res.incr_cum_bytes}, {"full_cum_bytes", res.full_cum_bytes},
                                {"client_matches_server", res.client_matches_server}, {"seconds", res.seconds},
                                {"config", config_to_json(cfg)}};
      write_text(fs::path(common.out) / "summary.json", summary.dump(2) + "\n");
      std::fputs(res.csv.c_str(), stdout);
    } else if (*rd) {
      require_out(common);
      ExperimentConfig cfg = config_of(common);
      cfg.variants = {"+virt"};
      const ExperimentResult res = run_experiment(cfg);
      const auto rows = rd_sweep(res.final_map, res.eval.extrap, lambdas.empty() ? default_lambda_schedule() : lambdas,
                                 {}, RenderOptions{cfg.alpha_cutoff});
      fs::create_directories(common.out);
      write_text(fs::path(common.out) / "rd.csv", rd_csv(rows));
      Series s{"+virt", {}, {}};
      for (const auto& r : rows) {
        s.x.push_back(r.compression_ratio);
        s.y.push_back(r.psnr_db);
      }
      write_text(fs::path(common.out) / "rd.svg", svg_line_plot("Rate-distortion sweep", "compression ratio", "PSNR (dB)", {s}));
      std::fputs(rd_csv(rows).c_str(), stdout);
    } else if (*met) {
      const Image a = read_png(img_a), b = read_png(img_b);
      std::printf("psnr_db,ssim,l1\n%.6f,%.6f,%.6f\n", psnr(a, b), ssim(a, b), l1(a, b));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
