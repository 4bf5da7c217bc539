#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gsshare/harness.hpp"

using namespace gsshare;

namespace {

// Small enough to run in seconds.
ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.seed = 3;
  c.stages = 2;
  c.frames_each = 3;
  c.eval_positions = 3;
  c.eval_rotations = 2;
  c.refine_iters = 2;
  c.virtual_views = 2;
  c.calibration_frames = 3;
  return c;
}

}  // namespace

TEST_CASE("config json round trip, defaults and rejection") {
  ExperimentConfig c = tiny_config();
  c.variants = {"+virt"};
  c.weights.w_total_v = 0.3;
  const ExperimentConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));

  const ExperimentConfig defaults = config_from_json(nlohmann::json::object());
  CHECK(config_to_json(defaults) == config_to_json(ExperimentConfig{}));
  CHECK(config_from_json({{"stages", 1}}).stages == 1);

  CHECK_THROWS_AS(config_from_json({{"stagez", 2}}), Error);
  CHECK_THROWS_AS(config_from_json({{"weights", {{"w_nope", 1.0}}}}), Error);
  CHECK_THROWS_AS(config_from_json({{"stages", 0}}), Error);
  CHECK_THROWS_AS(config_from_json({{"variants", {"+magic"}}}), Error);

  const auto path = std::filesystem::temp_directory_path() / "gsshare_cfg_test.json";
  {
    std::ofstream out(path);
    out << config_to_json(c).dump(2);
  }
  CHECK(config_to_json(load_config(path)) == config_to_json(c));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_config(path), Error);
}

TEST_CASE("csv formats") {
  CHECK(experiment_csv_header() ==
        "stage,variant,set,psnr_db,ssim,depth_l1_cm,bytes,cum_bytes,compression_ratio,cum_compression_ratio");
  const auto l = default_lambda_schedule();
  REQUIRE(l.size() == 11);
  CHECK(l.front() == doctest::Approx(0.0005));
  CHECK(l.back() == doctest::Approx(0.0205));
  for (size_t i = 1; i < l.size(); ++i) CHECK(l[i] - l[i - 1] == doctest::Approx(0.002));
  const std::string svg = svg_line_plot("t", "x", "y", {{"alpha", {0, 1, 2}, {3, 1, 2}}, {"beta", {0, 2}, {1, 1}}});
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("alpha") != std::string::npos);
  CHECK(svg.find("beta") != std::string::npos);
}

TEST_CASE("single stage without the increment path sends one full bitstream") {
  ExperimentConfig c = tiny_config();
  c.stages = 1;
  c.variants = {"baseline"};
  const ExperimentResult r = run_experiment(c);
  REQUIRE(!r.rows.empty());
  BlockCodecOptions opts;
  opts.lambda_q = c.weights.lambda_q;
  const size_t full = serialize_full(r.final_map, opts).bytes.size();
  for (const auto& row : r.rows) {
    CHECK(row.stage == 0);
    CHECK(row.variant == "baseline");
    CHECK(row.bytes == full);
    CHECK(row.cum_bytes == full);
  }
  CHECK(std::isnan(r.psnr("+virt", "extrap", 0)));
  CHECK(r.client_matches_server.empty());
}

TEST_CASE("staged run is deterministic and the client tracks the server") {
  const ExperimentConfig c = tiny_config();
  const ExperimentResult a = run_experiment(c);
  const ExperimentResult b = run_experiment(c);
  CHECK(a.csv == b.csv);
  REQUIRE(a.client_matches_server.size() == 2);
  for (bool m : a.client_matches_server) CHECK(m);
  CHECK(a.incr_cum_bytes > 0);
  CHECK(a.full_cum_bytes > 0);

  // Stage 0 of the increment path is the same full bitstream the +virt variant sends.
  size_t virt0 = 0, incr0 = 0, incr1_cum = 0, incr1 = 0;
  for (const auto& row : a.rows) {
    if (row.stage == 0 && row.variant == "+virt") virt0 = row.bytes;
    if (row.stage == 0 && row.variant == "+incr") incr0 = row.bytes;
    if (row.stage == 1 && row.variant == "+incr") {
      incr1 = row.bytes;
      incr1_cum = row.cum_bytes;
    }
    CHECK(row.views > 0);
    CHECK(row.ssim <= 1.0);
    CHECK(row.depth_l1_cm >= 0.0);
  }
  CHECK(virt0 > 0);
  CHECK(incr0 == virt0);
  CHECK(incr1_cum == incr0 + incr1);
  CHECK(a.incr_cum_bytes == incr1_cum);
  for (const auto* v : {"baseline", "+virt", "+incr"})
    for (const auto* s : {"interp", "extrap"})
      for (uint32_t st = 0; st < 2; ++st)
        if (!(s == std::string("interp") && a.eval.interp.empty()) && !(s == std::string("extrap") && a.eval.extrap.empty()))
          CHECK(std::isfinite(a.psnr(v, s, st)));
}

TEST_CASE("rd sweep rows") {
  ExperimentConfig c = tiny_config();
  c.stages = 1;
  c.variants = {"baseline"};
  const ExperimentResult r = run_experiment(c);
  const RenderOptions ro{c.alpha_cutoff, 16};
  const auto one = rd_sweep(r.final_map, r.eval.extrap, {0.0105}, {}, ro);
  CHECK(one.size() == 1);
  const BlockCodecOptions base;
  const auto zero = rd_sweep(r.final_map, r.eval.extrap, {0.0}, base, ro);
  REQUIRE(zero.size() == 1);
  CHECK(zero[0].step == static_cast<float>(base.candidate_steps.front()));
  CHECK(zero[0].compression_ratio == doctest::Approx(static_cast<double>(r.final_map.gaussians.size()) * 14 * 4 / zero[0].bytes));
  const auto two = rd_sweep(r.final_map, r.eval.extrap, {0.0, 0.0205}, base, ro);
  CHECK(two[0].bytes >= two[1].bytes);
  CHECK(two[0].step <= two[1].step);
  CHECK(rd_csv(two).rfind("lambda_q,step,bytes,psnr_db,compression_ratio\n", 0) == 0);
  CHECK_THROWS_AS(rd_sweep(r.final_map, r.eval.extrap, {}, base, ro), Error);
  CHECK_THROWS_AS(rd_sweep(r.final_map, r.eval.extrap, {-1.0}, base, ro), Error);
}
