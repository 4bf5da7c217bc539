#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <Eigen/SVD>

#include "generators.hpp"
#include "gsshare/bitstream.hpp"
#include "gsshare/codec.hpp"
#include "gsshare/entropy.hpp"
#include "gsshare/render.hpp"

using namespace gsshare;

namespace {

int32_t laplace_symbol(std::mt19937_64& rng, double mu, double b) {
  const double u = gen::uniform(rng, -0.5, 0.5);
  const double x = mu - b * (u < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(u));
  return static_cast<int32_t>(std::lround(x));
}

double empirical_entropy_bits(const std::vector<int32_t>& s) {
  std::map<int32_t, size_t> counts;
  for (int32_t v : s) ++counts[v];
  double h = 0.0;
  for (const auto& [v, c] : counts) {
    const double p = static_cast<double>(c) / s.size();
    h -= c * std::log2(p);
  }
  return h;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols, double lo = -1, double hi = 1) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = gen::uniform(rng, lo, hi);
  return m;
}

ErrorCode error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a throw");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("embedding full rank and rank one are exact") {
  std::mt19937_64 rng(31);
  const Eigen::MatrixXd x = random_matrix(rng, 30, 16);
  const EmbeddingFit fit = fit_embedding(x, 16);
  CHECK((reconstruct_attributes(fit.embeddings, fit.decoder) - x).cwiseAbs().maxCoeff() < 1e-5);
  const Eigen::MatrixXd gram = fit.decoder.basis.transpose() * fit.decoder.basis;
  CHECK((gram - Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-6);

  const Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(20, -1, 2);
  const Eigen::RowVectorXd v = Eigen::RowVectorXd::LinSpaced(8, 0.5, -3);
  const Eigen::MatrixXd r1 = u * v + Eigen::MatrixXd::Constant(20, 8, 0.25);
  const EmbeddingFit f1 = fit_embedding(r1, 1);
  CHECK((reconstruct_attributes(f1.embeddings, f1.decoder) - r1).cwiseAbs().maxCoeff() < 1e-9);

  CHECK_THROWS_AS(fit_embedding(Eigen::MatrixXd(0, 8), 2), Error);
  CHECK_THROWS_AS(fit_embedding(r1, 9), Error);
  CHECK_THROWS_AS(fit_embedding(r1, 0), Error);
}

TEST_CASE("embedding error equals the discarded singular values") {
  std::mt19937_64 rng(32);
  const Eigen::MatrixXd x = random_matrix(rng, 100, 80);
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  const Eigen::VectorXd sv = svd.singularValues();
  double prev = std::numeric_limits<double>::infinity();
  for (int d : {5, 10, 20, 40, 80}) {
    const EmbeddingFit fit = fit_embedding(x, d);
    const double err = (reconstruct_attributes(fit.embeddings, fit.decoder) - x).squaredNorm();
    double discarded = 0.0;
    for (int i = d; i < sv.size(); ++i) discarded += sv[i] * sv[i];
    CHECK(std::abs(err - discarded) < 1e-6);
    CHECK(err <= prev + 1e-9);
    prev = err;
  }
  // Half the dimension never reconstructs better.
  const double e25 = (reconstruct_attributes(fit_embedding(x, 25).embeddings, fit_embedding(x, 25).decoder) - x).squaredNorm();
  const EmbeddingFit f50 = fit_embedding(x, 50);
  CHECK(e25 >= (reconstruct_attributes(f50.embeddings, f50.decoder) - x).squaredNorm());
  // Deterministic given input.
  CHECK(fit_embedding(x, 10).embeddings == fit_embedding(x, 10).embeddings);
}

TEST_CASE("decode_anchor contracts") {
  std::mt19937_64 rng(33);
  const int k = 3;
  const int a = k * kAttrsPerGaussian;
  AnchorFeature f;
  f.anchor_position = Vec3(0.3, -0.6, 1.2);
  f.scales = Eigen::MatrixX3d::Constant(k, 3, 0.01);
  f.scales.col(2).setZero();
  f.offsets = random_matrix(rng, k, 3, -0.02, 0.02);
  DecoderWeights w;
  w.mean = Eigen::VectorXd::Zero(a);
  for (int i = 0; i < k; ++i) {
    w.mean.segment<3>(i * 8) = Eigen::Vector3d(0.2, 0.4, 0.6);
    w.mean[i * 8 + 3] = 0.5;
    w.mean[i * 8 + 4] = 1.0;
  }
  w.basis = Eigen::MatrixXd::Zero(a, 2);
  w.basis(3, 0) = 1.0;  // first Gaussian's opacity
  w.basis(0, 1) = 1.0;
  f.embedding = Eigen::VectorXd::Zero(2);
  std::vector<Gaussian> gs = decode_anchor(f, w);
  REQUIRE(gs.size() == 3);
  for (int i = 0; i < k; ++i) {
    CHECK(gs[i].color == Rgb(0.2, 0.4, 0.6));
    CHECK(gs[i].opacity == 0.5);
    CHECK((gs[i].position - (f.anchor_position + f.offsets.row(i).transpose())).norm() < 1e-15);
    CHECK(gs[i].kind == GaussianKind::Flat2D);
  }
  f.embedding[0] = 0.8;
  f.embedding[1] = -0.5;
  gs = decode_anchor(f, w);
  CHECK(gs[0].opacity == 1.0);
  CHECK(gs[0].color.x() == 0.0);
  f.embedding = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(decode_anchor(f, w), Error);
}

TEST_CASE("decode_anchor round trips fitted anchors at full rank") {
  std::mt19937_64 rng(34);
  GaussianMap m = gen::anchored_map(rng, 40, 4);
  for (auto& g : m.gaussians) g = sanitized(g);
  const AttributeBlock b = map_block(m);
  const EmbeddingFit fit = fit_embedding(b.attrs, static_cast<int>(b.attrs.cols()));
  for (size_t a = 0; a < m.anchor_count(); ++a) {
    AnchorFeature f;
    f.anchor_position = m.anchor_position(a);
    f.scales = b.scales.middleRows(a * 4, 4);
    f.offsets = b.offsets.middleRows(a * 4, 4);
    f.embedding = fit.embeddings.row(a).transpose();
    const auto gs = decode_anchor(f, fit.decoder);
    for (int i = 0; i < 4; ++i) {
      const Gaussian& g = m.gaussians[a * 4 + i];
      CHECK((gs[i].position - g.position).norm() < 1e-5);
      CHECK((gs[i].color - g.color).norm() < 1e-5);
      CHECK(std::abs(gs[i].opacity - g.opacity) < 1e-5);
      CHECK((gs[i].rotation.coeffs() - g.rotation.coeffs()).norm() < 1e-5);
    }
  }
}

TEST_CASE("quantize examples and properties") {
  CHECK(quantize_value(1.23, 0.5) == 1.0);
  CHECK(quantize_value(1.5, 0.5) == 1.5);
  CHECK(quantize_symbol(-0.75, 0.5) == -2);  // half away from zero
  std::mt19937_64 rng(35);
  Eigen::MatrixXd x(25000, 4);
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < 4; ++j) x(i, j) = gen::uniform(rng, -50, 50);
  QuantizationSpec spec{{0.5, 0.013, 1.7, 3e-4}};
  const Eigen::MatrixXd q = quantize(x, spec);
  for (int j = 0; j < 4; ++j) CHECK((x.col(j) - q.col(j)).cwiseAbs().maxCoeff() <= spec.steps[j] / 2);
  CHECK(quantize(q, spec) == q);
  CHECK(dequantize(quantize_symbols(x, spec), spec, x.rows()) == q);
  const QuantizationSpec bad{{1.0, 0.0}};
  CHECK_THROWS_AS(bad.validate(), Error);
  const QuantizationSpec narrow{{1.0}};
  CHECK_THROWS_AS(quantize(x, narrow), Error);
}

TEST_CASE("injected noise is bounded, deterministic and has uniform moments") {
  std::mt19937_64 rng(36);
  const Eigen::MatrixXd x = random_matrix(rng, 1000, 1000);
  const double st = 0.2;
  const QuantizationSpec spec = uniform_spec(1000, st);
  const Eigen::MatrixXd y = inject_noise(x, spec, 7);
  CHECK(y == inject_noise(x, spec, 7));
  CHECK(y != inject_noise(x, spec, 8));
  const Eigen::ArrayXXd n = (y - x).array();
  CHECK(n.abs().maxCoeff() <= st / 2 + 1e-15);
  const double count = static_cast<double>(n.size());
  const double mean = n.sum() / count;
  const double var = (n - mean).square().sum() / (count - 1);
  const double sigma = st / std::sqrt(12.0);
  CHECK(std::abs(mean) <= 3 * sigma / std::sqrt(count));
  CHECK(std::abs(var - st * st / 12) <= 0.05 * st * st / 12);
  CHECK((inject_noise(x, uniform_spec(1000, 1e-12), 3) - x).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("entropy model fitting examples") {
  const std::vector<int32_t> same(1000, 4);
  const ChannelModel m = fit_channel_model(same);
  CHECK(m.mu() == 4);
  CHECK(m.b() == doctest::Approx(1e-3));
  CHECK(estimate_bits(same, m) / same.size() <= 0.1);

  std::vector<int32_t> pm;
  for (int i = 0; i < 500; ++i) pm.push_back(i % 2 ? 1 : -1);
  CHECK(fit_channel_model(pm).mu() == 0);
  CHECK_THROWS_AS(fit_channel_model(std::vector<int32_t>{}), Error);
}

TEST_CASE("every fitted model is a normalized distribution") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int32_t> s;
    const int n = gen::integer(rng, 1, 400);
    const double b = std::exp(gen::uniform(rng, -3, 8));
    for (int i = 0; i < n; ++i) s.push_back(laplace_symbol(rng, gen::uniform(rng, -5, 5), b));
    const ChannelModel m = fit_channel_model(s);
    CHECK(m.b() > 0.0f);
    double total = 0.0;
    for (int32_t v = m.lo(); v <= m.hi(); ++v) total += m.pmf(v);
    if (m.escape()) total += m.pmf(m.hi() + 1);
    CHECK(std::abs(total - 1.0) < 1e-9);
    const double est = estimate_bits(s, m);
    CHECK(est >= 0.0);
    CHECK(std::isfinite(est));
    CHECK(ac_decode(ac_encode(s, m), m, s.size()) == s);
  }
}

TEST_CASE("estimated bits match the empirical entropy of Laplace samples") {
  std::mt19937_64 rng(38);
  for (double b : {0.8, 2.0, 6.0, 25.0}) {
    std::vector<int32_t> s;
    for (int i = 0; i < 50000; ++i) s.push_back(laplace_symbol(rng, 3.0, b));
    const ChannelModel m = fit_channel_model(s);
    const double est = estimate_bits(s, m);
    const double h = empirical_entropy_bits(s);
    CHECK(std::abs(est - h) <= 0.03 * h);
    const double actual = 8.0 * ac_encode(s, m).size();
    CHECK(std::abs(est - actual) <= 0.02 * est + 64);
    CHECK(actual / 8 >= est / 8 - 8);
  }
}

TEST_CASE("estimate_bits trivial models") {
  const ChannelModel two = ChannelModel::from_frequencies(0, {kFreqTotal / 2, kFreqTotal / 2});
  const std::vector<int32_t> s(777, 1);
  CHECK(estimate_bits(s, two) == 777.0);
  const ChannelModel one = ChannelModel::from_frequencies(5, {kFreqTotal});
  CHECK(estimate_bits(std::vector<int32_t>(10, 5), one) == 0.0);
  CHECK_THROWS_AS(ChannelModel::from_frequencies(0, {1, 2}), Error);
  CHECK_THROWS_AS(ChannelModel::from_frequencies(0, {0, kFreqTotal}), Error);
}

TEST_CASE("range coder on a skewed four letter source") {
  const ChannelModel m = ChannelModel::from_frequencies(0, {45875, 13107, 3277, 3277});
  std::mt19937_64 rng(39);
  std::discrete_distribution<int> dist({0.7, 0.2, 0.05, 0.05});
  std::vector<int32_t> s(100000);
  for (auto& v : s) v = dist(rng);
  const std::vector<uint8_t> bytes = ac_encode(s, m);
  const double h = -(0.7 * std::log2(0.7) + 0.2 * std::log2(0.2) + 0.1 * std::log2(0.05));
  CHECK(h == doctest::Approx(1.25678).epsilon(1e-5));
  const double bits = 8.0 * bytes.size();
  CHECK(std::abs(bits - s.size() * h) <= 0.02 * s.size() * h);
  CHECK(bits <= estimate_bits(s, m) + 64);
  CHECK(ac_decode(bytes, m, s.size()) == s);

  const std::vector<uint8_t> empty = ac_encode(std::vector<int32_t>{}, m);
  CHECK(empty.size() <= 8);
  CHECK(ac_decode(empty, m, 0).empty());
}

TEST_CASE("range coder fuzz round trip") {
  std::mt19937_64 rng(40);
  size_t total = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const int32_t lo = gen::integer(rng, -3000, 3000);
    const int32_t hi = lo + gen::integer(rng, 0, 600);
    const bool escape = gen::integer(rng, 0, 1) == 1;
    const ChannelModel m = ChannelModel::laplace(gen::integer(rng, lo, hi), static_cast<float>(std::exp(gen::uniform(rng, -4, 6))), lo, hi, escape);
    std::vector<int32_t> s(gen::integer(rng, 0, 500));
    for (auto& v : s) {
      v = gen::integer(rng, lo, hi);
      if (escape && gen::integer(rng, 0, 20) == 0) v = static_cast<int32_t>(rng());
    }
    total += s.size();
    const auto bytes = ac_encode(s, m);
    REQUIRE(ac_decode(bytes, m, s.size()) == s);
    CHECK(8.0 * bytes.size() <= estimate_bits(s, m) + 64);
  }
  CHECK(total > 90000);
}

TEST_CASE("range coder rejects bad input") {
  const ChannelModel m = ChannelModel::laplace(0, 2.0f, -10, 10, false);
  CHECK(error_of([&] { ac_encode(std::vector<int32_t>{11}, m); }) == ErrorCode::SymbolOutOfAlphabet);
  std::mt19937_64 rng(41);
  std::vector<int32_t> s(2000);
  for (auto& v : s) v = gen::integer(rng, -10, 10);
  std::vector<uint8_t> bytes = ac_encode(s, m);
  std::vector<uint8_t> cut(bytes.begin(), bytes.begin() + bytes.size() / 2);
  CHECK(error_of([&] { ac_decode(cut, m, s.size()); }) == ErrorCode::Truncated);
  std::vector<uint8_t> extra = bytes;
  extra.push_back(0);
  CHECK(error_of([&] { ac_decode(extra, m, s.size()); }) == ErrorCode::CorruptStream);
  CHECK(error_of([&] { ac_decode(std::vector<uint8_t>{0, 0}, m, 1); }) == ErrorCode::Truncated);
}

TEST_CASE("larger steps never cost more bits on the median") {
  std::mt19937_64 rng(42);
  // Ten sweeps over the step ladder; at most one size inversion across all of them.
  int inversions = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd x = random_matrix(rng, 200, 6, -2, 2);
    size_t prev = SIZE_MAX;
    for (double step : {0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.064, 0.128}) {
      const auto sym = quantize_symbols(x, uniform_spec(6, step));
      const size_t len = ac_encode(sym, fit_entropy_model(sym)).size();
      if (len > prev) ++inversions;
      prev = len;
    }
  }
  CHECK(inversions <= 1);
}

TEST_CASE("rd_select_step picks the exhaustive argmin") {
  std::mt19937_64 rng(43);
  const Eigen::MatrixXd f = random_matrix(rng, 300, 8, -1, 1);
  const std::vector<double> steps = {0.004, 0.01, 0.03, 0.09, 0.27};
  const DistortionFn mse = [&](const Eigen::MatrixXd& q) { return (q - f).squaredNorm() / f.size(); };
  for (double lambda : {0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1.0}) {
    const RdSelection sel = rd_select_step(f, steps, mse, lambda);
    double best = std::numeric_limits<double>::infinity(), arg = 0;
    for (double st : steps) {
      const auto sym = quantize_symbols(f, uniform_spec(8, st));
      const double rate = estimate_bits(sym, fit_entropy_model(sym)) / f.size();
      const double obj = lambda * rate + mse(quantize(f, uniform_spec(8, st)));
      if (obj < best || (obj == best && st > arg)) {
        best = obj;
        arg = st;
      }
    }
    CHECK(sel.step == arg);
    CHECK(sel.spec.steps == std::vector<double>(8, arg));
  }
  CHECK(rd_select_step(f, steps, mse, 0.0).step == 0.004);
  CHECK(rd_select_step(f, steps, [](const Eigen::MatrixXd&) { return 0.0; }, 0.0025).step == 0.27);
  CHECK_THROWS_AS(rd_select_step(f, {}, mse, 1.0), Error);
}

TEST_CASE("full map bitstream round trips") {
  GaussianMap empty;
  empty.anchor_k = 10;
  const EncodedMap e0 = serialize_full(empty);
  const GaussianMap back0 = deserialize_full(e0.bytes);
  CHECK(back0.gaussians.empty());
  CHECK(back0.anchors.empty());

  std::mt19937_64 rng(44);
  const GaussianMap one = gen::anchored_map(rng, 1, 10);
  const EncodedMap e1 = serialize_full(one);
  CHECK(serialize_full(one).bytes == e1.bytes);
  const GaussianMap back1 = deserialize_full(e1.bytes);
  CHECK(back1.anchors == one.anchors);
  CHECK(back1.gaussians.size() == 10);
}

TEST_CASE("blocks with fewer anchors than the embedding width keep a narrower basis") {
  std::mt19937_64 rng(48);
  GaussianMap m = gen::anchored_map(rng, 6, 10);
  for (auto& g : m.gaussians) g = sanitized(g);
  const AttributeBlock block = map_block(m);
  BlockCodecOptions opts;
  opts.candidate_steps = {0.005};
  opts.lambda_q = 0.0;
  const EncodedBlock e = encode_block(PayloadKind::FullMap, 0, m.anchors, 10, m.epsilon, block, opts);
  CHECK(peek_header(e.bytes).d == 6);
  // A 50-wide f32 basis alone would be 50 * 80 * 4 bytes.
  CHECK(e.bytes.size() < 50 * 80 * 4);
  const DecodedBlock d = decode_block(e.bytes, PayloadKind::FullMap);
  // Six centered rows span at most five directions, so only quantization error remains.
  const double bound = 0.0025 * std::sqrt(6.0) + 1e-5;
  for (Eigen::Index r = 0; r < block.attrs.rows(); ++r)
    CHECK((d.block.attrs.row(r) - block.attrs.row(r)).norm() <= bound);
}

TEST_CASE("decoded map renders exactly like the encoder's reconstruction") {
  std::mt19937_64 rng(45);
  GaussianMap m = gen::anchored_map(rng, 500, 10);
  std::vector<GaussianMap> candidates;
  const EncodedMap enc = serialize_full(m, {}, [&](const GaussianMap& d) {
    candidates.push_back(d);
    return 0.0;
  });
  const BlockCodecOptions defaults;
  REQUIRE(candidates.size() == defaults.candidate_steps.size());
  size_t chosen = candidates.size();
  for (size_t i = 0; i < defaults.candidate_steps.size(); ++i)
    if (static_cast<double>(static_cast<float>(defaults.candidate_steps[i])) == enc.rd.step) chosen = i;
  REQUIRE(chosen < candidates.size());

  const GaussianMap back = deserialize_full(enc.bytes);
  CHECK(back.anchors == m.anchors);
  const CameraPose cam = look_at(Vec3(0, 0, 0), Vec3(0, 0, 1.5), make_intrinsics(48, 36, 70));
  const RenderedViews a = render(back, cam, Rgb::Zero());
  const RenderedViews b = render(candidates[chosen], cam, Rgb::Zero());
  CHECK(a.color == b.color);
  CHECK(a.depth == b.depth);
  CHECK(serialize_exact(back) == serialize_exact(candidates[chosen]));

  // Size accounting: every byte belongs to exactly one section.
  CHECK(enc.bytes.size() == enc.layout.total());
  CHECK(enc.layout.header == kHeaderBytes);
  CHECK(enc.layout.trailer == 4);
  BitstreamLayout read_layout;
  read_bitstream(enc.bytes, &read_layout);
  CHECK(read_layout.total() == enc.bytes.size());
  CHECK(read_layout.payload == enc.layout.payload);
}

TEST_CASE("bitstream errors are distinct") {
  std::mt19937_64 rng(46);
  const EncodedMap enc = serialize_full(gen::anchored_map(rng, 20, 10));
  std::vector<uint8_t> b = enc.bytes;
  b[0] = 'X';
  CHECK(error_of([&] { deserialize_full(b); }) == ErrorCode::BadMagic);
  b = enc.bytes;
  b[4] = 9;
  CHECK(error_of([&] { deserialize_full(b); }) == ErrorCode::BadVersion);
  for (size_t pos : {size_t{30}, enc.bytes.size() / 2, enc.bytes.size() - 5}) {
    b = enc.bytes;
    b[pos] ^= 0x10;
    CHECK(error_of([&] { deserialize_full(b); }) == ErrorCode::CrcMismatch);
  }
  b.assign(enc.bytes.begin(), enc.bytes.begin() + 10);
  CHECK(error_of([&] { deserialize_full(b); }) == ErrorCode::Truncated);
  CHECK(error_of([&] { decode_block(enc.bytes, PayloadKind::Increment); }) == ErrorCode::KindMismatch);
  CHECK(peek_header(enc.bytes).anchor_count == 20);
}

TEST_CASE("exact map image round trips") {
  std::mt19937_64 rng(47);
  const GaussianMap m = gen::anchored_map(rng, 7, 3);
  const auto bytes = serialize_exact(m);
  CHECK(serialize_exact(deserialize_exact(bytes)) == bytes);
  CHECK(serialize_raw(m).size() == raw_size_bytes(m));
  CHECK(raw_size_bytes(m) == 21 * kRawFloatsPerGaussian * 4);
}
