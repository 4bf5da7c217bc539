#include "gsshare/bitstream.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>

#include "gsshare/bytes.hpp"

namespace gsshare {

namespace {

constexpr size_t kModelBytes = 17;

double as_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

QuantizationSpec f32_spec(size_t channels, double step) { return uniform_spec(channels, as_f32(step)); }

// Symbol count per channel, derived from the header alone.
std::vector<size_t> channel_counts(const BitstreamHeader& h) {
  const size_t n = h.anchor_count, nk = n * h.k;
  std::vector<size_t> counts;
  if (h.kind == PayloadKind::FullMap) counts.insert(counts.end(), 3, n);
  counts.insert(counts.end(), 6, nk);
  counts.insert(counts.end(), h.d, n);
  return counts;
}

ChannelModel trivial_model() { return ChannelModel::laplace(0, 1.0f, 0, 0, false); }

ChannelModel model_for(const std::vector<int32_t>& symbols) {
  return symbols.empty() ? trivial_model() : fit_channel_model(symbols);
}

void append_columns(std::vector<std::vector<int32_t>>& out, std::vector<std::vector<int32_t>> cols) {
  for (auto& c : cols) out.push_back(std::move(c));
}

}  // namespace

uint32_t crc32_of(std::span<const uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  size_t pos = 0;
  while (pos < bytes.size()) {
    const uInt chunk = static_cast<uInt>(std::min<size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<uint32_t>(crc);
}

std::vector<uint8_t> write_bitstream(const BitstreamContent& c, BitstreamLayout* layout) {
  const auto& h = c.header;
  const size_t n_channels = c.spec.steps.size();
  if (c.model.channels.size() != n_channels || c.symbols.size() != n_channels)
    throw Error(ErrorCode::DimensionMismatch, "steps, models and symbols disagree on channel count");
  if (channel_counts(h) != [&] {
        std::vector<size_t> got;
        for (const auto& s : c.symbols) got.push_back(s.size());
        return got;
      }())
    throw Error(ErrorCode::DimensionMismatch, "symbol counts do not match the header");

  BitstreamLayout lay;
  ByteWriter w;
  w.bytes({reinterpret_cast<const uint8_t*>(kBitstreamMagic), 4});
  w.u16(kBitstreamVersion);
  w.u8(static_cast<uint8_t>(h.kind));
  w.u32(h.stage_id);
  w.u32(h.anchor_count);
  w.u8(h.k);
  w.u8(h.d);
  w.f32(h.epsilon);
  lay.header = w.size();

  w.u16(static_cast<uint16_t>(n_channels));
  for (double s : c.spec.steps) w.f32(static_cast<float>(s));
  lay.steps = w.size() - lay.header;

  for (const auto& m : c.model.channels) {
    w.i32(m.mu());
    w.f32(m.b());
    w.i32(m.lo());
    w.i32(m.hi());
    w.u8(m.escape() ? 1 : 0);
  }
  lay.models = n_channels * kModelBytes;

  const size_t before_decoder = w.size();
  w.u16(static_cast<uint16_t>(c.decoder.attr_dim()));
  w.u16(static_cast<uint16_t>(c.decoder.dim()));
  for (Eigen::Index i = 0; i < c.decoder.mean.size(); ++i) w.f32(static_cast<float>(c.decoder.mean[i]));
  for (Eigen::Index j = 0; j < c.decoder.basis.cols(); ++j)
    for (Eigen::Index i = 0; i < c.decoder.basis.rows(); ++i)
      w.f32(static_cast<float>(c.decoder.basis(i, j)));
  lay.decoder = w.size() - before_decoder;

  const std::vector<uint8_t> payload = ac_encode(c.symbols, c.model);
  w.u32(static_cast<uint32_t>(payload.size()));
  w.bytes(payload);
  lay.payload = 4 + payload.size();

  w.u32(crc32_of(w.buffer()));
  lay.trailer = 4;
  if (layout) *layout = lay;
  return w.take();
}

BitstreamHeader peek_header(std::span<const uint8_t> bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::Truncated, "stream shorter than its magic");
  if (std::memcmp(bytes.data(), kBitstreamMagic, 4) != 0)
    throw Error(ErrorCode::BadMagic, "not a GSSH bitstream");
  ByteReader r(bytes.subspan(4));
  const uint16_t version = r.u16();
  if (version != kBitstreamVersion)
    throw Error(ErrorCode::BadVersion, "unsupported bitstream version " + std::to_string(version));
  BitstreamHeader h;
  const uint8_t kind = r.u8();
  if (kind != static_cast<uint8_t>(PayloadKind::FullMap) &&
      kind != static_cast<uint8_t>(PayloadKind::Increment))
    throw Error(ErrorCode::CorruptStream, "unknown payload kind");
  h.kind = static_cast<PayloadKind>(kind);
  h.stage_id = r.u32();
  h.anchor_count = r.u32();
  h.k = r.u8();
  h.d = r.u8();
  h.epsilon = r.f32();
  return h;
}

BitstreamContent read_bitstream(std::span<const uint8_t> bytes, BitstreamLayout* layout) {
  BitstreamContent c;
  c.header = peek_header(bytes);
  if (bytes.size() < kHeaderBytes + 4) throw Error(ErrorCode::Truncated, "stream shorter than header");
  const size_t body = bytes.size() - 4;
  ByteReader tail(bytes.subspan(body));
  if (tail.u32() != crc32_of(bytes.first(body)))
    throw Error(ErrorCode::CrcMismatch, "bitstream checksum does not match");

  const auto& h = c.header;
  if (h.k == 0 || !(h.epsilon > 0.0f) || h.anchor_count > (1u << 24)) throw Error(ErrorCode::CorruptStream, "invalid header fields");
  ByteReader r(bytes.first(body).subspan(kHeaderBytes));
  BitstreamLayout lay;
  lay.header = kHeaderBytes;

  const std::vector<size_t> counts = channel_counts(h);
  const uint16_t n_channels = r.u16();
  if (n_channels != counts.size()) throw Error(ErrorCode::CorruptStream, "unexpected channel count");
  for (uint16_t i = 0; i < n_channels; ++i) {
    const double s = r.f32();
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::CorruptStream, "bad quantization step");
    c.spec.steps.push_back(s);
  }
  lay.steps = 2 + 4 * n_channels;

  for (uint16_t i = 0; i < n_channels; ++i) {
    const int32_t mu = r.i32();
    const float b = r.f32();
    const int32_t lo = r.i32();
    const int32_t hi = r.i32();
    const uint8_t flags = r.u8();
    if (flags > 1 || hi < lo || static_cast<int64_t>(hi) - lo > 2 * kMaxAlphabetRadius ||
        !(b > 0.0f) || !std::isfinite(b))
      throw Error(ErrorCode::CorruptStream, "bad entropy model");
    c.model.channels.push_back(ChannelModel::laplace(mu, b, lo, hi, flags == 1));
  }
  lay.models = n_channels * kModelBytes;

  const size_t before_decoder = r.position();
  const uint16_t a = r.u16();
  const uint16_t d = r.u16();
  if (a != static_cast<size_t>(h.k) * kAttrsPerGaussian || d != h.d || d == 0 || d > a)
    throw Error(ErrorCode::CorruptStream, "decoder shape does not match header");
  c.decoder.mean.resize(a);
  c.decoder.basis.resize(a, d);
  for (uint16_t i = 0; i < a; ++i) c.decoder.mean[i] = r.f32();
  for (uint16_t j = 0; j < d; ++j)
    for (uint16_t i = 0; i < a; ++i) c.decoder.basis(i, j) = r.f32();
  lay.decoder = r.position() - before_decoder;

  const uint32_t payload_len = r.u32();
  const auto payload = r.bytes(payload_len);
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptStream, "trailing bytes before checksum");
  lay.payload = 4 + payload_len;
  lay.trailer = 4;
  c.symbols = ac_decode(payload, c.model, counts);
  if (layout) *layout = lay;
  return c;
}

EncodedBlock encode_block(PayloadKind kind, uint32_t stage_id, const std::vector<GridCell>& anchors,
                          int k, double epsilon, const AttributeBlock& block,
                          const BlockCodecOptions& opts) {
  const Eigen::Index n = block.attrs.rows();
  const Eigen::Index a = static_cast<Eigen::Index>(k) * kAttrsPerGaussian;
  if (k < 1 || k > 255) throw Error(ErrorCode::InvalidArgument, "K must be in [1, 255]");
  if (opts.dim < 1 || opts.dim > a) throw Error(ErrorCode::InvalidArgument, "embedding dim out of range");
  if (block.attrs.cols() != a || block.scales.rows() != n * k || block.offsets.rows() != n * k ||
      block.scales.cols() != 3 || block.offsets.cols() != 3)
    throw Error(ErrorCode::DimensionMismatch, "attribute block shape is inconsistent");
  if (kind == PayloadKind::FullMap && anchors.size() != static_cast<size_t>(n))
    throw Error(ErrorCode::DimensionMismatch, "anchor list does not match attribute rows");

  // Centered rows span at most n - 1 directions, so basis columns beyond n only cost bytes.
  const int dim = static_cast<int>(std::min<Eigen::Index>(opts.dim, std::max<Eigen::Index>(n, 1)));

  BitstreamContent c;
  c.header.kind = kind;
  c.header.stage_id = stage_id;
  c.header.anchor_count = static_cast<uint32_t>(n);
  c.header.k = static_cast<uint8_t>(k);
  c.header.d = static_cast<uint8_t>(dim);
  c.header.epsilon = static_cast<float>(epsilon);

  // Decoder weights are rounded to f32 before the embeddings are computed, so the encoder
  // quantizes exactly what the decoder will multiply.
  if (n > 0) {
    const EmbeddingFit fit = fit_embedding(block.attrs, dim);
    c.decoder.mean = fit.decoder.mean.cast<float>().cast<double>();
    c.decoder.basis = fit.decoder.basis.cast<float>().cast<double>();
  } else {
    c.decoder.mean = Eigen::VectorXd::Zero(a);
    c.decoder.basis = Eigen::MatrixXd::Identity(a, dim);
  }
  const Eigen::MatrixXd centered = block.attrs.rowwise() - c.decoder.mean.transpose();
  const Eigen::MatrixXd emb = centered * c.decoder.basis;

  const QuantizationSpec scale_spec = f32_spec(3, opts.scale_step);
  const QuantizationSpec offset_spec = f32_spec(3, opts.offset_step);
  AttributeBlock decoded;
  decoded.scales = quantize(block.scales, scale_spec);
  decoded.offsets = quantize(block.offsets, offset_spec);

  std::vector<double> candidates;
  for (double s : opts.candidate_steps) candidates.push_back(as_f32(s));
  const DistortionFn distortion = [&](const Eigen::MatrixXd& q_emb) {
    decoded.attrs = reconstruct_attributes(q_emb, c.decoder);
    if (opts.distortion) return opts.distortion(decoded);
    if (n == 0) return 0.0;
    return (decoded.attrs - block.attrs).squaredNorm() / static_cast<double>(block.attrs.size());
  };
  EncodedBlock out;
  out.rd = rd_select_step(emb, candidates, distortion, opts.lambda_q);

  if (kind == PayloadKind::FullMap) {
    std::vector<std::vector<int32_t>> cells(3);
    GridCell prev{0, 0, 0};
    for (const auto& cell : anchors) {
      for (int i = 0; i < 3; ++i)
        cells[i].push_back(static_cast<int32_t>(static_cast<int64_t>(cell[i]) - prev[i]));
      prev = cell;
    }
    c.spec.steps.assign(3, 1.0);
    append_columns(c.symbols, std::move(cells));
  }
  append_columns(c.symbols, quantize_symbols(block.scales, scale_spec));
  append_columns(c.symbols, quantize_symbols(block.offsets, offset_spec));
  append_columns(c.symbols, quantize_symbols(emb, out.rd.spec));
  for (double s : scale_spec.steps) c.spec.steps.push_back(s);
  for (double s : offset_spec.steps) c.spec.steps.push_back(s);
  for (double s : out.rd.spec.steps) c.spec.steps.push_back(s);
  for (const auto& ch : c.symbols) c.model.channels.push_back(model_for(ch));

  out.bytes = write_bitstream(c, &out.layout);
  return out;
}

DecodedBlock decode_block(std::span<const uint8_t> bytes, PayloadKind expected) {
  const BitstreamContent c = read_bitstream(bytes);
  if (c.header.kind != expected) throw Error(ErrorCode::KindMismatch, "unexpected payload kind");
  DecodedBlock out;
  out.header = c.header;
  const size_t n = c.header.anchor_count, nk = n * c.header.k;
  size_t ch = 0;
  if (expected == PayloadKind::FullMap) {
    GridCell cur{0, 0, 0};
    out.anchors.resize(n);
    for (size_t i = 0; i < n; ++i) {
      for (int j = 0; j < 3; ++j) {
        const int64_t v = static_cast<int64_t>(cur[j]) + c.symbols[j][i];
        if (v < INT32_MIN || v > INT32_MAX) throw Error(ErrorCode::CorruptStream, "anchor cell overflow");
        cur[j] = static_cast<int32_t>(v);
      }
      out.anchors[i] = cur;
    }
    ch = 3;
  }
  auto take = [&](size_t count, size_t rows) {
    std::vector<std::vector<int32_t>> syms(c.symbols.begin() + ch, c.symbols.begin() + ch + count);
    QuantizationSpec spec;
    spec.steps.assign(c.spec.steps.begin() + ch, c.spec.steps.begin() + ch + count);
    ch += count;
    return dequantize(syms, spec, rows);
  };
  out.block.scales = take(3, nk);
  out.block.offsets = take(3, nk);
  const Eigen::MatrixXd emb = take(c.header.d, n);
  out.block.attrs = reconstruct_attributes(emb, c.decoder);
  return out;
}

AttributeBlock map_block(const GaussianMap& map) {
  if (!map.anchored() && !map.gaussians.empty())
    throw Error(ErrorCode::InvalidArgument, "map has no anchors");
  map.validate();
  const size_t n = map.anchor_count();
  const int k = map.anchor_k;
  AttributeBlock b;
  b.scales.resize(n * k, 3);
  b.offsets.resize(n * k, 3);
  b.attrs.resize(n, static_cast<Eigen::Index>(k) * kAttrsPerGaussian);
  for (size_t a = 0; a < n; ++a) {
    const Vec3 anchor = map.anchor_position(a);
    for (int i = 0; i < k; ++i) {
      const Gaussian& g = map.gaussians[a * k + i];
      b.scales.row(a * k + i) = g.scale.transpose();
      b.offsets.row(a * k + i) = (g.position - anchor).transpose();
    }
    b.attrs.row(a) = anchor_attributes(map, a).transpose();
  }
  return b;
}

GaussianMap assemble_map(const std::vector<GridCell>& anchors, int k, double epsilon,
                         uint32_t stage_id, const AttributeBlock& block) {
  GaussianMap map;
  map.anchor_k = k;
  map.epsilon = epsilon;
  map.stage_id = stage_id;
  map.anchors = anchors;
  map.gaussians.reserve(anchors.size() * k);
  for (size_t a = 0; a < anchors.size(); ++a) {
    const auto rows = block.scales.middleRows(a * k, k);
    const std::vector<Gaussian> gs = gaussians_from_attributes(
        map.anchor_position(a), rows, block.offsets.middleRows(a * k, k), block.attrs.row(a).transpose());
    map.gaussians.insert(map.gaussians.end(), gs.begin(), gs.end());
  }
  return map;
}

EncodedMap serialize_full(const GaussianMap& map, BlockCodecOptions opts,
                          const MapDistortionFn& distortion) {
  const AttributeBlock block = map_block(map);
  const double eps_f = as_f32(map.epsilon);
  if (distortion) {
    opts.distortion = [&](const AttributeBlock& decoded) {
      return distortion(assemble_map(map.anchors, map.anchor_k, eps_f, map.stage_id, decoded));
    };
  }
  EncodedBlock enc = encode_block(PayloadKind::FullMap, map.stage_id, map.anchors, map.anchor_k,
                                  map.epsilon, block, opts);
  return {std::move(enc.bytes), enc.layout, std::move(enc.rd)};
}

GaussianMap deserialize_full(std::span<const uint8_t> bytes) {
  const DecodedBlock d = decode_block(bytes, PayloadKind::FullMap);
  return assemble_map(d.anchors, d.header.k, d.header.epsilon, d.header.stage_id, d.block);
}

size_t raw_size_bytes(const GaussianMap& map) {
  return map.gaussians.size() * kRawFloatsPerGaussian * sizeof(float);
}

std::vector<uint8_t> serialize_raw(const GaussianMap& map) {
  ByteWriter w;
  for (const auto& g : map.gaussians) {
    for (int i = 0; i < 3; ++i) w.f32(static_cast<float>(g.position[i]));
    for (int i = 0; i < 3; ++i) w.f32(static_cast<float>(g.scale[i]));
    w.f32(static_cast<float>(g.rotation.w()));
    w.f32(static_cast<float>(g.rotation.x()));
    w.f32(static_cast<float>(g.rotation.y()));
    w.f32(static_cast<float>(g.rotation.z()));
    w.f32(static_cast<float>(g.opacity));
    for (int i = 0; i < 3; ++i) w.f32(static_cast<float>(g.color[i]));
  }
  return w.take();
}

std::vector<uint8_t> serialize_exact(const GaussianMap& map) {
  ByteWriter w;
  w.bytes({reinterpret_cast<const uint8_t*>("GSMX"), 4});
  w.u32(map.stage_id);
  w.i32(map.anchor_k);
  w.f64(map.epsilon);
  w.u32(static_cast<uint32_t>(map.anchors.size()));
  for (const auto& c : map.anchors)
    for (int32_t v : c) w.i32(v);
  w.u32(static_cast<uint32_t>(map.gaussians.size()));
  for (const auto& g : map.gaussians) {
    for (int i = 0; i < 3; ++i) w.f64(g.position[i]);
    for (int i = 0; i < 3; ++i) w.f64(g.scale[i]);
    w.f64(g.rotation.w());
    w.f64(g.rotation.x());
    w.f64(g.rotation.y());
    w.f64(g.rotation.z());
    w.f64(g.opacity);
    for (int i = 0; i < 3; ++i) w.f64(g.color[i]);
    w.u8(static_cast<uint8_t>(g.kind));
  }
  return w.take();
}

GaussianMap deserialize_exact(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), "GSMX", 4) != 0) throw Error(ErrorCode::BadMagic, "not an exact map image");
  GaussianMap map;
  map.stage_id = r.u32();
  map.anchor_k = r.i32();
  map.epsilon = r.f64();
  map.anchors.resize(r.u32());
  for (auto& c : map.anchors)
    for (auto& v : c) v = r.i32();
  const uint32_t n = r.u32();
  if (static_cast<size_t>(n) * 113 > r.remaining()) throw Error(ErrorCode::Truncated, "map image too short");
  map.gaussians.resize(n);
  for (auto& g : map.gaussians) {
    for (int i = 0; i < 3; ++i) g.position[i] = r.f64();
    for (int i = 0; i < 3; ++i) g.scale[i] = r.f64();
    const double qw = r.f64(), qx = r.f64(), qy = r.f64(), qz = r.f64();
    g.rotation = Quat(qw, qx, qy, qz);
    g.opacity = r.f64();
    for (int i = 0; i < 3; ++i) g.color[i] = r.f64();
    const uint8_t kind = r.u8();
    if (kind > 1) throw Error(ErrorCode::CorruptStream, "bad Gaussian kind");
    g.kind = static_cast<GaussianKind>(kind);
  }
  return map;
}

}  // namespace gsshare
