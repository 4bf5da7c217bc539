#pragma once

// `.gsb` container, little-endian throughout:
//
//   header   "GSSH" | version u16 | kind u8 | stage u32 | anchors u32 | K u8 | D u8 | epsilon f32
//   steps    u16 n | n x f32
//   models   n x (mu i32 | b f32 | lo i32 | hi i32 | flags u8)
//   decoder  A u16 | D u16 | mean A x f32 | basis A x D f32 (column-major)
//   payload  u32 length | range-coded symbols, channel after channel
//   trailer  CRC-32 of everything above
//
// Full maps carry channels [anchor cell deltas x3, scales x3, offsets x3, embedding x D];
// increments carry [scale deltas x3, position deltas x3, embedding x D].

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gsshare/codec.hpp"
#include "gsshare/core.hpp"
#include "gsshare/entropy.hpp"

namespace gsshare {

inline constexpr char kBitstreamMagic[4] = {'G', 'S', 'S', 'H'};
inline constexpr uint16_t kBitstreamVersion = 1;
inline constexpr size_t kHeaderBytes = 21;

enum class PayloadKind : uint8_t { FullMap = 1, Increment = 2 };

struct BitstreamHeader {
  PayloadKind kind = PayloadKind::FullMap;
  uint32_t stage_id = 0;
  uint32_t anchor_count = 0;
  uint8_t k = kDefaultAnchorK;
  uint8_t d = kFullEmbeddingDim;
  float epsilon = static_cast<float>(kDefaultEpsilon);
};

struct BitstreamContent {
  BitstreamHeader header;
  QuantizationSpec spec;  // steps are f32-representable
  EntropyModel model;
  DecoderWeights decoder;  // f32-representable
  std::vector<std::vector<int32_t>> symbols;
};

struct BitstreamLayout {
  size_t header = 0, steps = 0, models = 0, decoder = 0, payload = 0, trailer = 0;
  size_t total() const { return header + steps + models + decoder + payload + trailer; }
};

std::vector<uint8_t> write_bitstream(const BitstreamContent& content, BitstreamLayout* layout = nullptr);
// Throws BadMagic, BadVersion, CrcMismatch, Truncated or CorruptStream.
BitstreamContent read_bitstream(std::span<const uint8_t> bytes, BitstreamLayout* layout = nullptr);
BitstreamHeader peek_header(std::span<const uint8_t> bytes);

// Per-anchor geometry plus attribute rows, the shape shared by full maps and increments.
struct AttributeBlock {
  Eigen::MatrixXd scales;   // N*K x 3
  Eigen::MatrixXd offsets;  // N*K x 3 (offsets for maps, position deltas for increments)
  Eigen::MatrixXd attrs;    // N x K*8
};

using BlockDistortionFn = std::function<double(const AttributeBlock& decoded)>;

struct BlockCodecOptions {
  int dim = kFullEmbeddingDim;  // capped at the anchor count when encoding
  double scale_step = 5e-4;
  double offset_step = 5e-4;
  // Embedding steps swept by the rate-distortion selection.
  std::vector<double> candidate_steps = {0.005, 0.01, 0.02, 0.04, 0.08, 0.16, 0.32};
  double lambda_q = 0.0025;
  // Default: mean squared attribute error.
  BlockDistortionFn distortion;
};

struct EncodedBlock {
  std::vector<uint8_t> bytes;
  BitstreamLayout layout;
  RdSelection rd;
};

// `anchors` is written for full maps and ignored for increments.
EncodedBlock encode_block(PayloadKind kind, uint32_t stage_id, const std::vector<GridCell>& anchors,
                          int k, double epsilon, const AttributeBlock& block,
                          const BlockCodecOptions& opts);

struct DecodedBlock {
  BitstreamHeader header;
  std::vector<GridCell> anchors;  // full maps only
  AttributeBlock block;
};

DecodedBlock decode_block(std::span<const uint8_t> bytes, PayloadKind expected);

AttributeBlock map_block(const GaussianMap& map);
// Gaussians rebuilt anchor by anchor through decode_anchor.
GaussianMap assemble_map(const std::vector<GridCell>& anchors, int k, double epsilon,
                         uint32_t stage_id, const AttributeBlock& block);

struct EncodedMap {
  std::vector<uint8_t> bytes;
  BitstreamLayout layout;
  RdSelection rd;
};

using MapDistortionFn = std::function<double(const GaussianMap& decoded)>;

// Map-level wrapper: `distortion`, when set, is evaluated on the decoded candidate map.
EncodedMap serialize_full(const GaussianMap& map, BlockCodecOptions opts = {},
                          const MapDistortionFn& distortion = {});
GaussianMap deserialize_full(std::span<const uint8_t> bytes);

// Explicit layout: 14 f32 per Gaussian (position, scale, rotation wxyz, opacity, color).
inline constexpr size_t kRawFloatsPerGaussian = 14;
size_t raw_size_bytes(const GaussianMap& map);
std::vector<uint8_t> serialize_raw(const GaussianMap& map);

// Lossless f64 image of a map (anchors, Gaussians, stage), used to compare maps byte for byte.
std::vector<uint8_t> serialize_exact(const GaussianMap& map);
GaussianMap deserialize_exact(std::span<const uint8_t> bytes);

uint32_t crc32_of(std::span<const uint8_t> bytes);

}  // namespace gsshare
