#pragma once

#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "gsshare/bitstream.hpp"
#include "gsshare/core.hpp"

namespace gsshare {

// Attribute-wise delta over the previous stage's anchors, in their frozen order.
// delta.offsets holds per-Gaussian position deltas.
struct GaussianIncrement {
  uint32_t stage_id = 0;
  int anchor_k = kDefaultAnchorK;
  AttributeBlock delta;

  size_t anchor_count() const { return static_cast<size_t>(delta.attrs.rows()); }
};

// `target` must start with exactly `prev`'s anchors; anchors it adds beyond those are ignored
// here and travel as a full-map segment instead.
GaussianIncrement compute_increment(const GaussianMap& target, const GaussianMap& prev);

// Element-wise sum, then quaternion renormalization and clamping. Throws OutOfOrderUpdate unless
// inc.stage_id == prev.stage_id + 1.
GaussianMap apply_increment(const GaussianMap& prev, const GaussianIncrement& inc);

BlockCodecOptions increment_codec_options();

struct EncodedIncrement {
  std::vector<uint8_t> bytes;
  BitstreamLayout layout;
  RdSelection rd;
};

EncodedIncrement encode_increment(const GaussianIncrement& inc,
                                  const BlockCodecOptions& opts = increment_codec_options());
GaussianIncrement decode_increment(std::span<const uint8_t> bytes);

// Anchors of `map` past the first `first_anchor`, as a standalone anchored map.
GaussianMap anchor_segment(const GaussianMap& map, size_t first_anchor);
// Appends a decoded segment's anchors and Gaussians to `map`.
void append_segment(GaussianMap& map, const GaussianMap& segment);

struct StageRecord {
  uint32_t stage_id = 0;
  size_t full_bytes = 0;         // cost of re-sending the whole map at this stage
  size_t increment_bytes = 0;    // increment + new-anchor segment (0 at stage 0)
  size_t transmitted_bytes = 0;  // what the increment path actually sent for this stage
  std::map<std::string, double> metrics;
};

// Single writer, many readers; stage ids must strictly increase.
class StageDb {
 public:
  void put(const StageRecord& rec);
  StageRecord get(uint32_t stage_id) const;
  std::optional<StageRecord> latest() const;
  size_t size() const;
  size_t cumulative_bytes() const;
  std::vector<StageRecord> all() const;

 private:
  mutable std::shared_mutex mutex_;
  std::vector<StageRecord> records_;
};

}  // namespace gsshare
