#include "gsshare/increment.hpp"

#include <mutex>

namespace gsshare {

GaussianIncrement compute_increment(const GaussianMap& target, const GaussianMap& prev) {
  if (target.anchor_k != prev.anchor_k) throw Error(ErrorCode::AnchorMismatch, "K differs");
  const size_t n = prev.anchor_count();
  if (target.anchor_count() < n || !std::equal(prev.anchors.begin(), prev.anchors.end(), target.anchors.begin()))
    throw Error(ErrorCode::AnchorMismatch, "target does not preserve the previous anchor order");
  const int k = prev.anchor_k;
  if (prev.gaussians.size() != n * k || target.gaussians.size() < n * k)
    throw Error(ErrorCode::DimensionMismatch, "Gaussian count does not match anchors");

  GaussianIncrement inc;
  inc.stage_id = prev.stage_id + 1;
  inc.anchor_k = k;
  inc.delta.scales.resize(n * k, 3);
  inc.delta.offsets.resize(n * k, 3);
  inc.delta.attrs.resize(n, static_cast<Eigen::Index>(k) * kAttrsPerGaussian);
  for (size_t a = 0; a < n; ++a) {
    for (int i = 0; i < k; ++i) {
      const size_t s = a * k + i;
      inc.delta.scales.row(s) = (target.gaussians[s].scale - prev.gaussians[s].scale).transpose();
      inc.delta.offsets.row(s) = (target.gaussians[s].position - prev.gaussians[s].position).transpose();
    }
    inc.delta.attrs.row(a) = (anchor_attributes(target, a) - anchor_attributes(prev, a)).transpose();
  }
  return inc;
}

GaussianMap apply_increment(const GaussianMap& prev, const GaussianIncrement& inc) {
  if (inc.stage_id != prev.stage_id + 1)
    throw Error(ErrorCode::OutOfOrderUpdate, "increment for stage " + std::to_string(inc.stage_id) +
                                                 " cannot follow stage " + std::to_string(prev.stage_id));
  const size_t n = prev.anchor_count();
  const int k = prev.anchor_k;
  if (inc.anchor_k != k || inc.anchor_count() != n || inc.delta.scales.rows() != static_cast<Eigen::Index>(n * k) ||
      inc.delta.offsets.rows() != static_cast<Eigen::Index>(n * k) ||
      inc.delta.attrs.cols() != static_cast<Eigen::Index>(k) * kAttrsPerGaussian)
    throw Error(ErrorCode::AnchorMismatch, "increment does not match the previous stage's anchors");

  GaussianMap out = prev;
  out.stage_id = inc.stage_id;
  for (size_t a = 0; a < n; ++a) {
    const Eigen::VectorXd attrs = anchor_attributes(prev, a) + inc.delta.attrs.row(a).transpose();
    for (int i = 0; i < k; ++i) {
      Gaussian& g = out.gaussians[a * k + i];
      g.position += inc.delta.offsets.row(a * k + i).transpose();
      g.scale += inc.delta.scales.row(a * k + i).transpose();
    }
    set_anchor_attributes(out, a, attrs);
  }
  return out;
}

BlockCodecOptions increment_codec_options() {
  BlockCodecOptions opts;
  opts.dim = kIncrementEmbeddingDim;
  return opts;
}

EncodedIncrement encode_increment(const GaussianIncrement& inc, const BlockCodecOptions& opts) {
  EncodedBlock enc = encode_block(PayloadKind::Increment, inc.stage_id, {}, inc.anchor_k,
                                  kDefaultEpsilon, inc.delta, opts);
  return {std::move(enc.bytes), enc.layout, std::move(enc.rd)};
}

GaussianIncrement decode_increment(std::span<const uint8_t> bytes) {
  DecodedBlock d = decode_block(bytes, PayloadKind::Increment);
  GaussianIncrement inc;
  inc.stage_id = d.header.stage_id;
  inc.anchor_k = d.header.k;
  inc.delta = std::move(d.block);
  return inc;
}

GaussianMap anchor_segment(const GaussianMap& map, size_t first_anchor) {
  if (first_anchor > map.anchor_count()) throw Error(ErrorCode::InvalidArgument, "segment start past end");
  GaussianMap seg;
  seg.anchor_k = map.anchor_k;
  seg.epsilon = map.epsilon;
  seg.stage_id = map.stage_id;
  seg.anchors.assign(map.anchors.begin() + first_anchor, map.anchors.end());
  seg.gaussians.assign(map.gaussians.begin() + first_anchor * map.anchor_k, map.gaussians.end());
  return seg;
}

void append_segment(GaussianMap& map, const GaussianMap& segment) {
  if (segment.anchor_count() == 0) return;
  if (segment.anchor_k != map.anchor_k) throw Error(ErrorCode::AnchorMismatch, "segment K differs");
  map.anchors.insert(map.anchors.end(), segment.anchors.begin(), segment.anchors.end());
  map.gaussians.insert(map.gaussians.end(), segment.gaussians.begin(), segment.gaussians.end());
}

void StageDb::put(const StageRecord& rec) {
  std::unique_lock lock(mutex_);
  if (!records_.empty()) {
    const uint32_t last = records_.back().stage_id;
    if (rec.stage_id == last) throw Error(ErrorCode::DuplicateStage, "stage " + std::to_string(rec.stage_id) + " already stored");
    if (rec.stage_id < last) throw Error(ErrorCode::OutOfOrderUpdate, "stage ids must increase");
  }
  records_.push_back(rec);
}

StageRecord StageDb::get(uint32_t stage_id) const {
  std::shared_lock lock(mutex_);
  auto it = std::lower_bound(records_.begin(), records_.end(), stage_id,
                             [](const StageRecord& r, uint32_t id) { return r.stage_id < id; });
  if (it == records_.end() || it->stage_id != stage_id)
    throw Error(ErrorCode::UnknownStage, "no stage " + std::to_string(stage_id));
  return *it;
}

std::optional<StageRecord> StageDb::latest() const {
  std::shared_lock lock(mutex_);
  if (records_.empty()) return std::nullopt;
  return records_.back();
}

size_t StageDb::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

size_t StageDb::cumulative_bytes() const {
  std::shared_lock lock(mutex_);
  size_t total = 0;
  for (const auto& r : records_) total += r.transmitted_bytes;
  return total;
}

std::vector<StageRecord> StageDb::all() const {
  std::shared_lock lock(mutex_);
  return records_;
}

}  // namespace gsshare
