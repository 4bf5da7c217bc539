#include "gsshare/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>

#include "gsshare/bytes.hpp"

namespace gsshare {

namespace {

void write_pose(ByteWriter& w, const CameraPose& p) {
  w.f64(p.rotation.w());
  w.f64(p.rotation.x());
  w.f64(p.rotation.y());
  w.f64(p.rotation.z());
  for (int i = 0; i < 3; ++i) w.f64(p.translation[i]);
  const auto& k = p.intrinsics;
  w.f64(k.fx);
  w.f64(k.fy);
  w.f64(k.cx);
  w.f64(k.cy);
  w.u32(static_cast<uint32_t>(k.width));
  w.u32(static_cast<uint32_t>(k.height));
}

CameraPose read_pose(ByteReader& r) {
  CameraPose p;
  const double qw = r.f64(), qx = r.f64(), qy = r.f64(), qz = r.f64();
  p.rotation = Quat(qw, qx, qy, qz);
  for (int i = 0; i < 3; ++i) p.translation[i] = r.f64();
  auto& k = p.intrinsics;
  k.fx = r.f64();
  k.fy = r.f64();
  k.cx = r.f64();
  k.cy = r.f64();
  k.width = static_cast<int>(r.u32());
  k.height = static_cast<int>(r.u32());
  return p;
}

void expect_consumed(const ByteReader& r) {
  if (r.remaining() != 0) throw Error(ErrorCode::Protocol, "trailing bytes in payload");
}

}  // namespace

void check_frame_length(uint32_t length) {
  if (length < kFrameHeaderBytes) throw Error(ErrorCode::Protocol, "frame shorter than its header");
  if (length > kMaxFrameBytes) throw Error(ErrorCode::Protocol, "frame exceeds 256 MiB");
}

std::vector<uint8_t> encode_message(const Message& m) {
  if (m.payload.size() > kMaxFrameBytes - kFrameHeaderBytes) throw Error(ErrorCode::Protocol, "payload too large");
  ByteWriter w;
  w.u32(static_cast<uint32_t>(m.payload.size() + kFrameHeaderBytes));
  w.u8(static_cast<uint8_t>(m.type));
  w.u32(m.stage);
  w.bytes(m.payload);
  return w.take();
}

Message decode_message(std::span<const uint8_t> frame) {
  ByteReader r(frame);
  const uint32_t length = r.u32();
  check_frame_length(length);
  if (frame.size() - 4 != length) {
    if (frame.size() - 4 < length) throw Error(ErrorCode::Truncated, "frame shorter than its length prefix");
    throw Error(ErrorCode::Protocol, "frame longer than its length prefix");
  }
  const uint8_t type = r.u8();
  if (type < 1 || type > 7) throw Error(ErrorCode::Protocol, "unknown message type " + std::to_string(type));
  Message m;
  m.type = static_cast<MsgType>(type);
  m.stage = r.u32();
  const auto body = r.bytes(length - kFrameHeaderBytes);
  m.payload.assign(body.begin(), body.end());
  return m;
}

Message make_error(ErrorCode code, const std::string& what) {
  Message m;
  m.type = MsgType::Error;
  m.stage = kNoStage;
  ByteWriter w;
  w.u8(static_cast<uint8_t>(code));
  w.bytes(std::span(reinterpret_cast<const uint8_t*>(what.data()), what.size()));
  m.payload = w.take();
  return m;
}

void raise_error(const Message& m) {
  if (m.type != MsgType::Error || m.payload.empty()) throw Error(ErrorCode::Protocol, "malformed ERROR message");
  const uint8_t code = m.payload[0];
  if (code > static_cast<uint8_t>(ErrorCode::Io)) throw Error(ErrorCode::Protocol, "unknown error code in ERROR message");
  throw Error(static_cast<ErrorCode>(code),
              std::string("server: ") + std::string(m.payload.begin() + 1, m.payload.end()));
}

std::vector<double> registration_descriptor(const Image& color) {
  if (color.empty() || color.channels() != 3) throw Error(ErrorCode::InvalidArgument, "descriptor needs an RGB image");
  constexpr int kCells = 16;
  const int w = color.width(), h = color.height();
  std::vector<double> d(kCells * kCells, 0.0);
  for (int cy = 0; cy < kCells; ++cy) {
    const int y0 = cy * h / kCells, y1 = std::max(y0 + 1, (cy + 1) * h / kCells);
    for (int cx = 0; cx < kCells; ++cx) {
      const int x0 = cx * w / kCells, x1 = std::max(x0 + 1, (cx + 1) * w / kCells);
      double s = 0.0;
      for (int y = y0; y < std::min(y1, h); ++y)
        for (int x = x0; x < std::min(x1, w); ++x)
          s += 0.299 * color.at(x, y, 0) + 0.587 * color.at(x, y, 1) + 0.114 * color.at(x, y, 2);
      d[cy * kCells + cx] = s / ((std::min(y1, h) - y0) * (std::min(x1, w) - x0));
    }
  }
  return d;
}

std::vector<uint8_t> encode_register_query(const RegisterQuery& q) {
  ByteWriter w;
  if (q.image) {
    const Image& im = *q.image;
    w.u8(0);
    w.u32(static_cast<uint32_t>(im.width()));
    w.u32(static_cast<uint32_t>(im.height()));
    w.u8(static_cast<uint8_t>(im.channels()));
    for (double v : im.data()) w.f32(static_cast<float>(v));
  } else if (q.pose) {
    w.u8(1);
    write_pose(w, *q.pose);
  } else {
    throw Error(ErrorCode::InvalidArgument, "register query needs an image or a pose");
  }
  return w.take();
}

RegisterQuery decode_register_query(std::span<const uint8_t> payload) {
  ByteReader r(payload);
  RegisterQuery q;
  const uint8_t kind = r.u8();
  if (kind == 0) {
    const uint32_t w = r.u32(), h = r.u32();
    const uint8_t ch = r.u8();
    if (w == 0 || h == 0 || w > 16384 || h > 16384 || (ch != 1 && ch != 3))
      throw Error(ErrorCode::Protocol, "bad query image shape");
    Image im(static_cast<int>(w), static_cast<int>(h), ch);
    for (double& v : im.data()) v = r.f32();
    q.image = std::move(im);
  } else if (kind == 1) {
    q.pose = read_pose(r);
  } else {
    throw Error(ErrorCode::Protocol, "unknown register query kind");
  }
  expect_consumed(r);
  return q;
}

std::vector<uint8_t> encode_register_result(const RegisterResult& res) {
  ByteWriter w;
  write_pose(w, res.pose);
  w.u32(res.segment);
  w.f64(res.distance);
  return w.take();
}

RegisterResult decode_register_result(std::span<const uint8_t> payload) {
  ByteReader r(payload);
  RegisterResult res;
  res.pose = read_pose(r);
  res.segment = r.u32();
  res.distance = r.f64();
  expect_consumed(r);
  return res;
}

std::vector<uint8_t> encode_increment_payload(const IncrementPayload& p) {
  ByteWriter w;
  w.buffer().reserve(8 + p.increment.size() + p.segment.size());
  w.u32(static_cast<uint32_t>(p.increment.size()));
  w.bytes(p.increment);
  w.u32(static_cast<uint32_t>(p.segment.size()));
  w.bytes(p.segment);
  return w.take();
}

IncrementPayload decode_increment_payload(std::span<const uint8_t> payload) {
  ByteReader r(payload);
  IncrementPayload p;
  auto inc = r.bytes(r.u32());
  p.increment.assign(inc.begin(), inc.end());
  auto seg = r.bytes(r.u32());
  p.segment.assign(seg.begin(), seg.end());
  expect_consumed(r);
  return p;
}

ServerState::ServerState(BlockCodecOptions full_opts, BlockCodecOptions inc_opts)
    : full_opts_(std::move(full_opts)), inc_opts_(std::move(inc_opts)) {}

void ServerState::add_frame(const FrameRGBD& frame) {
  ServerFrame f{frame.pose, registration_descriptor(frame.color)};
  std::unique_lock lock(mutex_);
  frames_.push_back(std::move(f));
}

const PublishedStage& ServerState::publish(const GaussianMap& target) {
  std::unique_lock lock(mutex_);
  PublishedStage ps;
  StageRecord rec;
  const EncodedMap full_equiv = serialize_full(target, full_opts_);
  ps.full_equivalent_bytes = full_equiv.bytes.size();
  if (stages_.empty()) {
    GaussianMap t = target;
    t.stage_id = 0;
    ps.full = t.stage_id == target.stage_id ? full_equiv.bytes : serialize_full(t, full_opts_).bytes;
    ps.map = deserialize_full(ps.full);
    ps.stage_id = 0;
    ps.new_anchors = ps.map.anchor_count();
    rec.transmitted_bytes = ps.full.size();
  } else {
    const PublishedStage& prev = stages_.back();
    ps.stage_id = prev.stage_id + 1;
    GaussianMap t = target;
    t.stage_id = ps.stage_id;
    GaussianIncrement inc = compute_increment(t, prev.map);
    inc.stage_id = ps.stage_id;
    ps.update.increment = encode_increment(inc, inc_opts_).bytes;
    const GaussianMap seg = anchor_segment(t, prev.map.anchor_count());
    ps.update.segment = serialize_full(seg, full_opts_).bytes;
    ps.map = apply_increment(prev.map, decode_increment(ps.update.increment));
    append_segment(ps.map, deserialize_full(ps.update.segment));
    ps.seen_anchors = prev.map.anchor_count();
    ps.new_anchors = seg.anchor_count();
    rec.increment_bytes = ps.update.increment.size() + ps.update.segment.size();
    rec.transmitted_bytes = rec.increment_bytes;
  }
  rec.stage_id = ps.stage_id;
  rec.full_bytes = ps.full_equivalent_bytes;
  db_.put(rec);
  stages_.push_back(std::move(ps));
  return stages_.back();
}

std::optional<uint32_t> ServerState::latest_stage() const {
  std::shared_lock lock(mutex_);
  if (stages_.empty()) return std::nullopt;
  return stages_.back().stage_id;
}

PublishedStage ServerState::stage(uint32_t id) const {
  std::shared_lock lock(mutex_);
  if (id >= stages_.size()) throw Error(ErrorCode::UnknownStage, "no stage " + std::to_string(id));
  return stages_[id];
}

size_t ServerState::frame_count() const {
  std::shared_lock lock(mutex_);
  return frames_.size();
}

RegisterResult ServerState::register_client(const RegisterQuery& q) const {
  std::shared_lock lock(mutex_);
  if (frames_.empty()) throw Error(ErrorCode::EmptyServer, "server has no contributor frames");
  RegisterResult best;
  if (q.image) {
    const std::vector<double> d = registration_descriptor(*q.image);
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < frames_.size(); ++i) {
      double s = 0.0;
      for (size_t j = 0; j < d.size(); ++j) s += (d[j] - frames_[i].descriptor[j]) * (d[j] - frames_[i].descriptor[j]);
      if (s < best_d) {
        best_d = s;
        best.segment = static_cast<uint32_t>(i);
      }
    }
    best.distance = std::sqrt(best_d);
  } else if (q.pose) {
    PoseDistance bd{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (size_t i = 0; i < frames_.size(); ++i) {
      const PoseDistance pd = pose_distance(*q.pose, frames_[i].pose);
      if (pd.rotation_deg < bd.rotation_deg ||
          (pd.rotation_deg == bd.rotation_deg && pd.translation_m < bd.translation_m)) {
        bd = pd;
        best.segment = static_cast<uint32_t>(i);
      }
    }
    best.distance = bd.rotation_deg;
  } else {
    throw Error(ErrorCode::InvalidArgument, "register query needs an image or a pose");
  }
  best.pose = frames_[best.segment].pose;
  return best;
}

Message ServerState::serve_update(std::optional<uint32_t> client_stage) const {
  std::shared_lock lock(mutex_);
  if (stages_.empty()) return make_error(ErrorCode::EmptyServer, "no published stage");
  const uint32_t latest = stages_.back().stage_id;
  Message m;
  if (!client_stage) {
    m.type = MsgType::MapFull;
    m.stage = 0;
    m.payload = stages_.front().full;
  } else if (*client_stage > latest) {
    return make_error(ErrorCode::FutureStage, "client stage " + std::to_string(*client_stage) +
                                                  " is ahead of server stage " + std::to_string(latest));
  } else if (*client_stage == latest) {
    m.type = MsgType::Ack;
    m.stage = latest;
  } else {
    const PublishedStage& next = stages_[*client_stage + 1];
    m.type = MsgType::MapInc;
    m.stage = next.stage_id;
    m.payload = encode_increment_payload(next.update);
  }
  return m;
}

Message ServerState::handle(const Message& request) const {
  try {
    switch (request.type) {
      case MsgType::Hello:
        return serve_update(request.stage == kNoStage ? std::nullopt : std::optional<uint32_t>(request.stage));
      case MsgType::Register: {
        Message m;
        m.type = MsgType::RegisterOk;
        m.stage = latest_stage().value_or(kNoStage);
        m.payload = encode_register_result(register_client(decode_register_query(request.payload)));
        return m;
      }
      default:
        return make_error(ErrorCode::Protocol, "unexpected request type");
    }
  } catch (const Error& e) {
    return make_error(e.code(), e.what());
  }
}

void client_apply(ClientState& client, const Message& msg) {
  switch (msg.type) {
    case MsgType::MapFull: {
      GaussianMap m = deserialize_full(msg.payload);
      if (m.stage_id != msg.stage) throw Error(ErrorCode::Protocol, "MAP_FULL stage disagrees with its bitstream");
      client.map = std::move(m);
      return;
    }
    case MsgType::MapInc: {
      if (!client.map) throw Error(ErrorCode::OutOfOrderUpdate, "increment before any full map");
      if (msg.stage != client.map->stage_id + 1)
        throw Error(ErrorCode::OutOfOrderUpdate, "increment for stage " + std::to_string(msg.stage) +
                                                     " cannot follow stage " + std::to_string(client.map->stage_id));
      const IncrementPayload p = decode_increment_payload(msg.payload);
      const GaussianIncrement inc = decode_increment(p.increment);
      if (inc.stage_id != msg.stage) throw Error(ErrorCode::Protocol, "MAP_INC stage disagrees with its bitstream");
      const GaussianMap seg = deserialize_full(p.segment);
      GaussianMap next = apply_increment(*client.map, inc);
      append_segment(next, seg);
      client.map = std::move(next);
      return;
    }
    default:
      throw Error(ErrorCode::Protocol, "client can only apply MAP_FULL or MAP_INC");
  }
}

}  // namespace gsshare
