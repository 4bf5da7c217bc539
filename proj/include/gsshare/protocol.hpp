#pragma once

// Wire messages plus the server and client state machines for staged map delivery.
//
// Frame layout (little endian): u32 length | u8 type | u32 stage | payload,
// where length counts the type, stage and payload bytes.

#include <cstdint>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "gsshare/bitstream.hpp"
#include "gsshare/core.hpp"
#include "gsshare/increment.hpp"

namespace gsshare {

enum class MsgType : uint8_t {
  Hello = 1,
  Register = 2,
  RegisterOk = 3,
  MapFull = 4,
  MapInc = 5,
  Ack = 6,
  Error = 7,
};

inline constexpr size_t kFrameHeaderBytes = 5;  // type + stage
inline constexpr uint32_t kMaxFrameBytes = 256u << 20;
inline constexpr uint32_t kNoStage = 0xFFFFFFFFu;

struct Message {
  MsgType type = MsgType::Hello;
  uint32_t stage = 0;
  std::vector<uint8_t> payload;

  friend bool operator==(const Message&, const Message&) = default;
};

std::vector<uint8_t> encode_message(const Message& m);
// Parses exactly one frame. Throws Protocol on a bad length or unknown type, Truncated when short.
Message decode_message(std::span<const uint8_t> frame);
// Validates a length prefix before the body is read.
void check_frame_length(uint32_t length);

Message make_error(ErrorCode code, const std::string& what);
// Rethrows the error carried by an ERROR message.
[[noreturn]] void raise_error(const Message& m);

// 16 x 16 mean-pooled Rec. 601 luma.
std::vector<double> registration_descriptor(const Image& color);

struct RegisterQuery {
  std::optional<Image> image;
  std::optional<CameraPose> pose;
};

struct RegisterResult {
  CameraPose pose;
  uint32_t segment = 0;  // index of the matched contributor frame
  double distance = 0.0;
};

std::vector<uint8_t> encode_register_query(const RegisterQuery& q);
RegisterQuery decode_register_query(std::span<const uint8_t> payload);
std::vector<uint8_t> encode_register_result(const RegisterResult& r);
RegisterResult decode_register_result(std::span<const uint8_t> payload);

struct IncrementPayload {
  std::vector<uint8_t> increment;  // .gsb, Increment kind
  std::vector<uint8_t> segment;    // .gsb, FullMap kind with the anchors new at this stage
};

std::vector<uint8_t> encode_increment_payload(const IncrementPayload& p);
IncrementPayload decode_increment_payload(std::span<const uint8_t> payload);

struct PublishedStage {
  uint32_t stage_id = 0;
  GaussianMap map;                 // exactly what a client decodes
  std::vector<uint8_t> full;       // stage 0: the MAP_FULL bitstream
  IncrementPayload update;         // stages >= 1
  size_t full_equivalent_bytes = 0;  // size of re-sending this stage's whole map
  size_t seen_anchors = 0;         // anchors carried over from the previous stage
  size_t new_anchors = 0;          // anchors shipped in the segment
};

struct ServerFrame {
  CameraPose pose;
  std::vector<double> descriptor;
};

// Published stages are immutable; readers share the lock, publish() takes it exclusively.
class ServerState {
 public:
  explicit ServerState(BlockCodecOptions full_opts = {},
                       BlockCodecOptions inc_opts = increment_codec_options());

  void add_frame(const FrameRGBD& frame);
  // Encodes `target` as stage 0 or as an increment over the latest stage. `target` must keep
  // the latest stage's anchors as a prefix. Returns the published stage.
  const PublishedStage& publish(const GaussianMap& target);

  std::optional<uint32_t> latest_stage() const;
  PublishedStage stage(uint32_t id) const;
  size_t frame_count() const;
  StageDb& db() { return db_; }
  const StageDb& db() const { return db_; }

  RegisterResult register_client(const RegisterQuery& q) const;
  Message serve_update(std::optional<uint32_t> client_stage) const;
  // Dispatches HELLO and REGISTER; anything else yields ERROR(Protocol).
  Message handle(const Message& request) const;

 private:
  BlockCodecOptions full_opts_;
  BlockCodecOptions inc_opts_;
  mutable std::shared_mutex mutex_;
  std::vector<PublishedStage> stages_;
  std::vector<ServerFrame> frames_;
  StageDb db_;
};

struct ClientState {
  std::optional<GaussianMap> map;

  std::optional<uint32_t> stage() const {
    return map ? std::optional<uint32_t>(map->stage_id) : std::nullopt;
  }
};

// MAP_FULL replaces the cache; MAP_INC must be for stage current + 1. Every payload is decoded
// before anything changes, so on any error the state is untouched.
void client_apply(ClientState& client, const Message& msg);

}  // namespace gsshare
