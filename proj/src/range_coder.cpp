#include <cassert>

#include "gsshare/entropy.hpp"

namespace gsshare {

namespace {
constexpr uint32_t kTop = 1u << 24;
}

void RangeEncoder::encode(uint32_t cum, uint32_t freq) {
  assert(freq > 0 && cum + freq <= kFreqTotal);
  // Boundaries are range * cum / total rounded down, so no range is lost to a truncated
  // per-unit step and the code length tracks the model's information content.
  const uint64_t lo = (static_cast<uint64_t>(range_) * cum) >> kFreqBits;
  const uint64_t hi = (static_cast<uint64_t>(range_) * (cum + freq)) >> kFreqBits;
  low_ += lo;
  range_ = static_cast<uint32_t>(hi - lo);
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_raw16(uint32_t value) { encode(value & 0xFFFFu, 1); }

void RangeEncoder::shift_low() {
  if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
    uint8_t temp = cache_;
    do {
      out_.push_back(static_cast<uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

std::vector<uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  std::vector<uint8_t> out = std::move(out_);
  *this = RangeEncoder();
  return out;
}

RangeDecoder::RangeDecoder(std::span<const uint8_t> data) : data_(data) {
  if (data_.size() < 5) throw Error(ErrorCode::Truncated, "range-coded stream shorter than 5 bytes");
  if (data_[0] != 0) throw Error(ErrorCode::CorruptStream, "range-coded stream has a bad lead byte");
  pos_ = 1;
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | data_[pos_++];
}

uint8_t RangeDecoder::next_byte() {
  if (pos_ >= data_.size()) throw Error(ErrorCode::Truncated, "range-coded stream ended early");
  return data_[pos_++];
}

uint32_t RangeDecoder::peek() {
  // Largest cum whose lower boundary does not exceed code_.
  const uint64_t v = (((static_cast<uint64_t>(code_) + 1) << kFreqBits) - 1) / range_;
  if (v >= kFreqTotal) throw Error(ErrorCode::CorruptStream, "range decoder out of bounds");
  return static_cast<uint32_t>(v);
}

void RangeDecoder::consume(uint32_t cum, uint32_t freq) {
  const uint64_t lo = (static_cast<uint64_t>(range_) * cum) >> kFreqBits;
  const uint64_t hi = (static_cast<uint64_t>(range_) * (cum + freq)) >> kFreqBits;
  if (code_ < lo || code_ >= hi) throw Error(ErrorCode::CorruptStream, "range decoder lost sync");
  code_ -= static_cast<uint32_t>(lo);
  range_ = static_cast<uint32_t>(hi - lo);
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

uint32_t RangeDecoder::decode_raw16() {
  const uint32_t v = peek();
  consume(v, 1);
  return v;
}

std::vector<uint8_t> ac_encode(std::span<const int32_t> symbols, const ChannelModel& model) {
  RangeEncoder enc;
  for (int32_t s : symbols) model.encode(enc, s);
  return enc.finish();
}

std::vector<int32_t> ac_decode(std::span<const uint8_t> bytes, const ChannelModel& model,
                               size_t count) {
  RangeDecoder dec(bytes);
  std::vector<int32_t> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) out.push_back(model.decode(dec));
  if (!dec.at_end()) throw Error(ErrorCode::CorruptStream, "trailing bytes after range-coded data");
  return out;
}

std::vector<uint8_t> ac_encode(const std::vector<std::vector<int32_t>>& channels,
                               const EntropyModel& model) {
  if (channels.size() != model.channels.size())
    throw Error(ErrorCode::DimensionMismatch, "channel count does not match entropy model");
  RangeEncoder enc;
  for (size_t c = 0; c < channels.size(); ++c)
    for (int32_t s : channels[c]) model.channels[c].encode(enc, s);
  return enc.finish();
}

std::vector<std::vector<int32_t>> ac_decode(std::span<const uint8_t> bytes,
                                            const EntropyModel& model,
                                            const std::vector<size_t>& counts) {
  if (counts.size() != model.channels.size())
    throw Error(ErrorCode::DimensionMismatch, "channel count does not match entropy model");
  RangeDecoder dec(bytes);
  std::vector<std::vector<int32_t>> out(counts.size());
  for (size_t c = 0; c < counts.size(); ++c) {
    out[c].reserve(counts[c]);
    for (size_t i = 0; i < counts[c]; ++i) out[c].push_back(model.channels[c].decode(dec));
  }
  if (!dec.at_end()) throw Error(ErrorCode::CorruptStream, "trailing bytes after range-coded data");
  return out;
}

}  // namespace gsshare
