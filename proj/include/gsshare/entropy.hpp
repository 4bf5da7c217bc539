#pragma once

// Integer range coder and static per-channel discretized-Laplace models.
//
// The coder is a 32-bit range / 64-bit low design with carry propagation through a cached byte.
// Sub-intervals are split with a 64-bit multiply rather than a truncating divide.
// Frequencies are quantized to a 16-bit total so every table, and therefore every stream, is
// identical across platforms.

#include <cstdint>
#include <span>
#include <vector>

#include "gsshare/error.hpp"

namespace gsshare {

inline constexpr int kFreqBits = 16;
inline constexpr uint32_t kFreqTotal = 1u << kFreqBits;
// Alphabets extend this far from the location before an escape symbol takes over.
inline constexpr int32_t kMaxAlphabetRadius = 2048;
inline constexpr int32_t kGuardBand = 2;

class RangeEncoder {
 public:
  // Codes the interval [cum, cum + freq) out of kFreqTotal.
  void encode(uint32_t cum, uint32_t freq);
  // 16 raw bits, coded as a uniform symbol.
  void encode_raw16(uint32_t value);
  std::vector<uint8_t> finish();

 private:
  void shift_low();

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> data);
  // Returns the target value in [0, kFreqTotal) for the next symbol; follow with consume().
  uint32_t peek();
  void consume(uint32_t cum, uint32_t freq);
  uint32_t decode_raw16();
  // True when every byte written by the encoder has been read.
  bool at_end() const { return pos_ == data_.size(); }

 private:
  uint8_t next_byte();

  std::span<const uint8_t> data_;
  size_t pos_ = 0;
  uint32_t code_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
};

// One channel's coding table. Symbols lo..hi are coded directly; with `escape` an extra symbol
// follows them and announces a raw 32-bit value.
class ChannelModel {
 public:
  ChannelModel() = default;

  // Discretized Laplace(mu, b) over [lo, hi] (plus escape), quantized to kFreqTotal.
  static ChannelModel laplace(int32_t mu, float b, int32_t lo, int32_t hi, bool escape);
  // Explicit table; freqs must be positive and sum to kFreqTotal.
  static ChannelModel from_frequencies(int32_t lo, std::vector<uint32_t> freqs, bool escape = false);

  int32_t mu() const { return mu_; }
  float b() const { return b_; }
  int32_t lo() const { return lo_; }
  int32_t hi() const { return hi_; }
  bool escape() const { return escape_; }
  size_t alphabet_size() const { return freq_.size(); }
  const std::vector<uint32_t>& frequencies() const { return freq_; }

  bool contains(int32_t s) const { return s >= lo_ && s <= hi_; }
  // Model probability of a symbol; escaped symbols get the escape mass, others 0.
  double pmf(int32_t s) const;
  double bits(int32_t s) const;

  void encode(RangeEncoder& enc, int32_t s) const;
  int32_t decode(RangeDecoder& dec) const;

 private:
  void build_cumulative();

  int32_t mu_ = 0;
  float b_ = 1.0f;
  int32_t lo_ = 0;
  int32_t hi_ = 0;
  bool escape_ = false;
  std::vector<uint32_t> freq_;
  std::vector<uint32_t> cum_;
};

struct EntropyModel {
  std::vector<ChannelModel> channels;
};

// mu = median (middle pair averaged toward zero), b = mean |s - mu| floored at 1e-3, alphabet [min - 2, max + 2] capped to
// mu +- kMaxAlphabetRadius with an escape symbol when the cap bites.
ChannelModel fit_channel_model(std::span<const int32_t> symbols);
EntropyModel fit_entropy_model(const std::vector<std::vector<int32_t>>& channels);

// Sum of -log2 pmf, pmf floored at 2^-32.
double estimate_bits(std::span<const int32_t> symbols, const ChannelModel& model);
double estimate_bits(const std::vector<std::vector<int32_t>>& channels, const EntropyModel& model);

std::vector<uint8_t> ac_encode(std::span<const int32_t> symbols, const ChannelModel& model);
std::vector<int32_t> ac_decode(std::span<const uint8_t> bytes, const ChannelModel& model,
                               size_t count);

// All channels in order in one stream.
std::vector<uint8_t> ac_encode(const std::vector<std::vector<int32_t>>& channels,
                               const EntropyModel& model);
std::vector<std::vector<int32_t>> ac_decode(std::span<const uint8_t> bytes,
                                            const EntropyModel& model,
                                            const std::vector<size_t>& counts);

// exp(x) for x <= 0 from basic IEEE operations only, so tables never depend on the libm.
double portable_exp_neg(double x);

}  // namespace gsshare
