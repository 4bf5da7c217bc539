#include <algorithm>
#include <cmath>
#include <numeric>

#include "gsshare/entropy.hpp"

namespace gsshare {

double portable_exp_neg(double x) {
  if (x > 0.0) x = 0.0;
  if (x < -745.0) return 0.0;
  const double n = std::nearbyint(x * 1.4426950408889634);
  // Cody-Waite split of ln 2; the high part has few enough bits that n * hi is exact.
  double r = x - n * 0.693145751953125;
  r = r - n * 1.42860682030941723212e-6;
  static constexpr double kInvFact[] = {
      1.0,         1.0,          1.0 / 2,        1.0 / 6,         1.0 / 24,
      1.0 / 120,   1.0 / 720,    1.0 / 5040,     1.0 / 40320,     1.0 / 362880,
      1.0 / 3628800, 1.0 / 39916800, 1.0 / 479001600,
  };
  double p = kInvFact[12];
  for (int k = 11; k >= 0; --k) p = p * r + kInvFact[k];
  return std::ldexp(p, static_cast<int>(n));
}

namespace {

double laplace_cdf(double x, double mu, double b) {
  if (x < mu) return 0.5 * portable_exp_neg((x - mu) / b);
  return 1.0 - 0.5 * portable_exp_neg(-(x - mu) / b);
}

}  // namespace

ChannelModel ChannelModel::laplace(int32_t mu, float b, int32_t lo, int32_t hi, bool escape) {
  if (hi < lo) throw Error(ErrorCode::InvalidArgument, "empty alphabet");
  if (!(b > 0.0f)) throw Error(ErrorCode::InvalidArgument, "Laplace diversity must be positive");
  const int64_t direct = static_cast<int64_t>(hi) - lo + 1;
  const int64_t n = direct + (escape ? 1 : 0);
  if (n > static_cast<int64_t>(kFreqTotal / 2))
    throw Error(ErrorCode::InvalidArgument, "alphabet too large for the frequency table");

  const double bd = static_cast<double>(b);
  const double m = static_cast<double>(mu);
  const double avail = static_cast<double>(kFreqTotal - static_cast<uint32_t>(n));
  std::vector<uint32_t> freq(static_cast<size_t>(n));
  for (int64_t i = 0; i < direct; ++i) {
    const double k = static_cast<double>(lo + i);
    const double p = laplace_cdf(k + 0.5, m, bd) - laplace_cdf(k - 0.5, m, bd);
    freq[i] = 1 + static_cast<uint32_t>(std::floor(std::max(0.0, p) * avail));
  }
  if (escape) {
    const double inside = laplace_cdf(hi + 0.5, m, bd) - laplace_cdf(lo - 0.5, m, bd);
    freq[direct] = 1 + static_cast<uint32_t>(std::floor(std::max(0.0, 1.0 - inside) * avail));
  }
  const uint64_t sum = std::accumulate(freq.begin(), freq.end(), uint64_t{0});
  const size_t mode = static_cast<size_t>(std::max_element(freq.begin(), freq.end()) - freq.begin());
  freq[mode] += static_cast<uint32_t>(kFreqTotal - sum);

  ChannelModel model;
  model.mu_ = mu;
  model.b_ = b;
  model.lo_ = lo;
  model.hi_ = hi;
  model.escape_ = escape;
  model.freq_ = std::move(freq);
  model.build_cumulative();
  return model;
}

ChannelModel ChannelModel::from_frequencies(int32_t lo, std::vector<uint32_t> freqs, bool escape) {
  if (freqs.size() < (escape ? 2u : 1u)) throw Error(ErrorCode::InvalidArgument, "empty alphabet");
  uint64_t sum = 0;
  for (uint32_t f : freqs) {
    if (f == 0) throw Error(ErrorCode::InvalidArgument, "zero frequency");
    sum += f;
  }
  if (sum != kFreqTotal) throw Error(ErrorCode::InvalidArgument, "frequencies must sum to 2^16");
  ChannelModel model;
  model.lo_ = lo;
  model.hi_ = lo + static_cast<int32_t>(freqs.size()) - 1 - (escape ? 1 : 0);
  model.mu_ = lo;
  model.escape_ = escape;
  model.freq_ = std::move(freqs);
  model.build_cumulative();
  return model;
}

void ChannelModel::build_cumulative() {
  cum_.assign(freq_.size() + 1, 0);
  for (size_t i = 0; i < freq_.size(); ++i) cum_[i + 1] = cum_[i] + freq_[i];
}

double ChannelModel::pmf(int32_t s) const {
  if (contains(s)) return static_cast<double>(freq_[s - lo_]) / kFreqTotal;
  if (escape_) return static_cast<double>(freq_.back()) / kFreqTotal;
  return 0.0;
}

double ChannelModel::bits(int32_t s) const {
  const double p = std::max(pmf(s), std::ldexp(1.0, -32));
  const double b = -std::log2(p);
  return (!contains(s) && escape_) ? b + 32.0 : b;
}

void ChannelModel::encode(RangeEncoder& enc, int32_t s) const {
  if (contains(s)) {
    const size_t i = static_cast<size_t>(s - lo_);
    enc.encode(cum_[i], freq_[i]);
    return;
  }
  if (!escape_) throw Error(ErrorCode::SymbolOutOfAlphabet, "symbol " + std::to_string(s) + " outside alphabet");
  const size_t e = freq_.size() - 1;
  enc.encode(cum_[e], freq_[e]);
  const uint32_t raw = static_cast<uint32_t>(s);
  enc.encode_raw16(raw >> 16);
  enc.encode_raw16(raw & 0xFFFFu);
}

int32_t ChannelModel::decode(RangeDecoder& dec) const {
  const uint32_t v = dec.peek();
  const size_t i = static_cast<size_t>(std::upper_bound(cum_.begin(), cum_.end(), v) - cum_.begin()) - 1;
  dec.consume(cum_[i], freq_[i]);
  if (escape_ && i == freq_.size() - 1) {
    const uint32_t hi = dec.decode_raw16();
    const uint32_t lo = dec.decode_raw16();
    return static_cast<int32_t>((hi << 16) | lo);
  }
  return lo_ + static_cast<int32_t>(i);
}

ChannelModel fit_channel_model(std::span<const int32_t> symbols) {
  if (symbols.empty()) throw Error(ErrorCode::InsufficientData, "no symbols to fit");
  std::vector<int32_t> sorted(symbols.begin(), symbols.end());
  std::sort(sorted.begin(), sorted.end());
  // Midpoint of the two middle symbols, truncated toward zero, so a symmetric sample centers on 0.
  const int64_t mid_sum = static_cast<int64_t>(sorted[(sorted.size() - 1) / 2]) + sorted[sorted.size() / 2];
  const int32_t mu = static_cast<int32_t>(mid_sum / 2);
  double dev = 0.0;
  for (int32_t s : sorted) dev += std::abs(static_cast<double>(s) - mu);
  const float b = static_cast<float>(std::max(dev / static_cast<double>(sorted.size()), 1e-3));
  const int64_t want_lo = static_cast<int64_t>(sorted.front()) - kGuardBand;
  const int64_t want_hi = static_cast<int64_t>(sorted.back()) + kGuardBand;
  const int64_t cap_lo = static_cast<int64_t>(mu) - kMaxAlphabetRadius;
  const int64_t cap_hi = static_cast<int64_t>(mu) + kMaxAlphabetRadius;
  const bool escape = want_lo < cap_lo || want_hi > cap_hi;
  return ChannelModel::laplace(mu, b, static_cast<int32_t>(std::max(want_lo, cap_lo)),
                               static_cast<int32_t>(std::min(want_hi, cap_hi)), escape);
}

EntropyModel fit_entropy_model(const std::vector<std::vector<int32_t>>& channels) {
  EntropyModel model;
  for (const auto& c : channels) model.channels.push_back(fit_channel_model(c));
  return model;
}

double estimate_bits(std::span<const int32_t> symbols, const ChannelModel& model) {
  double bits = 0.0;
  for (int32_t s : symbols) bits += model.bits(s);
  return bits;
}

double estimate_bits(const std::vector<std::vector<int32_t>>& channels, const EntropyModel& model) {
  if (channels.size() != model.channels.size())
    throw Error(ErrorCode::DimensionMismatch, "channel count does not match entropy model");
  double bits = 0.0;
  for (size_t c = 0; c < channels.size(); ++c) bits += estimate_bits(channels[c], model.channels[c]);
  return bits;
}

}  // namespace gsshare
