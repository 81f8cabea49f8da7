#pragma once

// Binary time-tagged (TTTR) photon stream: header, 64-bit record codec and
// the in-memory model shared by the simulator and the analysis code.
//
// On-disk layout (all integers little-endian):
//
//   "PHST" | version u16 | sync_period_ps u64 | resolution_ps u32 |
//   channel_count u8 | record_count u64 | meta_len u32 | meta bytes |
//   raw records (u64 each)
//
// Raw record word:
//   bit 63 = 1 : overflow, bits 62..0 = increment; nsync base += increment * 2^30
//   bit 63 = 0 : photon, bits 62..58 channel, 57..28 nsync offset, 27..0 microtime

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace photonstat {

inline constexpr std::uint16_t kStreamVersion = 1;
inline constexpr std::uint64_t kDefaultSyncPeriodPs = 400'000;  // 2.5 MHz
inline constexpr std::uint32_t kDefaultResolutionPs = 16;

inline constexpr int kNsyncOffsetBits = 30;
inline constexpr int kMicrotimeBits = 28;
inline constexpr int kChannelBits = 5;
inline constexpr std::uint64_t kNsyncEpoch = std::uint64_t{1} << kNsyncOffsetBits;
inline constexpr std::uint64_t kMicrotimeLimit = std::uint64_t{1} << kMicrotimeBits;
inline constexpr std::uint64_t kOverflowFlag = std::uint64_t{1} << 63;

struct StreamHeader {
  std::uint16_t version = kStreamVersion;
  std::uint64_t sync_period_ps = kDefaultSyncPeriodPs;
  std::uint32_t resolution_ps = kDefaultResolutionPs;
  std::uint8_t channel_count = 2;
  std::uint64_t record_count = 0;
  std::string metadata;  // free-form UTF-8 JSON, may be empty

  bool operator==(const StreamHeader&) const = default;
};

struct PhotonRecord {
  std::uint8_t channel = 0;
  std::uint64_t nsync = 0;
  std::uint32_t microtime = 0;

  bool operator==(const PhotonRecord&) const = default;
};

struct TimedPhoton {
  std::uint64_t time_ps = 0;
  std::uint8_t channel = 0;

  bool operator==(const TimedPhoton&) const = default;
};

/// Immutable after construction by the simulator or the decoder.
struct PhotonStream {
  StreamHeader header;
  std::vector<PhotonRecord> records;

  double sync_period_s() const { return static_cast<double>(header.sync_period_ps) * 1e-12; }
  std::uint64_t absolute_time_ps(const PhotonRecord& r) const {
    return r.nsync * header.sync_period_ps +
           static_cast<std::uint64_t>(r.microtime) * header.resolution_ps;
  }
};

/// Throws InvalidHeader when period/resolution constraints are violated.
void validate_header(const StreamHeader& header);

/// Raw word for a photon whose nsync is `offset` pulses past the current base.
std::uint64_t pack_photon(std::uint8_t channel, std::uint64_t offset, std::uint32_t microtime);
std::uint64_t pack_overflow(std::uint64_t increment);

std::vector<std::uint8_t> encode_stream(const StreamHeader& header,
                                        std::span<const PhotonRecord> records);
inline std::vector<std::uint8_t> encode_stream(const PhotonStream& stream) {
  return encode_stream(stream.header, stream.records);
}

PhotonStream decode_stream(std::span<const std::uint8_t> bytes);

/// Absolute arrival times, nondecreasing, one entry per record.
std::vector<TimedPhoton> merge_channels(const PhotonStream& stream);

void write_stream_file(const std::string& path, const PhotonStream& stream);
PhotonStream read_stream_file(const std::string& path);

}  // namespace photonstat
