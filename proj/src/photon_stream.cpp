#include "photonstat/photon_stream.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "photonstat/error.hpp"

namespace photonstat {
namespace {

constexpr char kModule[] = "photon_stream";
constexpr std::size_t kFixedHeaderBytes = 4 + 2 + 8 + 4 + 1 + 8 + 4;

static_assert(std::endian::native == std::endian::little,
              "codec assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::uint8_t* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

[[noreturn]] void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, kModule, msg);
}

}  // namespace

void validate_header(const StreamHeader& header) {
  if (header.sync_period_ps == 0 || header.resolution_ps == 0)
    fail(ErrorCode::InvalidHeader, "sync_period_ps and resolution_ps must be positive");
  if (header.sync_period_ps < header.resolution_ps)
    fail(ErrorCode::InvalidHeader, "sync_period_ps must be >= resolution_ps");
  if (header.channel_count == 0 || header.channel_count > (1 << kChannelBits))
    fail(ErrorCode::InvalidHeader, "channel_count must be in [1, 32]");
}

std::uint64_t pack_photon(std::uint8_t channel, std::uint64_t offset, std::uint32_t microtime) {
  return (static_cast<std::uint64_t>(channel) << (kNsyncOffsetBits + kMicrotimeBits)) |
         (offset << kMicrotimeBits) | microtime;
}

std::uint64_t pack_overflow(std::uint64_t increment) { return kOverflowFlag | increment; }

std::vector<std::uint8_t> encode_stream(const StreamHeader& header,
                                        std::span<const PhotonRecord> records) {
  validate_header(header);

  std::vector<std::uint8_t> out;
  out.reserve(kFixedHeaderBytes + header.metadata.size() + 8 * records.size() + 64);
  out.insert(out.end(), {'P', 'H', 'S', 'T'});
  put<std::uint16_t>(out, header.version);
  put<std::uint64_t>(out, header.sync_period_ps);
  put<std::uint32_t>(out, header.resolution_ps);
  put<std::uint8_t>(out, header.channel_count);
  put<std::uint64_t>(out, records.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.metadata.size()));
  out.insert(out.end(), header.metadata.begin(), header.metadata.end());

  std::uint64_t base = 0;
  const PhotonRecord* prev = nullptr;
  for (const auto& r : records) {
    if (prev && (r.nsync < prev->nsync ||
                 (r.nsync == prev->nsync && r.microtime < prev->microtime)))
      fail(ErrorCode::UnsortedRecords,
           "record at nsync " + std::to_string(r.nsync) + " precedes its predecessor");
    if (r.microtime >= kMicrotimeLimit ||
        static_cast<std::uint64_t>(r.microtime) * header.resolution_ps >= header.sync_period_ps)
      fail(ErrorCode::MicrotimeOverflow, "microtime " + std::to_string(r.microtime) +
                                             " exceeds the sync period or 28 bits");
    if (r.channel >= header.channel_count)
      fail(ErrorCode::ChannelOutOfRange, "channel " + std::to_string(r.channel) +
                                             " >= channel_count " +
                                             std::to_string(header.channel_count));
    const std::uint64_t gap = r.nsync - base;
    if (gap >= kNsyncEpoch) {
      const std::uint64_t increment = gap >> kNsyncOffsetBits;
      put<std::uint64_t>(out, pack_overflow(increment));
      base += increment << kNsyncOffsetBits;
    }
    put<std::uint64_t>(out, pack_photon(r.channel, r.nsync - base, r.microtime));
    prev = &r;
  }
  return out;
}

PhotonStream decode_stream(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t magic[4] = {'P', 'H', 'S', 'T'};
  const std::size_t probe = std::min<std::size_t>(bytes.size(), 4);
  if (!std::equal(bytes.begin(), bytes.begin() + probe, magic))
    fail(ErrorCode::BadMagic, "stream does not start with \"PHST\"");
  if (bytes.size() < kFixedHeaderBytes)
    fail(ErrorCode::TruncatedStream, "stream shorter than its fixed header");

  PhotonStream stream;
  StreamHeader& h = stream.header;
  const std::uint8_t* p = bytes.data() + 4;
  h.version = get<std::uint16_t>(p);
  p += 2;
  if (h.version != kStreamVersion)
    fail(ErrorCode::VersionUnsupported, "version " + std::to_string(h.version));
  h.sync_period_ps = get<std::uint64_t>(p);
  p += 8;
  h.resolution_ps = get<std::uint32_t>(p);
  p += 4;
  h.channel_count = get<std::uint8_t>(p);
  p += 1;
  h.record_count = get<std::uint64_t>(p);
  p += 8;
  const std::uint32_t meta_len = get<std::uint32_t>(p);
  p += 4;
  validate_header(h);

  const std::size_t body_offset = kFixedHeaderBytes + meta_len;
  if (bytes.size() < body_offset)
    fail(ErrorCode::TruncatedStream, "metadata extends past end of stream");
  h.metadata.assign(reinterpret_cast<const char*>(p), meta_len);

  const std::size_t body_bytes = bytes.size() - body_offset;
  if (body_bytes % 8 != 0)
    fail(ErrorCode::TruncatedStream, "record section is not a whole number of words");
  const std::size_t words = body_bytes / 8;
  if (words < h.record_count)
    fail(ErrorCode::TruncatedStream, "header announces " + std::to_string(h.record_count) +
                                         " records, only " + std::to_string(words) +
                                         " words present");

  auto& records = stream.records;
  records.resize(h.record_count);
  const std::uint8_t* w = bytes.data() + body_offset;
  std::uint64_t base = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < words; ++i, w += 8) {
    const std::uint64_t word = get<std::uint64_t>(w);
    if (word & kOverflowFlag) {
      const std::uint64_t increment = word & ~kOverflowFlag;
      if (increment > ((~std::uint64_t{0} - base) >> kNsyncOffsetBits))
        fail(ErrorCode::TruncatedStream, "overflow records exceed the 64-bit nsync range");
      base += increment << kNsyncOffsetBits;
      continue;
    }
    if (n == records.size())
      fail(ErrorCode::TruncatedStream, "more photon records than record_count");
    PhotonRecord& r = records[n++];
    r.channel = static_cast<std::uint8_t>(word >> (kNsyncOffsetBits + kMicrotimeBits));
    r.nsync = base + ((word >> kMicrotimeBits) & (kNsyncEpoch - 1));
    r.microtime = static_cast<std::uint32_t>(word & (kMicrotimeLimit - 1));
    if (r.channel >= h.channel_count)
      fail(ErrorCode::ChannelOutOfRange, "decoded channel " + std::to_string(r.channel));
  }
  if (n != records.size())
    fail(ErrorCode::TruncatedStream, "header announces " + std::to_string(h.record_count) +
                                         " records, found " + std::to_string(n));
  return stream;
}

std::vector<TimedPhoton> merge_channels(const PhotonStream& stream) {
  std::vector<TimedPhoton> out;
  out.reserve(stream.records.size());
  for (const auto& r : stream.records)
    out.push_back({stream.absolute_time_ps(r), r.channel});
  // Records are sorted by (nsync, microtime), so absolute times already are;
  // stable_sort only matters for hand-built streams that bypassed the codec.
  if (!std::is_sorted(out.begin(), out.end(),
                      [](const auto& a, const auto& b) { return a.time_ps < b.time_ps; }))
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.time_ps < b.time_ps; });
  return out;
}

void write_stream_file(const std::string& path, const PhotonStream& stream) {
  const auto bytes = encode_stream(stream);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, kModule, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::IoError, kModule, "write failed for " + path);
}

PhotonStream read_stream_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, kModule, "cannot open " + path);
  f.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!f) throw Error(ErrorCode::IoError, kModule, "read failed for " + path);
  return decode_stream(bytes);
}

}  // namespace photonstat
