#pragma once

// Shared generators and reference implementations for the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "photonstat/correlation.hpp"
#include "photonstat/photon_stream.hpp"
#include "photonstat/random.hpp"

namespace testing {

using namespace photonstat;

/// Sorted random records with uniformly spread nsync gaps and microtimes.
inline PhotonStream random_stream(std::uint64_t seed, std::size_t n, std::uint64_t max_gap = 3,
                                  std::uint8_t channels = 2,
                                  std::uint64_t period = kDefaultSyncPeriodPs,
                                  std::uint32_t resolution = kDefaultResolutionPs) {
  Rng rng(seed);
  PhotonStream s;
  s.header.sync_period_ps = period;
  s.header.resolution_ps = resolution;
  s.header.channel_count = channels;
  const auto micro_limit = static_cast<std::uint32_t>(period / resolution);
  std::uint64_t nsync = 0;
  std::vector<PhotonRecord> recs;
  recs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    nsync += static_cast<std::uint64_t>(rng.uniform() * static_cast<double>(max_gap + 1));
    const auto ch = static_cast<std::uint8_t>(rng.uniform() * channels);
    const auto micro = static_cast<std::uint32_t>(rng.uniform() * micro_limit);
    recs.push_back({ch, nsync, micro});
  }
  std::sort(recs.begin(), recs.end(), [](const PhotonRecord& a, const PhotonRecord& b) {
    return a.nsync != b.nsync ? a.nsync < b.nsync : a.microtime < b.microtime;
  });
  s.records = std::move(recs);
  s.header.record_count = s.records.size();
  return s;
}

/// All-pairs channel-0/channel-1 delay histogram on the g2_pulsed lag grid.
inline std::vector<std::uint64_t> brute_force_g2(const PhotonStream& s, const G2Histogram& grid) {
  std::vector<std::int64_t> t0, t1;
  for (const auto& r : s.records) {
    const auto t = static_cast<std::int64_t>(s.absolute_time_ps(r));
    (r.channel == 0 ? t0 : t1).push_back(t);
  }
  std::vector<std::uint64_t> h(grid.counts.size(), 0);
  const std::int64_t half = grid.half_bins();
  const std::int64_t bw = grid.lag_bin_width_ps;
  for (const auto a : t0) {
    for (const auto b : t1) {
      const std::int64_t lag = b - a;
      if (lag > grid.max_lag_ps || lag < -grid.max_lag_ps) continue;
      // round half away from zero, computed in floating point as an
      // independent route to the same bin
      const double q = static_cast<double>(lag) / static_cast<double>(bw);
      const auto idx = static_cast<std::int64_t>(q >= 0 ? std::floor(q + 0.5) : -std::floor(-q + 0.5));
      ++h[static_cast<std::size_t>(idx + half)];
    }
  }
  return h;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("photonstat_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
