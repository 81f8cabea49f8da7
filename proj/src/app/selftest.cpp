#include <cmath>
#include <functional>
#include <ostream>

#include "photonstat/app.hpp"
#include "photonstat/correlation.hpp"
#include "photonstat/error.hpp"
#include "photonstat/fitting.hpp"
#include "photonstat/lifetime_flid.hpp"
#include "photonstat/photon_stream.hpp"
#include "photonstat/random.hpp"

namespace photonstat::app {

namespace {

PhotonStream random_stream(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  PhotonStream s;
  const auto micro_limit = static_cast<std::uint32_t>(s.header.sync_period_ps / s.header.resolution_ps);
  std::uint64_t nsync = 0;
  for (std::size_t i = 0; i < n; ++i) {
    nsync += static_cast<std::uint64_t>(rng.uniform() * 4.0);
    s.records.push_back({static_cast<std::uint8_t>(rng.bernoulli(0.5)), nsync,
                         static_cast<std::uint32_t>(rng.uniform() * micro_limit)});
  }
  std::sort(s.records.begin(), s.records.end(), [](const auto& a, const auto& b) {
    return a.nsync != b.nsync ? a.nsync < b.nsync : a.microtime < b.microtime;
  });
  s.header.record_count = s.records.size();
  return s;
}

bool codec_round_trip() {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = random_stream(seed, 100000);
    const auto bytes = encode_stream(s);
    const auto d = decode_stream(bytes);
    if (d.records != s.records || encode_stream(d) != bytes) return false;
  }
  return true;
}

// All channel-0/channel-1 pairs binned independently of the sliding window.
bool correlator_matches_brute_force() {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto s = random_stream(seed, 3000);
    const auto g = g2_pulsed(s);
    std::vector<std::uint64_t> h(g.counts.size(), 0);
    for (const auto& a : s.records) {
      if (a.channel != 0) continue;
      for (const auto& b : s.records) {
        if (b.channel != 1) continue;
        const auto lag = static_cast<std::int64_t>(s.absolute_time_ps(b)) -
                         static_cast<std::int64_t>(s.absolute_time_ps(a));
        if (lag > g.max_lag_ps || lag < -g.max_lag_ps) continue;
        const double q = static_cast<double>(lag) / static_cast<double>(g.lag_bin_width_ps);
        const auto idx = static_cast<std::int64_t>(q >= 0 ? std::floor(q + 0.5) : -std::floor(-q + 0.5));
        ++h[static_cast<std::size_t>(idx + g.half_bins())];
      }
    }
    if (h != g.counts) return false;
  }
  return true;
}

bool antibunching_limit() {
  EmitterParams e;
  e.mean_excitons_per_pulse = 0.5;
  e.qy_biexciton = 0.0;
  DetectorParams d;
  d.efficiency_total = 0.2;
  SimConfig c;
  c.duration_s = 0.5;
  c.seed = 7;
  const auto g = g2_pulsed(simulate_stream(e, d, c));
  return g.center_peak_area == 0 && g.g2_zero_raw == 0.0;
}

bool background_formula() {
  for (double g : {0.0, 0.3, 1.0, 2.0})
    if (subtract_background_rho(g, 1.0) != g) return false;
  for (double rho : {0.2, 0.5, 0.96})
    if (std::abs(subtract_background_rho(1.0, rho) - 1.0) > 1e-12) return false;
  return std::abs(subtract_background_rho(0.12, 0.96) - (0.12 - 0.0784) / 0.9216) < 1e-12;
}

bool saturation_recovery() {
  std::vector<SaturationPoint> pts;
  for (double P : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0})
    pts.push_back({P, saturation_model(P, 5.0e4, 20.0, 9.0), 1.0});
  const auto f = fit_saturation(pts);
  return std::abs(f.P_sat / 9.0 - 1.0) < 1e-6 && std::abs(f.A / 5.0e4 - 1.0) < 1e-6;
}

bool lifetime_untruncated_limit() {
  Rng rng(3);
  std::vector<double> a;
  double sum = 0.0;
  for (int i = 0; i < 200; ++i) {
    a.push_back(rng.exponential(15300.0));
    sum += a.back();
  }
  const auto est = bin_lifetime_estimate(a, 0.0, 1e12);
  return std::abs(est.tau_ps / (sum / 200.0) - 1.0) < 1e-6;
}

}  // namespace

int cmd_selftest(const Options& opt, std::ostream& out, std::ostream& err) {
  const std::vector<std::pair<const char*, std::function<bool()>>> checks{
      {"codec round trip", codec_round_trip},
      {"sliding-window g2 equals all-pairs g2", correlator_matches_brute_force},
      {"antibunching limit gives an empty center peak", antibunching_limit},
      {"background subtraction fixed points", background_formula},
      {"noiseless saturation recovery", saturation_recovery},
      {"per-bin lifetime untruncated limit", lifetime_untruncated_limit},
  };
  int failed = 0;
  for (const auto& [name, fn] : checks) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const Error& e) {
      err << "photonstat: " << name << ": [" << e.module() << "] " << to_string(e.code()) << ": "
          << e.what() << "\n";
    }
    if (!ok) ++failed;
    if (!opt.quiet || !ok) out << (ok ? "PASS " : "FAIL ") << name << "\n";
  }
  if (failed) err << "photonstat: error [cli] selftest: " << failed << " check(s) failed\n";
  return failed ? 1 : 0;
}

}  // namespace photonstat::app
