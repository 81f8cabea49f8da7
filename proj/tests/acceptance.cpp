// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "photonstat/app.hpp"
#include "photonstat/correlation.hpp"
#include "photonstat/emitter_sim.hpp"
#include "photonstat/error.hpp"
#include "photonstat/fitting.hpp"
#include "photonstat/lifetime_flid.hpp"
#include "photonstat/photon_stream.hpp"
#include "photonstat/random.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace photonstat;

namespace {

const fs::path kConfigs = fs::path(PHOTONSTAT_SOURCE_DIR) / "configs";
const fs::path kWork = testing::temp_dir("acceptance");

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

json read_json(const fs::path& p) { return json::parse(testing::read_text(p)); }

// simulate + analyze through the command layer; returns the analysis directory
fs::path pipeline(const std::string& config, const std::string& tag) {
  app::Options opt;
  opt.config = kConfigs / (config + ".json");
  opt.out = kWork / (tag + ".phst");
  opt.quiet = true;
  std::ostringstream out, err;
  if (app::cmd_simulate(opt, out, err) != 0) throw std::runtime_error("simulate failed: " + err.str());
  const fs::path stream = *opt.out;
  opt.out = kWork / tag;
  if (app::cmd_analyze(stream, opt, out, err) != 0) throw std::runtime_error("analyze failed: " + err.str());
  return *opt.out;
}

fs::path saturate(const std::string& tag) {
  app::Options opt;
  opt.config = kConfigs / "saturation.json";
  opt.out = kWork / tag;
  opt.quiet = true;
  std::ostringstream out, err;
  if (app::cmd_saturate(opt, out, err) != 0) throw std::runtime_error("saturate failed: " + err.str());
  return *opt.out;
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::directory_iterator(dir)) m[e.path().filename().string()] = testing::read_text(e.path());
  return m;
}

Outcome photon_purity() {
  const auto t = Clock::now();
  const auto dir = pipeline("paper_matched", "purity");
  const double runtime = seconds_since(t);
  const json g = read_json(dir / "g2_summary.json");
  const double g2c = g["g2_zero_corrected"]["value"];
  const double sg = g["g2_zero_corrected"]["sigma"];
  const auto records = read_stream_file((kWork / "purity.phst").string()).records.size();
  const bool ok = std::abs(g2c - 0.04) <= 0.02 && runtime < 60.0 && records > 500000 && records < 2000000;
  return {ok, fmt("g2_corrected = %.4f +- %.4f (target 0.04 +- 0.02), raw %.4f, rho %.4f, %zu records, "
                  "end-to-end %.1f s (< 60 s)",
                  g2c, sg, g["g2_zero_raw"]["value"].get<double>(), g["rho"].get<double>(), records, runtime)};
}

Outcome antibunching_exact() {
  auto cfg = app::load_config(kConfigs / "paper_matched.json");
  cfg.emitter.qy_biexciton = 0.0;
  cfg.detector.dark_rate_hz = 0.0;
  cfg.sim.duration_s = 20.0;
  const auto s = simulate_stream(cfg.emitter, cfg.detector, cfg.sim);
  const auto g = g2_pulsed(s);
  std::uint64_t side = 0;
  for (const auto& p : g.side_peaks) side += p.area;
  return {g.center_peak_area == 0 && side > 0,
          fmt("center-peak coincidences = %llu (exactly 0 required), side-peak total %llu, %zu records",
              static_cast<unsigned long long>(g.center_peak_area), static_cast<unsigned long long>(side),
              s.records.size())};
}

Outcome correlator_oracle() {
  int equal = 0;
  std::uint64_t pairs = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto s = testing::random_stream(1000 + seed, 10000, 1 + seed % 4);
    const auto g = g2_pulsed(s);
    const auto h = testing::brute_force_g2(s, g);
    equal += h == g.counts;
    for (auto c : h) pairs += c;
  }
  return {equal == 100, fmt("%d/100 streams of 10^4 records identical bin-for-bin (%llu pairs in total)", equal,
                            static_cast<unsigned long long>(pairs))};
}

Outcome blinking_envelope() {
  const auto cfg = app::load_config(kConfigs / "envelope.json");
  const auto s = simulate_stream(cfg.emitter, cfg.detector, cfg.sim);
  const auto& e = cfg.analysis.envelope;
  const auto taus = log_tau_grid(e.tau_min_s, e.tau_max_s, e.points_per_decade);
  EnvelopeOptions eo;
  eo.relative_bin_width = e.relative_bin_width;
  eo.pulse_count = cfg.sim.pulse_count();
  const auto env = g2_envelope(s, taus, eo);

  // g2(d) = 1 + p(1-p)(I_on - I_off)^2 / <I>^2 * exp(-(k_on + k_off) d P), averaged over each bin's pulses
  const auto r = expected_state_rates(cfg.emitter, cfg.detector, cfg.sim);
  const auto& tg = std::get<TelegraphBlinking>(cfg.emitter.blinking);
  const double k = tg.k_on_per_s + tg.k_off_per_s;
  const double p = r.p_neutral;
  const double mean = p * r.neutral_cps + (1.0 - p) * r.charged_cps;
  const double amp = p * (1.0 - p) * std::pow(r.neutral_cps - r.charged_cps, 2) / (mean * mean);
  const double P = s.sync_period_s();
  int within = 0;
  double worst = 0.0, at_1us = 0.0, model_1us = 0.0, sigma_1us = 0.0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    double acc = 0.0;
    for (auto d = env.d_lo[i]; d <= env.d_hi[i]; ++d) acc += std::exp(-k * static_cast<double>(d) * P);
    const double model = 1.0 + amp * acc / static_cast<double>(env.d_hi[i] - env.d_lo[i] + 1);
    const double z = std::abs(env.values[i] - model) / env.one_sigma[i];
    worst = std::max(worst, z);
    within += z < 3.0;
    if (i == 0) {
      at_1us = env.values[i];
      model_1us = model;
      sigma_1us = env.one_sigma[i];
    }
  }
  const bool ok = within == static_cast<int>(taus.size()) && std::abs(taus.front() - 1e-6) < 1e-12;
  return {ok, fmt("%d/%zu grid points within 3 sigma of the closed form (worst %.2f sigma); "
                  "g2(1 us) = %.3f +- %.3f vs closed form %.3f (amplitude %.3f, decay 1/%.1f us)",
                  within, taus.size(), worst, at_1us, sigma_1us, model_1us, amp, 1e6 / k)};
}

Outcome lifetime_recovery() {
  struct C {
    double tau_ns, fraction;
  };
  const std::vector<C> truth{{2.8, 0.30}, {15.3, 0.65}, {56.0, 0.05}};
  Rng rng(2024);
  PhotonStream s;
  const std::uint64_t P = s.header.sync_period_ps;
  const std::uint32_t res = s.header.resolution_ps;
  std::vector<std::uint32_t> micro;
  for (int i = 0; i < 1000000; ++i) {
    double u = rng.uniform();
    std::size_t c = 0;
    while (c + 1 < truth.size() && u >= truth[c].fraction) u -= truth[c++].fraction;
    const auto t = static_cast<std::uint64_t>(rng.exponential(truth[c].tau_ns * 1e3)) % P;
    micro.push_back(static_cast<std::uint32_t>(t / res));
  }
  std::sort(micro.begin(), micro.end());
  for (auto m : micro) s.records.push_back({0, 0, m});
  const auto hist = decay_histogram(s, 64);
  MultiExpOptions o;
  o.n_components = 3;
  const auto t = Clock::now();
  const auto f = fit_multiexp(hist, o);
  const double fit_s = seconds_since(t);
  bool ok = f.components.size() == 3 && fit_s < 5.0;
  std::string d;
  for (std::size_t i = 0; i < f.components.size() && i < 3; ++i) {
    const auto& c = f.components[i];
    ok = ok && std::abs(c.lifetime_ns / truth[i].tau_ns - 1.0) <= 0.10 &&
         std::abs(c.amplitude_fraction - truth[i].fraction) <= 0.05;
    d += fmt("%.2f ns (%.1f%%) ", c.lifetime_ns, 100.0 * c.amplitude_fraction);
  }
  return {ok, d + fmt("vs 2.8 (30%%), 15.3 (65%%), 56 (5%%); fit %.2f s (< 5 s)", fit_s)};
}

Outcome saturation_recovery() {
  const json f = read_json(saturate("saturation") / "saturation_fit.json");
  const double ps = f["P_sat"]["value"], sps = f["P_sat"]["sigma"];
  const bool within = std::abs(ps / 9.0 - 1.0) <= 0.15;

  // equivariance on the same measured points, exact for power-of-two factors
  std::vector<SaturationPoint> pts;
  std::istringstream csv(testing::read_text(kWork / "saturation" / "saturation.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::vector<double> v;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
    pts.push_back({v[0], v[4], v[5]});
  }
  const auto base = fit_saturation(pts);
  bool exact = true;
  for (double c : {0.25, 0.5, 2.0, 8.0}) {
    auto si = pts, sf = pts;
    for (auto& q : si) {
      q.intensity *= c;
      q.sigma *= c;
    }
    for (auto& q : sf) q.fluence *= c;
    const auto fi = fit_saturation(si), ff = fit_saturation(sf);
    exact = exact && fi.A == c * base.A && fi.B == c * base.B && fi.P_sat == base.P_sat;
    exact = exact && ff.A == base.A && ff.B == base.B / c && ff.P_sat == c * base.P_sat;
  }
  return {within && exact,
          fmt("P_sat = %.3f +- %.3f (planted 9, within 15%%: %s); B = %.1f +- %.1f (planted %.0f); "
              "fluence and intensity scaling by 1/4, 1/2, 2, 8 reproduce the fit bit-for-bit: %s",
              ps, sps, within ? "yes" : "no", f["B"]["value"].get<double>(), f["B"]["sigma"].get<double>(),
              f["planted"]["linear_background_cps"].get<double>(), exact ? "yes" : "no")};
}

Outcome flid_discrimination() {
  const json a = read_json(pipeline("flid_auger", "auger") / "correlation.json");
  const json s = read_json(pipeline("flid_surface_trap", "surface") / "correlation.json");
  const double ra = a["pearson_r"]["value"], rs = s["pearson_r"]["value"];
  const auto ma = a["flid"]["lifetime_modes_ns"], ms = s["flid"]["lifetime_modes_ns"];
  const bool ok = ra > 0.5 && ma.size() == 2 && std::abs(rs) < 0.1 && ms.size() == 1;
  return {ok, fmt("Auger r = %.3f +- %.3f, FLID lifetime modes %s ns; surface trap r = %.3f +- %.3f, modes %s ns",
                  ra, a["pearson_r"]["sigma"].get<double>(), ma.dump().c_str(), rs,
                  s["pearson_r"]["sigma"].get<double>(), ms.dump().c_str())};
}

Outcome codec() {
  // gaps up to 2^31 syncs force overflow records
  Rng rng(8);
  PhotonStream s;
  std::uint64_t nsync = 0;
  const auto limit = static_cast<std::uint32_t>(s.header.sync_period_ps / s.header.resolution_ps);
  for (int i = 0; i < 1000000; ++i) {
    nsync += rng.bernoulli(1e-4) ? static_cast<std::uint64_t>(rng.uniform() * 2147483648.0)
                                 : static_cast<std::uint64_t>(rng.uniform() * 50.0);
    s.records.push_back({static_cast<std::uint8_t>(rng.bernoulli(0.5)), nsync,
                         static_cast<std::uint32_t>(rng.uniform() * limit)});
  }
  std::sort(s.records.begin(), s.records.end(), [](const auto& a, const auto& b) {
    return a.nsync != b.nsync ? a.nsync < b.nsync : a.microtime < b.microtime;
  });
  s.header.record_count = s.records.size();
  const auto bytes = encode_stream(s);
  double best = 1e9;
  bool same = true;
  for (int rep = 0; rep < 5; ++rep) {
    const auto t = Clock::now();
    const auto d = decode_stream(bytes);
    best = std::min(best, seconds_since(t));
    same = same && d.records == s.records && encode_stream(d) == bytes;
  }
  const double rate = 1e6 / best;
  return {same && rate >= 1e7, fmt("10^6 records round trip bit-exact: %s; decode %.3g records/s (>= 1e7)",
                                   same ? "yes" : "no", rate)};
}

Outcome determinism() {
  int identical = 0, total = 0;
  std::string diff;
  auto compare = [&](const std::string& what, const fs::path& x, const fs::path& y) {
    ++total;
    const bool same = fs::is_directory(x) ? dir_bytes(x) == dir_bytes(y)
                                          : testing::read_text(x) == testing::read_text(y);
    identical += same;
    if (!same) diff += " " + what;
  };
  pipeline("paper_matched", "purity_rerun");
  compare("paper_matched stream", kWork / "purity.phst", kWork / "purity_rerun.phst");
  compare("paper_matched report", kWork / "purity", kWork / "purity_rerun");
  pipeline("flid_auger", "auger_rerun");
  compare("auger stream", kWork / "auger.phst", kWork / "auger_rerun.phst");
  compare("auger report", kWork / "auger", kWork / "auger_rerun");
  saturate("saturation_rerun");
  compare("saturation report", kWork / "saturation", kWork / "saturation_rerun");
  return {identical == total,
          fmt("%d/%d reruns byte-identical (streams and every CSV/JSON/SVG)%s", identical, total,
              diff.empty() ? "" : (" differ:" + diff).c_str())};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"1 photon purity", photon_purity},
      {"2 antibunching exactness", antibunching_exact},
      {"3 correlator oracle equivalence", correlator_oracle},
      {"4 blinking envelope", blinking_envelope},
      {"5 lifetime recovery", lifetime_recovery},
      {"6 saturation recovery", saturation_recovery},
      {"7 FLID discrimination", flid_discrimination},
      {"8 codec", codec},
      {"9 determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    const auto t = Clock::now();
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), seconds_since(t));
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
