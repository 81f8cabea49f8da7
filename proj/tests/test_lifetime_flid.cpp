#include <cmath>
#include <numeric>

#include "doctest.h"
#include "photonstat/correlation.hpp"
#include "photonstat/emitter_sim.hpp"
#include "photonstat/error.hpp"
#include "photonstat/lifetime_flid.hpp"
#include "test_support.hpp"

using namespace photonstat;

namespace {

ErrorCode error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

struct Component {
  double tau_ns;
  double fraction;
};

// Photon-level synthetic decay: each photon picks a component by its photon
// fraction, draws an exponential delay, is floor-quantised to 16 ps and
// wrapped into the period. Background photons are uniform in microtime.
DecayHistogram synthetic_decay(std::uint64_t seed, std::size_t photons,
                               const std::vector<Component>& comps, std::size_t background = 0) {
  Rng rng(seed);
  PhotonStream s;
  const std::uint64_t P = s.header.sync_period_ps;
  const std::uint32_t res = s.header.resolution_ps;
  std::vector<std::uint32_t> micro;
  micro.reserve(photons + background);
  for (std::size_t i = 0; i < photons; ++i) {
    double u = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < comps.size() && u >= comps[k].fraction) u -= comps[k++].fraction;
    const auto t = static_cast<std::uint64_t>(rng.exponential(comps[k].tau_ns * 1e3)) % P;
    micro.push_back(static_cast<std::uint32_t>(t / res));
  }
  for (std::size_t i = 0; i < background; ++i)
    micro.push_back(static_cast<std::uint32_t>(rng.uniform() * static_cast<double>(P / res)));
  std::sort(micro.begin(), micro.end());
  for (auto m : micro) s.records.push_back({0, 0, m});
  return decay_histogram(s, 64);
}

// Bin counts drawn from the fit model itself (for calibration).
DecayHistogram model_decay(std::uint64_t seed, double A, double tau_ps, double c) {
  Rng rng(seed);
  DecayHistogram h;
  h.bin_width_ps = 64;
  h.sync_period_ps = kDefaultSyncPeriodPs;
  h.counts.assign(h.sync_period_ps / 64, 0);
  for (std::size_t j = 0; j < h.counts.size(); ++j) {
    const double a = static_cast<double>(j) * 64.0;
    const double mu = A * (std::exp(-a / tau_ps) - std::exp(-(a + 64.0) / tau_ps)) + c;
    h.counts[j] = rng.poisson(mu);
    h.total_counts += h.counts[j];
  }
  h.t0_ps = 32.0;
  return h;
}

double truncated_loglik(std::span<const double> delays, double tau, double T) {
  double ll = 0.0;
  for (double d : delays) ll += -d / tau;
  return ll - static_cast<double>(delays.size()) * std::log(tau * -std::expm1(-T / tau));
}

struct Sim {
  EmitterParams e;
  DetectorParams d;
  SimConfig c;
};

Sim two_state(double tau_grey_ns, double qy_grey, double duration, std::uint64_t seed) {
  Sim s;
  s.e.mean_excitons_per_pulse = 0.25;
  s.e.qy_exciton = 0.5;
  s.e.tau_exciton_ns = 15.3;
  s.e.qy_trion = qy_grey;
  s.e.tau_trion_ns = tau_grey_ns;
  s.e.blinking = TelegraphBlinking{7.0, 3.0};
  s.d.efficiency_total = 0.036;
  s.c.duration_s = duration;
  s.c.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("decay histogram of a dark-count stream is flat") {
  EmitterParams e;
  e.mean_excitons_per_pulse = 0.0;
  DetectorParams d;
  d.dark_rate_hz = 5000.0;
  SimConfig c;
  c.duration_s = 4.0;
  c.seed = 1;
  const auto s = simulate_stream(e, d, c);
  const auto h = decay_histogram(s, 4096);
  CHECK(h.total_counts == s.records.size());
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), std::uint64_t{0}) == h.total_counts);
  // 400000 / 4096 leaves a partial last bin; compare full bins only
  const std::size_t full = h.counts.size() - 1;
  std::uint64_t n_full = 0;
  for (std::size_t j = 0; j < full; ++j) n_full += h.counts[j];
  const double expect = static_cast<double>(n_full) / static_cast<double>(full);
  double chi2 = 0.0;
  for (std::size_t j = 0; j < full; ++j) chi2 += std::pow(h.counts[j] - expect, 2) / expect;
  const double dof = static_cast<double>(full - 1);
  const double a = 2.0 / (9.0 * dof);
  CHECK(chi2 < dof * std::pow(1.0 - a + 2.326 * std::sqrt(a), 3.0));
  CHECK(h.t0_ps >= 0.0);
  CHECK(h.t0_ps < static_cast<double>(h.sync_period_ps));
}

TEST_CASE("decay histogram argument checks") {
  PhotonStream empty;
  CHECK(error_of([&] { decay_histogram(empty); }) == ErrorCode::EmptyStream);
  PhotonStream one;
  one.records = {{0, 0, 5}};
  CHECK(error_of([&] { decay_histogram(one, 8); }) == ErrorCode::InvalidArgument);
}

// Low <N> keeps the biexciton-exciton cascade, which delays the exciton
// photon, out of the decay shape.
TEST_CASE("mono-exponential tail has log-slope -1/tau") {
  EmitterParams e;
  e.mean_excitons_per_pulse = 0.02;
  DetectorParams d;
  d.efficiency_total = 0.2;
  SimConfig c;
  c.duration_s = 10.0;
  c.seed = 5;
  const auto s = simulate_stream(e, d, c);
  const auto h = decay_histogram(s, 512);
  CHECK(h.t0_ps <= 768.0);
  // weighted regression of log counts over 1..60 ns
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t j = 0; j < h.counts.size(); ++j) {
    const double x = 0.5 * (h.bin_start_ps(j) + h.bin_end_ps(j)) * 1e-3;
    if (x < 1.0 || x > 60.0 || h.counts[j] == 0) continue;
    const double w = static_cast<double>(h.counts[j]);
    const double y = std::log(w);
    sw += w;
    sx += w * x;
    sy += w * y;
    sxx += w * x * x;
    sxy += w * x * y;
  }
  const double slope = (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
  CHECK(-1.0 / slope == doctest::Approx(15.3).epsilon(0.02));
}

TEST_CASE("jittered rising edge follows the exponential-Gaussian convolution") {
  EmitterParams e;
  e.mean_excitons_per_pulse = 0.02;
  DetectorParams d;
  d.efficiency_total = 0.2;
  d.jitter_sigma_ps = 200.0;
  SimConfig c;
  c.duration_s = 10.0;
  c.seed = 6;
  const auto s = simulate_stream(e, d, c);
  const double tau = 15300.0, sig = 200.0, P = 400000.0;
  std::vector<double> t;
  for (const auto& r : s.records) {
    double a = static_cast<double>(r.microtime) * 16.0;
    if (a > P / 2) a -= P;  // early arrivals wrap to the previous period
    t.push_back(a);
  }
  const double n = static_cast<double>(t.size());
  auto cdf = [&](double x) {
    const double phi = 0.5 * std::erfc(-x / sig / std::sqrt(2.0));
    const double phi2 = 0.5 * std::erfc(-(x / sig - sig / tau) / std::sqrt(2.0));
    return phi - std::exp(-x / tau + sig * sig / (2.0 * tau * tau)) * phi2;
  };
  for (double x : {-400.0, -192.0, 0.0, 208.0, 400.0, 800.0}) {
    const double emp = static_cast<double>(std::count_if(t.begin(), t.end(), [&](double a) { return a < x; })) / n;
    const double F = cdf(x);
    CHECK(std::abs(emp - F) < 4.0 * std::sqrt(F * (1.0 - F) / n) + 1.0 / n);
  }
}

TEST_CASE("single-exponential fit recovers tau with negligible background") {
  const auto h = synthetic_decay(11, 1000000, {{15.3, 1.0}});
  MultiExpOptions o;
  o.n_components = 1;
  const auto f = fit_multiexp(h, o);
  REQUIRE(f.components.size() == 1);
  CHECK(std::abs(f.components[0].lifetime_ns - 15.3) < 0.2);
  CHECK(f.components[0].amplitude_fraction == doctest::Approx(1.0));
  CHECK(f.background_per_bin < 3.0 * f.background_per_bin_err + 0.05);
  CHECK(f.fit.converged);
  CHECK(f.fit.reduced_objective < 1.2);
}

TEST_CASE("tri-exponential fit recovers the planted components") {
  const std::vector<Component> truth{{2.8, 0.30}, {15.3, 0.65}, {56.0, 0.05}};
  const auto h = synthetic_decay(12, 1000000, truth);
  MultiExpOptions o;
  o.n_components = 3;
  const auto f = fit_multiexp(h, o);
  REQUIRE(f.components.size() == 3);
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(f.components[i].lifetime_ns == doctest::Approx(truth[i].tau_ns).epsilon(0.10));
    CHECK(std::abs(f.components[i].amplitude_fraction - truth[i].fraction) < 0.05);
    if (i) CHECK(f.components[i].lifetime_ns > f.components[i - 1].lifetime_ns);
    sum += f.components[i].amplitude_fraction;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("surplus component of an over-specified fit is consistent with zero") {
  const auto h = synthetic_decay(13, 500000, {{2.8, 0.4}, {15.3, 0.6}}, 20000);
  MultiExpOptions o;
  o.n_components = 2;
  const auto f2 = fit_multiexp(h, o);
  o.n_components = 3;
  const auto f3 = fit_multiexp(h, o);
  REQUIRE(f2.components.size() == 2);
  // the deviance can improve by no more than a chi-square(2) fluctuation
  CHECK(f2.fit.objective - f3.fit.objective < 13.8);
  if (f3.components.size() == 3) {
    const auto smallest = *std::min_element(
        f3.components.begin(), f3.components.end(),
        [](const auto& a, const auto& b) { return a.amplitude_fraction < b.amplitude_fraction; });
    CHECK(smallest.amplitude_fraction <= 2.0 * smallest.amplitude_fraction_err + 1e-9);
  }
}

TEST_CASE("least-squares cross-check agrees with the Poisson fit on high counts") {
  const auto h = synthetic_decay(14, 1000000, {{15.3, 1.0}});
  MultiExpOptions o;
  o.objective = Objective::least_squares;
  const auto f = fit_multiexp(h, o);
  CHECK(f.components[0].lifetime_ns == doctest::Approx(15.3).epsilon(0.03));
}

TEST_CASE("multi-exponential fit argument and count checks") {
  const auto h = synthetic_decay(15, 900, {{15.3, 1.0}});
  MultiExpOptions o;
  CHECK(error_of([&] { fit_multiexp(h, o); }) == ErrorCode::InsufficientCounts);
  o.n_components = 5;
  CHECK(error_of([&] { fit_multiexp(synthetic_decay(1, 5000, {{15.3, 1.0}}), o); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("fit gradient vanishes at the optimum and refits are fixed points") {
  const auto h = synthetic_decay(16, 200000, {{2.8, 0.3}, {15.3, 0.7}}, 5000);
  MultiExpOptions o;
  o.n_components = 2;
  const auto f = fit_multiexp(h, o);
  REQUIRE(f.fit.converged);

  // rebuild the engine problem from the reported fit range
  FitProblem p;
  const std::size_t first = static_cast<std::size_t>(f.fit_start_ps / 64.0);
  for (std::size_t j = first; j < first + f.fit_bins; ++j) {
    p.x.push_back(static_cast<double>(j) * 64.0 - f.fit_start_ps);
    p.y.push_back(static_cast<double>(h.counts[j]));
  }
  p.objective = Objective::poisson_mle;
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < f.fit.parameters.size(); ++i)
    p.parameters.push_back({f.fit.names[i], f.fit.parameters[i], i >= 2 && i < 4 ? 6.4 : 0.0,
                            i >= 2 && i < 4 ? 4e6 : inf});
  p.model_fn = [](double a, std::span<const double> q) {
    double mu = q[4];
    for (int i = 0; i < 2; ++i)
      mu += q[i] * (std::exp(-a / q[2 + i]) - std::exp(-(a + 64.0) / q[2 + i]));
    return mu;
  };
  const double F = objective_value(p, f.fit.parameters);
  CHECK(F == doctest::Approx(f.fit.objective).epsilon(1e-9));
  for (std::size_t i = 0; i < f.fit.parameters.size(); ++i) {
    const double v = f.fit.parameters[i];
    if (v == 0.0) continue;  // on the lower bound
    const double hstep = 1e-5 * std::abs(v);
    auto q = f.fit.parameters;
    q[i] = v + hstep;
    const double fp = objective_value(p, q);
    q[i] = v - hstep;
    const double fm = objective_value(p, q);
    const double g = (fp - fm) / (2.0 * hstep);
    CHECK(std::abs(g * v) < 1e-6 * std::max(F, 1.0));
  }

  const auto refit = fit_nonlinear(p);
  for (std::size_t i = 0; i < refit.parameters.size(); ++i)
    CHECK(std::abs(refit.parameters[i] - f.fit.parameters[i]) <=
          1e-9 * std::max(std::abs(f.fit.parameters[i]), 1.0));
}

TEST_CASE("calibration: fitted lifetime covers the truth in at least 95 of 100 trials") {
  int covered = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto h = model_decay(500 + seed, 20000.0, 15300.0, 0.5);
    MultiExpOptions o;
    o.fit_start_offset_ps = 0.0;
    const auto f = fit_multiexp(h, o);
    const auto& c = f.components[0];
    if (std::abs(c.lifetime_ns - 15.3) <= 3.0 * c.lifetime_err_ns) ++covered;
  }
  CHECK(covered >= 95);
}

TEST_CASE("per-bin lifetime estimator") {
  SUBCASE("untruncated limit is the sample mean") {
    Rng rng(3);
    std::vector<double> a;
    for (int i = 0; i < 1000; ++i) a.push_back(rng.exponential(15300.0));
    const auto est = bin_lifetime_estimate(a, 0.0, 1e9);
    CHECK(est.tau_ps == doctest::Approx(est.mean_delay_ps).epsilon(1e-6));
    CHECK(std::abs(est.tau_ps - 15300.0) < 3.0 * 15300.0 / std::sqrt(1000.0));
  }
  SUBCASE("T = 2 tau inverts the truncation formula") {
    const double m_over_tau = 1.0 - 2.0 * std::exp(-2.0) / (1.0 - std::exp(-2.0));
    CHECK(m_over_tau == doctest::Approx(0.6870).epsilon(1e-4));
    CHECK(truncated_mean_delay(10.0, 20.0) == doctest::Approx(10.0 * m_over_tau).epsilon(1e-12));
    const std::vector<double> a(8, 1000.0 + 10000.0 * m_over_tau);
    const auto est = bin_lifetime_estimate(a, 1000.0, 21000.0);
    CHECK(est.tau_ps == doctest::Approx(10000.0).epsilon(1e-6));
  }
  SUBCASE("estimate maximises the truncated likelihood") {
    Rng rng(4);
    std::vector<double> a;
    const double T = 30000.0;
    while (a.size() < 40) {
      const double x = rng.exponential(15300.0);
      if (x < T) a.push_back(x);
    }
    const auto est = bin_lifetime_estimate(a, 0.0, T);
    const double l0 = truncated_loglik(a, est.tau_ps, T);
    CHECK(l0 >= truncated_loglik(a, est.tau_ps * 1.001, T));
    CHECK(l0 >= truncated_loglik(a, est.tau_ps * 0.999, T));
  }
  SUBCASE("scale consistency") {
    const std::vector<double> a{1200.0, 5000.0, 300.0, 22000.0, 9000.0, 4100.0};
    const auto base = bin_lifetime_estimate(a, 100.0, 400000.0);
    for (double cscale : {2.0, 0.25, 3.0}) {
      std::vector<double> b;
      for (double x : a) b.push_back(x * cscale);
      const auto est = bin_lifetime_estimate(b, 100.0 * cscale, 400000.0 * cscale);
      CHECK(est.tau_ps == doctest::Approx(base.tau_ps * cscale).epsilon(1e-8));
    }
  }
  SUBCASE("degenerate and invalid inputs") {
    const std::vector<double> at_t0(5, 250.0);
    const auto z = bin_lifetime_estimate(at_t0, 250.0, 400000.0);
    CHECK(z.tau_ps == 0.0);
    CHECK(z.below_floor);
    CHECK(error_of([] { bin_lifetime_estimate(std::vector<double>(4, 1000.0), 0.0, 4e5); }) ==
          ErrorCode::TooFewPhotons);
    CHECK(error_of([] { bin_lifetime_estimate(std::vector<double>(6, 100.0), 500.0, 4e5); }) ==
          ErrorCode::NonPositiveDelays);
    // mean delay above T/2: the truncated likelihood has no finite maximum
    const std::vector<double> flat{100000.0, 200000.0, 300000.0, 350000.0, 399000.0};
    CHECK(bin_lifetime_estimate(flat, 0.0, 400000.0).unbounded);
  }
}

TEST_CASE("FLID of a static emitter is a single concentrated mode") {
  Sim s = two_state(15.3, 0.5, 20.0, 21);
  s.e.blinking = NoBlinking{};
  const auto st = simulate_stream(s.e, s.d, s.c);
  FlidOptions o;
  o.span_s = s.c.duration_s;
  const auto g = build_flid(st, o);
  CHECK(g.time_bins == 4000);
  CHECK(g.total() == g.time_bins);

  std::size_t best = 0;
  for (std::size_t k = 0; k < g.occurrence.size(); ++k)
    if (g.occurrence[k] > g.occurrence[best]) best = k;
  const std::size_t li = best / g.intensity_bins(), ii = best % g.intensity_bins();
  const double tau_mid = 0.5 * (g.lifetime_edges_ns[li] + g.lifetime_edges_ns[li + 1]);
  const double mean_counts = static_cast<double>(st.records.size()) / 4000.0;
  CHECK(std::abs(tau_mid - 15.3) < 2.5);
  CHECK(mean_counts >= g.intensity_edges[ii] - 3.0);
  CHECK(mean_counts <= g.intensity_edges[ii + 1] + 3.0);

  // lifetime marginal concentrated around 15.3 ns
  const auto lm = g.lifetime_marginal();
  std::uint64_t near = 0, all = 0;
  for (std::size_t l = 0; l < lm.size(); ++l) {
    all += lm[l];
    if (std::abs(0.5 * (g.lifetime_edges_ns[l] + g.lifetime_edges_ns[l + 1]) - 15.3) < 6.0) near += lm[l];
  }
  CHECK(static_cast<double>(near) > 0.9 * static_cast<double>(all));
}

TEST_CASE("FLID intensity marginal reproduces the intensity histogram") {
  Sim s = two_state(2.8, 0.1, 10.0, 22);
  const auto st = simulate_stream(s.e, s.d, s.c);
  FlidOptions o;
  o.span_s = s.c.duration_s;
  o.intensity_bins = 20;
  const auto g = build_flid(st, o);
  const auto occ = intensity_histogram(bin_intensity(st, o.bin_width_s, o.span_s));
  const std::uint32_t w = g.intensity_edges[1];
  std::vector<std::uint64_t> grouped(g.intensity_bins(), 0);
  for (std::size_t c = 0; c < occ.occurrences.size(); ++c)
    grouped[std::min<std::size_t>(c / w, grouped.size() - 1)] += occ.occurrences[c];
  CHECK(g.intensity_marginal() == grouped);
  CHECK(g.total() == occ.total());
}

TEST_CASE("FLID of a background-only stream sits in the flagged row") {
  EmitterParams e;
  e.mean_excitons_per_pulse = 0.0;
  DetectorParams d;
  d.dark_rate_hz = 50.0;
  SimConfig c;
  c.duration_s = 10.0;
  c.seed = 23;
  const auto st = simulate_stream(e, d, c);
  FlidOptions o;
  o.span_s = c.duration_s;
  const auto g = build_flid(st, o);
  const auto flagged = std::accumulate(g.flagged.begin(), g.flagged.end(), std::uint64_t{0});
  CHECK(g.total() == 2000);
  CHECK(static_cast<double>(flagged) >= 0.995 * static_cast<double>(g.total()));
}

TEST_CASE("FLID argument checks") {
  PhotonStream empty;
  CHECK(error_of([&] { build_flid(empty); }) == ErrorCode::EmptyStream);
  PhotonStream one;
  one.records = {{0, 0, 5}};
  FlidOptions o;
  o.lifetime_bins = 1;
  CHECK(error_of([&] { build_flid(one, o); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("intensity-lifetime correlation separates blinking mechanisms") {
  SUBCASE("Auger (trion) blinking: strong positive correlation, two modes") {
    Sim s = two_state(2.8, 0.1, 30.0, 31);
    const auto st = simulate_stream(s.e, s.d, s.c);
    const auto r = intensity_lifetime_correlation(st, 0.005, s.c.duration_s);
    CHECK(r.pearson_r > 0.5);
  }
  SUBCASE("QY-only blinking: no correlation") {
    Sim s = two_state(15.3, 0.1, 30.0, 32);
    const auto st = simulate_stream(s.e, s.d, s.c);
    const auto r = intensity_lifetime_correlation(st, 0.005, s.c.duration_s);
    CHECK(std::abs(r.pearson_r) < 0.1);
  }
  SUBCASE("constant rate: no correlation") {
    Sim s = two_state(15.3, 0.1, 30.0, 33);
    s.e.blinking = NoBlinking{};
    const auto st = simulate_stream(s.e, s.d, s.c);
    const auto r = intensity_lifetime_correlation(st, 0.005, s.c.duration_s);
    CHECK(std::abs(r.pearson_r) < 0.1);
  }
  SUBCASE("too few usable bins") {
    Sim s = two_state(15.3, 0.1, 0.2, 34);
    const auto st = simulate_stream(s.e, s.d, s.c);
    CHECK(error_of([&] { intensity_lifetime_correlation(st, 0.005, s.c.duration_s); }) ==
          ErrorCode::InsufficientBins);
  }
}
