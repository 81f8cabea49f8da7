#include "photonstat/lifetime_flid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "photonstat/error.hpp"
#include "photonstat/random.hpp"

namespace photonstat {
namespace {

constexpr char kModule[] = "lifetime_flid";
constexpr double kMinFitCounts = 1000.0;
constexpr double kMergeRatio = 1.05;

[[noreturn]] void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, kModule, msg);
}

double arrival_ps(const PhotonStream& s, const PhotonRecord& r) {
  const double res = s.header.resolution_ps;
  return static_cast<double>(r.microtime) * res + 0.5 * res;
}

// exp(-a/tau) - exp(-(a+w)/tau)
double bin_mass(double a, double w, double tau) {
  return std::exp(-a / tau) * -std::expm1(-w / tau);
}

struct DecayData {
  std::vector<double> x, y;
  double width = 0.0;
};

FitProblem decay_problem(const DecayData& d, int n, Objective objective,
                         const std::vector<double>& start, double tau_lo, double tau_hi) {
  FitProblem p;
  p.model = "multiexp" + std::to_string(n);
  const double inf = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) p.parameters.push_back({"A" + std::to_string(i + 1), start[i], 0.0, inf});
  for (int i = 0; i < n; ++i)
    p.parameters.push_back({"tau" + std::to_string(i + 1), start[n + i], tau_lo, tau_hi});
  p.parameters.push_back({"c", start[2 * n], 0.0, inf});
  p.x = d.x;
  p.y = d.y;
  p.objective = objective;
  if (objective == Objective::least_squares) {
    p.weights.resize(d.y.size());
    for (std::size_t k = 0; k < d.y.size(); ++k) p.weights[k] = 1.0 / std::max(d.y[k], 1.0);
  }
  const double w = d.width;
  p.model_fn = [n, w](double a, std::span<const double> q) {
    double mu = q[2 * n];
    for (int i = 0; i < n; ++i) mu += q[i] * bin_mass(a, w, q[n + i]);
    return mu;
  };
  p.gradient_fn = [n, w](double a, std::span<const double> q, std::span<double> g) {
    for (int i = 0; i < n; ++i) {
      const double tau = q[n + i];
      const double ea = std::exp(-a / tau);
      const double eb = std::exp(-(a + w) / tau);
      g[i] = ea * -std::expm1(-w / tau);
      g[n + i] = q[i] * (ea * a - eb * (a + w)) / (tau * tau);
    }
    g[2 * n] = 1.0;
  };
  return p;
}

}  // namespace

DecayHistogram decay_histogram(const PhotonStream& stream, std::uint32_t bin_width_ps) {
  if (stream.records.empty()) fail(ErrorCode::EmptyStream, "no photon records");
  if (bin_width_ps == 0 || bin_width_ps < stream.header.resolution_ps)
    fail(ErrorCode::InvalidArgument, "decay bin width must be >= the stream resolution");
  DecayHistogram h;
  h.bin_width_ps = bin_width_ps;
  h.sync_period_ps = stream.header.sync_period_ps;
  const std::uint64_t n = (h.sync_period_ps + bin_width_ps - 1) / bin_width_ps;
  h.counts.assign(n, 0);
  const std::uint64_t res = stream.header.resolution_ps;
  for (const auto& r : stream.records) {
    const std::uint64_t j = std::min<std::uint64_t>(r.microtime * res / bin_width_ps, n - 1);
    ++h.counts[j];
  }
  h.total_counts = stream.records.size();
  const auto mode = static_cast<std::size_t>(
      std::max_element(h.counts.begin(), h.counts.end()) - h.counts.begin());
  h.t0_ps = 0.5 * (h.bin_start_ps(mode) + h.bin_end_ps(mode));
  return h;
}

// ---------------------------------------------------------------------------

MultiExpFit fit_multiexp(const DecayHistogram& hist, const MultiExpOptions& opt) {
  const int n = opt.n_components;
  if (n < 1 || n > 4) fail(ErrorCode::InvalidArgument, "n_components must be in [1, 4]");
  if (opt.fit_start_offset_ps < 0.0) fail(ErrorCode::InvalidArgument, "fit start offset must be >= 0");
  if (opt.restarts < 1) fail(ErrorCode::InvalidArgument, "restarts must be >= 1");
  if (hist.counts.empty() || hist.bin_width_ps == 0 || hist.sync_period_ps == 0)
    fail(ErrorCode::InvalidArgument, "empty decay histogram");

  const double w = hist.bin_width_ps;
  const double period = static_cast<double>(hist.sync_period_ps);
  const auto first = static_cast<std::size_t>(std::ceil((hist.t0_ps + opt.fit_start_offset_ps) / w));
  DecayData data;
  data.width = w;
  MultiExpFit out;
  out.fit_start_ps = static_cast<double>(first) * w;
  std::uint64_t in_range = 0;
  for (std::size_t j = first; j < hist.counts.size(); ++j) {
    if (hist.bin_end_ps(j) - hist.bin_start_ps(j) < w) break;  // partial last bin
    data.x.push_back(hist.bin_start_ps(j) - out.fit_start_ps);
    data.y.push_back(static_cast<double>(hist.counts[j]));
    in_range += hist.counts[j];
  }
  out.fit_bins = data.x.size();
  out.fit_range_counts = in_range;
  if (static_cast<double>(in_range) < kMinFitCounts)
    fail(ErrorCode::InsufficientCounts,
         std::to_string(in_range) + " photons in the fit range, need at least 1000");
  if (data.x.size() < static_cast<std::size_t>(2 * n + 1) + 1)
    fail(ErrorCode::InsufficientCounts, "too few bins in the fit range");

  const double tau_lo = w / 10.0, tau_hi = 10.0 * period;
  const double span = static_cast<double>(data.x.size()) * w;
  const std::size_t tail = std::max<std::size_t>(1, data.y.size() / 10);
  double c0 = 0.0;
  for (std::size_t k = data.y.size() - tail; k < data.y.size(); ++k) c0 += data.y[k];
  c0 /= static_cast<double>(tail);
  const double signal0 = std::max(static_cast<double>(in_range) - c0 * static_cast<double>(data.y.size()),
                                  0.1 * static_cast<double>(in_range));

  std::vector<double> base(2 * n + 1);
  const double t_lo = w, t_hi = std::min(period / 2.0, span);
  for (int i = 0; i < n; ++i) {
    base[i] = signal0 / n;
    base[n + i] = t_lo * std::pow(t_hi / t_lo, (i + 0.5) / n);
  }
  base[2 * n] = c0;

  std::vector<std::vector<double>> starts(opt.restarts, base);
  for (int r = 1; r < opt.restarts; ++r) {
    Rng rng(static_cast<std::uint64_t>(r));
    for (int i = 0; i < n; ++i) {
      starts[r][i] = base[i] * (0.5 + rng.uniform());
      starts[r][n + i] = std::clamp(base[n + i] * std::exp(rng.uniform() * 2.0 - 1.0), tau_lo, tau_hi);
    }
    starts[r][2 * n] = c0 * (0.5 + rng.uniform());
  }

  std::vector<std::optional<FitResult>> results(opt.restarts);
  auto run = [&](int r) {
    try {
      FitProblem p = decay_problem(data, n, opt.objective, starts[r], tau_lo, tau_hi);
      FitResult f = fit_nonlinear(p);
      if (std::isfinite(f.objective)) results[r] = std::move(f);
    } catch (const Error&) {
      // a failed restart is skipped; FitDiverged is raised if none succeeds
    }
  };
  const int threads = std::clamp(opt.threads, 1, opt.restarts);
  if (threads == 1) {
    for (int r = 0; r < opt.restarts; ++r) run(r);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (int r = t; r < opt.restarts; r += threads) run(r);
      });
    for (auto& th : pool) th.join();
  }

  int best = -1;
  for (int r = 0; r < opt.restarts; ++r)
    if (results[r] && (best < 0 || results[r]->objective < results[best]->objective)) best = r;
  if (best < 0) fail(ErrorCode::FitDiverged, "no restart produced a finite fit");
  out.best_restart = best;
  out.fit = std::move(*results[best]);

  const auto& q = out.fit.parameters;
  const std::size_t np = q.size();
  auto cov = [&](std::size_t a, std::size_t b) { return out.fit.covariance[a * np + b]; };
  out.background_per_bin = q[2 * n];
  out.background_per_bin_err = out.fit.std_errors[2 * n];
  out.background_counts = q[2 * n] * static_cast<double>(data.x.size());

  // Photons after t0: S_i = A_i exp((fit_start - t0) / tau_i).
  const double lead = out.fit_start_ps - hist.t0_ps;
  std::vector<double> S(n), dS_dA(n), dS_dtau(n);
  for (int i = 0; i < n; ++i) {
    const double e = std::exp(lead / q[n + i]);
    S[i] = q[i] * e;
    dS_dA[i] = e;
    dS_dtau[i] = -q[i] * e * lead / (q[n + i] * q[n + i]);
    double frac_in_range = 0.0;
    for (double a : data.x) frac_in_range += bin_mass(a, w, q[n + i]);
    out.exponential_counts += q[i] * frac_in_range;
    // a NaN error (unreliable covariance) does not demote a component
    if (!(q[i] <= 2.0 * out.fit.std_errors[i])) out.resolved_exponential_counts += q[i] * frac_in_range;
  }
  const double total = std::accumulate(S.begin(), S.end(), 0.0);

  struct Comp {
    double tau, tau_var, photons;
    std::vector<double> grad_S;  // dS/dparams
  };
  std::vector<Comp> comps;
  for (int i = 0; i < n; ++i) {
    Comp c{q[n + i], cov(n + i, n + i), S[i], std::vector<double>(np, 0.0)};
    c.grad_S[i] = dS_dA[i];
    c.grad_S[n + i] = dS_dtau[i];
    comps.push_back(std::move(c));
  }
  std::stable_sort(comps.begin(), comps.end(), [](const Comp& a, const Comp& b) { return a.tau < b.tau; });
  for (std::size_t k = 0; k + 1 < comps.size();) {
    if (comps[k + 1].tau < kMergeRatio * comps[k].tau) {
      auto& a = comps[k];
      const auto& b = comps[k + 1];
      const double ph = a.photons + b.photons;
      a.tau = ph > 0.0 ? (a.tau * a.photons + b.tau * b.photons) / ph : 0.5 * (a.tau + b.tau);
      a.tau_var = std::max(a.tau_var, b.tau_var);
      a.photons = ph;
      for (std::size_t t = 0; t < np; ++t) a.grad_S[t] += b.grad_S[t];
      comps.erase(comps.begin() + static_cast<std::ptrdiff_t>(k) + 1);
      ++out.merged_components;
    } else {
      ++k;
    }
  }

  for (const auto& c : comps) {
    DecayComponent d;
    d.lifetime_ns = c.tau * 1e-3;
    d.lifetime_err_ns = std::sqrt(std::max(0.0, c.tau_var)) * 1e-3;
    d.photons = c.photons;
    if (total > 0.0) {
      d.amplitude_fraction = c.photons / total;
      // f = S_c / sum S; df/dp = (dS_c - f d(sum S)) / sum S
      std::vector<double> g(np, 0.0);
      for (std::size_t t = 0; t < np; ++t) {
        double dsum = 0.0;
        for (const auto& o : comps) dsum += o.grad_S[t];
        g[t] = (c.grad_S[t] - d.amplitude_fraction * dsum) / total;
      }
      double var = 0.0;
      for (std::size_t a = 0; a < np; ++a)
        for (std::size_t b = 0; b < np; ++b) var += g[a] * cov(a, b) * g[b];
      d.amplitude_fraction_err = std::sqrt(std::max(0.0, var));
    }
    out.components.push_back(d);
  }
  return out;
}

double multiexp_bin_model(const MultiExpFit& fit, const DecayHistogram& hist, std::size_t j) {
  const double start = hist.bin_start_ps(j);
  if (start < fit.fit_start_ps) return 0.0;
  const auto& q = fit.fit.parameters;
  const std::size_t n = (q.size() - 1) / 2;
  const double w = hist.bin_end_ps(j) - start;
  double mu = q[2 * n] * w / hist.bin_width_ps;
  for (std::size_t i = 0; i < n; ++i) mu += q[i] * bin_mass(start - fit.fit_start_ps, w, q[n + i]);
  return mu;
}

// ---------------------------------------------------------------------------

double truncated_mean_delay(double tau, double T) {
  return tau - T / std::expm1(T / tau);
}

LifetimeEstimate bin_lifetime_estimate(std::span<const double> arrival_ps, double t0_ps,
                                       double sync_period_ps) {
  if (arrival_ps.size() < kLifetimePhotonFloor)
    fail(ErrorCode::TooFewPhotons, std::to_string(arrival_ps.size()) + " photons, need at least 5");
  const double T = sync_period_ps - t0_ps;
  if (!(T > 0.0)) fail(ErrorCode::InvalidArgument, "t0 must lie inside the sync period");
  double sum = 0.0;
  for (double a : arrival_ps) sum += a - t0_ps;
  LifetimeEstimate est;
  est.mean_delay_ps = sum / static_cast<double>(arrival_ps.size());
  const double m = est.mean_delay_ps;
  if (m < 0.0) fail(ErrorCode::NonPositiveDelays, "mean delay after t0 is negative; t0 misestimated");
  if (m == 0.0) {
    est.below_floor = true;
    return est;
  }
  // m(tau) increases from 0 to T/2; m(tau) < tau so the root lies above m.
  double lo = m, hi = 2.0 * m;
  const double hi_cap = 1e6 * T;
  while (truncated_mean_delay(hi, T) < m) {
    lo = hi;
    hi *= 2.0;
    if (hi > hi_cap) {
      est.unbounded = true;
      est.tau_ps = std::numeric_limits<double>::infinity();
      return est;
    }
  }
  while (hi > lo * (1.0 + 1e-9)) {
    const double mid = std::sqrt(lo * hi);
    if (truncated_mean_delay(mid, T) < m) lo = mid;
    else hi = mid;
  }
  est.tau_ps = std::sqrt(lo * hi);
  return est;
}

// ---------------------------------------------------------------------------

std::uint64_t FlidGrid::total() const {
  return std::accumulate(occurrence.begin(), occurrence.end(), std::uint64_t{0}) +
         std::accumulate(flagged.begin(), flagged.end(), std::uint64_t{0});
}

std::vector<std::uint64_t> FlidGrid::intensity_marginal() const {
  std::vector<std::uint64_t> m(flagged);
  for (std::size_t l = 0; l < lifetime_bins(); ++l)
    for (std::size_t i = 0; i < intensity_bins(); ++i) m[i] += at(l, i);
  return m;
}

std::vector<std::uint64_t> FlidGrid::lifetime_marginal() const {
  std::vector<std::uint64_t> m(lifetime_bins(), 0);
  for (std::size_t l = 0; l < lifetime_bins(); ++l)
    for (std::size_t i = 0; i < intensity_bins(); ++i) m[l] += at(l, i);
  return m;
}

BinLifetimes bin_lifetimes(const PhotonStream& stream, double bin_width_s,
                           std::optional<double> span_s, std::optional<double> t0_ps,
                           std::uint32_t decay_bin_width_ps) {
  if (stream.records.empty()) fail(ErrorCode::EmptyStream, "no photon records");
  if (!(bin_width_s > 0.0)) fail(ErrorCode::InvalidArgument, "bin_width_s must be > 0");
  BinLifetimes out;
  out.t0_ps = t0_ps ? *t0_ps : decay_histogram(stream, decay_bin_width_ps).t0_ps;
  const double period = static_cast<double>(stream.header.sync_period_ps);

  const auto bin_ps = static_cast<std::uint64_t>(std::llround(bin_width_s * 1e12));
  if (bin_ps == 0) fail(ErrorCode::InvalidArgument, "bin width below 1 ps");
  std::uint64_t n_bins = 0;
  if (span_s) n_bins = static_cast<std::uint64_t>(std::floor(*span_s / bin_width_s * (1.0 + 1e-12)));
  else n_bins = stream.absolute_time_ps(stream.records.back()) / bin_ps + 1;
  out.counts.assign(n_bins, 0);
  out.tau_ns.assign(n_bins, std::numeric_limits<double>::quiet_NaN());
  out.unbounded.assign(n_bins, 0);

  std::vector<double> arrivals;
  std::size_t k = 0;
  const std::size_t n_rec = stream.records.size();
  for (std::uint64_t b = 0; b < n_bins; ++b) {
    arrivals.clear();
    const std::uint64_t end = (b + 1) * bin_ps;
    while (k < n_rec && stream.absolute_time_ps(stream.records[k]) < end) {
      arrivals.push_back(arrival_ps(stream, stream.records[k]));
      ++k;
    }
    out.counts[b] = static_cast<std::uint32_t>(arrivals.size());
    if (arrivals.size() < kLifetimePhotonFloor) continue;
    double sum = 0.0;
    for (double a : arrivals) sum += a - out.t0_ps;
    if (sum < 0.0) {
      // delays straddling a late t0: treat as zero lifetime
      out.tau_ns[b] = 0.0;
      continue;
    }
    const auto est = bin_lifetime_estimate(arrivals, out.t0_ps, period);
    out.tau_ns[b] = est.tau_ps * 1e-3;
    out.unbounded[b] = est.unbounded ? 1 : 0;
  }
  return out;
}

FlidGrid build_flid(const PhotonStream& stream, const FlidOptions& opt) {
  if (opt.lifetime_bins < 2 || opt.intensity_bins < 2)
    fail(ErrorCode::InvalidArgument, "FLID needs at least 2 bins on each axis");
  if (!(opt.lifetime_max_ns > 0.0)) fail(ErrorCode::InvalidArgument, "lifetime_max_ns must be > 0");
  const BinLifetimes bl =
      bin_lifetimes(stream, opt.bin_width_s, opt.span_s, opt.t0_ps, opt.decay_bin_width_ps);

  FlidGrid g;
  g.t0_ps = bl.t0_ps;
  g.bin_width_s = opt.bin_width_s;
  g.time_bins = bl.counts.size();
  const auto lb = static_cast<std::size_t>(opt.lifetime_bins);
  const auto ib = static_cast<std::size_t>(opt.intensity_bins);
  for (std::size_t l = 0; l <= lb; ++l)
    g.lifetime_edges_ns.push_back(opt.lifetime_max_ns * static_cast<double>(l) / static_cast<double>(lb));
  const std::uint32_t cmax = bl.counts.empty() ? 0 : *std::max_element(bl.counts.begin(), bl.counts.end());
  const std::uint32_t iw = std::max<std::uint32_t>(1, (cmax + 1 + static_cast<std::uint32_t>(ib) - 1) /
                                                          static_cast<std::uint32_t>(ib));
  for (std::size_t i = 0; i <= ib; ++i) g.intensity_edges.push_back(static_cast<std::uint32_t>(i) * iw);
  g.occurrence.assign(lb * ib, 0);
  g.flagged.assign(ib, 0);

  for (std::size_t b = 0; b < bl.counts.size(); ++b) {
    const std::size_t ii = std::min<std::size_t>(bl.counts[b] / iw, ib - 1);
    if (std::isnan(bl.tau_ns[b])) {
      ++g.flagged[ii];
      continue;
    }
    if (bl.unbounded[b]) ++g.unbounded_bins;
    const double t = bl.tau_ns[b];
    std::size_t li = lb - 1;
    if (t < opt.lifetime_max_ns)
      li = std::min(lb - 1, static_cast<std::size_t>(t / opt.lifetime_max_ns * static_cast<double>(lb)));
    ++g.occurrence[li * ib + ii];
  }
  return g;
}

IntensityLifetimeCorrelation intensity_lifetime_correlation(const BinLifetimes& bins) {
  IntensityLifetimeCorrelation out;
  out.bins_total = bins.counts.size();
  std::vector<double> xs, ys;
  for (std::size_t b = 0; b < bins.counts.size(); ++b) {
    if (std::isnan(bins.tau_ns[b]) || bins.unbounded[b]) continue;
    xs.push_back(bins.counts[b]);
    ys.push_back(bins.tau_ns[b]);
  }
  out.bins_used = xs.size();
  if (xs.size() < 100)
    fail(ErrorCode::InsufficientBins,
         std::to_string(xs.size()) + " bins pass the photon floor, need at least 100");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double dx = xs[k] - mx, dy = ys[k] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  out.pearson_r = (sxx > 0.0 && syy > 0.0) ? sxy / std::sqrt(sxx * syy) : 0.0;
  out.pearson_r_sigma = (1.0 - out.pearson_r * out.pearson_r) / std::sqrt(n - 1.0);
  return out;
}

IntensityLifetimeCorrelation intensity_lifetime_correlation(const PhotonStream& stream,
                                                            double bin_width_s,
                                                            std::optional<double> span_s) {
  return intensity_lifetime_correlation(bin_lifetimes(stream, bin_width_s, span_s));
}

}  // namespace photonstat
