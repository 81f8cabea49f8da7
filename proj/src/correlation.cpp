#include "photonstat/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "photonstat/error.hpp"

namespace photonstat {
namespace {

constexpr char kModule[] = "correlation";

[[noreturn]] void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, kModule, msg);
}

std::int64_t symmetric_round_div(std::int64_t value, std::int64_t divisor) {
  const std::int64_t half = divisor / 2;
  return value >= 0 ? (value + half) / divisor : -((-value + half) / divisor);
}

std::uint64_t acquisition_pulses(const PhotonStream& stream, std::optional<std::uint64_t> hint) {
  if (hint && *hint > 0) return *hint;
  return stream.records.empty() ? 0 : stream.records.back().nsync + 1;
}

struct ChannelSplit {
  std::vector<std::int64_t> t0, t1;  // absolute times
};

ChannelSplit split_times(const PhotonStream& stream) {
  ChannelSplit s;
  for (const auto& r : stream.records) {
    const auto t = static_cast<std::int64_t>(stream.absolute_time_ps(r));
    if (r.channel == 0) s.t0.push_back(t);
    else if (r.channel == 1) s.t1.push_back(t);
  }
  return s;
}

}  // namespace

IntensityTrace bin_intensity(const PhotonStream& stream, double bin_width_s,
                             std::optional<double> span_s) {
  if (!(bin_width_s > 0.0)) fail(ErrorCode::InvalidArgument, "bin_width_s must be > 0");
  if (stream.records.empty()) fail(ErrorCode::EmptyStream, "no photon records");

  const auto bin_ps = static_cast<std::uint64_t>(std::llround(bin_width_s * 1e12));
  if (bin_ps == 0) fail(ErrorCode::InvalidArgument, "bin width below 1 ps");
  std::uint64_t n_bins = 0;
  if (span_s) {
    n_bins = static_cast<std::uint64_t>(std::floor(*span_s / bin_width_s * (1.0 + 1e-12)));
  } else {
    n_bins = stream.absolute_time_ps(stream.records.back()) / bin_ps + 1;
  }

  IntensityTrace trace;
  trace.bin_width_s = bin_width_s;
  trace.counts.assign(n_bins, 0);
  for (const auto& r : stream.records) {
    const std::uint64_t i = stream.absolute_time_ps(r) / bin_ps;
    if (i >= n_bins) break;
    ++trace.counts[i];
  }
  return trace;
}

std::uint64_t OccurrenceHistogram::total() const {
  return std::accumulate(occurrences.begin(), occurrences.end(), std::uint64_t{0});
}

OccurrenceHistogram intensity_histogram(const IntensityTrace& trace) {
  OccurrenceHistogram h;
  if (trace.counts.empty()) return h;
  h.occurrences.assign(*std::max_element(trace.counts.begin(), trace.counts.end()) + 1, 0);
  for (auto c : trace.counts) ++h.occurrences[c];
  return h;
}

// ---------------------------------------------------------------------------

std::int64_t lag_bin_index(std::int64_t lag_ps, std::int64_t bin_width_ps) {
  return symmetric_round_div(lag_ps, bin_width_ps);
}

double subtract_background_rho(double g2_raw, double rho) {
  if (!(rho > 0.0) || rho > 1.0) fail(ErrorCode::InvalidArgument, "rho must be in (0, 1]");
  const double rho2 = rho * rho;
  return std::max(0.0, (g2_raw - (1.0 - rho2)) / rho2);
}

double subtract_background(double g2_raw, double signal_rate, double background_rate) {
  if (signal_rate < 0.0 || background_rate < 0.0)
    fail(ErrorCode::InvalidArgument, "rates must be >= 0");
  const double total = signal_rate + background_rate;
  if (!(total > 0.0)) fail(ErrorCode::ZeroTotalRate, "signal + background rate is zero");
  if (signal_rate == 0.0) return 0.0;
  return subtract_background_rho(g2_raw, signal_rate / total);
}

G2Histogram g2_pulsed(const PhotonStream& stream, const G2Options& opt) {
  if (stream.header.channel_count < 2)
    fail(ErrorCode::SingleChannelStream, "g2 needs a two-channel stream");
  const auto period = static_cast<std::int64_t>(stream.header.sync_period_ps);
  const std::int64_t window = opt.intra_window_ps > 0 ? opt.intra_window_ps : period / 2;
  if (window > period / 2)
    fail(ErrorCode::WindowTooWide, "intra_window_ps exceeds half a sync period");
  if (opt.n_side_peaks < 1 || opt.lag_bin_width_ps <= 0)
    fail(ErrorCode::InvalidArgument, "need n_side_peaks >= 1 and a positive lag bin width");
  if (opt.norm_side_min < 1 || opt.norm_side_min > opt.norm_side_max ||
      opt.norm_side_max > opt.n_side_peaks)
    fail(ErrorCode::InvalidArgument, "side-peak normalisation range outside the histogram");

  const ChannelSplit ch = split_times(stream);
  if (ch.t0.empty() || ch.t1.empty())
    fail(ErrorCode::SingleChannelStream, "one detector channel holds no photons");

  G2Histogram g;
  g.sync_period_ps = period;
  g.lag_bin_width_ps = opt.lag_bin_width_ps;
  g.intra_window_ps = window;
  g.max_lag_ps = opt.n_side_peaks * period + period / 2;
  const std::int64_t half_bins = lag_bin_index(g.max_lag_ps, g.lag_bin_width_ps);
  g.counts.assign(static_cast<std::size_t>(2 * half_bins + 1), 0);
  std::vector<std::uint64_t> peaks(static_cast<std::size_t>(2 * opt.n_side_peaks + 1), 0);

  const std::int64_t max_lag = g.max_lag_ps;
  std::size_t lo = 0;
  for (const std::int64_t t1 : ch.t0) {
    while (lo < ch.t1.size() && ch.t1[lo] < t1 - max_lag) ++lo;
    for (std::size_t j = lo; j < ch.t1.size() && ch.t1[j] <= t1 + max_lag; ++j) {
      const std::int64_t lag = ch.t1[j] - t1;
      ++g.counts[static_cast<std::size_t>(lag_bin_index(lag, g.lag_bin_width_ps) + half_bins)];
      const std::int64_t k = symmetric_round_div(lag, period);
      if (std::abs(k) <= opt.n_side_peaks && std::abs(lag - k * period) <= window)
        ++peaks[static_cast<std::size_t>(k + opt.n_side_peaks)];
    }
  }

  g.center_peak_area = peaks[static_cast<std::size_t>(opt.n_side_peaks)];
  double norm_sum = 0.0, near_sum = 0.0;
  int norm_n = 0;
  for (int k = -opt.n_side_peaks; k <= opt.n_side_peaks; ++k) {
    if (k == 0) continue;
    const std::uint64_t area = peaks[static_cast<std::size_t>(k + opt.n_side_peaks)];
    g.side_peaks.push_back({k, area});
    if (std::abs(k) >= opt.norm_side_min && std::abs(k) <= opt.norm_side_max) {
      norm_sum += static_cast<double>(area);
      ++norm_n;
    }
    if (std::abs(k) == 1) near_sum += static_cast<double>(area);
  }

  const double center = static_cast<double>(g.center_peak_area);
  const double side_mean = norm_sum / norm_n;
  if (side_mean > 0.0) {
    g.g2_zero_raw = center / side_mean;
    const double var = std::max(center, 1.0) / (side_mean * side_mean) +
                       center * center * (side_mean / norm_n) / std::pow(side_mean, 4);
    g.g2_zero_raw_sigma = std::sqrt(var);
  }
  if (near_sum > 0.0) g.g2_zero_raw_nearest = center / (near_sum / 2.0);

  // Background pairs spread uniformly over lag, so only the fraction
  // 2w/period of them fall inside a peak window, whereas signal pairs are
  // concentrated there. rho is the in-window signal amplitude fraction.
  const std::uint64_t pulses = acquisition_pulses(stream, opt.pulse_count);
  const double duration_s = static_cast<double>(pulses) * stream.sync_period_s();
  const double total_rate = static_cast<double>(ch.t0.size() + ch.t1.size()) / duration_s;
  g.background_rate_cps = std::clamp(opt.background_rate_cps, 0.0, total_rate);
  g.signal_rate_cps = total_rate - g.background_rate_cps;
  if (g.signal_rate_cps <= 0.0) {
    g.signal_fraction_rho = 0.0;
    g.g2_zero_corrected = 0.0;
    g.g2_zero_corrected_sigma = 0.0;
    return g;
  }
  const double f = std::min(1.0, 2.0 * static_cast<double>(window) / static_cast<double>(period));
  const double b_over_s = g.background_rate_cps / g.signal_rate_cps;
  const double excess = f * (2.0 * b_over_s + b_over_s * b_over_s);
  g.signal_fraction_rho = std::sqrt(1.0 / (1.0 + excess));
  g.g2_zero_corrected = subtract_background_rho(g.g2_zero_raw, g.signal_fraction_rho);
  g.g2_zero_corrected_sigma =
      g.g2_zero_raw_sigma / (g.signal_fraction_rho * g.signal_fraction_rho);
  return g;
}

// ---------------------------------------------------------------------------

std::vector<double> log_tau_grid(double tau_min_s, double tau_max_s, int points_per_decade) {
  if (!(tau_min_s > 0.0) || !(tau_max_s >= tau_min_s) || points_per_decade < 1)
    fail(ErrorCode::InvalidArgument, "invalid tau grid");
  std::vector<double> taus;
  const double decades = std::log10(tau_max_s / tau_min_s);
  const int n = static_cast<int>(std::floor(decades * points_per_decade + 1e-9));
  for (int i = 0; i <= n; ++i)
    taus.push_back(tau_min_s * std::pow(10.0, static_cast<double>(i) / points_per_decade));
  return taus;
}

G2Envelope g2_envelope(const PhotonStream& stream, std::span<const double> taus_s,
                       const EnvelopeOptions& opt) {
  if (stream.header.channel_count < 2)
    fail(ErrorCode::SingleChannelStream, "envelope needs a two-channel stream");
  if (taus_s.empty()) fail(ErrorCode::InvalidArgument, "empty tau grid");
  const double period_s = stream.sync_period_s();
  const std::uint64_t pulses = acquisition_pulses(stream, opt.pulse_count);
  const double duration_s = static_cast<double>(pulses) * period_s;
  const double tau_max = *std::max_element(taus_s.begin(), taus_s.end());
  if (duration_s < 10.0 * tau_max)
    fail(ErrorCode::TraceTooShort, "trace of " + std::to_string(duration_s) +
                                       " s is shorter than 10x the largest delay");

  std::vector<std::int64_t> a, b;  // pulse indices per channel, nondecreasing
  for (const auto& r : stream.records) {
    if (r.channel == 0) a.push_back(static_cast<std::int64_t>(r.nsync));
    else if (r.channel == 1) b.push_back(static_cast<std::int64_t>(r.nsync));
  }
  if (a.empty() || b.empty())
    fail(ErrorCode::SingleChannelStream, "one detector channel holds no photons");

  auto count_below = [](const std::vector<std::int64_t>& v, std::int64_t x) {
    return static_cast<double>(std::lower_bound(v.begin(), v.end(), x) - v.begin());
  };
  const auto M = static_cast<std::int64_t>(pulses);
  const double n_a = static_cast<double>(a.size());
  const double n_b = static_cast<double>(b.size());

  G2Envelope env;
  for (const double tau : taus_s) {
    const double center = tau / period_s;
    if (center < 1.0 - 1e-9) fail(ErrorCode::InvalidArgument, "tau below one sync period");
    const double half = 0.5 * opt.relative_bin_width * center;
    auto d_lo = static_cast<std::int64_t>(std::ceil(center - half - 1e-9));
    auto d_hi = static_cast<std::int64_t>(std::floor(center + half + 1e-9));
    d_lo = std::max<std::int64_t>(d_lo, 1);
    if (d_hi < d_lo) d_lo = d_hi = std::max<std::int64_t>(1, std::llround(center));

    // Coincidences at pulse separations +-[d_lo, d_hi], swept with monotone
    // pointers into channel 1.
    std::uint64_t pairs = 0;
    std::size_t p_lo = 0, p_hi = 0, n_lo = 0, n_hi = 0;
    for (const std::int64_t n : a) {
      while (p_lo < b.size() && b[p_lo] < n + d_lo) ++p_lo;
      while (p_hi < b.size() && b[p_hi] <= n + d_hi) ++p_hi;
      while (n_lo < b.size() && b[n_lo] < n - d_hi) ++n_lo;
      while (n_hi < b.size() && b[n_hi] <= n - d_lo) ++n_hi;
      pairs += (p_hi - p_lo) + (n_hi - n_lo);
    }

    // Uncorrelated expectation from the counts actually present in the
    // overlapping pulse ranges, so rate drifts do not bias the ratio.
    double expected = 0.0, tau_weight = 0.0;
    for (std::int64_t d = d_lo; d <= d_hi && d < M; ++d) {
      const double early_a = count_below(a, M - d);
      const double late_b = n_b - count_below(b, d);
      const double early_b = count_below(b, M - d);
      const double late_a = n_a - count_below(a, d);
      const double e = (early_a * late_b + early_b * late_a) / static_cast<double>(M - d);
      expected += e;
      tau_weight += e * static_cast<double>(d);
    }

    env.taus_s.push_back(tau);
    env.d_lo.push_back(static_cast<std::uint64_t>(d_lo));
    env.d_hi.push_back(static_cast<std::uint64_t>(d_hi));
    env.pairs.push_back(pairs);
    env.expected_pairs.push_back(expected);
    if (expected > 0.0) {
      env.tau_eff_s.push_back(tau_weight / expected * period_s);
      env.values.push_back(static_cast<double>(pairs) / expected);
      env.poisson_sigma.push_back(std::sqrt(std::max<double>(static_cast<double>(pairs), 1.0)) /
                                  expected);
    } else {
      env.tau_eff_s.push_back(tau);
      env.values.push_back(0.0);
      env.poisson_sigma.push_back(0.0);
    }
  }

  // Finite-trace fluctuation of the intensity correlation itself:
  // var ~ (2 / T) * integral_0^inf (g(u) - 1)^2 du, integrated over the
  // measured envelope (held constant below the first grid point).
  double integral = 0.0;
  for (std::size_t i = 0; i < env.values.size(); ++i) {
    const double c = env.values[i] - 1.0;
    if (i == 0) {
      integral += c * c * env.tau_eff_s[0];
    } else {
      const double cp = env.values[i - 1] - 1.0;
      integral += 0.5 * (c * c + cp * cp) * (env.tau_eff_s[i] - env.tau_eff_s[i - 1]);
    }
  }
  const double fluct_var = 2.0 * integral / duration_s;
  for (const double ps : env.poisson_sigma) env.one_sigma.push_back(std::sqrt(ps * ps + fluct_var));
  return env;
}

// ---------------------------------------------------------------------------

std::vector<double> smooth_histogram(std::span<const double> hist, int radius) {
  const std::size_t n = hist.size();
  std::vector<double> s(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0, wsum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
      const auto j = static_cast<std::ptrdiff_t>(i) + k;
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) continue;
      const double w = radius + 1 - std::abs(k);
      acc += w * hist[static_cast<std::size_t>(j)];
      wsum += w;
    }
    s[i] = acc / wsum;
  }
  return s;
}

std::vector<std::size_t> find_modes(std::span<const double> hist, int radius,
                                    double min_relative_prominence) {
  const std::size_t n = hist.size();
  if (n == 0) return {};
  const std::vector<double> s = smooth_histogram(hist, radius);

  // Local maxima; plateaus are represented by their first index.
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    const double left = i == 0 ? -1.0 : s[i - 1];
    std::size_t j = i;
    while (j + 1 < n && s[j + 1] == s[i]) ++j;
    const double right = j + 1 == n ? -1.0 : s[j + 1];
    if (s[i] > left && s[i] > right && s[i] > 0.0) candidates.push_back(i);
    i = j;
  }
  if (candidates.empty()) return {};
  const double top = *std::max_element(s.begin(), s.end());

  // Topographic prominence: drop to the lowest point before reaching higher
  // ground on each side; the higher of the two bases sets the prominence.
  std::vector<std::size_t> modes;
  for (const std::size_t c : candidates) {
    double left_base = s[c];
    bool left_higher = false;
    for (std::size_t j = c; j-- > 0;) {
      if (s[j] > s[c]) { left_higher = true; break; }
      left_base = std::min(left_base, s[j]);
    }
    double right_base = s[c];
    bool right_higher = false;
    for (std::size_t j = c + 1; j < n; ++j) {
      if (s[j] > s[c]) { right_higher = true; break; }
      right_base = std::min(right_base, s[j]);
    }
    double base = 0.0;
    if (left_higher && right_higher) base = std::max(left_base, right_base);
    else if (left_higher) base = left_base;
    else if (right_higher) base = right_base;
    else base = std::min(left_base, right_base);
    const double prominence = s[c] - base;
    const double noise = 3.0 * std::sqrt(s[c]);
    if (prominence >= min_relative_prominence * top && prominence >= noise) modes.push_back(c);
  }
  return modes;
}

namespace {

StateLabels label_bins(const IntensityTrace& trace, std::uint32_t threshold) {
  StateLabels out;
  out.threshold = threshold;
  out.bright.reserve(trace.counts.size());
  std::size_t on = 0;
  for (const auto c : trace.counts) {
    const bool bright = c > threshold;
    out.bright.push_back(bright ? 1 : 0);
    on += bright ? 1 : 0;
  }
  out.on_fraction = trace.counts.empty() ? 0.0
                                         : static_cast<double>(on) /
                                               static_cast<double>(trace.counts.size());
  return out;
}

}  // namespace

StateLabels threshold_states(const IntensityTrace& trace) {
  if (trace.counts.empty()) fail(ErrorCode::EmptyStream, "empty intensity trace");
  const OccurrenceHistogram occ = intensity_histogram(trace);
  std::vector<double> h(occ.occurrences.begin(), occ.occurrences.end());
  const double mean = std::accumulate(trace.counts.begin(), trace.counts.end(), 0.0) /
                      static_cast<double>(trace.counts.size());
  const int radius = std::max(1, static_cast<int>(std::floor(0.5 * std::sqrt(mean))));
  auto modes = find_modes(h, radius);
  if (modes.size() < 2) fail(ErrorCode::NotBimodal, "occurrence histogram has a single mode");

  // The two tallest modes, ordered by count.
  const std::vector<double> s = smooth_histogram(h, radius);
  std::sort(modes.begin(), modes.end(), [&](std::size_t x, std::size_t y) {
    return s[x] != s[y] ? s[x] > s[y] : x < y;
  });
  const std::size_t lo = std::min(modes[0], modes[1]);
  const std::size_t hi = std::max(modes[0], modes[1]);

  std::size_t valley = lo;
  for (std::size_t i = lo; i <= hi; ++i)
    if (s[i] < s[valley]) valley = i;  // strict: ties keep the lower count

  StateLabels out = label_bins(trace, static_cast<std::uint32_t>(valley));
  out.low_mode = static_cast<std::uint32_t>(lo);
  out.high_mode = static_cast<std::uint32_t>(hi);
  return out;
}

StateLabels threshold_states_or_quantile(const IntensityTrace& trace, double quantile) {
  try {
    return threshold_states(trace);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NotBimodal) throw;
  }
  std::vector<std::uint32_t> sorted = trace.counts;
  std::sort(sorted.begin(), sorted.end());
  const auto idx = static_cast<std::size_t>(
      std::clamp(quantile, 0.0, 1.0) * static_cast<double>(sorted.size() - 1));
  StateLabels out = label_bins(trace, sorted[idx]);
  out.quantile_fallback = true;
  return out;
}

}  // namespace photonstat
