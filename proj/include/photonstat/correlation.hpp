#pragma once

// Intensity traces, pulsed-excitation g2 histograms and the long-delay
// coincidence-peak envelope.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "photonstat/photon_stream.hpp"

namespace photonstat {

inline constexpr double kDefaultTraceBinS = 0.005;

struct IntensityTrace {
  double bin_width_s = kDefaultTraceBinS;
  double start_time_s = 0.0;
  std::vector<std::uint32_t> counts;  // both channels summed
};

/// Bins photon arrival times into [i, i+1) * bin_width_s. When `span_s` is
/// given, floor(span_s / bin_width_s) bins are produced (a trailing partial
/// bin is dropped); otherwise the trace runs up to and including the bin of
/// the last photon.
IntensityTrace bin_intensity(const PhotonStream& stream, double bin_width_s,
                             std::optional<double> span_s = std::nullopt);

/// occurrences[c] = number of trace bins holding exactly c photons.
struct OccurrenceHistogram {
  std::vector<std::uint64_t> occurrences;
  std::uint64_t total() const;
};

OccurrenceHistogram intensity_histogram(const IntensityTrace& trace);

// ---------------------------------------------------------------------------
// Pulsed g2

struct G2Options {
  std::int64_t intra_window_ps = 0;  // 0: half a sync period
  int n_side_peaks = 20;
  int norm_side_min = 10;  // side peaks |k| in [min, max] normalise g2(0)
  int norm_side_max = 20;
  std::int64_t lag_bin_width_ps = 256;
  double background_rate_cps = 0.0;  // both channels, uniform in time
  std::optional<std::uint64_t> pulse_count;  // acquisition length in pulses
};

struct PeakArea {
  int k = 0;
  std::uint64_t area = 0;
};

struct G2Histogram {
  std::int64_t sync_period_ps = 0;
  std::int64_t lag_bin_width_ps = 0;
  std::int64_t intra_window_ps = 0;
  std::int64_t max_lag_ps = 0;
  std::vector<std::uint64_t> counts;  // counts[i] <-> lag (i - half_bins) * lag_bin_width_ps
  std::uint64_t center_peak_area = 0;
  std::vector<PeakArea> side_peaks;  // k = -n..-1, 1..n
  double g2_zero_raw = 0.0;
  double g2_zero_raw_sigma = 0.0;
  double g2_zero_raw_nearest = 0.0;  // normalised by the k = +-1 peaks
  double g2_zero_corrected = 0.0;
  double g2_zero_corrected_sigma = 0.0;
  double signal_fraction_rho = 1.0;
  double signal_rate_cps = 0.0;
  double background_rate_cps = 0.0;

  std::int64_t half_bins() const { return static_cast<std::int64_t>(counts.size() / 2); }
  std::int64_t lag_of_bin(std::size_t i) const {
    return (static_cast<std::int64_t>(i) - half_bins()) * lag_bin_width_ps;
  }
};

/// Channel-0/channel-1 delay histogram and peak areas from a sliding-window
/// sweep over both channels.
G2Histogram g2_pulsed(const PhotonStream& stream, const G2Options& options = {});

/// Lag-bin index for a signed delay; rounding is symmetric about zero so the
/// histogram is exactly mirror-symmetric under channel swap.
std::int64_t lag_bin_index(std::int64_t lag_ps, std::int64_t bin_width_ps);

/// (g2_raw - (1 - rho^2)) / rho^2, clamped at 0, rho = signal / (signal + background).
double subtract_background(double g2_raw, double signal_rate, double background_rate);
double subtract_background_rho(double g2_raw, double rho);

// ---------------------------------------------------------------------------
// Long-delay envelope

struct EnvelopeOptions {
  double relative_bin_width = 0.05;  // full width of each pulse-difference bin / tau
  std::optional<std::uint64_t> pulse_count;
};

struct G2Envelope {
  std::vector<double> taus_s;      // requested grid
  std::vector<double> tau_eff_s;   // expectation-weighted delay actually sampled
  std::vector<std::uint64_t> d_lo, d_hi;  // pulse-difference range per point
  std::vector<std::uint64_t> pairs;
  std::vector<double> expected_pairs;
  std::vector<double> values;
  std::vector<double> poisson_sigma;
  std::vector<double> one_sigma;  // Poisson and intensity-fluctuation terms combined
};

std::vector<double> log_tau_grid(double tau_min_s, double tau_max_s, int points_per_decade);

G2Envelope g2_envelope(const PhotonStream& stream, std::span<const double> taus_s,
                       const EnvelopeOptions& options = {});

// ---------------------------------------------------------------------------
// Blinking state assignment

/// Triangular-kernel smoothing with the given half-width.
std::vector<double> smooth_histogram(std::span<const double> histogram, int radius);

/// Indices of prominent local maxima of a (smoothed) 1D histogram.
std::vector<std::size_t> find_modes(std::span<const double> histogram, int smooth_radius = 1,
                                    double min_relative_prominence = 0.05);

struct StateLabels {
  std::uint32_t threshold = 0;     // bins with count > threshold are bright
  std::uint32_t low_mode = 0;
  std::uint32_t high_mode = 0;
  std::vector<std::uint8_t> bright;
  double on_fraction = 0.0;
  bool quantile_fallback = false;
};

/// Throws NotBimodal when the occurrence histogram has fewer than two modes.
StateLabels threshold_states(const IntensityTrace& trace);

/// threshold_states, falling back to a quantile threshold (flagged) when the
/// histogram is not bimodal.
StateLabels threshold_states_or_quantile(const IntensityTrace& trace, double quantile = 0.5);

}  // namespace photonstat
