#pragma once

// Microtime decay histograms, multi-exponential tail fits, per-bin lifetime
// estimates and fluorescence lifetime-intensity distributions (FLID).

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "photonstat/fitting.hpp"
#include "photonstat/photon_stream.hpp"

namespace photonstat {

inline constexpr std::uint32_t kDefaultDecayBinPs = 64;
inline constexpr std::size_t kLifetimePhotonFloor = 5;

struct DecayHistogram {
  std::uint32_t bin_width_ps = kDefaultDecayBinPs;
  std::uint64_t sync_period_ps = 0;
  std::vector<std::uint64_t> counts;  // bin j covers [j, j+1) * bin_width_ps, clipped at the period
  std::uint64_t total_counts = 0;
  double t0_ps = 0.0;  // centre of the most populated bin

  double bin_start_ps(std::size_t j) const { return static_cast<double>(j) * bin_width_ps; }
  double bin_end_ps(std::size_t j) const {
    return std::min(static_cast<double>(j + 1) * bin_width_ps, static_cast<double>(sync_period_ps));
  }
};

/// Both channels pooled. Throws EmptyStream, InvalidArgument when the bin is
/// narrower than the stream resolution.
DecayHistogram decay_histogram(const PhotonStream& stream,
                               std::uint32_t bin_width_ps = kDefaultDecayBinPs);

// ---------------------------------------------------------------------------
// Multi-exponential tail fit

struct DecayComponent {
  double lifetime_ns = 0.0;
  double lifetime_err_ns = 0.0;
  double amplitude_fraction = 0.0;  // share of the exponential photons after t0
  double amplitude_fraction_err = 0.0;
  double photons = 0.0;  // photons of this component after t0
};

struct MultiExpOptions {
  int n_components = 1;
  double fit_start_offset_ps = 500.0;
  Objective objective = Objective::poisson_mle;  // least_squares for cross-checks
  int restarts = 5;
  int threads = 1;
};

struct MultiExpFit {
  std::vector<DecayComponent> components;  // sorted by lifetime, ascending
  double background_per_bin = 0.0;
  double background_per_bin_err = 0.0;
  double fit_start_ps = 0.0;
  std::size_t fit_bins = 0;
  std::uint64_t fit_range_counts = 0;
  double exponential_counts = 0.0;  // fitted exponential photons inside the fit range
  // Same, restricted to components with amplitude above 2 standard errors; a
  // slow component indistinguishable from the flat floor does not count.
  double resolved_exponential_counts = 0.0;
  double background_counts = 0.0;   // fitted flat photons inside the fit range
  int best_restart = 0;
  int merged_components = 0;
  FitResult fit;  // raw engine result: A_1..A_n (photons after fit start), tau_1..tau_n (ps), c
};

/// Bin-integrated model sum_i A_i (exp(-a/tau_i) - exp(-(a+w)/tau_i)) + c over
/// bins starting at least `fit_start_offset_ps` after t0, a measured from the
/// first fitted bin edge. Throws InvalidArgument, InsufficientCounts (< 1000
/// photons in the fit range) and FitDiverged.
MultiExpFit fit_multiexp(const DecayHistogram& hist, const MultiExpOptions& options);

/// Expected counts of the fitted model in histogram bin j (0 before the fit range).
double multiexp_bin_model(const MultiExpFit& fit, const DecayHistogram& hist, std::size_t j);

// ---------------------------------------------------------------------------
// Per-bin lifetime

struct LifetimeEstimate {
  double tau_ps = 0.0;
  double mean_delay_ps = 0.0;
  bool below_floor = false;  // all delays zero
  bool unbounded = false;    // mean delay >= T/2: no finite maximum-likelihood lifetime
};

/// m(tau) = tau - T / expm1(T / tau) for an exponential truncated at T.
double truncated_mean_delay(double tau, double T);

/// Solves m(tau) = mean(arrival - t0) with T = sync_period - t0. Throws
/// TooFewPhotons (< 5 arrivals) and NonPositiveDelays (negative mean delay).
LifetimeEstimate bin_lifetime_estimate(std::span<const double> arrival_ps, double t0_ps,
                                       double sync_period_ps);

// ---------------------------------------------------------------------------
// FLID

struct FlidOptions {
  double bin_width_s = 0.005;
  int lifetime_bins = 80;
  int intensity_bins = 50;
  double lifetime_max_ns = 40.0;
  std::optional<double> span_s;          // acquisition length; defaults to the last photon
  std::optional<double> t0_ps;           // defaults to the decay-histogram mode
  std::uint32_t decay_bin_width_ps = kDefaultDecayBinPs;
};

struct FlidGrid {
  std::vector<double> lifetime_edges_ns;          // lifetime_bins + 1
  std::vector<std::uint32_t> intensity_edges;     // intensity_bins + 1, counts per time bin
  std::vector<std::uint64_t> occurrence;          // [lifetime][intensity], row-major
  std::vector<std::uint64_t> flagged;             // bins under the photon floor, per intensity bin
  std::uint64_t unbounded_bins = 0;               // counted in the top lifetime row
  double t0_ps = 0.0;
  double bin_width_s = 0.0;
  std::uint64_t time_bins = 0;

  std::size_t lifetime_bins() const { return lifetime_edges_ns.size() - 1; }
  std::size_t intensity_bins() const { return intensity_edges.size() - 1; }
  std::uint64_t at(std::size_t lifetime_bin, std::size_t intensity_bin) const {
    return occurrence[lifetime_bin * intensity_bins() + intensity_bin];
  }
  std::uint64_t total() const;
  /// Occurrences per intensity bin summed over lifetime, flagged row included.
  std::vector<std::uint64_t> intensity_marginal() const;
  /// Occurrences per lifetime bin, flagged row excluded.
  std::vector<std::uint64_t> lifetime_marginal() const;
};

/// Per time bin, counts and truncated-MLE lifetime. Throws EmptyStream.
struct BinLifetimes {
  double t0_ps = 0.0;
  std::vector<std::uint32_t> counts;
  std::vector<double> tau_ns;  // NaN below the photon floor
  std::vector<std::uint8_t> unbounded;
};
BinLifetimes bin_lifetimes(const PhotonStream& stream, double bin_width_s,
                           std::optional<double> span_s = std::nullopt,
                           std::optional<double> t0_ps = std::nullopt,
                           std::uint32_t decay_bin_width_ps = kDefaultDecayBinPs);

FlidGrid build_flid(const PhotonStream& stream, const FlidOptions& options = {});

struct IntensityLifetimeCorrelation {
  double pearson_r = 0.0;
  double pearson_r_sigma = 0.0;  // (1 - r^2) / sqrt(n - 1)
  std::size_t bins_used = 0;
  std::size_t bins_total = 0;
};

/// Pearson correlation of counts and lifetime over bins passing the photon
/// floor with a finite lifetime. Throws InsufficientBins (< 100 usable bins).
IntensityLifetimeCorrelation intensity_lifetime_correlation(const BinLifetimes& bins);
IntensityLifetimeCorrelation intensity_lifetime_correlation(
    const PhotonStream& stream, double bin_width_s, std::optional<double> span_s = std::nullopt);

}  // namespace photonstat
