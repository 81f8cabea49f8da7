#pragma once

// Run configuration and the simulate / analyze / saturate / selftest
// commands behind the photonstat executable.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "photonstat/emitter_sim.hpp"

namespace photonstat::app {

struct G2Config {
  std::optional<std::int64_t> intra_window_ps;  // default: 5 x mean decay lifetime, capped at P/2
  int n_side_peaks = 20;
  int norm_side_min = 10;
  int norm_side_max = 20;
  std::int64_t lag_bin_width_ps = 256;
  std::optional<double> background_rate_cps;  // both channels; default from metadata or decay floor
};

struct EnvelopeConfig {
  double tau_min_s = 1e-6;
  double tau_max_s = 1.0;
  int points_per_decade = 6;
  double relative_bin_width = 0.05;
};

struct DecayConfig {
  std::uint32_t bin_width_ps = 64;
  int n_components = 3;
  double fit_start_offset_ps = 500.0;
  int restarts = 5;
  std::string objective = "poisson";  // or "least_squares"
};

struct FlidConfig {
  double bin_width_s = 0.005;
  int lifetime_bins = 80;
  int intensity_bins = 50;
  double lifetime_max_ns = 40.0;
};

/// Power series for `saturate`: <N> = fluence / p_sat per point, plus an
/// optional background linear in fluence (counts/s per fluence unit).
struct SaturationConfig {
  std::vector<double> fluences;
  double p_sat = 9.0;
  double linear_background_cps = 0.0;
  std::optional<double> duration_s;  // per point; defaults to sim.duration_s
};

struct AnalysisConfig {
  double trace_bin_s = 0.005;
  G2Config g2;
  EnvelopeConfig envelope;
  DecayConfig decay;
  FlidConfig flid;
  SaturationConfig saturation;
};

struct OutputConfig {
  std::string directory = "out";
  std::vector<std::string> formats{"csv", "json", "svg"};

  bool wants(const std::string& format) const;
};

struct RunConfig {
  EmitterParams emitter;
  DetectorParams detector;
  SimConfig sim;
  AnalysisConfig analysis;
  OutputConfig output;
};

/// Strict parse: unknown keys and invalid values raise ConfigInvalid naming
/// the key. Every module validates its own section before any work starts.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

struct Options {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

/// Worker cap from PHOTONSTAT_THREADS (default: hardware concurrency).
int thread_limit();

/// Each command returns the process exit status. Errors are reported on
/// `err` with their module and code; partial outputs are removed.
int cmd_simulate(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_analyze(const std::filesystem::path& stream_path, const Options& opt, std::ostream& out,
                std::ostream& err);
int cmd_saturate(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_selftest(const Options& opt, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// Minimal SVG plotting

struct Series {
  std::vector<double> x, y;
  std::vector<double> y_err;  // optional error bars
  std::string label;
  std::string color = "#1f77b4";
  bool line = true;
};

struct PlotSpec {
  std::string title, x_label, y_label;
  bool log_x = false, log_y = false;
};

std::string svg_xy_plot(const PlotSpec& spec, const std::vector<Series>& series);

/// Heatmap of a row-major matrix; row 0 is drawn at the bottom.
std::string svg_heatmap(const PlotSpec& spec, const std::vector<double>& x_edges,
                        const std::vector<double>& y_edges, const std::vector<double>& values);

}  // namespace photonstat::app
