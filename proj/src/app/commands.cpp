#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "photonstat/app.hpp"
#include "photonstat/correlation.hpp"
#include "photonstat/error.hpp"
#include "photonstat/fitting.hpp"
#include "photonstat/lifetime_flid.hpp"
#include "photonstat/photon_stream.hpp"

namespace photonstat::app {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

const char* const kModule = "cli";

std::string fmt(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

Series make_series(std::string label, std::string color, bool line) {
  Series s;
  s.label = std::move(label);
  s.color = std::move(color);
  s.line = line;
  return s;
}

json measured(double value, double sigma) { return {{"value", value}, {"sigma", sigma}}; }

/// Outputs are assembled in memory and written at the end so a failing
/// analysis leaves nothing behind.
class Bundle {
public:
  explicit Bundle(const OutputConfig& out) : out_(out) {}

  void add(const std::string& name, std::string content) {
    const auto ext = fs::path(name).extension().string();
    const std::string format = ext == ".csv" ? "csv" : ext == ".json" ? "json" : "svg";
    if (out_.wants(format)) files_.emplace_back(name, std::move(content));
  }
  void add_json(const std::string& name, const json& j) { add(name, j.dump(2) + "\n"); }

  std::vector<fs::path> write(const fs::path& dir) const {
    std::vector<fs::path> written;
    try {
      fs::create_directories(dir);
      for (const auto& [name, content] : files_) {
        const fs::path p = dir / name;
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f) throw Error(ErrorCode::IoError, kModule, "cannot write " + p.string());
        written.push_back(p);
        f << content;
        f.close();
        if (!f) throw Error(ErrorCode::IoError, kModule, "write failed for " + p.string());
      }
    } catch (...) {
      std::error_code ec;
      for (const auto& p : written) fs::remove(p, ec);
      throw;
    }
    return written;
  }

private:
  const OutputConfig& out_;
  std::vector<std::pair<std::string, std::string>> files_;
};

int report_errors(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    err << "photonstat: error [" << e.module() << "] " << to_string(e.code()) << ": " << e.what()
        << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "photonstat: error [" << kModule << "] internal: " << e.what() << "\n";
    return 3;
  }
}

RunConfig resolve_config(const Options& opt, bool required) {
  RunConfig cfg;
  if (opt.config) cfg = load_config(*opt.config);
  else if (required) throw Error(ErrorCode::ConfigInvalid, kModule, "--config is required");
  if (opt.seed) cfg.sim.seed = *opt.seed;
  return cfg;
}

json fit_report(const FitResult& r) {
  json params = json::array();
  for (std::size_t i = 0; i < r.parameters.size(); ++i)
    params.push_back({{"name", r.names[i]}, {"value", r.parameters[i]}, {"std_error", r.std_errors[i]}});
  json cov = json::array();
  const std::size_t n = r.parameters.size();
  for (std::size_t i = 0; i < n; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < n; ++j) row.push_back(r.cov(i, j));
    cov.push_back(row);
  }
  return {{"parameters", params},
          {"covariance", cov},
          {"objective", r.objective},
          {"reduced_objective", r.reduced_objective},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"covariance_reliable", r.covariance_reliable},
          {"condition_number", r.condition_number},
          {"note", r.note}};
}

void progress(const Options& opt, std::ostream& err, const std::string& msg) {
  if (!opt.quiet) err << "photonstat: " << msg << "\n";
}

// ---------------------------------------------------------------------------
// Stream context recovered from header metadata (all optional).

struct StreamContext {
  double duration_s = 0.0;
  std::uint64_t pulses = 0;
  std::optional<double> dark_rate_total_cps;
};

StreamContext stream_context(const PhotonStream& s) {
  StreamContext c;
  const json meta = json::parse(s.header.metadata, nullptr, false);
  if (meta.is_object()) {
    if (meta.contains("sim_params") && meta["sim_params"].contains("duration_s") &&
        meta["sim_params"]["duration_s"].is_number())
      c.duration_s = meta["sim_params"]["duration_s"].get<double>();
    if (meta.contains("detector_params") && meta["detector_params"].contains("dark_rate_hz") &&
        meta["detector_params"]["dark_rate_hz"].is_number())
      c.dark_rate_total_cps =
          meta["detector_params"]["dark_rate_hz"].get<double>() * s.header.channel_count;
  }
  if (c.duration_s > 0.0) {
    c.pulses = static_cast<std::uint64_t>(
        std::floor(c.duration_s * 1e12 / static_cast<double>(s.header.sync_period_ps) * (1.0 + 1e-12)));
  } else {
    c.pulses = s.records.empty() ? 0 : s.records.back().nsync + 1;
    c.duration_s = static_cast<double>(c.pulses) * s.sync_period_s();
  }
  return c;
}

// ---------------------------------------------------------------------------
// analyze

struct DecayOutcome {
  DecayHistogram hist;
  std::optional<MultiExpFit> fit;
  std::string status = "ok";
  std::string message;
};

DecayOutcome analyze_decay(const PhotonStream& s, const AnalysisConfig& a) {
  DecayOutcome d;
  d.hist = decay_histogram(s, a.decay.bin_width_ps);
  MultiExpOptions mo;
  mo.n_components = a.decay.n_components;
  mo.fit_start_offset_ps = a.decay.fit_start_offset_ps;
  mo.restarts = a.decay.restarts;
  mo.objective = a.decay.objective == "poisson" ? Objective::poisson_mle : Objective::least_squares;
  mo.threads = thread_limit();
  try {
    d.fit = fit_multiexp(d.hist, mo);
    if (d.fit->resolved_exponential_counts < 1000.0) {
      d.status = to_string(ErrorCode::InsufficientCounts);
      d.message = "fewer than 1000 photons attributed to resolved exponential components";
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientCounts && e.code() != ErrorCode::FitDiverged) throw;
    d.status = to_string(e.code());
    d.message = e.what();
  }
  return d;
}

json decay_json(const DecayOutcome& d, const AnalysisConfig& a) {
  json j = {{"status", d.status},
            {"message", d.message},
            {"n_components", a.decay.n_components},
            {"objective", a.decay.objective},
            {"bin_width_ps", d.hist.bin_width_ps},
            {"t0_ps", d.hist.t0_ps},
            {"total_counts", d.hist.total_counts}};
  if (!d.fit) return j;
  const auto& f = *d.fit;
  json comps = json::array();
  for (const auto& c : f.components)
    comps.push_back({{"lifetime_ns", measured(c.lifetime_ns, c.lifetime_err_ns)},
                     {"amplitude_fraction", measured(c.amplitude_fraction, c.amplitude_fraction_err)},
                     {"photons", c.photons}});
  j["components"] = comps;
  j["background_per_bin"] = measured(f.background_per_bin, f.background_per_bin_err);
  j["fit_start_ps"] = f.fit_start_ps;
  j["fit_bins"] = f.fit_bins;
  j["fit_range_counts"] = f.fit_range_counts;
  j["exponential_counts"] = f.exponential_counts;
  j["resolved_exponential_counts"] = f.resolved_exponential_counts;
  j["background_counts"] = f.background_counts;
  j["best_restart"] = f.best_restart;
  j["merged_components"] = f.merged_components;
  j["fit"] = fit_report(f.fit);
  return j;
}

void analyze_into(const PhotonStream& s, const RunConfig& cfg, const Options& opt,
                  std::ostream& err, Bundle& b, json& summary) {
  const auto& a = cfg.analysis;
  const StreamContext ctx = stream_context(s);
  const double P_ps = static_cast<double>(s.header.sync_period_ps);

  // intensity trace and states
  progress(opt, err, "intensity trace");
  const auto trace = bin_intensity(s, a.trace_bin_s, ctx.duration_s);
  const auto occ = intensity_histogram(trace);
  const auto states = threshold_states_or_quantile(trace);
  {
    std::string csv = "bin,time_s,counts,state\n";
    for (std::size_t i = 0; i < trace.counts.size(); ++i)
      csv += std::to_string(i) + "," + fmt(trace.start_time_s + static_cast<double>(i) * trace.bin_width_s) +
             "," + std::to_string(trace.counts[i]) + "," + (states.bright[i] ? "bright" : "grey") + "\n";
    b.add("trace.csv", std::move(csv));
    std::string h = "counts_per_bin,occurrences\n";
    for (std::size_t c = 0; c < occ.occurrences.size(); ++c)
      h += std::to_string(c) + "," + std::to_string(occ.occurrences[c]) + "\n";
    b.add("intensity_hist.csv", std::move(h));

    Series ts;
    const std::size_t stride = std::max<std::size_t>(1, trace.counts.size() / 4000);
    for (std::size_t i = 0; i < trace.counts.size(); i += stride) {
      ts.x.push_back(static_cast<double>(i) * trace.bin_width_s);
      ts.y.push_back(trace.counts[i]);
    }
    b.add("trace.svg", svg_xy_plot({"Intensity trace", "time (s)", "counts per bin"}, {ts}));
    Series hs;
    for (std::size_t c = 0; c < occ.occurrences.size(); ++c) {
      hs.x.push_back(static_cast<double>(c));
      hs.y.push_back(static_cast<double>(occ.occurrences[c]));
    }
    b.add("intensity_hist.svg", svg_xy_plot({"Intensity occurrences", "counts per bin", "occurrences"}, {hs}));
  }

  // decay histogram and multi-exponential fit
  progress(opt, err, "decay fit");
  const DecayOutcome decay = analyze_decay(s, a);
  {
    std::string csv = "bin_start_ps,bin_end_ps,counts,model\n";
    Series data = make_series("data", "#444444", false);
    Series model = make_series("fit", "#d62728", true);
    for (std::size_t j = 0; j < decay.hist.counts.size(); ++j) {
      const double m = decay.fit ? multiexp_bin_model(*decay.fit, decay.hist, j) : 0.0;
      csv += fmt(decay.hist.bin_start_ps(j)) + "," + fmt(decay.hist.bin_end_ps(j)) + "," +
             std::to_string(decay.hist.counts[j]) + "," + fmt(m) + "\n";
      const double t_ns = 1e-3 * (0.5 * (decay.hist.bin_start_ps(j) + decay.hist.bin_end_ps(j)) - decay.hist.t0_ps);
      if (decay.hist.counts[j] > 0) {
        data.x.push_back(t_ns);
        data.y.push_back(static_cast<double>(decay.hist.counts[j]));
      }
      if (m > 0.0) {
        model.x.push_back(t_ns);
        model.y.push_back(m);
      }
    }
    b.add("decay.csv", std::move(csv));
    b.add_json("decay_fit.json", decay_json(decay, a));
    b.add("decay.svg", svg_xy_plot({"Decay", "delay after t0 (ns)", "counts", false, true}, {data, model}));
  }

  // g2 around zero delay
  progress(opt, err, "g2");
  G2Options go;
  go.n_side_peaks = a.g2.n_side_peaks;
  go.norm_side_min = a.g2.norm_side_min;
  go.norm_side_max = a.g2.norm_side_max;
  go.lag_bin_width_ps = a.g2.lag_bin_width_ps;
  go.pulse_count = ctx.pulses;
  std::string background_source = "config";
  if (a.g2.background_rate_cps) {
    go.background_rate_cps = *a.g2.background_rate_cps;
  } else if (ctx.dark_rate_total_cps) {
    go.background_rate_cps = *ctx.dark_rate_total_cps;
    background_source = "stream_metadata";
  } else if (decay.fit) {
    // a flat microtime floor is background uniform in time
    const double bins_per_period = P_ps / static_cast<double>(decay.hist.bin_width_ps);
    go.background_rate_cps = decay.fit->background_per_bin * bins_per_period / ctx.duration_s;
    background_source = "decay_floor";
  } else {
    background_source = "none";
  }
  const auto half_period = static_cast<std::int64_t>(s.header.sync_period_ps / 2);
  if (a.g2.intra_window_ps) {
    go.intra_window_ps = *a.g2.intra_window_ps;
  } else if (decay.fit && decay.status == "ok") {
    double mean_tau_ps = 0.0;
    for (const auto& c : decay.fit->components) mean_tau_ps += c.amplitude_fraction * c.lifetime_ns * 1e3;
    go.intra_window_ps = std::clamp<std::int64_t>(std::llround(5.0 * mean_tau_ps), 1, half_period);
  } else {
    go.intra_window_ps = half_period;
  }
  const auto g2 = g2_pulsed(s, go);
  {
    std::string csv = "lag_ps,counts\n";
    Series gs = make_series("", "#1f77b4", true);
    for (std::size_t i = 0; i < g2.counts.size(); ++i) {
      csv += std::to_string(g2.lag_of_bin(i)) + "," + std::to_string(g2.counts[i]) + "\n";
      gs.x.push_back(static_cast<double>(g2.lag_of_bin(i)) * 1e-3);
      gs.y.push_back(static_cast<double>(g2.counts[i]));
    }
    b.add("g2.csv", std::move(csv));
    b.add("g2.svg", svg_xy_plot({"Coincidences", "delay (ns)", "counts per lag bin"}, {gs}));
  }
  json peaks = json::array();
  double near_area = 0.0;
  for (const auto& p : g2.side_peaks) {
    peaks.push_back({{"k", p.k}, {"area", p.area}, {"sigma", std::sqrt(static_cast<double>(p.area))}});
    if (p.k == 1 || p.k == -1) near_area += static_cast<double>(p.area);
  }
  const double center = static_cast<double>(g2.center_peak_area);
  const double nearest_sigma =
      near_area > 0.0 ? g2.g2_zero_raw_nearest *
                            std::sqrt((center > 0 ? 1.0 / center : 0.0) + 1.0 / near_area)
                      : 0.0;

  // long-delay envelope
  progress(opt, err, "envelope");
  json env_json = json::array();
  std::string env_status = "ok", env_note;
  {
    const double tau_cap = ctx.duration_s / 10.0;
    double tau_max = a.envelope.tau_max_s;
    if (tau_max > tau_cap) {
      tau_max = tau_cap;
      env_note = "tau grid clipped to a tenth of the trace duration";
    }
    std::string csv = "tau_s,tau_eff_s,d_lo,d_hi,pairs,expected_pairs,value,poisson_sigma,sigma\n";
    Series es = make_series("", "#2ca02c", false);
    if (tau_max >= a.envelope.tau_min_s) {
      const auto taus = log_tau_grid(a.envelope.tau_min_s, tau_max, a.envelope.points_per_decade);
      EnvelopeOptions eo;
      eo.relative_bin_width = a.envelope.relative_bin_width;
      eo.pulse_count = ctx.pulses;
      const auto env = g2_envelope(s, taus, eo);
      for (std::size_t i = 0; i < env.taus_s.size(); ++i) {
        csv += fmt(env.taus_s[i]) + "," + fmt(env.tau_eff_s[i]) + "," + std::to_string(env.d_lo[i]) +
               "," + std::to_string(env.d_hi[i]) + "," + std::to_string(env.pairs[i]) + "," +
               fmt(env.expected_pairs[i]) + "," + fmt(env.values[i]) + "," +
               fmt(env.poisson_sigma[i]) + "," + fmt(env.one_sigma[i]) + "\n";
        env_json.push_back({{"tau_s", env.taus_s[i]},
                            {"tau_eff_s", env.tau_eff_s[i]},
                            {"g2", measured(env.values[i], env.one_sigma[i])},
                            {"poisson_sigma", env.poisson_sigma[i]},
                            {"pairs", env.pairs[i]}});
        es.x.push_back(env.taus_s[i]);
        es.y.push_back(env.values[i]);
        es.y_err.push_back(env.one_sigma[i]);
      }
    } else {
      env_status = to_string(ErrorCode::TraceTooShort);
      env_note = "trace shorter than 10 x the smallest envelope delay";
    }
    b.add("envelope.csv", std::move(csv));
    b.add("envelope.svg", svg_xy_plot({"Coincidence-peak envelope", "delay (s)", "g2", true, false}, {es}));
  }

  json g2j = {
      {"g2_zero_raw", measured(g2.g2_zero_raw, g2.g2_zero_raw_sigma)},
      {"g2_zero_raw_nearest", measured(g2.g2_zero_raw_nearest, nearest_sigma)},
      {"g2_zero_corrected", measured(g2.g2_zero_corrected, g2.g2_zero_corrected_sigma)},
      {"rho", g2.signal_fraction_rho},
      {"signal_rate_cps", g2.signal_rate_cps},
      {"background_rate_cps", g2.background_rate_cps},
      {"background_source", background_source},
      {"center_peak_area", measured(center, std::sqrt(center))},
      {"side_peaks", peaks},
      {"norm_side_range", {a.g2.norm_side_min, a.g2.norm_side_max}},
      {"intra_window_ps", g2.intra_window_ps},
      {"lag_bin_width_ps", g2.lag_bin_width_ps},
      {"sync_period_ps", g2.sync_period_ps},
      {"states",
       {{"threshold", states.threshold},
        {"low_mode", states.low_mode},
        {"high_mode", states.high_mode},
        {"on_fraction", states.on_fraction},
        {"quantile_fallback", states.quantile_fallback}}},
      {"envelope", {{"status", env_status}, {"note", env_note}, {"points", env_json}}}};
  b.add_json("g2_summary.json", g2j);

  // FLID and the intensity-lifetime correlation
  progress(opt, err, "FLID");
  FlidOptions fo;
  fo.bin_width_s = a.flid.bin_width_s;
  fo.lifetime_bins = a.flid.lifetime_bins;
  fo.intensity_bins = a.flid.intensity_bins;
  fo.lifetime_max_ns = a.flid.lifetime_max_ns;
  fo.span_s = ctx.duration_s;
  fo.t0_ps = decay.hist.t0_ps;
  fo.decay_bin_width_ps = a.decay.bin_width_ps;
  const auto flid = build_flid(s, fo);
  {
    std::string csv = "lifetime_lo_ns,lifetime_hi_ns";
    for (std::size_t i = 0; i < flid.intensity_bins(); ++i)
      csv += ",I_" + std::to_string(flid.intensity_edges[i]) + "_" + std::to_string(flid.intensity_edges[i + 1]);
    csv += "\n";
    std::vector<double> heat;
    for (std::size_t l = 0; l < flid.lifetime_bins(); ++l) {
      csv += fmt(flid.lifetime_edges_ns[l]) + "," + fmt(flid.lifetime_edges_ns[l + 1]);
      for (std::size_t i = 0; i < flid.intensity_bins(); ++i) {
        csv += "," + std::to_string(flid.at(l, i));
        heat.push_back(static_cast<double>(flid.at(l, i)));
      }
      csv += "\n";
    }
    csv += "below_photon_floor,";
    for (auto v : flid.flagged) csv += "," + std::to_string(v);
    csv += "\n";
    b.add("flid.csv", std::move(csv));
    // heatmap rows run along intensity: transpose to intensity-major
    std::vector<double> t(heat.size());
    const std::size_t nl = flid.lifetime_bins(), ni = flid.intensity_bins();
    for (std::size_t l = 0; l < nl; ++l)
      for (std::size_t i = 0; i < ni; ++i) t[i * nl + l] = heat[l * ni + i];
    std::vector<double> iedges(flid.intensity_edges.begin(), flid.intensity_edges.end());
    b.add("flid.svg", svg_heatmap({"FLID", "lifetime (ns)", "counts per bin"}, flid.lifetime_edges_ns,
                                  iedges, t));
  }
  const auto per_bin = bin_lifetimes(s, fo.bin_width_s, fo.span_s, fo.t0_ps, fo.decay_bin_width_ps);
  json cj = {{"bin_width_s", fo.bin_width_s}, {"t0_ps", per_bin.t0_ps}};
  try {
    const auto r = intensity_lifetime_correlation(per_bin);
    cj["status"] = "ok";
    cj["pearson_r"] = measured(r.pearson_r, r.pearson_r_sigma);
    cj["bins_used"] = r.bins_used;
    cj["bins_total"] = r.bins_total;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientBins) throw;
    cj["status"] = to_string(e.code());
    cj["message"] = e.what();
    cj["bins_total"] = per_bin.counts.size();
  }
  {
    std::vector<double> lm;
    for (auto v : flid.lifetime_marginal()) lm.push_back(static_cast<double>(v));
    json modes = json::array();
    for (auto m : find_modes(lm, 1)) modes.push_back(0.5 * (flid.lifetime_edges_ns[m] + flid.lifetime_edges_ns[m + 1]));
    cj["flid"] = {{"time_bins", flid.time_bins},
                  {"flagged_bins", std::accumulate(flid.flagged.begin(), flid.flagged.end(), std::uint64_t{0})},
                  {"unbounded_bins", flid.unbounded_bins},
                  {"lifetime_modes_ns", modes}};
    Series sc = make_series("", "#9467bd", false);
    const std::size_t stride = std::max<std::size_t>(1, per_bin.counts.size() / 5000);
    for (std::size_t i = 0; i < per_bin.counts.size(); i += stride) {
      if (!std::isfinite(per_bin.tau_ns[i]) || per_bin.unbounded[i]) continue;
      sc.x.push_back(per_bin.counts[i]);
      sc.y.push_back(per_bin.tau_ns[i]);
    }
    b.add("correlation.svg", svg_xy_plot({"Intensity vs lifetime", "counts per bin", "lifetime (ns)"}, {sc}));
  }
  b.add_json("correlation.json", cj);

  summary = {{"records", s.records.size()},
             {"duration_s", ctx.duration_s},
             {"g2_zero_raw", g2.g2_zero_raw},
             {"g2_zero_corrected", g2.g2_zero_corrected},
             {"decay_status", decay.status},
             {"correlation_status", cj["status"]}};
  if (cj.contains("pearson_r")) summary["pearson_r"] = cj["pearson_r"]["value"];
}

// ---------------------------------------------------------------------------
// saturate

struct PowerPoint {
  double fluence = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t records = 0;
  double rate_cps = 0.0;
  double sigma_cps = 0.0;
};

// Rate error from 100 equal batches, so blinking-induced variance is kept.
PowerPoint run_power_point(const RunConfig& cfg, double fluence, std::uint64_t seed) {
  const auto& sat = cfg.analysis.saturation;
  EmitterParams e = cfg.emitter;
  DetectorParams d = cfg.detector;
  SimConfig c = cfg.sim;
  e.mean_excitons_per_pulse = fluence / sat.p_sat;
  d.dark_rate_hz += sat.linear_background_cps * fluence / static_cast<double>(c.channel_count);
  if (sat.duration_s) c.duration_s = *sat.duration_s;
  c.seed = seed;
  const auto s = simulate_stream(e, d, c);
  PowerPoint p;
  p.fluence = fluence;
  p.seed = seed;
  p.records = s.records.size();
  p.rate_cps = static_cast<double>(p.records) / c.duration_s;
  constexpr int kBatches = 100;
  std::vector<double> batch(kBatches, 0.0);
  const double batch_s = c.duration_s / kBatches;
  for (const auto& r : s.records) {
    const double t = static_cast<double>(s.absolute_time_ps(r)) * 1e-12;
    batch[std::min<std::size_t>(static_cast<std::size_t>(t / batch_s), kBatches - 1)] += 1.0;
  }
  double mean = 0.0, var = 0.0;
  for (double x : batch) mean += x / batch_s / kBatches;
  for (double x : batch) var += std::pow(x / batch_s - mean, 2) / (kBatches - 1);
  // floor at the Poisson error of the whole run (guards all-zero batches)
  p.sigma_cps = std::max(std::sqrt(var / kBatches), std::sqrt(std::max<double>(p.records, 1)) / c.duration_s);
  return p;
}

}  // namespace

int cmd_simulate(const Options& opt, std::ostream& out, std::ostream& err) {
  return report_errors(
      [&] {
        const RunConfig cfg = resolve_config(opt, true);
        const fs::path path = opt.out ? *opt.out : fs::path(cfg.output.directory) / "stream.phst";
        progress(opt, err, "simulating " + fmt(cfg.sim.duration_s) + " s");
        PhotonStream s = simulate_stream(cfg.emitter, cfg.detector, cfg.sim);
        json meta = json::parse(s.header.metadata);
        meta["config"] = to_json(cfg);
        s.header.metadata = meta.dump();
        try {
          if (path.has_parent_path()) fs::create_directories(path.parent_path());
          write_stream_file(path.string(), s);
        } catch (...) {
          std::error_code ec;
          fs::remove(path, ec);
          throw;
        }
        std::vector<std::uint64_t> per_channel(s.header.channel_count, 0);
        for (const auto& r : s.records) ++per_channel[r.channel];
        const double n = static_cast<double>(s.records.size());
        json summary = {{"command", "simulate"},
                        {"output", path.string()},
                        {"seed", cfg.sim.seed},
                        {"duration_s", cfg.sim.duration_s},
                        {"records", s.records.size()},
                        {"channel_counts", per_channel},
                        {"mean_rate_cps", measured(n / cfg.sim.duration_s, std::sqrt(n) / cfg.sim.duration_s)}};
        try {
          summary["expected_rate_cps"] = expected_rate(cfg.emitter, cfg.detector, cfg.sim);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::UnsupportedBlinkingModel) throw;
          summary["expected_rate_cps"] = nullptr;
        }
        out << summary.dump(2) << "\n";
      },
      err);
}

int cmd_analyze(const fs::path& stream_path, const Options& opt, std::ostream& out, std::ostream& err) {
  return report_errors(
      [&] {
        const RunConfig cfg = resolve_config(opt, false);
        const fs::path dir = opt.out ? *opt.out : fs::path(cfg.output.directory);
        const PhotonStream s = read_stream_file(stream_path.string());
        Bundle b(cfg.output);
        json summary;
        analyze_into(s, cfg, opt, err, b, summary);
        b.write(dir);
        summary = {{"command", "analyze"}, {"output", dir.string()}, {"results", summary}};
        out << summary.dump(2) << "\n";
      },
      err);
}

int cmd_saturate(const Options& opt, std::ostream& out, std::ostream& err) {
  return report_errors(
      [&] {
        const RunConfig cfg = resolve_config(opt, true);
        const fs::path dir = opt.out ? *opt.out : fs::path(cfg.output.directory);
        const auto& sat = cfg.analysis.saturation;
        const std::size_t n = sat.fluences.size();
        std::vector<PowerPoint> points(n);
        std::vector<std::exception_ptr> failures(n);
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
          for (std::size_t i = next++; i < n; i = next++) {
            try {
              points[i] = run_power_point(cfg, sat.fluences[i], cfg.sim.seed + i);
            } catch (...) {
              failures[i] = std::current_exception();
            }
          }
        };
        const int workers = std::min<int>(thread_limit(), static_cast<int>(std::max<std::size_t>(n, 1)));
        progress(opt, err, "simulating " + std::to_string(n) + " fluence points on " +
                               std::to_string(workers) + " threads");
        std::vector<std::thread> pool;
        for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
        for (const auto& f : failures)
          if (f) std::rethrow_exception(f);
        for (const auto& p : points)
          progress(opt, err, "fluence " + fmt(p.fluence) + " : " + std::to_string(p.records) + " records, " +
                                 fmt(p.rate_cps) + " cps");

        std::vector<SaturationPoint> sp;
        for (const auto& p : points) sp.push_back({p.fluence, p.rate_cps, p.sigma_cps});
        const auto fit = fit_saturation(sp);

        Bundle b(cfg.output);
        std::string csv = "fluence,mean_excitons_per_pulse,seed,records,rate_cps,sigma_cps,model_cps\n";
        Series data = make_series("simulated", "#444444", false);
        Series model = make_series("fit", "#d62728", true);
        for (const auto& p : points) {
          csv += fmt(p.fluence) + "," + fmt(p.fluence / sat.p_sat) + "," + std::to_string(p.seed) + "," +
                 std::to_string(p.records) + "," + fmt(p.rate_cps) + "," + fmt(p.sigma_cps) + "," +
                 fmt(saturation_model(p.fluence, fit.A, fit.B, fit.P_sat)) + "\n";
          data.x.push_back(p.fluence);
          data.y.push_back(p.rate_cps);
          data.y_err.push_back(p.sigma_cps);
          if (!opt.quiet)
            err << "photonstat: fluence " << fmt(p.fluence) << " -> " << fmt(p.rate_cps) << " +- "
                << fmt(p.sigma_cps) << " cps\n";
        }
        const double pmax = *std::max_element(sat.fluences.begin(), sat.fluences.end());
        for (int k = 0; k <= 200; ++k) {
          const double P = pmax * k / 200.0;
          model.x.push_back(P);
          model.y.push_back(saturation_model(P, fit.A, fit.B, fit.P_sat));
        }
        b.add("saturation.csv", std::move(csv));
        const json fj = {{"A", measured(fit.A, fit.A_err)},
                         {"B", measured(fit.B, fit.B_err)},
                         {"P_sat", measured(fit.P_sat, fit.P_sat_err)},
                         {"planted", {{"p_sat", sat.p_sat}, {"linear_background_cps", sat.linear_background_cps}}},
                         {"points", n},
                         {"fit", fit_report(fit.fit)}};
        b.add_json("saturation_fit.json", fj);
        b.add("saturation.svg", svg_xy_plot({"Saturation", "fluence", "detected rate (cps)"}, {data, model}));
        b.write(dir);
        out << json{{"command", "saturate"},
                    {"output", dir.string()},
                    {"P_sat", fj["P_sat"]},
                    {"A", fj["A"]},
                    {"B", fj["B"]}}
                   .dump(2)
            << "\n";
      },
      err);
}

}  // namespace photonstat::app
