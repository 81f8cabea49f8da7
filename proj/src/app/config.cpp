#include <fstream>
#include <thread>

#include "photonstat/app.hpp"
#include "photonstat/error.hpp"

namespace photonstat::app {

namespace {

using nlohmann::json;

const char* const kModule = "cli";

[[noreturn]] void config_error(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::ConfigInvalid, kModule, "key \"" + key + "\": " + why);
}

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& section) {
  if (!j.is_object()) config_error(section, "expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) config_error(section.empty() ? key : section + "." + key, "unknown key");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(section + "." + key, "wrong type");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, std::optional<T>& out, const std::string& section) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read(j, key, v, section);
  out = v;
}

void check(bool ok, const std::string& key, const std::string& why) {
  if (!ok) config_error(key, why);
}

AnalysisConfig analysis_from_json(const json& j) {
  AnalysisConfig a;
  const std::string s = "analysis";
  reject_unknown(j, {"trace_bin_s", "g2", "envelope", "decay", "flid", "saturation"}, s);
  read(j, "trace_bin_s", a.trace_bin_s, s);
  if (j.contains("g2")) {
    const json& g = j.at("g2");
    const std::string gs = s + ".g2";
    reject_unknown(g,
                   {"intra_window_ps", "n_side_peaks", "norm_side_min", "norm_side_max",
                    "lag_bin_width_ps", "background_rate_cps"},
                   gs);
    read_opt(g, "intra_window_ps", a.g2.intra_window_ps, gs);
    read(g, "n_side_peaks", a.g2.n_side_peaks, gs);
    read(g, "norm_side_min", a.g2.norm_side_min, gs);
    read(g, "norm_side_max", a.g2.norm_side_max, gs);
    read(g, "lag_bin_width_ps", a.g2.lag_bin_width_ps, gs);
    read_opt(g, "background_rate_cps", a.g2.background_rate_cps, gs);
  }
  if (j.contains("envelope")) {
    const json& e = j.at("envelope");
    const std::string es = s + ".envelope";
    reject_unknown(e, {"tau_min_s", "tau_max_s", "points_per_decade", "relative_bin_width"}, es);
    read(e, "tau_min_s", a.envelope.tau_min_s, es);
    read(e, "tau_max_s", a.envelope.tau_max_s, es);
    read(e, "points_per_decade", a.envelope.points_per_decade, es);
    read(e, "relative_bin_width", a.envelope.relative_bin_width, es);
  }
  if (j.contains("decay")) {
    const json& d = j.at("decay");
    const std::string ds = s + ".decay";
    reject_unknown(d, {"bin_width_ps", "n_components", "fit_start_offset_ps", "restarts", "objective"},
                   ds);
    read(d, "bin_width_ps", a.decay.bin_width_ps, ds);
    read(d, "n_components", a.decay.n_components, ds);
    read(d, "fit_start_offset_ps", a.decay.fit_start_offset_ps, ds);
    read(d, "restarts", a.decay.restarts, ds);
    read(d, "objective", a.decay.objective, ds);
  }
  if (j.contains("flid")) {
    const json& f = j.at("flid");
    const std::string fs = s + ".flid";
    reject_unknown(f, {"bin_width_s", "lifetime_bins", "intensity_bins", "lifetime_max_ns"}, fs);
    read(f, "bin_width_s", a.flid.bin_width_s, fs);
    read(f, "lifetime_bins", a.flid.lifetime_bins, fs);
    read(f, "intensity_bins", a.flid.intensity_bins, fs);
    read(f, "lifetime_max_ns", a.flid.lifetime_max_ns, fs);
  }
  if (j.contains("saturation")) {
    const json& t = j.at("saturation");
    const std::string ts = s + ".saturation";
    reject_unknown(t, {"fluences", "p_sat", "linear_background_cps", "duration_s"}, ts);
    read(t, "fluences", a.saturation.fluences, ts);
    read(t, "p_sat", a.saturation.p_sat, ts);
    read(t, "linear_background_cps", a.saturation.linear_background_cps, ts);
    read_opt(t, "duration_s", a.saturation.duration_s, ts);
  }
  return a;
}

void validate(const AnalysisConfig& a, const SimConfig& sim) {
  const std::string s = "analysis.";
  check(a.trace_bin_s > 0.0, s + "trace_bin_s", "must be > 0");
  const auto P = static_cast<std::int64_t>(sim.sync_period_ps);
  if (a.g2.intra_window_ps)
    check(*a.g2.intra_window_ps > 0 && *a.g2.intra_window_ps <= P / 2, s + "g2.intra_window_ps",
          "must lie in (0, sync_period_ps / 2]");
  check(a.g2.n_side_peaks >= 1, s + "g2.n_side_peaks", "must be >= 1");
  check(a.g2.norm_side_min >= 1 && a.g2.norm_side_min <= a.g2.norm_side_max &&
            a.g2.norm_side_max <= a.g2.n_side_peaks,
        s + "g2.norm_side_min", "need 1 <= norm_side_min <= norm_side_max <= n_side_peaks");
  check(a.g2.lag_bin_width_ps > 0, s + "g2.lag_bin_width_ps", "must be > 0");
  if (a.g2.background_rate_cps)
    check(*a.g2.background_rate_cps >= 0.0, s + "g2.background_rate_cps", "must be >= 0");
  const double period_s = static_cast<double>(sim.sync_period_ps) * 1e-12;
  check(a.envelope.tau_min_s >= period_s * (1.0 - 1e-9), s + "envelope.tau_min_s",
        "must be at least one sync period");
  check(a.envelope.tau_max_s >= a.envelope.tau_min_s, s + "envelope.tau_max_s",
        "must be >= tau_min_s");
  check(a.envelope.points_per_decade >= 1, s + "envelope.points_per_decade", "must be >= 1");
  check(a.envelope.relative_bin_width > 0.0 && a.envelope.relative_bin_width < 1.0,
        s + "envelope.relative_bin_width", "must lie in (0, 1)");
  check(a.decay.bin_width_ps >= sim.resolution_ps, s + "decay.bin_width_ps",
        "must be >= the stream resolution");
  check(a.decay.n_components >= 1 && a.decay.n_components <= 4, s + "decay.n_components",
        "must lie in [1, 4]");
  check(a.decay.fit_start_offset_ps >= 0.0, s + "decay.fit_start_offset_ps", "must be >= 0");
  check(a.decay.restarts >= 0, s + "decay.restarts", "must be >= 0");
  check(a.decay.objective == "poisson" || a.decay.objective == "least_squares",
        s + "decay.objective", "must be \"poisson\" or \"least_squares\"");
  check(a.flid.bin_width_s > 0.0, s + "flid.bin_width_s", "must be > 0");
  check(a.flid.lifetime_bins >= 2, s + "flid.lifetime_bins", "must be >= 2");
  check(a.flid.intensity_bins >= 2, s + "flid.intensity_bins", "must be >= 2");
  check(a.flid.lifetime_max_ns > 0.0, s + "flid.lifetime_max_ns", "must be > 0");
  for (double f : a.saturation.fluences)
    check(std::isfinite(f) && f >= 0.0, s + "saturation.fluences", "fluences must be >= 0");
  check(a.saturation.p_sat > 0.0, s + "saturation.p_sat", "must be > 0");
  check(a.saturation.linear_background_cps >= 0.0, s + "saturation.linear_background_cps",
        "must be >= 0");
  if (a.saturation.duration_s)
    check(*a.saturation.duration_s > 0.0, s + "saturation.duration_s", "must be > 0");
}

// Module validators raise InvalidParams; a config surfaces them as
// ConfigInvalid under the owning section.
template <typename T>
void validate_section(const T& params, const std::string& section) {
  try {
    photonstat::validate(params);
  } catch (const Error& e) {
    config_error(section, e.what());
  }
}

}  // namespace

bool OutputConfig::wants(const std::string& format) const {
  return std::find(formats.begin(), formats.end(), format) != formats.end();
}

RunConfig config_from_json(const json& j) {
  reject_unknown(j, {"emitter", "detector", "sim", "analysis", "output"}, "");
  RunConfig c;
  if (j.contains("emitter")) c.emitter = emitter_from_json(j.at("emitter"));
  if (j.contains("detector")) c.detector = detector_from_json(j.at("detector"));
  if (j.contains("sim")) c.sim = sim_from_json(j.at("sim"));
  if (j.contains("analysis")) c.analysis = analysis_from_json(j.at("analysis"));
  if (j.contains("output")) {
    const json& o = j.at("output");
    reject_unknown(o, {"directory", "formats"}, "output");
    read(o, "directory", c.output.directory, "output");
    read(o, "formats", c.output.formats, "output");
    for (const auto& f : c.output.formats)
      check(f == "csv" || f == "json" || f == "svg", "output.formats",
            "unknown format \"" + f + "\"");
  }
  validate_section(c.emitter, "emitter");
  validate_section(c.detector, "detector");
  validate_section(c.sim, "sim");
  validate(c.analysis, c.sim);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, kModule, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigInvalid, kModule,
                "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

json to_json(const RunConfig& c) {
  const auto& a = c.analysis;
  json g2 = {{"n_side_peaks", a.g2.n_side_peaks},
             {"norm_side_min", a.g2.norm_side_min},
             {"norm_side_max", a.g2.norm_side_max},
             {"lag_bin_width_ps", a.g2.lag_bin_width_ps}};
  if (a.g2.intra_window_ps) g2["intra_window_ps"] = *a.g2.intra_window_ps;
  if (a.g2.background_rate_cps) g2["background_rate_cps"] = *a.g2.background_rate_cps;
  json sat = {{"fluences", a.saturation.fluences},
              {"p_sat", a.saturation.p_sat},
              {"linear_background_cps", a.saturation.linear_background_cps}};
  if (a.saturation.duration_s) sat["duration_s"] = *a.saturation.duration_s;
  return {
      {"emitter", photonstat::to_json(c.emitter)},
      {"detector", photonstat::to_json(c.detector)},
      {"sim", photonstat::to_json(c.sim)},
      {"analysis",
       {{"trace_bin_s", a.trace_bin_s},
        {"g2", g2},
        {"envelope",
         {{"tau_min_s", a.envelope.tau_min_s},
          {"tau_max_s", a.envelope.tau_max_s},
          {"points_per_decade", a.envelope.points_per_decade},
          {"relative_bin_width", a.envelope.relative_bin_width}}},
        {"decay",
         {{"bin_width_ps", a.decay.bin_width_ps},
          {"n_components", a.decay.n_components},
          {"fit_start_offset_ps", a.decay.fit_start_offset_ps},
          {"restarts", a.decay.restarts},
          {"objective", a.decay.objective}}},
        {"flid",
         {{"bin_width_s", a.flid.bin_width_s},
          {"lifetime_bins", a.flid.lifetime_bins},
          {"intensity_bins", a.flid.intensity_bins},
          {"lifetime_max_ns", a.flid.lifetime_max_ns}}},
        {"saturation", sat}}},
      {"output", {{"directory", c.output.directory}, {"formats", c.output.formats}}}};
}

int thread_limit() {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PHOTONSTAT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return std::min<int>(n, static_cast<int>(hw) * 4);
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::ConfigInvalid, kModule,
                "PHOTONSTAT_THREADS must be a positive integer, got \"" + std::string(env) + "\"");
  }
  return static_cast<int>(hw);
}

}  // namespace photonstat::app
