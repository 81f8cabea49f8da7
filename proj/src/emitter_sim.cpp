#include "photonstat/emitter_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "photonstat/error.hpp"
#include "photonstat/random.hpp"

namespace photonstat {
namespace {

constexpr char kModule[] = "emitter_sim";

[[noreturn]] void invalid(const std::string& msg) {
  throw Error(ErrorCode::InvalidParams, kModule, msg);
}

void require(bool ok, const std::string& msg) {
  if (!ok) invalid(msg);
}

bool in_unit(double x) { return x >= 0.0 && x <= 1.0; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double truncated_pareto(Rng& rng, double alpha, double t_min, double t_max) {
  const double a = 1.0 - alpha;
  const double lo = std::pow(t_min, a);
  const double hi = std::pow(t_max, a);
  return std::pow(lo + rng.uniform() * (hi - lo), 1.0 / a);
}

double truncated_pareto_mean(double alpha, double t_min, double t_max) {
  // Normalised moments of t^-alpha on [t_min, t_max]; alpha in (1, 3) so
  // only alpha == 2 needs the logarithmic branch.
  const double norm = (std::pow(t_min, 1.0 - alpha) - std::pow(t_max, 1.0 - alpha)) / (alpha - 1.0);
  const double first = std::abs(alpha - 2.0) < 1e-12
                           ? std::log(t_max / t_min)
                           : (std::pow(t_max, 2.0 - alpha) - std::pow(t_min, 2.0 - alpha)) / (2.0 - alpha);
  return first / norm;
}

// Two-state process queried at nondecreasing times.
class BlinkingProcess {
public:
  BlinkingProcess(const BlinkingModel& model, std::uint64_t seed) : model_(model), rng_(seed) {
    if (std::holds_alternative<NoBlinking>(model_)) {
      next_switch_s_ = std::numeric_limits<double>::infinity();
      return;
    }
    neutral_ = rng_.bernoulli(neutral_occupancy(model_));
    next_switch_s_ = dwell();
  }

  bool neutral_at(double t_s) {
    while (t_s >= next_switch_s_) {
      neutral_ = !neutral_;
      next_switch_s_ += dwell();
    }
    return neutral_;
  }

private:
  double dwell() {
    if (const auto* tg = std::get_if<TelegraphBlinking>(&model_))
      return rng_.exponential(1.0 / (neutral_ ? tg->k_off_per_s : tg->k_on_per_s));
    const auto& pl = std::get<PowerLawBlinking>(model_);
    return truncated_pareto(rng_, neutral_ ? pl.alpha_on : pl.alpha_off, pl.t_min_s, pl.t_max_s);
  }

  BlinkingModel model_;
  Rng rng_;
  bool neutral_ = true;
  double next_switch_s_ = 0.0;
};

struct Event {
  std::uint64_t t_ps;
  std::uint8_t channel;
};

class Detector {
public:
  Detector(const DetectorParams& d, const SimConfig& cfg, std::uint64_t seed)
      : d_(d),
        rng_(seed),
        period_(cfg.sync_period_ps),
        resolution_(cfg.resolution_ps),
        span_ps_(cfg.pulse_count() * cfg.sync_period_ps),
        channels_(cfg.channel_count) {}

  // `emission_ps` is the absolute emission time; the photon has already
  // passed the detection-efficiency draw.
  void record(double emission_ps, std::vector<Event>& out) {
    const std::uint8_t ch =
        channels_ == 1 ? 0 : static_cast<std::uint8_t>(rng_.bernoulli(d_.split_ratio) ? 0 : 1);
    double t = emission_ps + d_.irf_offset_ps;
    if (d_.jitter_sigma_ps > 0.0) t += d_.jitter_sigma_ps * rng_.normal();
    if (t < 0.0) t = 0.0;
    push(static_cast<std::uint64_t>(t), ch, out);
  }

  void push(std::uint64_t t_ps, std::uint8_t ch, std::vector<Event>& out) const {
    if (t_ps >= span_ps_) return;
    const std::uint64_t nsync = t_ps / period_;
    const std::uint64_t micro = (t_ps - nsync * period_) / resolution_;
    out.push_back({nsync * period_ + micro * resolution_, ch});
  }

  std::uint64_t span_ps() const { return span_ps_; }

private:
  DetectorParams d_;
  Rng rng_;
  std::uint64_t period_;
  std::uint64_t resolution_;
  std::uint64_t span_ps_;
  std::uint8_t channels_;
};

}  // namespace

std::uint64_t SimConfig::pulse_count() const {
  const double pulses = duration_s * 1e12 / static_cast<double>(sync_period_ps);
  return static_cast<std::uint64_t>(std::floor(pulses * (1.0 + 1e-12)));
}

void validate(const EmitterParams& p) {
  require(std::isfinite(p.mean_excitons_per_pulse) && p.mean_excitons_per_pulse >= 0.0,
          "mean_excitons_per_pulse must be >= 0");
  require(p.tau_exciton_ns > 0.0, "tau_exciton_ns must be > 0");
  require(p.tau_trion_ns > 0.0, "tau_trion_ns must be > 0");
  require(!p.tau_biexciton_ns || *p.tau_biexciton_ns > 0.0, "tau_biexciton_ns must be > 0");
  require(in_unit(p.qy_exciton), "qy_exciton must be in [0, 1]");
  require(in_unit(p.qy_trion), "qy_trion must be in [0, 1]");
  require(in_unit(p.qy_biexciton), "qy_biexciton must be in [0, 1]");
  if (const auto* tg = std::get_if<TelegraphBlinking>(&p.blinking)) {
    require(tg->k_on_per_s > 0.0 && tg->k_off_per_s > 0.0, "telegraph rates must be > 0");
  } else if (const auto* pl = std::get_if<PowerLawBlinking>(&p.blinking)) {
    require(pl->alpha_on > 1.0 && pl->alpha_on < 3.0 && pl->alpha_off > 1.0 && pl->alpha_off < 3.0,
            "power-law exponents must lie in (1, 3)");
    require(pl->t_min_s > 0.0 && pl->t_min_s < pl->t_max_s, "power law needs 0 < t_min < t_max");
  }
}

void validate(const DetectorParams& p) {
  require(in_unit(p.efficiency_total), "efficiency_total must be in [0, 1]");
  require(in_unit(p.split_ratio), "split_ratio must be in [0, 1]");
  require(p.jitter_sigma_ps >= 0.0, "jitter_sigma_ps must be >= 0");
  require(p.dead_time_ns >= 0.0, "dead_time_ns must be >= 0");
  require(p.dark_rate_hz >= 0.0, "dark_rate_hz must be >= 0");
  require(p.irf_offset_ps >= 0.0, "irf_offset_ps must be >= 0");
}

void validate(const SimConfig& p) {
  require(std::isfinite(p.duration_s) && p.duration_s > 0.0, "duration_s must be > 0");
  require(p.sync_period_ps > 0 && p.resolution_ps > 0, "sync period and resolution must be > 0");
  require(p.sync_period_ps >= p.resolution_ps, "sync_period_ps must be >= resolution_ps");
  require(p.sync_period_ps / p.resolution_ps <= kMicrotimeLimit,
          "sync period spans more than 2^28 resolution units");
  require(p.channel_count == 1 || p.channel_count == 2, "channel_count must be 1 or 2");
  require(p.pulse_count() > 0, "duration shorter than one sync period");
}

double neutral_occupancy(const BlinkingModel& model) {
  if (const auto* tg = std::get_if<TelegraphBlinking>(&model))
    return tg->k_on_per_s / (tg->k_on_per_s + tg->k_off_per_s);
  if (const auto* pl = std::get_if<PowerLawBlinking>(&model)) {
    const double on = truncated_pareto_mean(pl->alpha_on, pl->t_min_s, pl->t_max_s);
    const double off = truncated_pareto_mean(pl->alpha_off, pl->t_min_s, pl->t_max_s);
    return on / (on + off);
  }
  return 1.0;
}

PhotonStream simulate_stream(const EmitterParams& e, const DetectorParams& d,
                             const SimConfig& cfg) {
  validate(e);
  validate(d);
  validate(cfg);

  Rng excitation(splitmix64(splitmix64(cfg.seed) + 1));
  BlinkingProcess blinking(e.blinking, splitmix64(splitmix64(cfg.seed) + 2));
  Detector detector(d, cfg, splitmix64(splitmix64(cfg.seed) + 3));
  Rng dark(splitmix64(splitmix64(cfg.seed) + 4));

  const std::uint64_t n_pulses = cfg.pulse_count();
  const double period_ps = static_cast<double>(cfg.sync_period_ps);
  const double period_s = period_ps * 1e-12;
  const double n_mean = e.mean_excitons_per_pulse;
  const double p_excited = -std::expm1(-n_mean);
  const double p_multi =
      p_excited > 0.0 ? std::max(0.0, (p_excited - n_mean * std::exp(-n_mean)) / p_excited) : 0.0;
  const double tau_x = e.tau_exciton_ns * 1e3;
  const double tau_xx = e.biexciton_lifetime_ns() * 1e3;
  const double tau_tr = e.tau_trion_ns * 1e3;
  // Emission and detection are independent thinnings, so they fold into a
  // single draw per recombination step.
  const double det_x = e.qy_exciton * d.efficiency_total;
  const double det_xx = e.qy_biexciton * d.efficiency_total;
  const double det_tr = e.qy_trion * d.efficiency_total;

  std::vector<Event> events;
  const StateRates rates = expected_state_rates(e, d, cfg);
  const double peak_cps = std::max(rates.neutral_cps, rates.charged_cps) + rates.dark_cps;
  events.reserve(static_cast<std::size_t>(std::min(peak_cps * cfg.duration_s * 1.1 + 1024.0, 5e8)));

  if (p_excited > 0.0) {
    std::uint64_t pulse = excitation.geometric(p_excited);
    while (pulse < n_pulses) {
      const double t0 = static_cast<double>(pulse) * period_ps;
      if (blinking.neutral_at(static_cast<double>(pulse) * period_s)) {
        double delay = 0.0;
        if (excitation.bernoulli(p_multi)) {
          delay = excitation.exponential(tau_xx);
          if (excitation.bernoulli(det_xx)) detector.record(t0 + delay, events);
        }
        if (excitation.bernoulli(det_x)) {
          delay += excitation.exponential(tau_x);
          detector.record(t0 + delay, events);
        }
      } else if (excitation.bernoulli(det_tr)) {
        detector.record(t0 + excitation.exponential(tau_tr), events);
      }
      pulse += 1 + excitation.geometric(p_excited);
    }
  }

  if (d.dark_rate_hz > 0.0) {
    const double mean_gap_ps = 1e12 / d.dark_rate_hz;
    const double span = static_cast<double>(detector.span_ps());
    for (std::uint8_t ch = 0; ch < cfg.channel_count; ++ch) {
      double t = dark.exponential(mean_gap_ps);
      while (t < span) {
        detector.push(static_cast<std::uint64_t>(t), ch, events);
        t += dark.exponential(mean_gap_ps);
      }
    }
  }

  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return a.t_ps != b.t_ps ? a.t_ps < b.t_ps : a.channel < b.channel;
  });

  PhotonStream stream;
  stream.header.sync_period_ps = cfg.sync_period_ps;
  stream.header.resolution_ps = cfg.resolution_ps;
  stream.header.channel_count = cfg.channel_count;
  stream.header.metadata = simulation_metadata(e, d, cfg);
  stream.records.reserve(events.size());

  const auto dead_ps = static_cast<std::uint64_t>(std::llround(d.dead_time_ns * 1e3));
  std::uint64_t last[2] = {0, 0};
  bool seen[2] = {false, false};
  for (const Event& ev : events) {
    if (seen[ev.channel] && ev.t_ps - last[ev.channel] < dead_ps) continue;
    seen[ev.channel] = true;
    last[ev.channel] = ev.t_ps;
    const std::uint64_t nsync = ev.t_ps / cfg.sync_period_ps;
    const auto micro =
        static_cast<std::uint32_t>((ev.t_ps - nsync * cfg.sync_period_ps) / cfg.resolution_ps);
    stream.records.push_back({ev.channel, nsync, micro});
  }
  stream.header.record_count = stream.records.size();
  return stream;
}

StateRates expected_state_rates(const EmitterParams& e, const DetectorParams& d,
                                const SimConfig& cfg) {
  validate(e);
  validate(d);
  validate(cfg);
  const double rep = 1e12 / static_cast<double>(cfg.sync_period_ps);
  const double n = e.mean_excitons_per_pulse;
  const double p1 = -std::expm1(-n);
  const double p2 = std::max(0.0, p1 - n * std::exp(-n));
  StateRates r;
  r.neutral_cps = rep * d.efficiency_total * (p1 * e.qy_exciton + p2 * e.qy_biexciton);
  r.charged_cps = rep * d.efficiency_total * p1 * e.qy_trion;
  r.dark_cps = d.dark_rate_hz * cfg.channel_count;
  r.p_neutral = neutral_occupancy(e.blinking);
  return r;
}

double expected_rate(const EmitterParams& e, const DetectorParams& d, const SimConfig& cfg) {
  if (std::holds_alternative<PowerLawBlinking>(e.blinking))
    throw Error(ErrorCode::UnsupportedBlinkingModel, kModule,
                "power-law blinking has no closed-form stationary rate");
  const StateRates r = expected_state_rates(e, d, cfg);
  return r.p_neutral * r.neutral_cps + (1.0 - r.p_neutral) * r.charged_cps + r.dark_cps;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::ConfigInvalid, kModule, "key \"" + key + "\": " + why);
}

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& section) {
  if (!j.is_object()) config_error(section, "expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) config_error(section + "." + key, "unknown key");
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

}  // namespace

json to_json(const EmitterParams& p) {
  json j = {{"mean_excitons_per_pulse", p.mean_excitons_per_pulse},
            {"tau_exciton_ns", p.tau_exciton_ns},
            {"qy_exciton", p.qy_exciton},
            {"tau_trion_ns", p.tau_trion_ns},
            {"qy_trion", p.qy_trion},
            {"qy_biexciton", p.qy_biexciton},
            {"tau_biexciton_ns", p.biexciton_lifetime_ns()}};
  if (const auto* tg = std::get_if<TelegraphBlinking>(&p.blinking)) {
    j["blinking"] = {{"model", "telegraph"},
                     {"k_on_per_s", tg->k_on_per_s},
                     {"k_off_per_s", tg->k_off_per_s}};
  } else if (const auto* pl = std::get_if<PowerLawBlinking>(&p.blinking)) {
    j["blinking"] = {{"model", "power_law"},
                     {"alpha_on", pl->alpha_on},
                     {"alpha_off", pl->alpha_off},
                     {"t_min_s", pl->t_min_s},
                     {"t_max_s", pl->t_max_s}};
  } else {
    j["blinking"] = {{"model", "none"}};
  }
  return j;
}

json to_json(const DetectorParams& p) {
  return {{"efficiency_total", p.efficiency_total}, {"split_ratio", p.split_ratio},
          {"jitter_sigma_ps", p.jitter_sigma_ps},   {"dead_time_ns", p.dead_time_ns},
          {"dark_rate_hz", p.dark_rate_hz},         {"irf_offset_ps", p.irf_offset_ps}};
}

json to_json(const SimConfig& p) {
  return {{"duration_s", p.duration_s},       {"sync_period_ps", p.sync_period_ps},
          {"resolution_ps", p.resolution_ps}, {"seed", p.seed},
          {"channel_count", p.channel_count}};
}

EmitterParams emitter_from_json(const json& j) {
  const std::string s = "emitter";
  reject_unknown(j,
                 {"mean_excitons_per_pulse", "tau_exciton_ns", "qy_exciton", "tau_trion_ns",
                  "qy_trion", "qy_biexciton", "tau_biexciton_ns", "blinking"},
                 s);
  EmitterParams p;
  read(j, "mean_excitons_per_pulse", p.mean_excitons_per_pulse, s);
  read(j, "tau_exciton_ns", p.tau_exciton_ns, s);
  read(j, "qy_exciton", p.qy_exciton, s);
  read(j, "tau_trion_ns", p.tau_trion_ns, s);
  read(j, "qy_trion", p.qy_trion, s);
  read(j, "qy_biexciton", p.qy_biexciton, s);
  if (j.contains("tau_biexciton_ns")) {
    double v = 0.0;
    read(j, "tau_biexciton_ns", v, s);
    p.tau_biexciton_ns = v;
  }
  if (j.contains("blinking")) {
    const json& b = j.at("blinking");
    const std::string bs = s + ".blinking";
    if (!b.is_object() || !b.contains("model")) config_error(bs, "needs a \"model\" field");
    std::string model;
    read(b, "model", model, bs);
    if (model == "none") {
      reject_unknown(b, {"model"}, bs);
      p.blinking = NoBlinking{};
    } else if (model == "telegraph") {
      reject_unknown(b, {"model", "k_on_per_s", "k_off_per_s"}, bs);
      TelegraphBlinking tg;
      read(b, "k_on_per_s", tg.k_on_per_s, bs);
      read(b, "k_off_per_s", tg.k_off_per_s, bs);
      p.blinking = tg;
    } else if (model == "power_law") {
      reject_unknown(b, {"model", "alpha_on", "alpha_off", "t_min_s", "t_max_s"}, bs);
      PowerLawBlinking pl;
      read(b, "alpha_on", pl.alpha_on, bs);
      read(b, "alpha_off", pl.alpha_off, bs);
      read(b, "t_min_s", pl.t_min_s, bs);
      read(b, "t_max_s", pl.t_max_s, bs);
      p.blinking = pl;
    } else {
      config_error(bs + ".model", "must be one of none, telegraph, power_law");
    }
  }
  return p;
}

DetectorParams detector_from_json(const json& j) {
  const std::string s = "detector";
  reject_unknown(j,
                 {"efficiency_total", "split_ratio", "jitter_sigma_ps", "dead_time_ns",
                  "dark_rate_hz", "irf_offset_ps"},
                 s);
  DetectorParams p;
  read(j, "efficiency_total", p.efficiency_total, s);
  read(j, "split_ratio", p.split_ratio, s);
  read(j, "jitter_sigma_ps", p.jitter_sigma_ps, s);
  read(j, "dead_time_ns", p.dead_time_ns, s);
  read(j, "dark_rate_hz", p.dark_rate_hz, s);
  read(j, "irf_offset_ps", p.irf_offset_ps, s);
  return p;
}

SimConfig sim_from_json(const json& j) {
  const std::string s = "sim";
  reject_unknown(j, {"duration_s", "sync_period_ps", "resolution_ps", "seed", "channel_count"}, s);
  SimConfig p;
  read(j, "duration_s", p.duration_s, s);
  read(j, "sync_period_ps", p.sync_period_ps, s);
  read(j, "resolution_ps", p.resolution_ps, s);
  read(j, "seed", p.seed, s);
  read(j, "channel_count", p.channel_count, s);
  return p;
}

std::string simulation_metadata(const EmitterParams& e, const DetectorParams& d,
                                const SimConfig& cfg) {
  const json meta = {{"emitter_params", to_json(e)},
                     {"detector_params", to_json(d)},
                     {"sim_params", to_json(cfg)},
                     {"seed", cfg.seed}};
  return meta.dump();
}

}  // namespace photonstat
