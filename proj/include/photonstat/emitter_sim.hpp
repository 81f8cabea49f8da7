#pragma once

// Monte Carlo photon-stream generator for a pulsed-excited nanocrystal with
// Auger-quenched multi-excitons, two-state (neutral/charged) blinking,
// HBT detection and dark counts.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "json.hpp"
#include "photonstat/photon_stream.hpp"

namespace photonstat {

struct NoBlinking {
  bool operator==(const NoBlinking&) const = default;
};

/// Neutral (bright) <-> charged (grey) switching with exponential dwell
/// times. k_on is the charged->neutral rate, k_off the neutral->charged rate.
struct TelegraphBlinking {
  double k_on_per_s = 0.0;
  double k_off_per_s = 0.0;
  bool operator==(const TelegraphBlinking&) const = default;
};

/// Dwell times drawn from truncated Pareto laws p(t) ~ t^-alpha on [t_min, t_max].
struct PowerLawBlinking {
  double alpha_on = 1.5;
  double alpha_off = 1.5;
  double t_min_s = 1e-4;
  double t_max_s = 10.0;
  bool operator==(const PowerLawBlinking&) const = default;
};

using BlinkingModel = std::variant<NoBlinking, TelegraphBlinking, PowerLawBlinking>;

struct EmitterParams {
  double mean_excitons_per_pulse = 0.25;  // <N> = P / P_sat
  double tau_exciton_ns = 15.3;
  double qy_exciton = 0.5;
  double tau_trion_ns = 2.8;
  double qy_trion = 0.1;
  double qy_biexciton = 0.0;
  std::optional<double> tau_biexciton_ns;  // defaults to tau_exciton_ns / 4
  BlinkingModel blinking = NoBlinking{};

  double biexciton_lifetime_ns() const {
    return tau_biexciton_ns.value_or(tau_exciton_ns / 4.0);
  }
  bool operator==(const EmitterParams&) const = default;
};

struct DetectorParams {
  double efficiency_total = 0.05;
  double split_ratio = 0.5;  // probability of routing to channel 0
  double jitter_sigma_ps = 0.0;
  double dead_time_ns = 0.0;
  double dark_rate_hz = 0.0;  // per channel
  // Fixed cable delay added to every emitter photon; keeps the jitter tail
  // from wrapping into the end of the previous sync period.
  double irf_offset_ps = 0.0;
  bool operator==(const DetectorParams&) const = default;
};

struct SimConfig {
  double duration_s = 1.0;
  std::uint64_t sync_period_ps = kDefaultSyncPeriodPs;
  std::uint32_t resolution_ps = kDefaultResolutionPs;
  std::uint64_t seed = 0;
  std::uint8_t channel_count = 2;

  std::uint64_t pulse_count() const;
  bool operator==(const SimConfig&) const = default;
};

void validate(const EmitterParams& p);
void validate(const DetectorParams& p);
void validate(const SimConfig& p);

PhotonStream simulate_stream(const EmitterParams& emitter, const DetectorParams& detector,
                             const SimConfig& cfg);

/// Stationary occupancy of the neutral state (1 without blinking).
double neutral_occupancy(const BlinkingModel& model);

/// Expected detected emitter rates while the emitter sits in each state,
/// excluding dark counts. Dead time is not accounted for.
struct StateRates {
  double neutral_cps = 0.0;
  double charged_cps = 0.0;
  double dark_cps = 0.0;  // summed over channels
  double p_neutral = 1.0;
};
StateRates expected_state_rates(const EmitterParams& emitter, const DetectorParams& detector,
                                const SimConfig& cfg);

/// Closed-form mean detected rate (all channels). Throws
/// UnsupportedBlinkingModel for power-law blinking.
double expected_rate(const EmitterParams& emitter, const DetectorParams& detector,
                     const SimConfig& cfg);

// JSON (de)serialization. Parsing is strict: unknown keys raise ConfigInvalid
// naming the offending key, missing keys keep their defaults.
nlohmann::json to_json(const EmitterParams& p);
nlohmann::json to_json(const DetectorParams& p);
nlohmann::json to_json(const SimConfig& p);
EmitterParams emitter_from_json(const nlohmann::json& j);
DetectorParams detector_from_json(const nlohmann::json& j);
SimConfig sim_from_json(const nlohmann::json& j);

/// Header metadata document embedded by simulate_stream.
std::string simulation_metadata(const EmitterParams& emitter, const DetectorParams& detector,
                                const SimConfig& cfg);

}  // namespace photonstat
