#pragma once

#include "evrec/charging.hpp"
#include "evrec/rng.hpp"
#include "evrec/scenario.hpp"
#include "evrec/traffic.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <vector>

namespace evrec::env {

using traffic::Seconds;

/// Scale applied to waiting times in the station features.
inline constexpr double kWaitScale = 1800.0;

/// Aggregate charging load at one instant.
struct LoadSample {
    Seconds t = 0;
    std::vector<double> cs_load_kw;
    double total_kw = 0.0;
};

struct StepTrace {
    int step = 0;
    int vehicle = 0;
    Seconds t_start = 0;
    Seconds t_end = 0;
    int action = 0;
    int applied = 0;
    bool followed = true;
    double reward = 0.0;
    double cost = 0.0;
    bool final = false;
    Seconds ticks = 0;
    long long loaded_sum = 0;
    std::size_t peak = 0;  ///< index into candidates
    std::vector<LoadSample> candidates;
};

struct MinuteSample {
    Seconds t = 0;
    double setpoint_kw = 0.0;
    std::vector<int> occupancy;  ///< n^q + n^c per station
    std::vector<double> cs_load_kw;
};

struct DroopRecord {
    int interval = 0;
    Seconds t = 0;
    double v_bar = 1.0;
    double setpoint_kw = 0.0;
    double peak_load_kw = 0.0;
};

/// Slow-timescale observation for the demand predictor.
struct Snapshot {
    Seconds t = 0;
    std::vector<double> features;  ///< normalized station features, 9 per station
    std::vector<double> demand;    ///< mean occupancy per station over the last step
};

struct StepOutcome {
    double reward = 0.0;
    double cost = 0.0;
    bool done = false;
    std::vector<double> state;  ///< empty when done
};

struct EpisodeMetrics {
    double ttt_s = 0.0;
    double cvv = 0.0;
    double wct_min = 0.0;
    bool wct_defined = false;
    int steps = 0;
    int stranded = 0;
    int vehicles = 0;
    int evs = 0;
    Seconds end_time = 0;
};

/// Road-network distance (m) from every node to every station.
[[nodiscard]] std::vector<std::vector<double>> station_distances(Scenario const& scenario);

/// Closest station by shortest-path distance; ties go to the smallest station id.
[[nodiscard]] int greedy_station(Scenario const& scenario,
                                 std::vector<std::vector<double>> const& distances, int node);

/// Mean of (n^q + n^c) per station over the given samples.
[[nodiscard]] std::vector<double> average_demand(std::span<MinuteSample const> samples,
                                                 std::size_t stations);

[[nodiscard]] double segment_reward(RewardParams const& params, double loaded_mean_or_ttt,
                                    bool final);

class ChargingEnv {
public:
    explicit ChargingEnv(Scenario const& scenario);

    /// Simulates warm-up and returns the state at the first control-phase request.
    std::vector<double> reset(std::uint64_t seed);

    /// Applies a station choice for the pending request and runs to the next one.
    StepOutcome step(int action);

    void set_compliance(double rate);
    [[nodiscard]] double compliance() const noexcept { return compliance_; }
    void set_event_log(bool on) { log_events_ = on; }

    [[nodiscard]] bool done() const noexcept { return finished_; }
    [[nodiscard]] std::size_t state_dim() const;
    [[nodiscard]] int action_count() const { return static_cast<int>(scenario_->station_count()); }
    [[nodiscard]] Seconds now() const noexcept { return t_; }
    [[nodiscard]] int current_vehicle() const;
    [[nodiscard]] int greedy_action() const;
    [[nodiscard]] std::vector<double> observe() const;

    /// Only valid once the episode is over.
    [[nodiscard]] EpisodeMetrics metrics() const;
    /// Σ over ticks of loaded vehicles.
    [[nodiscard]] long long tick_ttt() const noexcept { return tick_ttt_; }

    [[nodiscard]] Scenario const& scenario() const noexcept { return *scenario_; }
    [[nodiscard]] traffic::TrafficState const& traffic() const noexcept { return traffic_; }
    [[nodiscard]] std::vector<charging::ChargingStation> const& stations() const noexcept {
        return stations_;
    }
    [[nodiscard]] std::vector<StepTrace> const& step_trace() const noexcept { return trace_; }
    [[nodiscard]] std::vector<MinuteSample> const& minute_samples() const noexcept {
        return minutes_;
    }
    [[nodiscard]] std::vector<DroopRecord> const& droop_log() const noexcept { return droop_; }
    [[nodiscard]] std::vector<Snapshot> const& snapshots() const noexcept { return snapshots_; }
    [[nodiscard]] std::vector<traffic::Event> const& events() const noexcept { return events_; }
    [[nodiscard]] double setpoint_kw() const noexcept { return setpoint_; }

    /// Station loads at the current instant.
    [[nodiscard]] LoadSample current_load() const;
    /// Bus-averaged voltage deviation with the given station loads on top of base load.
    [[nodiscard]] double deviation_for(std::vector<double> const& cs_load_kw);

    /// Throws StateError unless departed = on links + at stations + done + awaiting decision.
    void check_conservation() const;

private:
    void advance();
    void begin_tick();
    void finish_tick();
    void depart(int vehicle);
    void send_to_station(int vehicle, int station);
    void route_to_destination(int vehicle);
    void complete(int vehicle, Seconds t);
    void open_segment();
    void close_segment(bool final);
    void log(traffic::EventKind kind, int vehicle, int where, Seconds t);
    [[nodiscard]] std::vector<double> station_features() const;
    [[nodiscard]] power::PFSolution solve_with(std::vector<double> const& cs_load_kw);

    Scenario const* scenario_;
    std::vector<std::vector<double>> cs_distance_;
    std::vector<std::size_t> station_order_;  ///< station indices sorted by id

    Rng compliance_rng_{0};
    double compliance_ = 1.0;
    bool log_events_ = false;

    std::vector<TripPlan> trips_;
    traffic::TrafficState traffic_;
    std::vector<charging::ChargingStation> stations_;
    std::size_t next_trip_ = 0;
    Seconds t_ = 0;
    bool mid_tick_ = false;
    bool finished_ = false;
    bool started_ = false;
    std::deque<int> pending_;
    int departed_ = 0;
    int done_ = 0;
    int stranded_ = 0;
    long long tick_ttt_ = 0;
    long long last_loaded_ = 0;

    double setpoint_ = 0.0;
    int interval_index_ = 0;
    LoadSample interval_peak_;
    bool interval_has_peak_ = false;

    std::vector<MinuteSample> minutes_;
    std::vector<DroopRecord> droop_;
    std::vector<Snapshot> snapshots_;
    std::vector<traffic::Event> events_;

    std::vector<StepTrace> trace_;
    StepTrace open_;
    bool segment_open_ = false;
    std::vector<int> controlled_;
    double cvv_ = 0.0;

    std::map<std::vector<double>, power::PFSolution> pf_cache_;
};

}  // namespace evrec::env
