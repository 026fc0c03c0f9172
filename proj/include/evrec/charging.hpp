#pragma once

#include "evrec/power.hpp"
#include "evrec/traffic.hpp"

#include <array>
#include <deque>
#include <span>
#include <vector>

namespace evrec::charging {

using traffic::Seconds;
using traffic::Vehicle;

struct BatteryParams {
    double capacity_kwh = 24.0;
    double eta = 0.9;
    double rho_kwh_per_km = 0.15;

    void validate() const;
    friend bool operator==(BatteryParams const&, BatteryParams const&) = default;
};

struct DroopParams {
    double v_ref1 = 0.90;
    double v_ref2 = 0.95;
    double p_max_kw = 50.0;
    double delta_min_frac = 0.30;

    [[nodiscard]] double p_min_kw() const noexcept { return delta_min_frac * p_max_kw; }
    /// Slope of the linear segment, kW per p.u.
    [[nodiscard]] double alpha() const noexcept {
        return (p_max_kw - p_min_kw()) / (v_ref2 - v_ref1);
    }
    void validate() const;
    friend bool operator==(DroopParams const&, DroopParams const&) = default;
};

/// Piecewise-linear voltage droop: p_min below v_ref1, p_max above v_ref2.
[[nodiscard]] double droop_power(double v_bar, DroopParams const& params);

/// SoC gain for one tick of constant-power charging.
[[nodiscard]] double charge_delta_soc(double power_kw, double dt_s, BatteryParams const& battery);

/// Charging time (s) for constant power from `soc_from` to `soc_to` on a fixed
/// tick, counting whole ticks until the target is reached.
[[nodiscard]] Seconds charging_time(double soc_from, double soc_to, double power_kw, Seconds tick_s,
                                    BatteryParams const& battery);

/// Deducts drive energy for `dist_m` metres. Sets `stranded` when SoC falls below 0;
/// the SoC itself is left unclamped so the energy ledger still closes.
/// Returns true when the vehicle became stranded on this call.
bool consume_driving_energy(Vehicle& v, double dist_m, BatteryParams const& battery);

inline constexpr std::size_t kFeatureCount = 9;
using Features = std::array<double, kFeatureCount>;

/// Population mean and standard deviation; both 0 for an empty set.
[[nodiscard]] std::pair<double, double> mean_std(std::span<double const> xs);

struct QueueEntry {
    int vehicle = 0;
    Seconds since = 0;
};

class ChargingStation {
public:
    ChargingStation(int id, int node, int bus, int piles);

    [[nodiscard]] int id() const noexcept { return id_; }
    [[nodiscard]] int node() const noexcept { return node_; }  ///< road node index
    [[nodiscard]] int bus() const noexcept { return bus_; }    ///< power bus index
    [[nodiscard]] int piles() const noexcept { return piles_; }

    [[nodiscard]] std::deque<QueueEntry> const& queue() const noexcept { return queue_; }
    [[nodiscard]] std::vector<int> const& charging() const noexcept { return charging_; }
    [[nodiscard]] int pending() const noexcept { return pending_; }
    [[nodiscard]] int occupancy() const noexcept {
        return static_cast<int>(queue_.size() + charging_.size());
    }

    /// Registers an EV that has been directed here and is still driving.
    void assign(Vehicle& v, int station_index);

    /// EV reached the station at time t: charges at once if a pile is free, otherwise queues.
    void submit_arrival(Vehicle& v, int station_index, Seconds t);

    /// Charges every plugged-in EV over [t, t+dt). EVs reaching `soc_target` leave at t+dt
    /// and the queue head takes the freed pile at t+dt. Returns the ids that finished.
    std::vector<int> update_charging(std::span<Vehicle> fleet, Seconds t, Seconds dt,
                                     double setpoint_kw, double soc_target,
                                     BatteryParams const& battery);

    /// Aggregate active load drawn by the station.
    [[nodiscard]] double load_kw(double setpoint_kw) const {
        return setpoint_kw * static_cast<double>(charging_.size());
    }

    /// Raw (n^q, n^c, μ^q, δ^q, μ^c, δ^c, μ^w, δ^w, n^pt); waits in seconds.
    [[nodiscard]] Features features(std::span<Vehicle const> fleet, Seconds t) const;

private:
    int id_;
    int node_;
    int bus_;
    int piles_;
    std::deque<QueueEntry> queue_;
    std::vector<int> charging_;
    int pending_ = 0;
};

struct DroopUpdate {
    double v_bar = 1.0;
    double setpoint_kw = 0.0;
    power::PFSolution solution;
};

/// Solves power flow for the peak-load injections of the previous interval and
/// maps the resulting average voltage through the droop curve.
[[nodiscard]] DroopUpdate advance_droop_interval(power::PowerNetwork const& net,
                                                 power::Injection const& peak,
                                                 DroopParams const& droop);

}  // namespace evrec::charging
