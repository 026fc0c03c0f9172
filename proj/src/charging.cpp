#include "evrec/charging.hpp"

#include "evrec/error.hpp"

#include <algorithm>
#include <cmath>

namespace evrec::charging {

namespace {
constexpr double kSocTolerance = 1e-12;
}

void BatteryParams::validate() const {
    if (!(capacity_kwh > 0.0)) throw ValidationError("battery.capacity_kwh must be > 0");
    if (!(eta > 0.0 && eta <= 1.0)) throw ValidationError("battery.eta must be in (0, 1]");
    if (!(rho_kwh_per_km >= 0.0)) throw ValidationError("battery.rho_kwh_per_km must be >= 0");
}

void DroopParams::validate() const {
    if (!(v_ref1 > 0.0 && v_ref1 < v_ref2)) {
        throw ValidationError("droop: need 0 < v_ref1 < v_ref2");
    }
    if (!(p_max_kw > 0.0)) throw ValidationError("droop.p_max_kw must be > 0");
    if (!(delta_min_frac > 0.0 && delta_min_frac <= 1.0)) {
        throw ValidationError("droop.delta_min_frac must be in (0, 1]");
    }
}

double droop_power(double v_bar, DroopParams const& params) {
    if (v_bar <= params.v_ref1) return params.p_min_kw();
    if (v_bar >= params.v_ref2) return params.p_max_kw;
    return params.alpha() * (v_bar - params.v_ref1) + params.p_min_kw();
}

double charge_delta_soc(double power_kw, double dt_s, BatteryParams const& battery) {
    return battery.eta * power_kw * (dt_s / 3600.0) / battery.capacity_kwh;
}

Seconds charging_time(double soc_from, double soc_to, double power_kw, Seconds tick_s,
                      BatteryParams const& battery) {
    if (!(power_kw > 0.0) || tick_s <= 0) {
        throw ValidationError("charging_time: power and tick must be positive");
    }
    double soc = soc_from;
    Seconds elapsed = 0;
    while (soc < soc_to - kSocTolerance) {
        soc += charge_delta_soc(power_kw, static_cast<double>(tick_s), battery);
        elapsed += tick_s;
    }
    return elapsed;
}

bool consume_driving_energy(Vehicle& v, double dist_m, BatteryParams const& battery) {
    if (!v.is_ev() || dist_m <= 0.0) return false;
    double const kwh = battery.rho_kwh_per_km * dist_m / 1000.0;
    v.energy_driven_kwh += kwh;
    v.soc -= kwh / battery.capacity_kwh;
    if (v.soc < 0.0 && !v.stranded) {
        v.stranded = true;
        return true;
    }
    return false;
}

std::pair<double, double> mean_std(std::span<double const> xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

ChargingStation::ChargingStation(int id, int node, int bus, int piles)
    : id_(id), node_(node), bus_(bus), piles_(piles) {
    if (piles < 1) {
        throw ValidationError("charging station " + std::to_string(id) + ": piles must be >= 1");
    }
}

void ChargingStation::assign(Vehicle& v, int station_index) {
    if (!v.is_ev()) throw StateError("only EVs can be assigned to a charging station");
    v.target_cs = station_index;
    ++pending_;
}

void ChargingStation::submit_arrival(Vehicle& v, int station_index, Seconds t) {
    if (v.phase != traffic::Phase::DrivingToCs || v.target_cs != station_index) {
        throw StateError("vehicle " + std::to_string(v.id) + " arrived at station " +
                         std::to_string(id_) + " without being assigned to it");
    }
    --pending_;
    v.t_w = t;
    if (static_cast<int>(charging_.size()) < piles_) {
        v.phase = traffic::Phase::Charging;
        v.t_c = t;
        charging_.push_back(v.id);
    } else {
        v.phase = traffic::Phase::Queuing;
        queue_.push_back(QueueEntry{v.id, t});
    }
    traffic::check_timestamps(v);
}

std::vector<int> ChargingStation::update_charging(std::span<Vehicle> fleet, Seconds t, Seconds dt,
                                                  double setpoint_kw, double soc_target,
                                                  BatteryParams const& battery) {
    std::vector<int> done;
    double const dsoc = charge_delta_soc(setpoint_kw, static_cast<double>(dt), battery);
    double const kwh = setpoint_kw * static_cast<double>(dt) / 3600.0 * battery.eta;
    std::vector<int> still;
    still.reserve(charging_.size());
    for (int id : charging_) {
        auto& v = fleet[static_cast<std::size_t>(id)];
        v.soc += dsoc;
        v.energy_charged_kwh += kwh;
        if (v.soc >= soc_target - kSocTolerance) {
            v.t_c_end = t + dt;
            traffic::check_timestamps(v);
            done.push_back(id);
        } else {
            still.push_back(id);
        }
    }
    charging_ = std::move(still);
    while (static_cast<int>(charging_.size()) < piles_ && !queue_.empty()) {
        auto& v = fleet[static_cast<std::size_t>(queue_.front().vehicle)];
        queue_.pop_front();
        v.phase = traffic::Phase::Charging;
        v.t_c = t + dt;
        traffic::check_timestamps(v);
        charging_.push_back(v.id);
    }
    return done;
}

Features ChargingStation::features(std::span<Vehicle const> fleet, Seconds t) const {
    std::vector<double> q_soc;
    std::vector<double> waits;
    for (auto const& e : queue_) {
        q_soc.push_back(fleet[static_cast<std::size_t>(e.vehicle)].soc);
        waits.push_back(static_cast<double>(t - e.since));
    }
    std::vector<double> c_soc;
    for (int id : charging_) c_soc.push_back(fleet[static_cast<std::size_t>(id)].soc);
    auto const [mq, sq] = mean_std(q_soc);
    auto const [mc, sc] = mean_std(c_soc);
    auto const [mw, sw] = mean_std(waits);
    return {static_cast<double>(queue_.size()), static_cast<double>(charging_.size()),
            mq, sq, mc, sc, mw, sw, static_cast<double>(pending_)};
}

DroopUpdate advance_droop_interval(power::PowerNetwork const& net, power::Injection const& peak,
                                   DroopParams const& droop) {
    DroopUpdate u;
    u.solution = power::solve_power_flow(net, peak);
    u.v_bar = power::average_voltage(u.solution);
    u.setpoint_kw = droop_power(u.v_bar, droop);
    return u;
}

}  // namespace evrec::charging
