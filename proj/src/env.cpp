#include "evrec/env.hpp"

#include "evrec/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace evrec::env {

using traffic::EventKind;
using traffic::Phase;

namespace {
constexpr std::uint64_t kTripStream = 1;
constexpr std::uint64_t kComplianceStream = 2;
constexpr Seconds kOvertime = 48 * 3600;
}  // namespace

std::vector<std::vector<double>> station_distances(Scenario const& scenario) {
    auto const lengths = traffic::link_lengths(scenario.road);
    std::vector<std::vector<double>> out(scenario.road.node_count());
    for (int n = 0; n < static_cast<int>(scenario.road.node_count()); ++n) {
        for (int node : scenario.cs_node) {
            double d = std::numeric_limits<double>::infinity();
            try {
                d = traffic::shortest_path(scenario.road, lengths, n, node).cost;
            } catch (UnreachableError const&) {
            }
            out[n].push_back(d);
        }
    }
    return out;
}

int greedy_station(Scenario const& scenario, std::vector<std::vector<double>> const& distances,
                   int node) {
    auto const& row = distances.at(static_cast<std::size_t>(node));
    int best = -1;
    for (std::size_t m = 0; m < row.size(); ++m) {
        if (!std::isfinite(row[m])) continue;
        if (best < 0 || row[m] < row[best] ||
            (row[m] == row[best] && scenario.config.stations[m].id <
                                        scenario.config.stations[best].id)) {
            best = static_cast<int>(m);
        }
    }
    if (best < 0) {
        throw UnreachableError("no charging station reachable from node " +
                               std::to_string(scenario.road.nodes()[node].id));
    }
    return best;
}

std::vector<double> average_demand(std::span<MinuteSample const> samples, std::size_t stations) {
    if (samples.empty()) throw StateError("average_demand: no samples in window");
    std::vector<double> out(stations, 0.0);
    for (auto const& s : samples) {
        for (std::size_t m = 0; m < stations; ++m) out[m] += s.occupancy.at(m);
    }
    for (auto& x : out) x /= static_cast<double>(samples.size());
    return out;
}

double segment_reward(RewardParams const& params, double loaded, bool final) {
    double const r_t = final ? params.w2 * loaded : loaded;
    return params.w1 * (params.r_max - r_t);
}

ChargingEnv::ChargingEnv(Scenario const& scenario)
    : scenario_(&scenario), cs_distance_(station_distances(scenario)) {
    station_order_.resize(scenario.station_count());
    std::iota(station_order_.begin(), station_order_.end(), std::size_t{0});
}

void ChargingEnv::set_compliance(double rate) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("compliance rate must be in [0, 1]");
    compliance_ = rate;
}

std::size_t ChargingEnv::state_dim() const {
    return 5 + scenario_->road.link_count() + charging::kFeatureCount * scenario_->station_count();
}

std::vector<double> ChargingEnv::reset(std::uint64_t seed) {
    auto const& cfg = scenario_->config;
    trips_ = generate_trips(cfg.demand, scenario_->road, cfg.timing.horizon_s(),
                            stream_seed(seed, kTripStream));
    bool any_controlled = std::any_of(trips_.begin(), trips_.end(), [&](TripPlan const& p) {
        return p.kind == traffic::VehicleKind::EV && p.depart >= cfg.timing.warmup_s;
    });
    if (!any_controlled) {
        throw StateError("scenario has no EV departing in the control phase; no decisions possible");
    }

    std::vector<traffic::Vehicle> fleet;
    fleet.reserve(trips_.size());
    for (auto const& p : trips_) {
        traffic::Vehicle v;
        v.id = p.id;
        v.kind = p.kind;
        v.origin = p.origin;
        v.destination = p.destination;
        v.depart = p.depart;
        v.soc_init = v.soc = p.soc_init;
        fleet.push_back(std::move(v));
    }
    traffic_ = traffic::TrafficState(&scenario_->road, std::move(fleet));
    stations_.clear();
    for (std::size_t m = 0; m < scenario_->station_count(); ++m) {
        auto const& s = cfg.stations[m];
        stations_.emplace_back(s.id, scenario_->cs_node[m], scenario_->cs_bus[m], s.piles);
    }
    compliance_rng_ = Rng(stream_seed(seed, kComplianceStream));
    next_trip_ = 0;
    t_ = 0;
    mid_tick_ = finished_ = false;
    started_ = true;
    pending_.clear();
    departed_ = done_ = stranded_ = 0;
    tick_ttt_ = last_loaded_ = 0;
    setpoint_ = 0.0;
    interval_index_ = 0;
    interval_has_peak_ = false;
    minutes_.clear();
    droop_.clear();
    snapshots_.clear();
    events_.clear();
    trace_.clear();
    segment_open_ = false;
    controlled_.clear();
    cvv_ = 0.0;

    advance();
    open_segment();
    return observe();
}

StepOutcome ChargingEnv::step(int action) {
    if (!started_ || finished_ || pending_.empty()) {
        throw StateError("step called with no pending charging request");
    }
    if (action < 0 || action >= action_count()) {
        throw ValidationError("action " + std::to_string(action) + " out of range [0, " +
                              std::to_string(action_count()) + ")");
    }
    int const vehicle = pending_.front();
    int const greedy = greedy_action();
    bool followed = true;
    if (compliance_ < 1.0) followed = compliance_rng_.uniform() < compliance_;
    int const applied = followed ? action : greedy;
    open_.action = action;
    open_.applied = applied;
    open_.followed = followed;
    pending_.pop_front();
    controlled_.push_back(vehicle);
    send_to_station(vehicle, applied);

    advance();
    close_segment(finished_);
    StepOutcome out;
    out.reward = trace_.back().reward;
    out.cost = trace_.back().cost;
    out.done = finished_;
    if (!finished_) {
        open_segment();
        out.state = observe();
    }
    return out;
}

int ChargingEnv::current_vehicle() const {
    if (pending_.empty()) throw StateError("no pending charging request");
    return pending_.front();
}

int ChargingEnv::greedy_action() const {
    return greedy_station(*scenario_, cs_distance_, traffic_.vehicle(current_vehicle()).origin);
}

std::vector<double> ChargingEnv::observe() const {
    auto const& v = traffic_.vehicle(current_vehicle());
    std::vector<double> s;
    s.reserve(state_dim());
    auto const [ox, oy] = scenario_->road.normalized_position(v.origin);
    auto const [dx, dy] = scenario_->road.normalized_position(v.destination);
    s.insert(s.end(), {ox, oy, dx, dy, v.soc});
    auto const k = traffic_.normalized_densities();
    s.insert(s.end(), k.begin(), k.end());
    auto const f = station_features();
    s.insert(s.end(), f.begin(), f.end());
    return s;
}

std::vector<double> ChargingEnv::station_features() const {
    std::vector<double> out;
    out.reserve(charging::kFeatureCount * stations_.size());
    for (auto const& cs : stations_) {
        auto const f = cs.features(traffic_.vehicles(), t_);
        double const piles = cs.piles();
        out.insert(out.end(), {f[0] / piles, f[1] / piles, f[2], f[3], f[4], f[5],
                               f[6] / kWaitScale, f[7] / kWaitScale, f[8] / piles});
    }
    return out;
}

LoadSample ChargingEnv::current_load() const {
    LoadSample s;
    s.t = t_;
    for (auto const& cs : stations_) {
        s.cs_load_kw.push_back(cs.load_kw(setpoint_));
        s.total_kw += s.cs_load_kw.back();
    }
    return s;
}

power::PFSolution ChargingEnv::solve_with(std::vector<double> const& cs_load_kw) {
    auto const it = pf_cache_.find(cs_load_kw);
    if (it != pf_cache_.end()) return it->second;
    auto const inj = power::bus_injections(scenario_->grid, cs_load_kw, scenario_->cs_bus,
                                           scenario_->config.grid.base_load_scale);
    auto sol = power::solve_power_flow(scenario_->grid, inj);
    pf_cache_.emplace(cs_load_kw, sol);
    return sol;
}

double ChargingEnv::deviation_for(std::vector<double> const& cs_load_kw) {
    return power::voltage_deviation(solve_with(cs_load_kw), scenario_->grid.v_ref()).average;
}

void ChargingEnv::advance() {
    Seconds const limit = scenario_->config.timing.horizon_s() + kOvertime;
    while (true) {
        if (!pending_.empty()) return;
        if (mid_tick_) {
            finish_tick();
            mid_tick_ = false;
            ++t_;
        }
        if (next_trip_ == trips_.size() && done_ == static_cast<int>(trips_.size())) {
            finished_ = true;
            return;
        }
        if (t_ > limit) {
            throw StateError("episode still running at t=" + std::to_string(t_) + " s");
        }
        begin_tick();
        mid_tick_ = true;
    }
}

void ChargingEnv::begin_tick() {
    auto const& cfg = scenario_->config;
    if (t_ % cfg.timing.controller_interval_s == 0) {
        std::vector<double> loads(stations_.size(), 0.0);
        double peak_total = 0.0;
        if (interval_has_peak_) {
            loads = interval_peak_.cs_load_kw;
            peak_total = interval_peak_.total_kw;
        }
        double const v_bar = power::average_voltage(solve_with(loads));
        setpoint_ = charging::droop_power(v_bar, cfg.droop);
        droop_.push_back(DroopRecord{interval_index_++, t_, v_bar, setpoint_, peak_total});
        interval_has_peak_ = false;
    }
    if (t_ % cfg.timing.sample_s == 0) {
        auto load = current_load();
        MinuteSample ms;
        ms.t = t_;
        ms.setpoint_kw = setpoint_;
        for (auto const& cs : stations_) ms.occupancy.push_back(cs.occupancy());
        ms.cs_load_kw = load.cs_load_kw;
        minutes_.push_back(std::move(ms));
        if (!interval_has_peak_ || load.total_kw > interval_peak_.total_kw) {
            interval_peak_ = load;
            interval_has_peak_ = true;
        }
        if (segment_open_) open_.candidates.push_back(std::move(load));
    }
    auto const step_s = cfg.predictor.step_s;
    if (t_ > 0 && t_ % step_s == 0) {
        auto first = minutes_.end();
        while (first != minutes_.begin() && std::prev(first)->t > t_ - step_s) --first;
        Snapshot snap;
        snap.t = t_;
        snap.features = station_features();
        snap.demand = average_demand(
            std::span<MinuteSample const>(&*first, static_cast<std::size_t>(minutes_.end() - first)),
            stations_.size());
        snapshots_.push_back(std::move(snap));
    }
    while (next_trip_ < trips_.size() && trips_[next_trip_].depart == t_) {
        depart(trips_[next_trip_].id);
        ++next_trip_;
    }
}

void ChargingEnv::finish_tick() {
    auto const& cfg = scenario_->config;
    long long const loaded = departed_ - done_;
    tick_ttt_ += loaded;
    last_loaded_ = loaded;
    if (segment_open_) {
        ++open_.ticks;
        open_.loaded_sum += loaded;
    }

    auto report = traffic_.step(t_, 1);
    for (auto const& mv : report.moved) {
        auto& v = traffic_.vehicle(mv.vehicle);
        if (charging::consume_driving_energy(v, mv.distance_m, cfg.battery)) {
            ++stranded_;
            log(EventKind::Stranded, v.id, v.route[v.route_pos], t_ + 1);
        }
    }
    for (int id : report.completed) {
        ++done_;
        log(EventKind::TripComplete, id, traffic_.vehicle(id).destination, t_ + 1);
    }

    std::vector<std::pair<int, int>> released;
    for (std::size_t m = 0; m < stations_.size(); ++m) {
        auto const finished = stations_[m].update_charging(traffic_.fleet(), t_, 1, setpoint_,
                                                           cfg.demand.soc_target, cfg.battery);
        for (int id : finished) {
            log(EventKind::ChargeEnd, id, static_cast<int>(m), t_ + 1);
            released.emplace_back(id, static_cast<int>(m));
        }
        if (log_events_) {
            for (int id : stations_[m].charging()) {
                if (traffic_.vehicle(id).t_c == t_ + 1) {
                    log(EventKind::ChargeStart, id, static_cast<int>(m), t_ + 1);
                }
            }
        }
    }
    for (int id : report.cs_arrivals) {
        auto& v = traffic_.vehicle(id);
        int const m = *v.target_cs;
        stations_[m].submit_arrival(v, m, t_ + 1);
        log(EventKind::CsArrival, id, m, t_ + 1);
        if (v.phase == Phase::Charging) log(EventKind::ChargeStart, id, m, t_ + 1);
    }
    for (auto const& [id, m] : released) {
        auto& v = traffic_.vehicle(id);
        v.phase = Phase::DrivingToDest;
        if (stations_[m].node() == v.destination) {
            complete(id, t_ + 1);
            continue;
        }
        auto path = traffic::shortest_path(scenario_->road, traffic_.travel_times(),
                                           stations_[m].node(), v.destination);
        traffic_.enter_route(id, std::move(path.links), t_ + 1);
    }
    check_conservation();
}

void ChargingEnv::depart(int id) {
    auto& v = traffic_.vehicle(id);
    ++departed_;
    log(EventKind::Depart, id, v.origin, t_);
    if (!v.is_ev()) {
        v.phase = Phase::DrivingToDest;
        auto path = traffic::shortest_path(scenario_->road, traffic_.travel_times(), v.origin,
                                           v.destination);
        traffic_.enter_route(id, std::move(path.links), t_);
    } else if (t_ < scenario_->config.timing.warmup_s) {
        send_to_station(id, greedy_station(*scenario_, cs_distance_, v.origin));
    } else {
        pending_.push_back(id);
    }
}

void ChargingEnv::send_to_station(int id, int m) {
    auto& v = traffic_.vehicle(id);
    auto& cs = stations_.at(static_cast<std::size_t>(m));
    v.phase = Phase::DrivingToCs;
    cs.assign(v, m);
    if (v.origin == cs.node()) {
        cs.submit_arrival(v, m, t_);
        log(EventKind::CsArrival, id, m, t_);
        if (v.phase == Phase::Charging) log(EventKind::ChargeStart, id, m, t_);
        return;
    }
    auto path = traffic::shortest_path(scenario_->road, traffic_.travel_times(), v.origin, cs.node());
    traffic_.enter_route(id, std::move(path.links), t_);
}

void ChargingEnv::complete(int id, Seconds t) {
    auto& v = traffic_.vehicle(id);
    v.phase = Phase::Done;
    v.t_d = t;
    traffic::check_timestamps(v);
    ++done_;
    log(EventKind::TripComplete, id, v.destination, t);
}

void ChargingEnv::open_segment() {
    open_ = StepTrace{};
    open_.step = static_cast<int>(trace_.size());
    open_.vehicle = pending_.front();
    open_.t_start = t_;
    open_.candidates.push_back(current_load());
    segment_open_ = true;
}

void ChargingEnv::close_segment(bool final) {
    auto const& cfg = scenario_->config;
    open_.t_end = t_;
    open_.final = final;
    double loaded = 0.0;
    if (final) {
        loaded = static_cast<double>(open_.loaded_sum);
    } else if (open_.ticks > 0) {
        loaded = static_cast<double>(open_.loaded_sum) / static_cast<double>(open_.ticks);
    } else {
        loaded = static_cast<double>(last_loaded_);
    }
    open_.reward = segment_reward(cfg.reward, loaded, final);
    std::size_t peak = 0;
    for (std::size_t i = 1; i < open_.candidates.size(); ++i) {
        if (open_.candidates[i].total_kw > open_.candidates[peak].total_kw) peak = i;
    }
    open_.peak = peak;
    open_.cost = deviation_for(open_.candidates[peak].cs_load_kw);
    cvv_ += open_.cost;
    trace_.push_back(std::move(open_));
    segment_open_ = false;
}

void ChargingEnv::log(EventKind kind, int vehicle, int where, Seconds t) {
    if (log_events_) events_.push_back(traffic::Event{t, vehicle, kind, where});
}

void ChargingEnv::check_conservation() const {
    std::size_t at_cs = 0;
    for (auto const& cs : stations_) at_cs += static_cast<std::size_t>(cs.occupancy());
    auto const accounted = traffic_.driving_count() + at_cs + static_cast<std::size_t>(done_) +
                           pending_.size();
    if (accounted != static_cast<std::size_t>(departed_)) {
        throw StateError("vehicle conservation violated at t=" + std::to_string(t_) + ": departed " +
                         std::to_string(departed_) + ", accounted " + std::to_string(accounted));
    }
}

EpisodeMetrics ChargingEnv::metrics() const {
    if (!finished_) throw StateError("episode metrics requested before the episode ended");
    EpisodeMetrics m;
    long long ttt = 0;
    for (auto const& v : traffic_.vehicles()) {
        ttt += traffic::record_trip_times(v).total;
        if (v.is_ev()) ++m.evs;
    }
    m.ttt_s = static_cast<double>(ttt);
    m.cvv = cvv_;
    m.vehicles = static_cast<int>(traffic_.vehicles().size());
    if (!controlled_.empty()) {
        double sum = 0.0;
        for (int id : controlled_) {
            auto const tt = traffic::record_trip_times(traffic_.vehicle(id));
            sum += static_cast<double>(tt.waiting + tt.charging);
        }
        m.wct_min = sum / static_cast<double>(controlled_.size()) / 60.0;
        m.wct_defined = true;
    }
    m.steps = static_cast<int>(trace_.size());
    m.stranded = stranded_;
    m.end_time = t_;
    return m;
}

}  // namespace evrec::env
