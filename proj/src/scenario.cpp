#include "evrec/scenario.hpp"

#include "evrec/error.hpp"
#include "evrec/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace evrec {

using nlohmann::json;

void DemandSpec::validate() const {
    if (!(total_rate_vph > 0.0)) throw ValidationError("demand.total_rate_vph must be > 0");
    if (!(ev_fraction >= 0.0 && ev_fraction <= 1.0)) {
        throw ValidationError("demand.ev_fraction must be in [0, 1]");
    }
    if (!(0.0 <= soc_init_low && soc_init_low < soc_init_high && soc_init_high <= soc_target &&
          soc_target <= 1.0)) {
        throw ValidationError(
            "demand: need 0 <= soc_init_low < soc_init_high <= soc_target <= 1");
    }
    if (od_mode == OdMode::Table) {
        if (od_table.empty()) throw ValidationError("demand.od_table is empty");
        for (auto const& e : od_table) {
            if (e.origin == e.destination) {
                throw ValidationError("demand.od_table: origin equals destination");
            }
            if (!(e.weight > 0.0)) throw ValidationError("demand.od_table: weight must be > 0");
        }
    }
}

void TimingParams::validate() const {
    if (warmup_s <= 0) throw ValidationError("timing.warmup_s must be > 0");
    if (control_s <= 0) throw ValidationError("timing.control_s must be > 0");
    if (controller_interval_s <= 0 || control_s % controller_interval_s != 0) {
        throw ValidationError("timing.controller_interval_s must divide timing.control_s");
    }
    if (sample_s <= 0) throw ValidationError("timing.sample_s must be > 0");
}

void RewardParams::validate() const {
    if (!(w1 > 0.0)) throw ValidationError("reward.w1 must be > 0");
    if (!(w2 > 0.0 && w2 < 1.0)) throw ValidationError("reward.w2 must be in (0, 1)");
}

void GridParams::validate() const {
    if (!(base_load_scale >= 0.0)) throw ValidationError("grid.base_load_scale must be >= 0");
}

void TrainConfig::validate() const {
    if (epochs < 1 || episodes_per_epoch < 1 || batch_size < 1 || update_iters < 1) {
        throw ValidationError("srl: epochs, episodes_per_epoch, batch_size, update_iters must be > 0");
    }
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0) || !(lambda_lr > 0.0)) {
        throw ValidationError("srl: learning rates must be > 0");
    }
    if (!(gamma > 0.0 && gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
        throw ValidationError("srl: gamma in (0,1], gae_lambda in [0,1]");
    }
    if (!(clip > 0.0)) throw ValidationError("srl.clip must be > 0");
    if (!(lambda_init >= 0.0)) throw ValidationError("srl.lambda_init must be >= 0");
    if (hidden.empty() || std::any_of(hidden.begin(), hidden.end(), [](int h) { return h < 1; })) {
        throw ValidationError("srl.hidden must list positive layer sizes");
    }
    if (seeds.empty()) throw ValidationError("srl.seeds must not be empty");
}

void PredictorConfig::validate() const {
    if (encoder_len < 1 || decoder_len < 1) {
        throw ValidationError("predictor: encoder_len and decoder_len must be > 0");
    }
    if (step_s <= 0 || hidden < 1 || layers < 1 || batch_size < 1 || iters < 1) {
        throw ValidationError("predictor: step_s, hidden, layers, batch_size, iters must be > 0");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("predictor.dropout in [0,1)");
    if (!(lr > 0.0)) throw ValidationError("predictor.lr must be > 0");
    if (min_pairs < 1 || train_every < 1 || converge_window < 2 || !(converge_tol > 0.0)) {
        throw ValidationError("predictor: invalid training trigger or convergence settings");
    }
}

namespace {

/// Reads one JSON object, remembering which keys were used so leftovers can be rejected.
class ObjectReader {
public:
    ObjectReader(json const& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ValidationError(path_ + ": expected an object");
    }

    template <class T>
    void get(char const* key, T& out) {
        used_.insert(key);
        auto const it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (json::exception const& e) {
            throw ValidationError(field(key) + ": " + e.what());
        }
    }

    template <class T>
    void require(char const* key, T& out) {
        if (!j_.contains(key)) throw ValidationError(field(key) + ": required field missing");
        get(key, out);
    }

    [[nodiscard]] bool has(char const* key) const { return j_.contains(key); }
    [[nodiscard]] json const& at(char const* key) {
        used_.insert(key);
        return j_.at(key);
    }
    [[nodiscard]] std::string field(std::string const& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    void finish() const {
        for (auto const& [key, _] : j_.items()) {
            if (!used_.contains(key)) throw ValidationError(field(key) + ": unknown field");
        }
    }

private:
    json const& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class F>
void section(ObjectReader& parent, char const* key, F&& fill) {
    if (!parent.has(key)) return;
    ObjectReader r(parent.at(key), parent.field(key));
    fill(r);
    r.finish();
}

std::filesystem::path resolve(std::filesystem::path const& base, std::string const& p) {
    std::filesystem::path path(p);
    if (path.is_relative()) path = base / path;
    return path.lexically_normal();
}

}  // namespace

ScenarioConfig scenario_from_json(json const& j, std::filesystem::path const& base_dir,
                                  std::string const& source) {
    ScenarioConfig c;
    try {
        ObjectReader root(j, "");
        root.get("name", c.name);
        std::string road, grid;
        root.require("road_network", road);
        root.require("power_network", grid);
        c.road_network = resolve(base_dir, road);
        c.power_network = resolve(base_dir, grid);
        root.get("seed", c.seed);

        if (!root.has("charging_stations")) {
            throw ValidationError("charging_stations: required field missing");
        }
        auto const& stations = root.at("charging_stations");
        if (!stations.is_array()) throw ValidationError("charging_stations: expected an array");
        for (std::size_t i = 0; i < stations.size(); ++i) {
            ObjectReader r(stations[i], "charging_stations[" + std::to_string(i) + "]");
            StationSpec s;
            r.require("id", s.id);
            r.require("node", s.node);
            r.require("bus", s.bus);
            r.require("piles", s.piles);
            r.finish();
            c.stations.push_back(s);
        }

        section(root, "demand", [&](ObjectReader& r) {
            auto& d = c.demand;
            r.get("total_rate_vph", d.total_rate_vph);
            r.get("ev_fraction", d.ev_fraction);
            r.get("soc_init_low", d.soc_init_low);
            r.get("soc_init_high", d.soc_init_high);
            r.get("soc_target", d.soc_target);
            std::string mode = "uniform";
            r.get("od_mode", mode);
            if (mode == "uniform") {
                d.od_mode = OdMode::Uniform;
            } else if (mode == "table") {
                d.od_mode = OdMode::Table;
            } else {
                throw ValidationError(r.field("od_mode") + ": expected 'uniform' or 'table'");
            }
            r.get("od_nodes", d.od_nodes);
            if (r.has("od_table")) {
                auto const& rows = r.at("od_table");
                for (std::size_t i = 0; i < rows.size(); ++i) {
                    ObjectReader e(rows[i], r.field("od_table[" + std::to_string(i) + "]"));
                    OdEntry entry;
                    e.require("origin", entry.origin);
                    e.require("destination", entry.destination);
                    e.get("weight", entry.weight);
                    e.finish();
                    d.od_table.push_back(entry);
                }
            }
        });
        section(root, "timing", [&](ObjectReader& r) {
            r.get("warmup_s", c.timing.warmup_s);
            r.get("control_s", c.timing.control_s);
            r.get("controller_interval_s", c.timing.controller_interval_s);
            r.get("sample_s", c.timing.sample_s);
        });
        section(root, "droop", [&](ObjectReader& r) {
            r.get("v_ref1", c.droop.v_ref1);
            r.get("v_ref2", c.droop.v_ref2);
            r.get("p_max_kw", c.droop.p_max_kw);
            r.get("delta_min_frac", c.droop.delta_min_frac);
        });
        section(root, "battery", [&](ObjectReader& r) {
            r.get("capacity_kwh", c.battery.capacity_kwh);
            r.get("eta", c.battery.eta);
            r.get("rho_kwh_per_km", c.battery.rho_kwh_per_km);
        });
        section(root, "reward", [&](ObjectReader& r) {
            r.get("w1", c.reward.w1);
            r.get("r_max", c.reward.r_max);
            r.get("w2", c.reward.w2);
        });
        section(root, "grid", [&](ObjectReader& r) {
            r.get("base_load_scale", c.grid.base_load_scale);
        });
        section(root, "srl", [&](ObjectReader& r) {
            auto& s = c.srl;
            r.get("epochs", s.epochs);
            r.get("episodes_per_epoch", s.episodes_per_epoch);
            r.get("batch_size", s.batch_size);
            r.get("update_iters", s.update_iters);
            r.get("actor_lr", s.actor_lr);
            r.get("critic_lr", s.critic_lr);
            r.get("gamma", s.gamma);
            r.get("gae_lambda", s.gae_lambda);
            r.get("clip", s.clip);
            r.get("entropy_coef", s.entropy_coef);
            r.get("lambda_lr", s.lambda_lr);
            r.get("lambda_init", s.lambda_init);
            r.get("cost_limit", s.cost_limit);
            r.get("hidden", s.hidden);
            r.get("normalize_advantages", s.normalize_advantages);
            r.get("discounted_cost", s.discounted_cost);
            r.get("seeds", s.seeds);
        });
        section(root, "predictor", [&](ObjectReader& r) {
            auto& p = c.predictor;
            r.get("enabled", p.enabled);
            r.get("encoder_len", p.encoder_len);
            r.get("decoder_len", p.decoder_len);
            r.get("step_s", p.step_s);
            r.get("hidden", p.hidden);
            r.get("layers", p.layers);
            r.get("dropout", p.dropout);
            r.get("batch_size", p.batch_size);
            r.get("lr", p.lr);
            r.get("iters", p.iters);
            r.get("min_pairs", p.min_pairs);
            r.get("train_every", p.train_every);
            r.get("converge_window", p.converge_window);
            r.get("converge_tol", p.converge_tol);
        });
        root.finish();
    } catch (ValidationError const& e) {
        throw ValidationError(source + ": " + e.what());
    }
    return c;
}

json scenario_to_json(ScenarioConfig const& c) {
    json j;
    j["name"] = c.name;
    j["road_network"] = c.road_network.string();
    j["power_network"] = c.power_network.string();
    j["seed"] = c.seed;
    j["charging_stations"] = json::array();
    for (auto const& s : c.stations) {
        j["charging_stations"].push_back(
            {{"id", s.id}, {"node", s.node}, {"bus", s.bus}, {"piles", s.piles}});
    }
    auto const& d = c.demand;
    j["demand"] = {{"total_rate_vph", d.total_rate_vph},
                   {"ev_fraction", d.ev_fraction},
                   {"soc_init_low", d.soc_init_low},
                   {"soc_init_high", d.soc_init_high},
                   {"soc_target", d.soc_target},
                   {"od_mode", d.od_mode == OdMode::Uniform ? "uniform" : "table"},
                   {"od_nodes", d.od_nodes}};
    if (!d.od_table.empty()) {
        auto& rows = j["demand"]["od_table"] = json::array();
        for (auto const& e : d.od_table) {
            rows.push_back({{"origin", e.origin}, {"destination", e.destination}, {"weight", e.weight}});
        }
    }
    j["timing"] = {{"warmup_s", c.timing.warmup_s},
                   {"control_s", c.timing.control_s},
                   {"controller_interval_s", c.timing.controller_interval_s},
                   {"sample_s", c.timing.sample_s}};
    j["droop"] = {{"v_ref1", c.droop.v_ref1},
                  {"v_ref2", c.droop.v_ref2},
                  {"p_max_kw", c.droop.p_max_kw},
                  {"delta_min_frac", c.droop.delta_min_frac}};
    j["battery"] = {{"capacity_kwh", c.battery.capacity_kwh},
                    {"eta", c.battery.eta},
                    {"rho_kwh_per_km", c.battery.rho_kwh_per_km}};
    j["reward"] = {{"w1", c.reward.w1}, {"r_max", c.reward.r_max}, {"w2", c.reward.w2}};
    j["grid"] = {{"base_load_scale", c.grid.base_load_scale}};
    auto const& s = c.srl;
    j["srl"] = {{"epochs", s.epochs},
                {"episodes_per_epoch", s.episodes_per_epoch},
                {"batch_size", s.batch_size},
                {"update_iters", s.update_iters},
                {"actor_lr", s.actor_lr},
                {"critic_lr", s.critic_lr},
                {"gamma", s.gamma},
                {"gae_lambda", s.gae_lambda},
                {"clip", s.clip},
                {"entropy_coef", s.entropy_coef},
                {"lambda_lr", s.lambda_lr},
                {"lambda_init", s.lambda_init},
                {"cost_limit", s.cost_limit},
                {"hidden", s.hidden},
                {"normalize_advantages", s.normalize_advantages},
                {"discounted_cost", s.discounted_cost},
                {"seeds", s.seeds}};
    auto const& p = c.predictor;
    j["predictor"] = {{"enabled", p.enabled},
                      {"encoder_len", p.encoder_len},
                      {"decoder_len", p.decoder_len},
                      {"step_s", p.step_s},
                      {"hidden", p.hidden},
                      {"layers", p.layers},
                      {"dropout", p.dropout},
                      {"batch_size", p.batch_size},
                      {"lr", p.lr},
                      {"iters", p.iters},
                      {"min_pairs", p.min_pairs},
                      {"train_every", p.train_every},
                      {"converge_window", p.converge_window},
                      {"converge_tol", p.converge_tol}};
    return j;
}

ScenarioConfig parse_scenario(std::filesystem::path const& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open scenario file");
    std::stringstream buf;
    buf << in.rdbuf();
    auto const text = buf.str();
    json j;
    try {
        j = json::parse(text);
    } catch (json::parse_error const& e) {
        auto const upto = std::min<std::size_t>(e.byte, text.size());
        auto const line = 1 + static_cast<std::size_t>(
                                  std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
        throw ParseError(path.string(), line, e.what());
    }
    auto const base = std::filesystem::absolute(path).parent_path();
    return scenario_from_json(j, base, path.string());
}

Scenario materialize(ScenarioConfig config) {
    config.demand.validate();
    config.timing.validate();
    config.droop.validate();
    config.battery.validate();
    config.reward.validate();
    config.grid.validate();
    config.srl.validate();
    config.predictor.validate();
    if (config.predictor.step_s % config.timing.sample_s != 0) {
        throw ValidationError("predictor.step_s must be a multiple of timing.sample_s");
    }
    if (config.stations.empty()) throw ValidationError("charging_stations must not be empty");

    Scenario s;
    s.road = traffic::load_road_network(config.road_network);
    s.grid = power::load_power_network(config.power_network);

    std::set<int> ids;
    for (auto const& st : config.stations) {
        std::string const name = "charging station " + std::to_string(st.id);
        if (!ids.insert(st.id).second) throw ValidationError("duplicate " + name);
        if (st.piles < 1) throw ValidationError(name + ": piles must be >= 1");
        if (!s.road.has_node(st.node)) {
            throw ReferenceError(name + " references missing road node " + std::to_string(st.node));
        }
        if (!s.grid.has_bus(st.bus)) {
            throw ReferenceError(name + " references missing bus " + std::to_string(st.bus));
        }
        int const bus = s.grid.bus_index(st.bus);
        if (s.grid.buses()[bus].type != power::BusType::PQ) {
            throw ValidationError(name + ": bus " + std::to_string(st.bus) + " is not a PQ bus");
        }
        s.cs_node.push_back(s.road.node_index(st.node));
        s.cs_bus.push_back(bus);
    }
    for (int n : config.demand.od_nodes) {
        if (!s.road.has_node(n)) {
            throw ReferenceError("demand.od_nodes references missing road node " + std::to_string(n));
        }
    }
    for (auto const& e : config.demand.od_table) {
        for (int n : {e.origin, e.destination}) {
            if (!s.road.has_node(n)) {
                throw ReferenceError("demand.od_table references missing road node " +
                                     std::to_string(n));
            }
        }
    }
    s.config = std::move(config);
    return s;
}

Scenario load_scenario(std::filesystem::path const& path) {
    return materialize(parse_scenario(path));
}

void save_scenario(ScenarioConfig const& config, std::filesystem::path const& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << scenario_to_json(config).dump(2) << '\n';
}

std::string config_hash(ScenarioConfig const& config) {
    auto const text = scenario_to_json(config).dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
    return out;
}

std::vector<TripPlan> generate_trips(DemandSpec const& spec, traffic::RoadNetwork const& net,
                                     std::int64_t horizon_s, std::uint64_t seed) {
    spec.validate();
    if (horizon_s <= 0) throw ValidationError("generate_trips: horizon must be > 0");

    std::vector<int> od_nodes;
    std::vector<std::pair<int, int>> table;
    std::vector<double> cumulative;
    if (spec.od_mode == OdMode::Uniform) {
        if (spec.od_nodes.empty()) {
            for (int i = 0; i < static_cast<int>(net.node_count()); ++i) od_nodes.push_back(i);
        } else {
            for (int id : spec.od_nodes) od_nodes.push_back(net.node_index(id));
        }
        if (od_nodes.size() < 2 || !net.strongly_connected(od_nodes)) {
            throw UnreachableError("no feasible OD pair: OD nodes are not mutually reachable");
        }
    } else {
        double total = 0.0;
        auto const lengths = traffic::link_lengths(net);
        for (auto const& e : spec.od_table) {
            int const o = net.node_index(e.origin);
            int const d = net.node_index(e.destination);
            (void)traffic::shortest_path(net, lengths, o, d);
            table.emplace_back(o, d);
            total += e.weight;
            cumulative.push_back(total);
        }
    }

    auto const n = static_cast<std::size_t>(
        std::llround(spec.total_rate_vph * static_cast<double>(horizon_s) / 3600.0));
    auto const n_ev = static_cast<std::size_t>(std::llround(spec.ev_fraction * static_cast<double>(n)));

    Rng rng(seed);
    std::vector<char> is_ev(n, 0);
    std::fill(is_ev.begin(), is_ev.begin() + static_cast<long>(n_ev), 1);
    rng.shuffle(is_ev.begin(), is_ev.end());

    std::vector<TripPlan> trips;
    trips.reserve(n);
    double const spacing = 3600.0 / spec.total_rate_vph;
    for (std::size_t i = 0; i < n; ++i) {
        TripPlan t;
        t.id = static_cast<int>(i);
        t.depart = std::llround(static_cast<double>(i) * spacing);
        if (spec.od_mode == OdMode::Uniform) {
            auto const k = od_nodes.size();
            auto const a = rng.below(k);
            auto b = rng.below(k - 1);
            if (b >= a) ++b;
            t.origin = od_nodes[a];
            t.destination = od_nodes[b];
        } else {
            double const u = rng.uniform() * cumulative.back();
            auto const it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
            auto const idx = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                                                   table.size() - 1);
            t.origin = table[idx].first;
            t.destination = table[idx].second;
        }
        if (is_ev[i]) {
            t.kind = traffic::VehicleKind::EV;
            t.soc_init = rng.uniform(spec.soc_init_low, spec.soc_init_high);
        }
        trips.push_back(t);
    }
    return trips;
}

}  // namespace evrec
