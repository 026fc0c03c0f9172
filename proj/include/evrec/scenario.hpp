#pragma once

#include "evrec/config.hpp"
#include "evrec/power.hpp"
#include "evrec/traffic.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace evrec {

/// A validated config together with the networks it references.
struct Scenario {
    ScenarioConfig config;
    traffic::RoadNetwork road;
    power::PowerNetwork grid;
    std::vector<int> cs_node;  ///< road node index per station
    std::vector<int> cs_bus;   ///< bus index per station

    [[nodiscard]] std::size_t station_count() const noexcept { return cs_node.size(); }
};

/// Parses a JSON scenario file. Relative network paths resolve against the file's directory.
[[nodiscard]] ScenarioConfig parse_scenario(std::filesystem::path const& path);
[[nodiscard]] ScenarioConfig scenario_from_json(nlohmann::json const& j,
                                                std::filesystem::path const& base_dir,
                                                std::string const& source = "<json>");
[[nodiscard]] nlohmann::json scenario_to_json(ScenarioConfig const& config);

/// Loads networks and checks every invariant and cross reference.
[[nodiscard]] Scenario materialize(ScenarioConfig config);
[[nodiscard]] Scenario load_scenario(std::filesystem::path const& path);

void save_scenario(ScenarioConfig const& config, std::filesystem::path const& path);

/// Stable 64-bit FNV-1a of the canonical JSON dump, as 16 hex digits.
[[nodiscard]] std::string config_hash(ScenarioConfig const& config);

struct TripPlan {
    int id = 0;
    traffic::VehicleKind kind = traffic::VehicleKind::CV;
    int origin = 0;       ///< node index
    int destination = 0;  ///< node index
    std::int64_t depart = 0;
    double soc_init = 0.0;

    friend bool operator==(TripPlan const&, TripPlan const&) = default;
};

/// Evenly spaced departures over `horizon_s`, with exactly round(ev_fraction * N) EVs
/// placed by a seeded shuffle.
[[nodiscard]] std::vector<TripPlan> generate_trips(DemandSpec const& spec,
                                                   traffic::RoadNetwork const& net,
                                                   std::int64_t horizon_s, std::uint64_t seed);

}  // namespace evrec
