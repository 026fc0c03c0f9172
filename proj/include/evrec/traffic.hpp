#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace evrec::traffic {

using Seconds = std::int64_t;

/// Lower bound on link speed; keeps saturated links draining.
inline constexpr double kMinSpeedMps = 1.0;

struct Node {
    int id = 0;
    double x_km = 0.0;
    double y_km = 0.0;
};

/// Directed road link. `from`/`to` are node indices, not ids.
struct Link {
    int id = 0;
    int from = 0;
    int to = 0;
    double length_m = 0.0;
    int lanes = 1;
    double vf_mps = 0.0;
    double kjam_per_m = 0.0;  ///< jam density, vehicles per metre per lane

    friend bool operator==(Link const&, Link const&) = default;
};

class RoadNetwork {
public:
    RoadNetwork() = default;
    /// Links are reordered by ascending id; their node fields must already be indices.
    RoadNetwork(std::vector<Node> nodes, std::vector<Link> links);

    [[nodiscard]] std::vector<Node> const& nodes() const noexcept { return nodes_; }
    [[nodiscard]] std::vector<Link> const& links() const noexcept { return links_; }
    [[nodiscard]] std::size_t node_count() const noexcept { return nodes_.size(); }
    [[nodiscard]] std::size_t link_count() const noexcept { return links_.size(); }
    [[nodiscard]] std::vector<int> const& out_links(int node) const { return out_.at(node); }

    [[nodiscard]] bool has_node(int id) const { return index_.contains(id); }
    /// Throws ReferenceError for unknown ids.
    [[nodiscard]] int node_index(int id) const;

    /// Node coordinates scaled into [0,1] by the network bounding box.
    [[nodiscard]] std::pair<double, double> normalized_position(int node) const;

    /// True when every node in `nodes` can reach every other one.
    [[nodiscard]] bool strongly_connected(std::span<int const> nodes) const;

private:
    std::vector<Node> nodes_;
    std::vector<Link> links_;
    std::vector<std::vector<int>> out_;
    std::unordered_map<int, int> index_;
    double x_min_ = 0.0, x_span_ = 1.0, y_min_ = 0.0, y_span_ = 1.0;
};

/// Reads `nodes.csv` (id, x_km, y_km) and `links.csv`
/// (id, from, to, length_m, lanes, vf_kmh, kjam_per_km) from `dir`.
[[nodiscard]] RoadNetwork load_road_network(std::filesystem::path const& dir);

/// Greenshields speed with floor kMinSpeedMps. Density is clamped to [0, kjam].
[[nodiscard]] double link_speed(Link const& link, double density);
[[nodiscard]] double link_travel_time(Link const& link, double density);

struct Path {
    std::vector<int> links;  ///< link indices in travel order
    double cost = 0.0;
};

/// Dijkstra on per-link costs. Equal-cost paths resolve to the lexicographically
/// smallest link sequence. Throws UnreachableError.
[[nodiscard]] Path shortest_path(RoadNetwork const& net, std::span<double const> link_costs,
                                 int origin, int dest);

[[nodiscard]] std::vector<double> link_lengths(RoadNetwork const& net);
[[nodiscard]] std::vector<double> free_flow_times(RoadNetwork const& net);

enum class VehicleKind { EV, CV };

enum class Phase { NotDeparted, DrivingToCs, Queuing, Charging, DrivingToDest, Done };

[[nodiscard]] char const* to_string(Phase p);

struct Vehicle {
    int id = 0;
    VehicleKind kind = VehicleKind::CV;
    int origin = 0;       ///< node index
    int destination = 0;  ///< node index
    Seconds depart = 0;   ///< t_o

    std::vector<int> route;
    std::size_t route_pos = 0;
    double link_pos_m = 0.0;
    Seconds ready_at = 0;  ///< first tick start at which the vehicle may move
    Phase phase = Phase::NotDeparted;

    double soc_init = 0.0;
    double soc = 0.0;
    std::optional<int> target_cs;  ///< index into the station list

    Seconds t_w = -1;
    Seconds t_c = -1;
    Seconds t_c_end = -1;  ///< t_c'
    Seconds t_d = -1;

    double distance_m = 0.0;
    double energy_driven_kwh = 0.0;
    double energy_charged_kwh = 0.0;
    bool stranded = false;

    [[nodiscard]] bool is_ev() const noexcept { return kind == VehicleKind::EV; }
    [[nodiscard]] bool driving() const noexcept {
        return phase == Phase::DrivingToCs || phase == Phase::DrivingToDest;
    }
};

/// Throws StateError unless t_o <= t_w <= t_c <= t_c' <= t_d over the defined stamps.
void check_timestamps(Vehicle const& v);

struct TripTimes {
    Seconds driving = 0;
    Seconds waiting = 0;
    Seconds charging = 0;
    Seconds total = 0;
};

/// Per-vehicle time split; the vehicle must be done.
[[nodiscard]] TripTimes record_trip_times(Vehicle const& v);

enum class EventKind { Depart, CsArrival, ChargeStart, ChargeEnd, TripComplete, Stranded };

[[nodiscard]] char const* to_string(EventKind k);

struct Event {
    Seconds t = 0;
    int vehicle = 0;
    EventKind kind = EventKind::Depart;
    int where = -1;  ///< link index, station index or node index depending on kind
};

struct Movement {
    int vehicle = 0;
    double distance_m = 0.0;
};

struct TickReport {
    std::vector<Movement> moved;
    std::vector<int> cs_arrivals;  ///< vehicles that reached the end of a route to a station
    std::vector<int> completed;    ///< vehicles that reached their destination (t_d set)
};

/// Link-level dynamic network loading state. Owns every vehicle of an episode.
class TrafficState {
public:
    TrafficState() = default;
    TrafficState(RoadNetwork const* net, std::vector<Vehicle> vehicles);

    [[nodiscard]] RoadNetwork const& network() const { return *net_; }
    [[nodiscard]] std::vector<Vehicle> const& vehicles() const noexcept { return vehicles_; }
    [[nodiscard]] std::span<Vehicle> fleet() noexcept { return vehicles_; }
    [[nodiscard]] Vehicle& vehicle(int id) { return vehicles_.at(static_cast<std::size_t>(id)); }
    [[nodiscard]] Vehicle const& vehicle(int id) const {
        return vehicles_.at(static_cast<std::size_t>(id));
    }

    /// Puts a vehicle at the start of `route`, able to move from tick `ready_at`.
    /// The caller sets the phase first; the vehicle must be driving.
    void enter_route(int vehicle, std::vector<int> route, Seconds ready_at);

    /// Advance every driving vehicle over [t, t + dt). Speeds come from the
    /// densities at the start of the tick. Arrival stamps are t + dt.
    TickReport step(Seconds t, Seconds dt);

    [[nodiscard]] std::vector<double> densities() const;
    [[nodiscard]] std::vector<double> normalized_densities() const;
    [[nodiscard]] std::vector<double> travel_times() const;
    [[nodiscard]] int link_occupancy(int link) const { return counts_.at(link); }
    [[nodiscard]] std::size_t driving_count() const noexcept { return driving_.size(); }

private:
    RoadNetwork const* net_ = nullptr;
    std::vector<Vehicle> vehicles_;
    std::vector<int> counts_;
    std::vector<int> driving_;  ///< ids of vehicles on links, ascending
};

}  // namespace evrec::traffic
