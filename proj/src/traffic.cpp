#include "evrec/traffic.hpp"

#include "evrec/csv.hpp"
#include "evrec/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace evrec::traffic {

RoadNetwork::RoadNetwork(std::vector<Node> nodes, std::vector<Link> links)
    : nodes_(std::move(nodes)), links_(std::move(links)) {
    if (nodes_.empty()) throw ValidationError("road network has no nodes");
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!index_.emplace(nodes_[i].id, static_cast<int>(i)).second) {
            throw ValidationError("duplicate node id " + std::to_string(nodes_[i].id));
        }
    }
    std::sort(links_.begin(), links_.end(), [](Link const& a, Link const& b) { return a.id < b.id; });
    out_.assign(nodes_.size(), {});
    int const n = static_cast<int>(nodes_.size());
    for (std::size_t i = 0; i < links_.size(); ++i) {
        auto const& l = links_[i];
        if (i > 0 && links_[i - 1].id == l.id) {
            throw ValidationError("duplicate link id " + std::to_string(l.id));
        }
        std::string const name = "link " + std::to_string(l.id);
        if (l.from < 0 || l.from >= n || l.to < 0 || l.to >= n) {
            throw ReferenceError(name + ": endpoint out of range");
        }
        if (!(l.length_m > 0.0)) throw ValidationError(name + ": length_m must be > 0");
        if (!(l.vf_mps > 0.0)) throw ValidationError(name + ": vf must be > 0");
        if (!(l.kjam_per_m > 0.0)) throw ValidationError(name + ": kjam must be > 0");
        if (l.lanes < 1) throw ValidationError(name + ": lanes must be >= 1");
        out_[l.from].push_back(static_cast<int>(i));
    }
    auto const [xmin, xmax] = std::minmax_element(
        nodes_.begin(), nodes_.end(), [](Node const& a, Node const& b) { return a.x_km < b.x_km; });
    auto const [ymin, ymax] = std::minmax_element(
        nodes_.begin(), nodes_.end(), [](Node const& a, Node const& b) { return a.y_km < b.y_km; });
    x_min_ = xmin->x_km;
    y_min_ = ymin->y_km;
    x_span_ = xmax->x_km > xmin->x_km ? xmax->x_km - xmin->x_km : 1.0;
    y_span_ = ymax->y_km > ymin->y_km ? ymax->y_km - ymin->y_km : 1.0;
}

int RoadNetwork::node_index(int id) const {
    auto const it = index_.find(id);
    if (it == index_.end()) throw ReferenceError("unknown road node " + std::to_string(id));
    return it->second;
}

std::pair<double, double> RoadNetwork::normalized_position(int node) const {
    auto const& n = nodes_.at(static_cast<std::size_t>(node));
    return {(n.x_km - x_min_) / x_span_, (n.y_km - y_min_) / y_span_};
}

bool RoadNetwork::strongly_connected(std::span<int const> nodes) const {
    auto reach = [this](int src) {
        std::vector<char> seen(nodes_.size(), 0);
        std::vector<int> stack{src};
        seen[src] = 1;
        while (!stack.empty()) {
            int const u = stack.back();
            stack.pop_back();
            for (int e : out_[u]) {
                int const v = links_[e].to;
                if (!seen[v]) {
                    seen[v] = 1;
                    stack.push_back(v);
                }
            }
        }
        return seen;
    };
    for (int a : nodes) {
        auto const seen = reach(a);
        for (int b : nodes) {
            if (!seen[b]) return false;
        }
    }
    return true;
}

RoadNetwork load_road_network(std::filesystem::path const& dir) {
    auto const nodes_table = csv::read(dir / "nodes.csv");
    std::vector<Node> nodes;
    for (auto const& row : nodes_table.rows) {
        nodes.push_back(Node{static_cast<int>(nodes_table.integer(row, "id")),
                             nodes_table.number(row, "x_km"), nodes_table.number(row, "y_km")});
    }
    std::unordered_map<int, int> index;
    for (std::size_t i = 0; i < nodes.size(); ++i) index.emplace(nodes[i].id, static_cast<int>(i));

    auto const links_table = csv::read(dir / "links.csv");
    std::vector<Link> links;
    for (auto const& row : links_table.rows) {
        auto node = [&](char const* col) {
            auto const id = static_cast<int>(links_table.integer(row, col));
            auto const it = index.find(id);
            if (it == index.end()) {
                throw ReferenceError(links_table.source + ":" + std::to_string(row.line) +
                                     ": unknown node " + std::to_string(id));
            }
            return it->second;
        };
        Link l;
        l.id = static_cast<int>(links_table.integer(row, "id"));
        l.from = node("from");
        l.to = node("to");
        l.length_m = links_table.number(row, "length_m");
        l.lanes = static_cast<int>(links_table.integer(row, "lanes"));
        l.vf_mps = links_table.number(row, "vf_kmh") / 3.6;
        l.kjam_per_m = links_table.number(row, "kjam_per_km") / 1000.0;
        links.push_back(l);
    }
    return RoadNetwork(std::move(nodes), std::move(links));
}

double link_speed(Link const& link, double density) {
    double const k = std::clamp(density, 0.0, link.kjam_per_m);
    return std::max(kMinSpeedMps, link.vf_mps * (1.0 - k / link.kjam_per_m));
}

double link_travel_time(Link const& link, double density) {
    return link.length_m / link_speed(link, density);
}

Path shortest_path(RoadNetwork const& net, std::span<double const> link_costs, int origin,
                   int dest) {
    if (link_costs.size() != net.link_count()) {
        throw ShapeError("shortest_path: expected " + std::to_string(net.link_count()) +
                         " link costs, got " + std::to_string(link_costs.size()));
    }
    for (double c : link_costs) {
        if (!std::isfinite(c) || c <= 0.0) {
            throw ValidationError("shortest_path: link costs must be finite and > 0");
        }
    }
    int const n = static_cast<int>(net.node_count());
    if (origin < 0 || origin >= n || dest < 0 || dest >= n) {
        throw ReferenceError("shortest_path: node index out of range");
    }
    if (origin == dest) return {};

    // Labels carry the full link sequence so ties can be broken lexicographically.
    struct Label {
        double cost = std::numeric_limits<double>::infinity();
        std::vector<int> links;
        bool set = false;
    };
    auto same_cost = [](double a, double b) {
        return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
    };
    auto better = [&](Label const& a, Label const& b) {
        if (!b.set) return true;
        if (same_cost(a.cost, b.cost)) return a.links < b.links;
        return a.cost < b.cost;
    };

    std::vector<Label> best(static_cast<std::size_t>(n));
    std::vector<char> done(static_cast<std::size_t>(n), 0);
    best[origin].cost = 0.0;
    best[origin].set = true;
    while (true) {
        int u = -1;
        for (int v = 0; v < n; ++v) {
            if (done[v] || !best[v].set) continue;
            if (u < 0 || better(best[v], best[u])) u = v;
        }
        if (u < 0) break;
        if (u == dest) break;
        done[u] = 1;
        for (int e : net.out_links(u)) {
            int const v = net.links()[e].to;
            if (done[v]) continue;
            Label cand;
            cand.cost = best[u].cost + link_costs[e];
            cand.links = best[u].links;
            cand.links.push_back(e);
            cand.set = true;
            if (better(cand, best[v])) best[v] = std::move(cand);
        }
    }
    if (!best[dest].set) {
        throw UnreachableError("no route from node " + std::to_string(net.nodes()[origin].id) +
                               " to node " + std::to_string(net.nodes()[dest].id));
    }
    return Path{std::move(best[dest].links), best[dest].cost};
}

std::vector<double> link_lengths(RoadNetwork const& net) {
    std::vector<double> out;
    out.reserve(net.link_count());
    for (auto const& l : net.links()) out.push_back(l.length_m);
    return out;
}

std::vector<double> free_flow_times(RoadNetwork const& net) {
    std::vector<double> out;
    out.reserve(net.link_count());
    for (auto const& l : net.links()) out.push_back(l.length_m / l.vf_mps);
    return out;
}

char const* to_string(Phase p) {
    switch (p) {
        case Phase::NotDeparted: return "not-departed";
        case Phase::DrivingToCs: return "driving-to-cs";
        case Phase::Queuing: return "queuing";
        case Phase::Charging: return "charging";
        case Phase::DrivingToDest: return "driving-to-dest";
        case Phase::Done: return "done";
    }
    return "?";
}

char const* to_string(EventKind k) {
    switch (k) {
        case EventKind::Depart: return "depart";
        case EventKind::CsArrival: return "cs-arrival";
        case EventKind::ChargeStart: return "charge-start";
        case EventKind::ChargeEnd: return "charge-end";
        case EventKind::TripComplete: return "trip-complete";
        case EventKind::Stranded: return "stranded";
    }
    return "?";
}

void check_timestamps(Vehicle const& v) {
    Seconds last = v.depart;
    char const* last_name = "t_o";
    auto check = [&](Seconds t, char const* name) {
        if (t < 0) return;
        if (t < last) {
            throw StateError("vehicle " + std::to_string(v.id) + ": " + name + "=" +
                             std::to_string(t) + " precedes " + last_name + "=" +
                             std::to_string(last));
        }
        last = t;
        last_name = name;
    };
    check(v.t_w, "t_w");
    check(v.t_c, "t_c");
    check(v.t_c_end, "t_c'");
    check(v.t_d, "t_d");
}

TripTimes record_trip_times(Vehicle const& v) {
    if (v.phase != Phase::Done || v.t_d < 0) {
        throw StateError("vehicle " + std::to_string(v.id) + " has not completed its trip");
    }
    TripTimes tt;
    if (v.is_ev() && v.t_w >= 0) {
        tt.driving = (v.t_w - v.depart) + (v.t_d - v.t_c_end);
        tt.waiting = v.t_c - v.t_w;
        tt.charging = v.t_c_end - v.t_c;
    } else {
        tt.driving = v.t_d - v.depart;
    }
    tt.total = tt.driving + tt.waiting + tt.charging;
    return tt;
}

TrafficState::TrafficState(RoadNetwork const* net, std::vector<Vehicle> vehicles)
    : net_(net), vehicles_(std::move(vehicles)), counts_(net->link_count(), 0) {
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
        if (vehicles_[i].id != static_cast<int>(i)) {
            throw ValidationError("vehicle ids must equal their position in the trip list");
        }
    }
}

void TrafficState::enter_route(int id, std::vector<int> route, Seconds ready_at) {
    auto& v = vehicle(id);
    if (!v.driving()) {
        throw StateError("vehicle " + std::to_string(id) + " entering a route while " +
                         to_string(v.phase));
    }
    if (route.empty()) throw StateError("vehicle " + std::to_string(id) + ": empty route");
    if (std::binary_search(driving_.begin(), driving_.end(), id)) {
        throw StateError("vehicle " + std::to_string(id) + " is already on the network");
    }
    v.route = std::move(route);
    v.route_pos = 0;
    v.link_pos_m = 0.0;
    v.ready_at = ready_at;
    ++counts_.at(v.route.front());
    driving_.insert(std::upper_bound(driving_.begin(), driving_.end(), id), id);
}

TickReport TrafficState::step(Seconds t, Seconds dt) {
    TickReport report;
    if (driving_.empty()) return report;
    auto const k = densities();
    auto const& links = net_->links();
    std::vector<int> still;
    still.reserve(driving_.size());
    for (int id : driving_) {
        auto& v = vehicles_[static_cast<std::size_t>(id)];
        if (v.ready_at > t) {
            still.push_back(id);
            continue;
        }
        if (v.route.empty()) {
            throw StateError("vehicle " + std::to_string(id) + " driving with an empty route");
        }
        int const link0 = v.route[v.route_pos];
        double remaining = link_speed(links[link0], k[link0]) * static_cast<double>(dt);
        double moved = 0.0;
        bool arrived = false;
        while (true) {
            int const cur = v.route[v.route_pos];
            double const space = links[cur].length_m - v.link_pos_m;
            if (remaining < space) {
                v.link_pos_m += remaining;
                moved += remaining;
                break;
            }
            moved += space;
            remaining -= space;
            --counts_[cur];
            if (v.route_pos + 1 == v.route.size()) {
                arrived = true;
                v.link_pos_m = links[cur].length_m;
                break;
            }
            ++v.route_pos;
            v.link_pos_m = 0.0;
            ++counts_[v.route[v.route_pos]];
        }
        v.distance_m += moved;
        report.moved.push_back(Movement{id, moved});
        if (!arrived) {
            still.push_back(id);
            continue;
        }
        if (v.phase == Phase::DrivingToCs) {
            report.cs_arrivals.push_back(id);
        } else {
            v.phase = Phase::Done;
            v.t_d = t + dt;
            check_timestamps(v);
            report.completed.push_back(id);
        }
    }
    driving_ = std::move(still);
    return report;
}

std::vector<double> TrafficState::densities() const {
    std::vector<double> k(counts_.size(), 0.0);
    auto const& links = net_->links();
    for (std::size_t e = 0; e < k.size(); ++e) {
        k[e] = std::min(links[e].kjam_per_m,
                        counts_[e] / (links[e].length_m * static_cast<double>(links[e].lanes)));
    }
    return k;
}

std::vector<double> TrafficState::normalized_densities() const {
    auto k = densities();
    auto const& links = net_->links();
    for (std::size_t e = 0; e < k.size(); ++e) k[e] = std::min(1.0, k[e] / links[e].kjam_per_m);
    return k;
}

std::vector<double> TrafficState::travel_times() const {
    auto const k = densities();
    std::vector<double> tt(k.size());
    auto const& links = net_->links();
    for (std::size_t e = 0; e < k.size(); ++e) tt[e] = link_travel_time(links[e], k[e]);
    return tt;
}

}  // namespace evrec::traffic
