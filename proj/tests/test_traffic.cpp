#include "evrec/error.hpp"
#include "evrec/rng.hpp"
#include "evrec/traffic.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace evrec;
using namespace evrec::traffic;

namespace {

RoadNetwork nguyen_dupuis() { return load_road_network(EVREC_DATA_DIR "/networks/nguyen_dupuis"); }

/// a -> b -> c straight line, plus a direct a -> c link of given length.
RoadNetwork line3(double direct_m) {
    std::vector<Node> nodes{{1, 0, 0}, {2, 1, 0}, {3, 2, 0}};
    std::vector<Link> links{{1, 0, 1, 100.0, 1, 10.0, 0.1},
                            {2, 1, 2, 100.0, 1, 10.0, 0.1},
                            {3, 0, 2, direct_m, 1, 10.0, 0.1}};
    return RoadNetwork(nodes, links);
}

Vehicle driver(int id, Phase phase = Phase::DrivingToDest) {
    Vehicle v;
    v.id = id;
    v.phase = phase;
    return v;
}

}  // namespace

TEST_CASE("Greenshields speed with a floor") {
    Link const l{1, 0, 1, 1000.0, 1, 50.0 / 3.6, 0.12};
    CHECK(link_speed(l, 0.0) == doctest::Approx(50.0 / 3.6));
    CHECK(link_speed(l, 0.06) == doctest::Approx(25.0 / 3.6));
    CHECK(link_speed(l, 0.12) == kMinSpeedMps);
    CHECK(link_speed(l, 5.0) == kMinSpeedMps);
    CHECK(link_speed(l, -1.0) == doctest::Approx(50.0 / 3.6));
    CHECK(link_travel_time(l, 0.0) == doctest::Approx(72.0));
}

TEST_CASE("fixture network loads with converted units") {
    auto const net = nguyen_dupuis();
    CHECK(net.node_count() == 13);
    CHECK(net.link_count() == 38);
    for (std::size_t e = 1; e < net.link_count(); ++e) CHECK(net.links()[e - 1].id < net.links()[e].id);
    CHECK(net.links().front().vf_mps == doctest::Approx(50.0 / 3.6));
    CHECK(net.links().front().kjam_per_m == doctest::Approx(0.12));
    std::vector<int> all(net.node_count());
    for (int i = 0; i < static_cast<int>(all.size()); ++i) all[i] = i;
    CHECK(net.strongly_connected(all));
    CHECK_THROWS_AS((void)net.node_index(99), ReferenceError);
}

TEST_CASE("shortest paths match Floyd-Warshall on every pair") {
    auto const net = nguyen_dupuis();
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> cost(net.link_count());
        for (auto& c : cost) c = trial == 0 ? 1.0 : rng.uniform(1.0, 10.0);
        auto const ref = oracle::all_pairs(net, cost);
        for (int o = 0; o < static_cast<int>(net.node_count()); ++o) {
            for (int d = 0; d < static_cast<int>(net.node_count()); ++d) {
                auto const p = shortest_path(net, cost, o, d);
                CHECK(p.cost == doctest::Approx(ref[o][d]));
                double sum = 0.0;
                int at = o;
                for (int e : p.links) {
                    CHECK(net.links()[e].from == at);
                    at = net.links()[e].to;
                    sum += cost[e];
                }
                CHECK(at == d);
                CHECK(sum == doctest::Approx(p.cost));
            }
        }
    }
}

TEST_CASE("equal-cost routes resolve to the smallest link sequence") {
    auto const net = line3(200.0);
    auto const lengths = link_lengths(net);
    auto const p = shortest_path(net, lengths, 0, 2);
    CHECK(p.links == std::vector<int>{0, 1});
    auto const shorter = line3(150.0);
    CHECK(shortest_path(shorter, link_lengths(shorter), 0, 2).links == std::vector<int>{2});
    CHECK_THROWS_AS((void)shortest_path(net, lengths, 2, 0), UnreachableError);
    std::vector<double> bad(3, -1.0);
    CHECK_THROWS_AS((void)shortest_path(net, bad, 0, 2), ValidationError);
}

TEST_CASE("vehicles move at the link speed and carry leftover distance") {
    auto const net = line3(500.0);
    TrafficState state(&net, {driver(0)});
    state.enter_route(0, {0, 1}, 0);
    CHECK(state.link_occupancy(0) == 1);
    // density 1/100 per m out of 0.1 jam -> speed 9 m/s
    for (Seconds t = 0; t < 12; ++t) (void)state.step(t, 1);
    auto const& v = state.vehicle(0);
    CHECK(v.route_pos == 1);
    CHECK(state.link_occupancy(0) == 0);
    CHECK(state.link_occupancy(1) == 1);
    CHECK(v.link_pos_m == doctest::Approx(8.0));
    Seconds t = 12;
    TickReport r;
    while (r.completed.empty()) r = state.step(t++, 1);
    CHECK(state.vehicle(0).t_d == t);
    CHECK(state.vehicle(0).phase == Phase::Done);
    CHECK(state.vehicle(0).distance_m == doctest::Approx(200.0));
    CHECK(state.driving_count() == 0);
}

TEST_CASE("vehicles wait until their ready tick") {
    auto const net = line3(500.0);
    TrafficState state(&net, {driver(0)});
    state.enter_route(0, {2}, 5);
    for (Seconds t = 0; t < 5; ++t) CHECK(state.step(t, 1).moved.empty());
    CHECK(state.step(5, 1).moved.size() == 1);
}

TEST_CASE("routes ending at a station report an arrival, not a completion") {
    auto const net = line3(500.0);
    TrafficState state(&net, {driver(0, Phase::DrivingToCs)});
    state.enter_route(0, {0}, 0);
    TickReport r;
    Seconds t = 0;
    while (r.cs_arrivals.empty()) r = state.step(t++, 1);
    CHECK(r.completed.empty());
    CHECK(state.vehicle(0).phase == Phase::DrivingToCs);
    CHECK(state.vehicle(0).t_d == -1);
}

TEST_CASE("densities count vehicles per lane-metre") {
    auto const net = line3(500.0);
    TrafficState state(&net, {driver(0), driver(1), driver(2)});
    state.enter_route(0, {0}, 0);
    state.enter_route(1, {0}, 0);
    state.enter_route(2, {2}, 0);
    auto const k = state.densities();
    CHECK(k[0] == doctest::Approx(0.02));
    CHECK(k[2] == doctest::Approx(1.0 / 500.0));
    CHECK(state.normalized_densities()[0] == doctest::Approx(0.2));
    CHECK(state.travel_times()[0] == doctest::Approx(100.0 / 8.0));
    CHECK_THROWS_AS(state.enter_route(0, {1}, 0), StateError);
}

TEST_CASE("trip time split and timestamp order") {
    Vehicle v = driver(0, Phase::Done);
    v.kind = VehicleKind::EV;
    v.depart = 10;
    v.t_w = 100;
    v.t_c = 130;
    v.t_c_end = 700;
    v.t_d = 900;
    auto const tt = record_trip_times(v);
    CHECK(tt.driving == 90 + 200);
    CHECK(tt.waiting == 30);
    CHECK(tt.charging == 570);
    CHECK(tt.total == v.t_d - v.depart);
    v.t_c = 90;
    CHECK_THROWS_AS(check_timestamps(v), StateError);
    Vehicle cv = driver(1, Phase::DrivingToDest);
    CHECK_THROWS_AS((void)record_trip_times(cv), StateError);
}

TEST_CASE("vehicle ids must follow their positions") {
    auto const net = line3(500.0);
    CHECK_THROWS_AS(TrafficState(&net, {driver(1)}), ValidationError);
}
