#include "evrec/error.hpp"
#include "evrec/power.hpp"
#include "evrec/rng.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>

using namespace evrec;
using namespace evrec::power;

namespace {

PowerNetwork ieee33() { return load_power_network(EVREC_DATA_DIR "/power/ieee33"); }

PowerNetwork two_bus(double r, double x) {
    return PowerNetwork({{1, BusType::Slack, 0, 0}, {2, BusType::PQ, 0, 0}}, {{0, 1, r, x}}, 1.0, 1.0);
}

}  // namespace

TEST_CASE("two-bus feeder matches the closed-form receiving voltage") {
    for (auto [p, q, r, x] : {std::array{0.5, 0.2, 0.05, 0.1}, std::array{1.2, 0.6, 0.02, 0.04},
                              std::array{0.1, 0.0, 0.3, 0.1}}) {
        auto const net = two_bus(r, x);
        Injection inj{{0.0, p * 1000.0}, {0.0, q * 1000.0}};
        auto const sol = solve_power_flow(net, inj);
        CHECK(sol.v[1] == doctest::Approx(oracle::two_bus_voltage(p, q, r, x)).epsilon(1e-8));
        CHECK(sol.residual < 1e-8);
    }
}

TEST_CASE("IEEE 33-bus base case agrees with the sweep oracle at every bus") {
    auto const net = ieee33();
    auto const inj = base_injections(net);
    auto const sol = solve_power_flow(net, inj);
    auto const ref = oracle::bfs_power_flow(net, inj);
    CHECK(sol.iterations <= 10);
    CHECK(sol.residual < 1e-8);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(sol.v[i] == doctest::Approx(ref[i]).epsilon(1e-8));
    // Commonly tabulated minimum: 0.9131 p.u. at bus 18.
    CHECK(min_voltage(sol) == doctest::Approx(0.9131).epsilon(1e-4));
    CHECK(sol.v[net.bus_index(18)] == doctest::Approx(min_voltage(sol)));
    CHECK(max_mismatch(net, inj, sol.v, sol.theta) == doctest::Approx(sol.residual));
}

TEST_CASE("IEEE 69-bus base case agrees with the sweep oracle") {
    auto const net = load_power_network(EVREC_DATA_DIR "/power/ieee69");
    auto const inj = base_injections(net);
    auto const sol = solve_power_flow(net, inj);
    auto const ref = oracle::bfs_power_flow(net, inj);
    CHECK(net.bus_count() == 69);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(sol.v[i] == doctest::Approx(ref[i]).epsilon(1e-8));
    CHECK(min_voltage(sol) == doctest::Approx(0.9092).epsilon(2e-4));
}

TEST_CASE("random load profiles: Newton-Raphson matches the sweep oracle") {
    auto const net = ieee33();
    Rng rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        auto inj = base_injections(net, rng.uniform(0.0, 1.5));
        for (std::size_t i = 1; i < net.bus_count(); ++i) inj.p_kw[i] += rng.uniform(0.0, 120.0);
        auto const sol = solve_power_flow(net, inj);
        auto const ref = oracle::bfs_power_flow(net, inj);
        for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(sol.v[i] == doctest::Approx(ref[i]).epsilon(1e-8));
        // more load never raises the lowest voltage
        auto heavier = inj;
        for (auto& p : heavier.p_kw) p *= 1.1;
        CHECK(min_voltage(solve_power_flow(net, heavier)) <= min_voltage(sol));
    }
}

TEST_CASE("no load gives a flat profile without iterating") {
    auto const net = ieee33();
    auto const sol = solve_power_flow(net, base_injections(net, 0.0));
    CHECK(sol.iterations == 0);
    for (double v : sol.v) CHECK(v == doctest::Approx(1.0));
    CHECK(voltage_deviation(sol).average == doctest::Approx(0.0));
}

TEST_CASE("overloaded feeder raises ConvergenceError") {
    auto const net = ieee33();
    CHECK_THROWS_AS((void)solve_power_flow(net, base_injections(net, 25.0)), ConvergenceError);
}

TEST_CASE("base-case solve is fast") {
    auto const net = ieee33();
    auto const inj = base_injections(net);
    auto const t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 20; ++i) (void)solve_power_flow(net, inj);
    double const each = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 20;
    CHECK(each < 0.05);
}

TEST_CASE("station loads land on their buses; slack coupling is rejected") {
    auto const net = ieee33();
    std::vector<double> loads{100.0, 30.0};
    std::vector<int> buses{net.bus_index(18), net.bus_index(25)};
    auto const inj = bus_injections(net, loads, buses);
    auto const base = base_injections(net);
    CHECK(inj.p_kw[buses[0]] == doctest::Approx(base.p_kw[buses[0]] + 100.0));
    CHECK(inj.p_kw[buses[1]] == doctest::Approx(base.p_kw[buses[1]] + 30.0));
    CHECK(inj.q_kvar[buses[0]] == doctest::Approx(base.q_kvar[buses[0]]));
    std::vector<int> bad{net.slack(), buses[1]};
    CHECK_THROWS_AS((void)bus_injections(net, loads, bad), ValidationError);
    std::vector<double> short_loads{1.0};
    CHECK_THROWS_AS((void)bus_injections(net, short_loads, buses), ShapeError);
}

TEST_CASE("ohm impedances are converted with the declared base") {
    auto const net = ieee33();
    double const z_base = 12.66 * 12.66 / 10.0;
    CHECK(net.lines().front().r_pu == doctest::Approx(0.0922 / z_base));
    CHECK(net.lines().front().x_pu == doctest::Approx(0.047 / z_base));
    CHECK(net.kw_to_pu(1000.0) == doctest::Approx(0.1));
}

TEST_CASE("network invariants") {
    std::vector<Bus> buses{{1, BusType::Slack, 0, 0}, {2, BusType::PQ, 1, 0}, {3, BusType::PQ, 1, 0}};
    CHECK_THROWS_AS(PowerNetwork(buses, {{0, 1, 0.1, 0.1}, {1, 2, 0.1, 0.1}, {0, 2, 0.1, 0.1}}, 1, 1),
                    ValidationError);
    CHECK_THROWS_AS(PowerNetwork(buses, {{0, 1, 0.1, 0.1}, {1, 2, 0.0, 0.0}}, 1, 1), ValidationError);
    auto two_slack = buses;
    two_slack[2].type = BusType::Slack;
    CHECK_THROWS_AS(PowerNetwork(two_slack, {{0, 1, 0.1, 0.1}, {1, 2, 0.1, 0.1}}, 1, 1), ValidationError);
    PowerNetwork ok(buses, {{0, 1, 0.1, 0.1}, {1, 2, 0.1, 0.1}}, 1, 1);
    CHECK_THROWS_AS((void)ok.bus_index(7), ReferenceError);
}

TEST_CASE("malformed bus file reports the line") {
    auto const dir = std::filesystem::temp_directory_path() / "evrec_bad_grid";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "buses.csv") << "# base_mva=10 base_kv=12.66\nid,type,p_base_kw,q_base_kvar\n1,slack,0,0\n2,generator,1,1\n";
    std::ofstream(dir / "lines.csv") << "from,to,r_ohm,x_ohm\n1,2,0.1,0.1\n";
    try {
        (void)load_power_network(dir);
        FAIL("expected a parse error");
    } catch (ParseError const& e) {
        CHECK(e.line() == 4);
    }
}
