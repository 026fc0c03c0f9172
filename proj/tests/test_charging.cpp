#include "evrec/charging.hpp"
#include "evrec/error.hpp"
#include "evrec/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace evrec;
using namespace evrec::charging;
using traffic::Phase;
using traffic::Vehicle;

namespace {

std::vector<Vehicle> fleet_of(int n, double soc = 0.5) {
    std::vector<Vehicle> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& v = out[static_cast<std::size_t>(i)];
        v.id = i;
        v.kind = traffic::VehicleKind::EV;
        v.soc_init = v.soc = soc;
        v.phase = Phase::DrivingToCs;
    }
    return out;
}

}  // namespace

TEST_CASE("droop curve end points and midpoint") {
    DroopParams const d;
    CHECK(d.p_min_kw() == 15.0);
    CHECK(d.alpha() == doctest::Approx(700.0));
    CHECK(std::abs(droop_power(0.80, d) - 15.0) <= 1e-12);
    CHECK(std::abs(droop_power(0.90, d) - 15.0) <= 1e-12);
    CHECK(std::abs(droop_power(0.95, d) - 50.0) <= 1e-12);
    CHECK(std::abs(droop_power(1.05, d) - 50.0) <= 1e-12);
    CHECK(std::abs(droop_power(0.925, d) - 32.5) <= 1e-12);
}

TEST_CASE("droop curve is monotone and continuous") {
    DroopParams const d;
    double prev = droop_power(0.85, d);
    for (double v = 0.85; v <= 1.0; v += 1e-4) {
        double const p = droop_power(v, d);
        CHECK(p >= prev - 1e-12);
        CHECK(p - prev <= d.alpha() * 1e-4 + 1e-9);
        prev = p;
    }
}

TEST_CASE("constant-power charging time on 10 s ticks") {
    BatteryParams const b;
    CHECK(charging_time(0.5, 0.8, 50.0, 10, b) == 580);
    CHECK(charging_time(0.5, 0.8, 50.0, 1, b) == 576);
    CHECK(charging_time(0.8, 0.8, 50.0, 10, b) == 0);
    // slower chargers never finish earlier
    CHECK(charging_time(0.3, 0.8, 15.0, 1, b) >= charging_time(0.3, 0.8, 50.0, 1, b));
    CHECK_THROWS_AS((void)charging_time(0.5, 0.8, 0.0, 10, b), ValidationError);
}

TEST_CASE("driving energy and stranding") {
    BatteryParams const b;
    auto fleet = fleet_of(1, 0.01);
    auto& v = fleet[0];
    CHECK_FALSE(consume_driving_energy(v, 1000.0, b));
    CHECK(v.soc == doctest::Approx(0.01 - 0.15 / 24.0));
    CHECK(consume_driving_energy(v, 1000.0, b));
    CHECK(v.stranded);
    CHECK(v.soc < 0.0);
    CHECK_FALSE(consume_driving_energy(v, 1000.0, b));  // only reported once
    CHECK(v.energy_driven_kwh == doctest::Approx(0.45));
}

TEST_CASE("stations serve arrivals first come first served") {
    BatteryParams const b;
    auto fleet = fleet_of(4, 0.7);
    ChargingStation cs(1, 0, 3, 2);
    for (int i = 0; i < 4; ++i) cs.assign(fleet[static_cast<std::size_t>(i)], 0);
    CHECK(cs.pending() == 4);
    cs.submit_arrival(fleet[2], 0, 10);
    cs.submit_arrival(fleet[0], 0, 11);
    cs.submit_arrival(fleet[3], 0, 12);
    cs.submit_arrival(fleet[1], 0, 13);
    CHECK(cs.pending() == 0);
    CHECK(cs.charging() == std::vector<int>{2, 0});
    REQUIRE(cs.queue().size() == 2);
    CHECK(cs.queue()[0].vehicle == 3);
    CHECK(fleet[3].phase == Phase::Queuing);

    auto const f = cs.features(fleet, 20);
    CHECK(f[0] == 2);
    CHECK(f[1] == 2);
    CHECK(f[6] == doctest::Approx(7.5));  // waits 8 and 7 s
    CHECK(f[7] == doctest::Approx(0.5));
    CHECK(f[8] == 0);

    // run until the first pair finishes; queue head takes the freed pile at t + dt
    Seconds t = 20;
    std::vector<int> done;
    while (done.empty()) done = cs.update_charging(fleet, t++, 1, 50.0, 0.8, b);
    CHECK(done == std::vector<int>{2, 0});
    CHECK(fleet[2].t_c_end == t);
    CHECK(fleet[3].t_c == t);
    CHECK(fleet[1].t_c == t);
    CHECK(cs.queue().empty());
    CHECK(cs.load_kw(50.0) == doctest::Approx(100.0));
}

TEST_CASE("arrival at an unassigned station is rejected") {
    auto fleet = fleet_of(1);
    ChargingStation cs(1, 0, 3, 1);
    CHECK_THROWS_AS(cs.submit_arrival(fleet[0], 0, 5), StateError);
    CHECK_THROWS_AS(ChargingStation(2, 0, 3, 0), ValidationError);
}

TEST_CASE("charging ledger closes for random set-points") {
    BatteryParams const b;
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto fleet = fleet_of(3, rng.uniform(0.2, 0.6));
        ChargingStation cs(1, 0, 3, 1);
        for (auto& v : fleet) {
            cs.assign(v, 0);
            consume_driving_energy(v, rng.uniform(0.0, 5000.0), b);
        }
        for (auto& v : fleet) cs.submit_arrival(v, 0, 0);
        int finished = 0;
        for (Seconds t = 0; finished < 3; ++t) {
            finished += static_cast<int>(cs.update_charging(fleet, t, 1, rng.uniform(15.0, 50.0), 0.8, b).size());
        }
        for (auto const& v : fleet) {
            double const expected = v.soc_init + (v.energy_charged_kwh - v.energy_driven_kwh) / b.capacity_kwh;
            CHECK(std::abs(v.soc - expected) * b.capacity_kwh < 1e-9);
            CHECK(v.soc >= 0.8 - 1e-12);
            CHECK(v.t_w <= v.t_c);
            CHECK(v.t_c < v.t_c_end);
        }
    }
}

TEST_CASE("population mean and standard deviation") {
    std::vector<double> xs{1, 2, 3, 4};
    auto const [m, s] = mean_std(xs);
    CHECK(m == doctest::Approx(2.5));
    CHECK(s == doctest::Approx(std::sqrt(1.25)));
    auto const [m0, s0] = mean_std({});
    CHECK(m0 == 0.0);
    CHECK(s0 == 0.0);
}

TEST_CASE("parameter validation") {
    DroopParams d;
    d.v_ref1 = 0.96;
    CHECK_THROWS_AS(d.validate(), ValidationError);
    BatteryParams b;
    b.eta = 1.5;
    CHECK_THROWS_AS(b.validate(), ValidationError);
}
