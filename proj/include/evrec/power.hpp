#pragma once

#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

namespace evrec::power {

enum class BusType { Slack, PQ };

struct Bus {
    int id = 0;
    BusType type = BusType::PQ;
    double p_kw = 0.0;    ///< base active load
    double q_kvar = 0.0;  ///< base reactive load
};

/// Series branch between two bus indices, impedance in per unit.
struct Line {
    int from = 0;
    int to = 0;
    double r_pu = 0.0;
    double x_pu = 0.0;
};

class PowerNetwork {
public:
    PowerNetwork() = default;
    PowerNetwork(std::vector<Bus> buses, std::vector<Line> lines, double base_mva, double base_kv,
                 double v_ref = 1.0);

    [[nodiscard]] std::vector<Bus> const& buses() const noexcept { return buses_; }
    [[nodiscard]] std::vector<Line> const& lines() const noexcept { return lines_; }
    [[nodiscard]] std::size_t bus_count() const noexcept { return buses_.size(); }
    [[nodiscard]] int slack() const noexcept { return slack_; }
    [[nodiscard]] double base_mva() const noexcept { return base_mva_; }
    [[nodiscard]] double base_kv() const noexcept { return base_kv_; }
    [[nodiscard]] double v_ref() const noexcept { return v_ref_; }

    [[nodiscard]] bool has_bus(int id) const { return index_.contains(id); }
    /// Throws ReferenceError for unknown ids.
    [[nodiscard]] int bus_index(int id) const;

    [[nodiscard]] double kw_to_pu(double kw) const { return kw / (base_mva_ * 1000.0); }

private:
    std::vector<Bus> buses_;
    std::vector<Line> lines_;
    std::unordered_map<int, int> index_;
    int slack_ = 0;
    double base_mva_ = 1.0;
    double base_kv_ = 1.0;
    double v_ref_ = 1.0;
};

/// Reads `buses.csv` and `lines.csv` from `dir`. The first comment of buses.csv
/// declares `base_mva` and `base_kv`; line impedances in ohms are converted to p.u.
[[nodiscard]] PowerNetwork load_power_network(std::filesystem::path const& dir);

/// Per-bus consumption at one instant. Positive values are load.
struct Injection {
    std::vector<double> p_kw;
    std::vector<double> q_kvar;
};

/// Base loads multiplied by `scale`.
[[nodiscard]] Injection base_injections(PowerNetwork const& net, double scale = 1.0);

/// Base loads plus station charging loads on their buses (active power only).
/// `cs_bus[m]` is the bus index of station m. Stations on the slack bus are rejected.
[[nodiscard]] Injection bus_injections(PowerNetwork const& net, std::span<double const> cs_loads_kw,
                                       std::span<int const> cs_bus, double base_scale = 1.0);

struct PFSolution {
    std::vector<double> v;
    std::vector<double> theta;
    int iterations = 0;
    double residual = 0.0;  ///< max |power mismatch| in p.u.
};

struct SolverOptions {
    double tol = 1e-8;
    int max_iter = 30;
};

/// Newton-Raphson AC power flow from a flat start. Throws ConvergenceError when
/// the mismatch stays above `tol` after `max_iter` updates or the Jacobian is singular.
[[nodiscard]] PFSolution solve_power_flow(PowerNetwork const& net, Injection const& inj,
                                          SolverOptions const& opts = {});

/// Largest |P| or |Q| mismatch (p.u.) over the PQ buses for a candidate solution.
[[nodiscard]] double max_mismatch(PowerNetwork const& net, Injection const& inj,
                                  std::span<double const> v, std::span<double const> theta);

struct Deviation {
    std::vector<double> per_bus;
    double average = 0.0;
};

[[nodiscard]] Deviation voltage_deviation(PFSolution const& sol, double v_ref = 1.0);
[[nodiscard]] double average_voltage(PFSolution const& sol);
[[nodiscard]] double min_voltage(PFSolution const& sol);

}  // namespace evrec::power
