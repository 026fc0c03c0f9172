#include "evrec/power.hpp"

#include "evrec/csv.hpp"
#include "evrec/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

namespace evrec::power {

PowerNetwork::PowerNetwork(std::vector<Bus> buses, std::vector<Line> lines, double base_mva,
                           double base_kv, double v_ref)
    : buses_(std::move(buses)), lines_(std::move(lines)), base_mva_(base_mva), base_kv_(base_kv),
      v_ref_(v_ref) {
    if (!(base_mva_ > 0.0) || !(base_kv_ > 0.0)) {
        throw ValidationError("power network: base_mva and base_kv must be > 0");
    }
    int slack_count = 0;
    for (std::size_t i = 0; i < buses_.size(); ++i) {
        if (!index_.emplace(buses_[i].id, static_cast<int>(i)).second) {
            throw ValidationError("duplicate bus id " + std::to_string(buses_[i].id));
        }
        if (buses_[i].type == BusType::Slack) {
            slack_ = static_cast<int>(i);
            ++slack_count;
        }
    }
    if (slack_count != 1) {
        throw ValidationError("power network needs exactly one slack bus, found " +
                              std::to_string(slack_count));
    }
    int const n = static_cast<int>(buses_.size());
    if (lines_.size() + 1 != buses_.size()) {
        throw ValidationError("power network is not radial: " + std::to_string(n) + " buses, " +
                              std::to_string(lines_.size()) + " lines");
    }
    std::vector<int> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    for (auto const& l : lines_) {
        if (l.from < 0 || l.from >= n || l.to < 0 || l.to >= n || l.from == l.to) {
            throw ReferenceError("line endpoint out of range");
        }
        if (l.r_pu < 0.0 || l.x_pu < 0.0) throw ValidationError("line r and x must be >= 0");
        if (l.r_pu == 0.0 && l.x_pu == 0.0) throw ValidationError("line with zero impedance");
        int const a = find(l.from);
        int const b = find(l.to);
        if (a == b) throw ValidationError("power network contains a loop");
        parent[a] = b;
    }
}

int PowerNetwork::bus_index(int id) const {
    auto const it = index_.find(id);
    if (it == index_.end()) throw ReferenceError("unknown bus " + std::to_string(id));
    return it->second;
}

PowerNetwork load_power_network(std::filesystem::path const& dir) {
    auto const buses_table = csv::read(dir / "buses.csv");
    auto const settings = csv::comment_settings(buses_table);
    auto setting = [&](char const* key) {
        auto const it = settings.find(key);
        if (it == settings.end()) {
            throw ParseError(buses_table.source, 1, std::string("missing header setting ") + key);
        }
        return std::stod(it->second);
    };
    double const base_mva = setting("base_mva");
    double const base_kv = setting("base_kv");

    std::vector<Bus> buses;
    std::unordered_map<int, int> index;
    for (auto const& row : buses_table.rows) {
        Bus b;
        b.id = static_cast<int>(buses_table.integer(row, "id"));
        auto const& type = buses_table.text(row, "type");
        if (type == "slack") {
            b.type = BusType::Slack;
        } else if (type == "pq") {
            b.type = BusType::PQ;
        } else {
            throw ParseError(buses_table.source, row.line, "unknown bus type '" + type + "'");
        }
        b.p_kw = buses_table.number(row, "p_base_kw");
        b.q_kvar = buses_table.number(row, "q_base_kvar");
        index.emplace(b.id, static_cast<int>(buses.size()));
        buses.push_back(b);
    }

    double const z_base = base_kv * base_kv / base_mva;
    auto const lines_table = csv::read(dir / "lines.csv");
    std::vector<Line> lines;
    for (auto const& row : lines_table.rows) {
        auto bus = [&](char const* col) {
            auto const id = static_cast<int>(lines_table.integer(row, col));
            auto const it = index.find(id);
            if (it == index.end()) {
                throw ReferenceError(lines_table.source + ":" + std::to_string(row.line) +
                                     ": unknown bus " + std::to_string(id));
            }
            return it->second;
        };
        lines.push_back(Line{bus("from"), bus("to"), lines_table.number(row, "r_ohm") / z_base,
                             lines_table.number(row, "x_ohm") / z_base});
    }
    return PowerNetwork(std::move(buses), std::move(lines), base_mva, base_kv);
}

Injection base_injections(PowerNetwork const& net, double scale) {
    Injection inj;
    for (auto const& b : net.buses()) {
        inj.p_kw.push_back(b.p_kw * scale);
        inj.q_kvar.push_back(b.q_kvar * scale);
    }
    return inj;
}

Injection bus_injections(PowerNetwork const& net, std::span<double const> cs_loads_kw,
                         std::span<int const> cs_bus, double base_scale) {
    if (cs_loads_kw.size() != cs_bus.size()) {
        throw ShapeError("bus_injections: load and coupling lengths differ");
    }
    auto inj = base_injections(net, base_scale);
    for (std::size_t m = 0; m < cs_bus.size(); ++m) {
        int const b = cs_bus[m];
        if (b < 0 || b >= static_cast<int>(net.bus_count())) {
            throw ReferenceError("charging station " + std::to_string(m) + " mapped to no bus");
        }
        if (b == net.slack()) {
            throw ValidationError("charging station " + std::to_string(m) +
                                  " mapped to the slack bus");
        }
        inj.p_kw[b] += cs_loads_kw[m];
    }
    return inj;
}

namespace {

using Complex = std::complex<double>;

Eigen::MatrixXcd admittance(PowerNetwork const& net) {
    auto const n = static_cast<Eigen::Index>(net.bus_count());
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    for (auto const& l : net.lines()) {
        Complex const ys = 1.0 / Complex(l.r_pu, l.x_pu);
        y(l.from, l.from) += ys;
        y(l.to, l.to) += ys;
        y(l.from, l.to) -= ys;
        y(l.to, l.from) -= ys;
    }
    return y;
}

struct Calc {
    Eigen::VectorXd p;
    Eigen::VectorXd q;
};

Calc injected_power(Eigen::MatrixXcd const& y, std::span<double const> v,
                    std::span<double const> theta) {
    auto const n = y.rows();
    Calc c{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            double const g = y(i, j).real();
            double const b = y(i, j).imag();
            if (g == 0.0 && b == 0.0) continue;
            double const d = theta[i] - theta[j];
            double const cs = std::cos(d);
            double const sn = std::sin(d);
            c.p[i] += v[i] * v[j] * (g * cs + b * sn);
            c.q[i] += v[i] * v[j] * (g * sn - b * cs);
        }
    }
    return c;
}

double mismatch_norm(PowerNetwork const& net, Injection const& inj, Calc const& c,
                     Eigen::VectorXd* out, std::vector<int> const& pq) {
    auto const m = static_cast<Eigen::Index>(pq.size());
    double worst = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
        int const i = pq[static_cast<std::size_t>(k)];
        double const dp = -net.kw_to_pu(inj.p_kw[i]) - c.p[i];
        double const dq = -net.kw_to_pu(inj.q_kvar[i]) - c.q[i];
        if (out) {
            (*out)[k] = dp;
            (*out)[m + k] = dq;
        }
        worst = std::max({worst, std::abs(dp), std::abs(dq)});
    }
    return worst;
}

std::vector<int> pq_buses(PowerNetwork const& net) {
    std::vector<int> pq;
    for (int i = 0; i < static_cast<int>(net.bus_count()); ++i) {
        if (i != net.slack()) pq.push_back(i);
    }
    return pq;
}

void check_injection(PowerNetwork const& net, Injection const& inj) {
    if (inj.p_kw.size() != net.bus_count() || inj.q_kvar.size() != net.bus_count()) {
        throw ShapeError("injection profile does not match bus count");
    }
}

}  // namespace

double max_mismatch(PowerNetwork const& net, Injection const& inj, std::span<double const> v,
                    std::span<double const> theta) {
    check_injection(net, inj);
    auto const y = admittance(net);
    return mismatch_norm(net, inj, injected_power(y, v, theta), nullptr, pq_buses(net));
}

PFSolution solve_power_flow(PowerNetwork const& net, Injection const& inj,
                            SolverOptions const& opts) {
    check_injection(net, inj);
    if (!(opts.tol > 0.0) || opts.max_iter < 1) {
        throw ValidationError("power flow: tol must be > 0 and max_iter >= 1");
    }
    auto const n = net.bus_count();
    auto const y = admittance(net);
    auto const pq = pq_buses(net);
    auto const m = static_cast<Eigen::Index>(pq.size());

    PFSolution sol;
    sol.v.assign(n, 1.0);
    sol.theta.assign(n, 0.0);
    sol.v[net.slack()] = net.v_ref();

    Eigen::VectorXd f(2 * m);
    Eigen::MatrixXd jac(2 * m, 2 * m);
    for (int iter = 0;; ++iter) {
        auto const c = injected_power(y, sol.v, sol.theta);
        double const worst = mismatch_norm(net, inj, c, &f, pq);
        sol.residual = worst;
        sol.iterations = iter;
        if (!std::isfinite(worst)) {
            throw ConvergenceError("power flow diverged", iter, worst);
        }
        if (worst < opts.tol) return sol;
        if (iter == opts.max_iter) {
            throw ConvergenceError("power flow did not converge in " + std::to_string(iter) +
                                       " iterations (residual " + std::to_string(worst) + ")",
                                   iter, worst);
        }

        // Unknowns: θ for each PQ bus, then V for each PQ bus.
        jac.setZero();
        for (Eigen::Index a = 0; a < m; ++a) {
            int const i = pq[static_cast<std::size_t>(a)];
            double const vi = sol.v[i];
            for (Eigen::Index b = 0; b < m; ++b) {
                int const j = pq[static_cast<std::size_t>(b)];
                if (i == j) {
                    double const g = y(i, i).real();
                    double const bb = y(i, i).imag();
                    jac(a, b) = -c.q[i] - bb * vi * vi;
                    jac(a, m + b) = c.p[i] / vi + g * vi;
                    jac(m + a, b) = c.p[i] - g * vi * vi;
                    jac(m + a, m + b) = c.q[i] / vi - bb * vi;
                    continue;
                }
                double const g = y(i, j).real();
                double const bb = y(i, j).imag();
                if (g == 0.0 && bb == 0.0) continue;
                double const d = sol.theta[i] - sol.theta[j];
                double const cs = std::cos(d);
                double const sn = std::sin(d);
                double const vj = sol.v[j];
                jac(a, b) = vi * vj * (g * sn - bb * cs);
                jac(a, m + b) = vi * (g * cs + bb * sn);
                jac(m + a, b) = -vi * vj * (g * cs + bb * sn);
                jac(m + a, m + b) = vi * (g * sn - bb * cs);
            }
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
        if (!(lu.rcond() > 1e-14)) {
            throw ConvergenceError("power flow Jacobian is singular", iter, worst);
        }
        Eigen::VectorXd const dx = lu.solve(f);
        for (Eigen::Index a = 0; a < m; ++a) {
            int const i = pq[static_cast<std::size_t>(a)];
            sol.theta[i] += dx[a];
            sol.v[i] += dx[m + a];
        }
    }
}

Deviation voltage_deviation(PFSolution const& sol, double v_ref) {
    Deviation d;
    d.per_bus.reserve(sol.v.size());
    for (double v : sol.v) d.per_bus.push_back(std::abs(v - v_ref));
    if (!d.per_bus.empty()) {
        d.average = std::accumulate(d.per_bus.begin(), d.per_bus.end(), 0.0) /
                    static_cast<double>(d.per_bus.size());
    }
    return d;
}

double average_voltage(PFSolution const& sol) {
    if (sol.v.empty()) return 0.0;
    return std::accumulate(sol.v.begin(), sol.v.end(), 0.0) / static_cast<double>(sol.v.size());
}

double min_voltage(PFSolution const& sol) {
    return sol.v.empty() ? 0.0 : *std::min_element(sol.v.begin(), sol.v.end());
}

}  // namespace evrec::power
