#pragma once

// Independent reference implementations the tests compare against.

#include "evrec/power.hpp"
#include "evrec/traffic.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <queue>
#include <vector>

namespace oracle {

/// Backward/forward sweep for a radial feeder with constant-power loads.
/// Returns bus voltage magnitudes.
inline std::vector<double> bfs_power_flow(evrec::power::PowerNetwork const& net,
                                          evrec::power::Injection const& inj, double tol = 1e-13,
                                          int max_iter = 500) {
    using C = std::complex<double>;
    auto const n = net.bus_count();
    std::vector<std::vector<std::pair<int, C>>> adj(n);
    for (auto const& l : net.lines()) {
        C const z(l.r_pu, l.x_pu);
        adj[l.from].emplace_back(l.to, z);
        adj[l.to].emplace_back(l.from, z);
    }
    // BFS order from the slack gives parents and a topological order.
    std::vector<int> parent(n, -1), order;
    std::vector<C> z_up(n);
    std::vector<bool> seen(n, false);
    std::queue<int> q;
    q.push(net.slack());
    seen[net.slack()] = true;
    while (!q.empty()) {
        int const u = q.front();
        q.pop();
        order.push_back(u);
        for (auto [v, z] : adj[u]) {
            if (seen[v]) continue;
            seen[v] = true;
            parent[v] = u;
            z_up[v] = z;
            q.push(v);
        }
    }
    std::vector<C> s(n), v(n, C(net.v_ref(), 0.0));
    for (std::size_t i = 0; i < n; ++i) s[i] = C(net.kw_to_pu(inj.p_kw[i]), net.kw_to_pu(inj.q_kvar[i]));
    for (int it = 0; it < max_iter; ++it) {
        std::vector<C> current(n);
        for (std::size_t i = 0; i < n; ++i) current[i] = std::conj(s[i] / v[i]);
        for (auto it2 = order.rbegin(); it2 != order.rend(); ++it2) {
            if (parent[*it2] >= 0) current[parent[*it2]] += current[*it2];
        }
        double change = 0.0;
        for (int u : order) {
            if (parent[u] < 0) continue;
            C const nv = v[parent[u]] - z_up[u] * current[u];
            change = std::max(change, std::abs(nv - v[u]));
            v[u] = nv;
        }
        if (change < tol) break;
    }
    std::vector<double> mag(n);
    for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(v[i]);
    return mag;
}

/// Receiving-end voltage of a single line feeding P + jQ (p.u.) from a 1.0 p.u. source.
inline double two_bus_voltage(double p, double q, double r, double x) {
    double const b = 2.0 * (p * r + q * x) - 1.0;
    double const c = (p * p + q * q) * (r * r + x * x);
    return std::sqrt((-b + std::sqrt(b * b - 4.0 * c)) / 2.0);
}

/// Floyd-Warshall distances between node indices.
inline std::vector<std::vector<double>> all_pairs(evrec::traffic::RoadNetwork const& net,
                                                  std::vector<double> const& cost) {
    auto const n = net.node_count();
    double const inf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> d(n, std::vector<double>(n, inf));
    for (std::size_t i = 0; i < n; ++i) d[i][i] = 0.0;
    for (std::size_t e = 0; e < net.link_count(); ++e) {
        auto const& l = net.links()[e];
        d[l.from][l.to] = std::min(d[l.from][l.to], cost[e]);
    }
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (d[i][k] + d[k][j] < d[i][j]) d[i][j] = d[i][k] + d[k][j];
    return d;
}

/// Â_t = Σ_k (γη)^k δ_{t+k}, evaluated as a plain double sum.
inline std::vector<double> brute_gae(std::vector<double> const& r, std::vector<double> const& v,
                                     double gamma, double eta) {
    auto const n = r.size();
    std::vector<double> out(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        double w = 1.0;
        for (std::size_t k = t; k < n; ++k) {
            out[t] += w * (r[k] + gamma * v[k + 1] - v[k]);
            w *= gamma * eta;
        }
    }
    return out;
}

/// Percentile by sorting and interpolating between neighbours at rank p/100·(n−1).
inline double sort_percentile(std::vector<double> xs, double p) {
    std::sort(xs.begin(), xs.end());
    double const pos = p / 100.0 * static_cast<double>(xs.size() - 1);
    auto const i = static_cast<std::size_t>(pos);
    if (i + 1 >= xs.size()) return xs.back();
    return xs[i] * (1.0 - (pos - static_cast<double>(i))) + xs[i + 1] * (pos - static_cast<double>(i));
}

inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Central differences of `loss` over every entry of `w`, restoring each entry afterwards.
template <class M, class F>
M central_difference(M& w, F&& loss, double h = 1e-6) {
    M g(w.rows(), w.cols());
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            double const keep = w(i, j);
            w(i, j) = keep + h;
            double const up = loss();
            w(i, j) = keep - h;
            double const down = loss();
            w(i, j) = keep;
            g(i, j) = (up - down) / (2.0 * h);
        }
    }
    return g;
}

/// ||a - b|| / max(||a||, ||b||), with a floor for all-zero blocks.
template <class M>
double block_rel_error(M const& a, M const& b) {
    return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-10});
}

}  // namespace oracle
