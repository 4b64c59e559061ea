#pragma once

// Exact W2 for test-scale instances. Correctness over speed.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "sgml/distribution.hpp"
#include "sgml/error.hpp"

namespace sgml {

inline constexpr Eigen::Index kExactOracleMaxCells = 64;

namespace detail {

inline Matrix squared_cost_matrix(const Matrix& x, const Matrix& y) {
    Matrix cost(x.rows(), y.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < y.rows(); ++j) cost(i, j) = (x.row(i) - y.row(j)).squaredNorm();
    }
    return cost;
}

inline double assignment_min_cost(const Matrix& cost) {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(cost.rows()));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (Eigen::Index i = 0; i < cost.rows(); ++i) total += cost(i, perm[static_cast<std::size_t>(i)]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(cost.rows());
}

// Successive shortest paths with Bellman-Ford on the residual graph of the
// bipartite transport network source -> supply nodes -> demand nodes -> sink.
class MinCostFlow {
public:
    explicit MinCostFlow(int nodes) : adjacency_(static_cast<std::size_t>(nodes)) {}

    void add_arc(int from, int to, double capacity, double cost) {
        adjacency_[static_cast<std::size_t>(from)].push_back(static_cast<int>(arcs_.size()));
        arcs_.push_back({to, capacity, cost});
        adjacency_[static_cast<std::size_t>(to)].push_back(static_cast<int>(arcs_.size()));
        arcs_.push_back({from, 0.0, -cost});
    }

    /// Pushes up to `demand` units from s to t; returns the total cost.
    double solve(int s, int t, double demand) {
        constexpr double kEps = 1e-13;
        const auto nodes = adjacency_.size();
        // Residual cycles cost rounding error, not zero; relaxing along them loops the predecessor chain.
        double scale = 1.0;
        for (const Arc& arc : arcs_) scale = std::max(scale, std::abs(arc.cost));
        const double slack = 1e-12 * scale;
        double total = 0.0;
        double sent = 0.0;
        while (demand - sent > kEps) {
            std::vector<double> dist(nodes, std::numeric_limits<double>::infinity());
            std::vector<int> via(nodes, -1);
            dist[static_cast<std::size_t>(s)] = 0.0;
            for (std::size_t round = 0; round + 1 < nodes; ++round) {
                bool changed = false;
                for (std::size_t u = 0; u < nodes; ++u) {
                    if (!std::isfinite(dist[u])) continue;
                    for (int a : adjacency_[u]) {
                        const Arc& arc = arcs_[static_cast<std::size_t>(a)];
                        const auto v = static_cast<std::size_t>(arc.to);
                        if (arc.capacity > kEps && dist[u] + arc.cost < dist[v] - slack) {
                            dist[v] = dist[u] + arc.cost;
                            via[v] = a;
                            changed = true;
                        }
                    }
                }
                if (!changed) break;
            }
            if (via[static_cast<std::size_t>(t)] < 0) break;
            double push = demand - sent;
            std::size_t hops = 0;
            for (int v = t; v != s;) {
                if (++hops > nodes) throw OracleError("exact oracle: augmenting path has a cycle");
                const Arc& arc = arcs_[static_cast<std::size_t>(via[static_cast<std::size_t>(v)])];
                push = std::min(push, arc.capacity);
                v = arcs_[static_cast<std::size_t>(via[static_cast<std::size_t>(v)] ^ 1)].to;
            }
            for (int v = t; v != s;) {
                const int a = via[static_cast<std::size_t>(v)];
                arcs_[static_cast<std::size_t>(a)].capacity -= push;
                arcs_[static_cast<std::size_t>(a ^ 1)].capacity += push;
                total += push * arcs_[static_cast<std::size_t>(a)].cost;
                v = arcs_[static_cast<std::size_t>(a ^ 1)].to;
            }
            sent += push;
        }
        return total;
    }

private:
    struct Arc {
        int to;
        double capacity;
        double cost;
    };
    std::vector<std::vector<int>> adjacency_;
    std::vector<Arc> arcs_;
};

inline bool uniform_equal_size(const DiscreteDistribution& a, const DiscreteDistribution& b) {
    if (a.size() != b.size()) return false;
    const double w = 1.0 / static_cast<double>(a.size());
    auto flat = [w](const Vector& v) { return ((v.array() - w).abs() <= 1e-15).all(); };
    return flat(a.weights()) && flat(b.weights());
}

}  // namespace detail

/// Exact W2 (Euclidean ground cost) for instances with n * n' <= 64.
inline double exact_w2_oracle(const DiscreteDistribution& source,
                              const DiscreteDistribution& target) {
    if (source.dim() != target.dim()) throw DistanceError("support dimension mismatch");
    if (source.size() * target.size() > kExactOracleMaxCells) {
        throw OracleError("exact oracle limited to n * n' <= 64, got " +
                          std::to_string(source.size()) + " x " + std::to_string(target.size()));
    }
    const Matrix cost = detail::squared_cost_matrix(source.support(), target.support());
    if (detail::uniform_equal_size(source, target)) {
        return std::sqrt(std::max(0.0, detail::assignment_min_cost(cost)));
    }
    const int n = static_cast<int>(source.size());
    const int m = static_cast<int>(target.size());
    const int s = n + m;
    const int t = s + 1;
    detail::MinCostFlow flow(n + m + 2);
    for (int i = 0; i < n; ++i) flow.add_arc(s, i, source.weights()[i], 0.0);
    for (int j = 0; j < m; ++j) flow.add_arc(n + j, t, target.weights()[j], 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) flow.add_arc(i, n + j, 2.0, cost(i, j));
    }
    return std::sqrt(std::max(0.0, flow.solve(s, t, 1.0)));
}

}  // namespace sgml
