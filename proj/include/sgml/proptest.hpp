#pragma once

// Randomized invariant checks over the distances and the embedding.
// Each check returns a result instead of throwing so a driver can report all.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sgml/distribution.hpp"
#include "sgml/exact_w2.hpp"
#include "sgml/graph_data.hpp"
#include "sgml/ot.hpp"
#include "sgml/random.hpp"
#include "sgml/sgcn.hpp"
#include "sgml/train.hpp"

namespace sgml {

struct PropertyResult {
    std::string name;
    bool passed = true;
    int cases = 0;
    int failures = 0;
    double worst = 0.0;  // worst observed value of the checked quantity
    double seconds = 0.0;
    std::string detail;
};

struct ProptestConfig {
    std::uint64_t seed = 1;
    int triples = 1000;
    int oracle_instances = 500;
    int equivalence_instances = 1000;
    int gradient_instances = 100;
    int plan_instances = 200;
    int loss_gradient_batches = 50;
    Eigen::Index max_size = 300;
    Eigen::Index max_dim = 8;
};

inline constexpr double kIdentityThreshold = 1e-9;
inline constexpr double kTriangleSlack = 1e-7;
inline constexpr double kOracleSlack = 1e-9;
inline constexpr double kEquivalenceTolerance = 1e-9;
inline constexpr double kMarginalTolerance = 1e-12;
inline constexpr double kPermutationTolerance = 1e-12;
inline constexpr double kEmbedGradientTolerance = 1e-4;
inline constexpr double kLossGradientTolerance = 1e-3;

/// Random weights in [0.1, 1], normalized; or uniform when `uniform_weights`.
inline Vector random_weights(Rng& rng, Eigen::Index n, bool uniform_weights) {
    if (uniform_weights) return Vector::Constant(n, 1.0 / static_cast<double>(n));
    Vector w(n);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = rng.uniform(0.1, 1.0);
    return w / w.sum();
}

inline Matrix random_support(Rng& rng, Eigen::Index n, Eigen::Index dim, double spread = 1.0) {
    Matrix s(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < dim; ++k) s(i, k) = spread * rng.normal();
    }
    return s;
}

inline DiscreteDistribution random_distribution(Rng& rng, Eigen::Index n, Eigen::Index dim) {
    const bool uniform_weights = rng.uniform() < 0.5;
    const double shift = rng.uniform(-2.0, 2.0);
    Matrix s = random_support(rng, n, dim, rng.uniform(0.5, 2.0));
    s.array() += shift;
    return {std::move(s), random_weights(rng, n, uniform_weights)};
}

inline Eigen::Index random_size(Rng& rng, Eigen::Index max) {
    return 1 + static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(max)));
}

/// Same atoms in a shuffled order.
inline DiscreteDistribution permuted(const DiscreteDistribution& d, Rng& rng) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(d.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    rng.shuffle(std::span<Eigen::Index>(order));
    Matrix s(d.size(), d.dim());
    Vector w(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        s.row(i) = d.support().row(order[static_cast<std::size_t>(i)]);
        w[i] = d.weights()[order[static_cast<std::size_t>(i)]];
    }
    return {std::move(s), std::move(w)};
}

namespace detail {

template <typename Body>
PropertyResult timed_property(std::string name, Body&& body) {
    PropertyResult r;
    r.name = std::move(name);
    const auto t0 = std::chrono::steady_clock::now();
    body(r);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.passed = r.failures == 0 && r.cases > 0;
    return r;
}

inline void note_failure(PropertyResult& r, const std::string& what) {
    if (r.failures++ == 0) r.detail = what;
}

}  // namespace detail

/// Symmetry (bitwise), identity of indiscernibles both ways, triangle inequality.
inline PropertyResult check_metric_properties(const ProptestConfig& cfg) {
    return detail::timed_property("rpw2 metric properties", [&](PropertyResult& r) {
        Rng rng(derive_seed(cfg.seed, 1));
        for (int t = 0; t < cfg.triples; ++t) {
            const Eigen::Index dim = random_size(rng, cfg.max_dim);
            const auto mu = random_distribution(rng, random_size(rng, cfg.max_size), dim);
            const auto zeta = random_distribution(rng, random_size(rng, cfg.max_size), dim);
            const auto nu = random_distribution(rng, random_size(rng, cfg.max_size), dim);
            const double mn = rpw2(mu, nu);
            const double mz = rpw2(mu, zeta);
            const double zn = rpw2(zeta, nu);
            ++r.cases;
            if (rpw2(nu, mu) != mn) detail::note_failure(r, "asymmetric at triple " + std::to_string(t));
            const double scale = std::max({mn, mz, zn, 1.0});
            const double slack = (mz + zn - mn) / scale;
            r.worst = std::min(r.worst, slack);
            if (slack < -kTriangleSlack) detail::note_failure(r, "triangle violated at triple " + std::to_string(t));
            if (rpw2(mu, permuted(mu, rng)) > kIdentityThreshold) {
                detail::note_failure(r, "permuted copy at positive distance, triple " + std::to_string(t));
            }
            // Distinct draws from a continuous law differ almost surely.
            if (mn <= kIdentityThreshold) detail::note_failure(r, "distinct inputs at zero distance, triple " + std::to_string(t));
        }
        // Equal axis marginals but different joints.
        Matrix a(2, 2);
        a << 0, 0, 1, 1;
        Matrix b(2, 2);
        b << 0, 1, 1, 0;
        ++r.cases;
        if (rpw2(DiscreteDistribution::uniform(a), DiscreteDistribution::uniform(b)) <= kIdentityThreshold) {
            detail::note_failure(r, "equal-marginal instance at zero distance");
        }
    });
}

/// rpw2 >= exact W2 on oracle-sized instances, and the 1-D solver matches the oracle.
inline PropertyResult check_oracle_bounds(const ProptestConfig& cfg) {
    return detail::timed_property("rpw2 >= exact w2; 1-D exact", [&](PropertyResult& r) {
        Rng rng(derive_seed(cfg.seed, 2));
        for (int t = 0; t < cfg.oracle_instances; ++t) {
            const Eigen::Index n = random_size(rng, 8);
            const Eigen::Index m = random_size(rng, kExactOracleMaxCells / n);
            const Eigen::Index dim = random_size(rng, cfg.max_dim);
            const auto mu = random_distribution(rng, n, dim);
            const auto nu = random_distribution(rng, m, dim);
            const double gap = rpw2(mu, nu) - exact_w2_oracle(mu, nu);
            r.worst = std::min(r.worst, gap);
            ++r.cases;
            if (gap < -kOracleSlack) detail::note_failure(r, "rpw2 below exact w2 at instance " + std::to_string(t));

            const auto mu1 = random_distribution(rng, n, 1);
            const auto nu1 = random_distribution(rng, m, 1);
            const double one_d = std::sqrt(wasserstein_1d(mu1, nu1).squared_cost);
            const double exact = exact_w2_oracle(mu1, nu1);
            ++r.cases;
            if (std::abs(one_d - exact) > kOracleSlack * std::max(1.0, exact)) {
                detail::note_failure(r, "1-D solver disagrees with oracle at instance " + std::to_string(t));
            }
        }
    });
}

inline PropertyResult check_implementation_equivalence(const ProptestConfig& cfg) {
    return detail::timed_property("sequential == quadratic rpw2", [&](PropertyResult& r) {
        Rng rng(derive_seed(cfg.seed, 3));
        for (int t = 0; t < cfg.equivalence_instances; ++t) {
            const Eigen::Index dim = random_size(rng, cfg.max_dim);
            const auto mu = random_distribution(rng, random_size(rng, cfg.max_size), dim);
            const auto nu = random_distribution(rng, random_size(rng, cfg.max_size), dim);
            const double s = rpw2_sequential(mu, nu);
            const double q = rpw2_quadratic(mu, nu);
            const double rel = std::abs(s - q) / std::max(s, 1e-300);
            r.worst = std::max(r.worst, rel);
            ++r.cases;
            if (rel > kEquivalenceTolerance) detail::note_failure(r, "variants differ at instance " + std::to_string(t));
        }
    });
}

/// Marginals match the weights and no plan exceeds n + n' - 1 entries.
inline PropertyResult check_plan_validity(const ProptestConfig& cfg) {
    return detail::timed_property("plan marginals and size", [&](PropertyResult& r) {
        Rng rng(derive_seed(cfg.seed, 4));
        for (int t = 0; t < cfg.plan_instances; ++t) {
            const Eigen::Index dim = random_size(rng, cfg.max_dim);
            const auto mu = random_distribution(rng, random_size(rng, cfg.max_size), dim);
            const auto nu = random_distribution(rng, random_size(rng, cfg.max_size), dim);
            for (const auto kind : {DistanceKind::rpw2, DistanceKind::sw2, DistanceKind::pw2}) {
                const auto c = couple(mu, nu, kind, SlicedConfig{10, derive_seed(cfg.seed, t)});
                for (const auto& plan : c.plans) {
                    ++r.cases;
                    const double err = std::max((plan.row_marginals() - mu.weights()).cwiseAbs().maxCoeff(),
                                                (plan.column_marginals() - nu.weights()).cwiseAbs().maxCoeff());
                    r.worst = std::max(r.worst, err);
                    if (err > kMarginalTolerance) detail::note_failure(r, "marginal mismatch at instance " + std::to_string(t));
                    if (static_cast<Eigen::Index>(plan.entries.size()) > mu.size() + nu.size() - 1) {
                        detail::note_failure(r, "oversized plan at instance " + std::to_string(t));
                    }
                }
            }
        }
    });
}

/// Random undirected graph with continuous attributes.
inline Graph random_graph(Rng& rng, Eigen::Index n, Eigen::Index q, double edge_probability) {
    Graph g;
    g.attributes = random_support(rng, n, q);
    std::vector<Eigen::Triplet<double>> edges;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (rng.uniform() < edge_probability) {
                edges.emplace_back(i, j, 1.0);
                edges.emplace_back(j, i, 1.0);
            }
        }
    }
    g.adjacency.resize(n, n);
    g.adjacency.setFromTriplets(edges.begin(), edges.end());
    return g;
}

namespace detail {

// True when some axis holds a repeated value across the two supports together.
inline bool has_axis_ties(const Matrix& x, const Matrix& y) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        std::vector<double> v(x.col(k).begin(), x.col(k).end());
        v.insert(v.end(), y.col(k).begin(), y.col(k).end());
        std::sort(v.begin(), v.end());
        if (std::adjacent_find(v.begin(), v.end()) != v.end()) return true;
    }
    return false;
}

}  // namespace detail

/// Reordering the nodes of a graph leaves its distances to other graphs unchanged.
/// RPW2 is asserted on tie-free supports only (its tie-break follows node order);
/// SW2 on every instance.
inline PropertyResult check_node_permutation(const ProptestConfig& cfg) {
    return detail::timed_property("node-permutation invariance", [&](PropertyResult& r) {
        Rng rng(derive_seed(cfg.seed, 5));
        int attempts = 0;
        while (r.cases < cfg.gradient_instances && attempts < 20 * cfg.gradient_instances) {
            ++attempts;
            const Eigen::Index q = 1 + random_size(rng, 5);
            auto params = init_params(q, random_size(rng, q), static_cast<int>(rng.index(4)), false,
                                      derive_seed(cfg.seed, 500 + attempts));
            params.theta = params.theta.cwiseAbs();
            Graph g = random_graph(rng, random_size(rng, 20), q, 0.3);
            Graph other = random_graph(rng, random_size(rng, 20), q, 0.3);
            g.attributes = g.attributes.cwiseAbs();
            other.attributes = other.attributes.cwiseAbs();

            std::vector<int> order(static_cast<std::size_t>(g.node_count()));
            std::iota(order.begin(), order.end(), 0);
            rng.shuffle(std::span<int>(order));
            std::vector<Eigen::Triplet<double>> edges;
            for (int k = 0; k < g.adjacency.outerSize(); ++k) {
                for (SparseMatrix::InnerIterator it(g.adjacency, k); it; ++it) {
                    edges.emplace_back(order[static_cast<std::size_t>(it.row())],
                                       order[static_cast<std::size_t>(it.col())], it.value());
                }
            }
            Graph h;
            h.attributes.resize(g.attributes.rows(), g.attributes.cols());
            for (std::size_t i = 0; i < order.size(); ++i) {
                h.attributes.row(order[i]) = g.attributes.row(static_cast<Eigen::Index>(i));
            }
            h.adjacency.resize(g.node_count(), g.node_count());
            h.adjacency.setFromTriplets(edges.begin(), edges.end());

            const auto eg = embed(g, params);
            const auto eh = embed(h, params);
            const auto eo = embed(other, params);
            const SlicedConfig sliced{10, derive_seed(cfg.seed, 550 + attempts)};
            const double s1 = sw2(eg.distribution, eo.distribution, sliced);
            const double s2 = sw2(eh.distribution, eo.distribution, sliced);
            double rel = std::abs(s1 - s2) / std::max(s1, 1.0);
            if (!detail::has_axis_ties(eg.support(), eo.support())) {
                const double d1 = rpw2(eg.distribution, eo.distribution);
                const double d2 = rpw2(eh.distribution, eo.distribution);
                rel = std::max(rel, std::abs(d1 - d2) / std::max(d1, 1.0));
                ++r.cases;
            }
            r.worst = std::max(r.worst, rel);
            if (rel > kPermutationTolerance) {
                detail::note_failure(r, "distance changed under relabeling, attempt " + std::to_string(attempts));
            }
        }
        if (r.cases < cfg.gradient_instances) detail::note_failure(r, "too few tie-free instances");
    });
}

/// embed_gradient against central differences of <upstream, Y(Θ)>.
inline PropertyResult check_embed_gradient(const ProptestConfig& cfg) {
    return detail::timed_property("embed_gradient vs finite differences", [&](PropertyResult& r) {
        Rng rng(derive_seed(cfg.seed, 6));
        constexpr double step = 1e-6;
        int attempts = 0;
        while (r.cases < cfg.gradient_instances && attempts < 20 * cfg.gradient_instances) {
            ++attempts;
            const Eigen::Index q = 1 + random_size(rng, 5);
            const Eigen::Index p = random_size(rng, q);
            auto params = init_params(q, p, static_cast<int>(rng.index(4)), rng.uniform() < 0.5,
                                      derive_seed(cfg.seed, 600 + attempts));
            const Graph g = random_graph(rng, random_size(rng, 15), q, 0.3);
            const Matrix h = propagate(g, params.depth, params.normalize_adjacency);
            const auto forward = embed_propagated(h, params);
            const Matrix upstream = random_support(rng, g.node_count(), p);
            const Matrix analytic = embed_gradient(forward, params, upstream);

            Matrix numeric(q, p);
            bool stable = true;
            for (Eigen::Index i = 0; i < q && stable; ++i) {
                for (Eigen::Index j = 0; j < p && stable; ++j) {
                    auto plus = params;
                    auto minus = params;
                    plus.theta(i, j) += step;
                    minus.theta(i, j) -= step;
                    const auto ep = embed_propagated(h, plus);
                    const auto em = embed_propagated(h, minus);
                    stable = ep.relu_mask == forward.relu_mask && em.relu_mask == forward.relu_mask;
                    numeric(i, j) = (upstream.cwiseProduct(ep.support()).sum() -
                                     upstream.cwiseProduct(em.support()).sum()) / (2.0 * step);
                }
            }
            if (!stable) continue;
            const double rel = (analytic - numeric).norm() / std::max(numeric.norm(), 1e-8);
            r.worst = std::max(r.worst, rel);
            ++r.cases;
            if (rel > kEmbedGradientTolerance) detail::note_failure(r, "gradient mismatch, attempt " + std::to_string(attempts));
        }
        if (r.cases < cfg.gradient_instances) detail::note_failure(r, "too few mask-stable instances");
    });
}

namespace detail {

inline bool same_plan_structure(const Coupling& a, const Coupling& b) {
    if (a.plans.size() != b.plans.size()) return false;
    for (std::size_t k = 0; k < a.plans.size(); ++k) {
        const auto& ea = a.plans[k].entries;
        const auto& eb = b.plans[k].entries;
        if (ea.size() != eb.size()) return false;
        for (std::size_t i = 0; i < ea.size(); ++i) {
            if (ea[i].source != eb[i].source || ea[i].target != eb[i].target) return false;
        }
    }
    return true;
}

// Masks and plan supports of a batch at the given Θ.
struct BatchState {
    std::vector<Matrix> masks;
    std::vector<Coupling> couplings;
};

inline BatchState batch_state(const std::vector<Matrix>& propagated, const SgcnParams& params, DistanceKind kind,
                              const SlicedConfig& sliced) {
    BatchState s;
    std::vector<Embedding> emb;
    for (const auto& h : propagated) {
        emb.push_back(embed_propagated(h, params));
        s.masks.push_back(emb.back().relu_mask);
    }
    for (std::size_t a = 0; a < emb.size(); ++a) {
        for (std::size_t b = a + 1; b < emb.size(); ++b) {
            s.couplings.push_back(couple(emb[a].distribution, emb[b].distribution, kind, sliced));
        }
    }
    return s;
}

inline bool same_state(const BatchState& a, const BatchState& b) {
    if (a.masks != b.masks) return false;
    for (std::size_t i = 0; i < a.couplings.size(); ++i) {
        if (!same_plan_structure(a.couplings[i], b.couplings[i])) return false;
    }
    return true;
}

}  // namespace detail

/// Batch-loss gradient against central differences, at Θ where masks and plans are locally stable.
inline PropertyResult check_loss_gradient(const ProptestConfig& cfg, LossKind loss = LossKind::nccml) {
    const std::string name = std::string(to_string(loss)) + " gradient vs finite differences";
    return detail::timed_property(name, [&](PropertyResult& r) {
        Rng rng(derive_seed(cfg.seed, loss == LossKind::nccml ? 7 : 8));
        constexpr double step = 1e-6;
        constexpr DistanceKind kinds[] = {DistanceKind::rpw2, DistanceKind::sw2, DistanceKind::pw2};
        int attempts = 0;
        while (r.cases < cfg.loss_gradient_batches && attempts < 20 * cfg.loss_gradient_batches) {
            ++attempts;
            const Eigen::Index q = 1 + random_size(rng, 5);
            const Eigen::Index p = random_size(rng, q);
            const auto params = init_params(q, p, static_cast<int>(rng.index(3)), true,
                                            derive_seed(cfg.seed, 700 + attempts));
            const auto size = static_cast<int>(2 + rng.index(5));
            GraphDataset ds;
            std::vector<int> batch;
            for (int g = 0; g < size; ++g) {
                ds.graphs.push_back(random_graph(rng, random_size(rng, 8), q, 0.4));
                ds.labels.push_back(g < 2 ? g : static_cast<int>(rng.index(3)));
                batch.push_back(g);
            }
            const DistanceKind kind = kinds[rng.index(3)];
            const SlicedConfig sliced{5, derive_seed(cfg.seed, 800 + attempts)};
            std::vector<Matrix> propagated;
            for (const auto& g : ds.graphs) propagated.push_back(propagate(g, params.depth, true));

            const auto base = detail::batch_state(propagated, params, kind, sliced);
            const LossResult analytic = batch_loss(batch, propagated, ds.labels, params, loss, kind, sliced);
            Matrix numeric(q, p);
            bool stable = true;
            for (Eigen::Index i = 0; i < q && stable; ++i) {
                for (Eigen::Index j = 0; j < p && stable; ++j) {
                    auto plus = params;
                    auto minus = params;
                    plus.theta(i, j) += step;
                    minus.theta(i, j) -= step;
                    stable = detail::same_state(base, detail::batch_state(propagated, plus, kind, sliced)) &&
                             detail::same_state(base, detail::batch_state(propagated, minus, kind, sliced));
                    numeric(i, j) = (batch_loss(batch, propagated, ds.labels, plus, loss, kind, sliced).loss -
                                     batch_loss(batch, propagated, ds.labels, minus, loss, kind, sliced).loss) /
                                    (2.0 * step);
                }
            }
            if (!stable) continue;
            const double rel = (analytic.gradient - numeric).norm() / std::max(numeric.norm(), 1e-6);
            r.worst = std::max(r.worst, rel);
            ++r.cases;
            if (rel > kLossGradientTolerance) {
                detail::note_failure(r, "gradient mismatch (" + std::string(to_string(kind)) + "), attempt " +
                                            std::to_string(attempts));
            }
        }
        if (r.cases < cfg.loss_gradient_batches) detail::note_failure(r, "too few stable batches");
    });
}

inline std::vector<PropertyResult> run_property_suite(const ProptestConfig& cfg) {
    return {check_metric_properties(cfg),  check_oracle_bounds(cfg),    check_implementation_equivalence(cfg),
            check_plan_validity(cfg),      check_node_permutation(cfg), check_embed_gradient(cfg),
            check_loss_gradient(cfg, LossKind::nccml), check_loss_gradient(cfg, LossKind::nca)};
}

inline bool all_passed(const std::vector<PropertyResult>& results) {
    return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

inline void write_property_results(std::ostream& out, const std::vector<PropertyResult>& results) {
    for (const auto& r : results) {
        out << (r.passed ? "PASS " : "FAIL ") << r.name << "  cases=" << r.cases << " worst=" << r.worst
            << " time=" << r.seconds << "s";
        if (!r.detail.empty()) out << "  (" << r.detail << ", " << r.failures << " failing)";
        out << '\n';
    }
}

}  // namespace sgml
