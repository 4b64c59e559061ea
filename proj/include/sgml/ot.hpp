#pragma once

// Sliced and projected optimal-transport distances between discrete
// distributions. Every distance here is built from monotone 1-D couplings.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgml/distribution.hpp"
#include "sgml/error.hpp"
#include "sgml/random.hpp"

namespace sgml {

enum class DistanceKind { rpw2, sw2, pw2 };
enum class Rpw2Impl { sequential, quadratic };

inline const char* to_string(DistanceKind kind) {
    switch (kind) {
        case DistanceKind::rpw2: return "rpw2";
        case DistanceKind::sw2: return "sw2";
        case DistanceKind::pw2: return "pw2";
    }
    return "?";
}

inline const char* to_string(Rpw2Impl impl) {
    return impl == Rpw2Impl::sequential ? "sequential" : "quadratic";
}

/// Monte-Carlo settings shared by SW2 and PW2.
struct SlicedConfig {
    int num_projections = 50;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (num_projections < 1) throw ConfigError("num_projections must be >= 1");
    }
};

namespace detail {

// Remaining masses closer than this are treated as equal by the merge, so
// rounding never produces near-zero entries.
inline constexpr double kMergeTolerance = 1e-14;

struct Keyed {
    double value;
    Eigen::Index index;
};

inline bool keyed_less(const Keyed& a, const Keyed& b) {
    return a.value < b.value || (a.value == b.value && a.index < b.index);
}

/// Sort order of a column; ties keep index order.
template <typename Column>
void sorted_order(const Column& values, std::vector<Keyed>& out) {
    const auto n = values.size();
    out.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = {values[i], i};
    std::sort(out.begin(), out.end(), keyed_less);
}

/// North-west-corner merge of two sorted weighted sequences. Calls
/// visit(source, target, mass) for each coupling entry in order.
template <typename Visit>
void monotone_merge(std::span<const Keyed> a, const Vector& wa, std::span<const Keyed> b,
                    const Vector& wb, Visit&& visit) {
    const std::size_t n = a.size();
    const std::size_t m = b.size();
    std::size_t i = 0;
    std::size_t j = 0;
    double ra = wa[a[0].index];
    double rb = wb[b[0].index];
    while (i < n && j < m) {
        const Eigen::Index si = a[i].index;
        const Eigen::Index tj = b[j].index;
        if (std::abs(ra - rb) <= kMergeTolerance) {
            visit(si, tj, std::min(ra, rb));
            ++i;
            ++j;
            if (i < n) ra = wa[a[i].index];
            if (j < m) rb = wb[b[j].index];
        } else if (ra < rb) {
            visit(si, tj, ra);
            rb -= ra;
            ++i;
            if (i < n) ra = wa[a[i].index];
        } else {
            visit(si, tj, rb);
            ra -= rb;
            ++j;
            if (j < m) rb = wb[b[j].index];
        }
    }
}

inline double squared_distance(const Matrix& x, Eigen::Index i, const Matrix& y, Eigen::Index j) {
    double s = 0.0;
    const double* xi = x.row(i).data();
    const double* yj = y.row(j).data();
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        const double d = xi[k] - yj[k];
        s += d * d;
    }
    return s;
}

inline void require_same_dim(const DiscreteDistribution& a, const DiscreteDistribution& b) {
    if (a.dim() != b.dim()) {
        throw DistanceError("support dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                            std::to_string(b.dim()));
    }
}

template <typename ColumnA, typename ColumnB>
TransportPlan monotone_plan(const ColumnA& xs, const Vector& wa, const ColumnB& ys,
                            const Vector& wb) {
    std::vector<Keyed> oa;
    std::vector<Keyed> ob;
    sorted_order(xs, oa);
    sorted_order(ys, ob);
    TransportPlan plan;
    plan.source_size = xs.size();
    plan.target_size = ys.size();
    plan.entries.reserve(oa.size() + ob.size() - 1);
    monotone_merge(oa, wa, ob, wb, [&](Eigen::Index i, Eigen::Index j, double mass) {
        plan.entries.push_back({i, j, mass});
    });
    return plan;
}

/// Unit directions, one per row, from normalized standard-normal draws.
inline Matrix sample_directions(Eigen::Index dim, const SlicedConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.rng_seed);
    Matrix dirs(cfg.num_projections, dim);
    for (Eigen::Index m = 0; m < dirs.rows(); ++m) {
        double norm = 0.0;
        do {
            for (Eigen::Index k = 0; k < dim; ++k) dirs(m, k) = rng.normal();
            norm = dirs.row(m).norm();
        } while (norm == 0.0);
        dirs.row(m) /= norm;
    }
    return dirs;
}

}  // namespace detail

struct OneDimensionalResult {
    TransportPlan plan;
    double squared_cost = 0.0;
};

/// Exact 1-D W2 by sorting both supports and merging.
inline OneDimensionalResult wasserstein_1d(const DiscreteDistribution& source,
                                           const DiscreteDistribution& target) {
    if (source.dim() != 1 || target.dim() != 1) {
        throw DistanceError("wasserstein_1d requires one-dimensional distributions");
    }
    OneDimensionalResult result;
    result.plan = detail::monotone_plan(source.support().col(0), source.weights(),
                                        target.support().col(0), target.weights());
    for (const auto& e : result.plan.entries) {
        const double d = source.support()(e.source, 0) - target.support()(e.target, 0);
        result.squared_cost += e.mass * d * d;
    }
    return result;
}

/// Monotone plans along each canonical axis.
inline std::vector<TransportPlan> axis_plans(const DiscreteDistribution& source,
                                             const DiscreteDistribution& target) {
    detail::require_same_dim(source, target);
    std::vector<TransportPlan> plans;
    plans.reserve(static_cast<std::size_t>(source.dim()));
    for (Eigen::Index k = 0; k < source.dim(); ++k) {
        plans.push_back(detail::monotone_plan(source.support().col(k), source.weights(),
                                              target.support().col(k), target.weights()));
    }
    return plans;
}

/// RPW2 without materializing any n x n' array: per axis, sort and merge,
/// costing each coupled pair in the ambient space on the fly.
inline double rpw2_sequential(const DiscreteDistribution& source,
                              const DiscreteDistribution& target) {
    detail::require_same_dim(source, target);
    const Matrix& x = source.support();
    const Matrix& y = target.support();
    const Eigen::Index p = source.dim();
    std::vector<detail::Keyed> oa;
    std::vector<detail::Keyed> ob;
    double cost = 0.0;
    for (Eigen::Index k = 0; k < p; ++k) {
        detail::sorted_order(x.col(k), oa);
        detail::sorted_order(y.col(k), ob);
        detail::monotone_merge(oa, source.weights(), ob, target.weights(),
                               [&](Eigen::Index i, Eigen::Index j, double mass) {
                                   cost += mass * detail::squared_distance(x, i, y, j);
                               });
    }
    return std::sqrt(cost / static_cast<double>(p));
}

namespace detail {

/// Cumulative mass strictly before each atom in (value, index) order, found
/// by direct counting rather than sorting. `positions` holds 0..n-1 as doubles
/// so the tie-break compares in the same vector lanes as the values.
inline void lower_quantiles(const double* values, const double* weights, const double* positions,
                            Eigen::Index n, double* lower) {
    for (Eigen::Index i = 0; i < n; ++i) {
        const double vi = values[i];
        const double pi = positions[i];
        double below = 0.0;
#pragma omp simd reduction(+ : below)
        for (Eigen::Index j = 0; j < n; ++j) {
            const bool before = (values[j] < vi) | ((values[j] == vi) & (positions[j] < pi));
            below += before ? weights[j] : 0.0;
        }
        lower[i] = below;
    }
}

}  // namespace detail

/// RPW2 through dense arrays: one shared n x n' squared-cost matrix, and for
/// every axis the dense monotone plan obtained as quantile-interval overlaps.
/// Memory is O(n n'); time O(p n n' + p (n^2 + n'^2)).
inline double rpw2_quadratic(const DiscreteDistribution& source,
                             const DiscreteDistribution& target) {
    detail::require_same_dim(source, target);
    const Eigen::Index n = source.size();
    const Eigen::Index m = target.size();
    const Eigen::Index p = source.dim();
    // Axis-major copies so every inner loop runs over contiguous memory.
    const Matrix xt = source.support().transpose();
    const Matrix yt = target.support().transpose();
    const double* wa = source.weights().data();
    const double* wb = target.weights().data();

    Matrix cost = Matrix::Zero(n, m);
    for (Eigen::Index k = 0; k < p; ++k) {
        const double* yk = yt.row(k).data();
        for (Eigen::Index i = 0; i < n; ++i) {
            const double xi = xt(k, i);
            double* row = cost.row(i).data();
#pragma omp simd
            for (Eigen::Index j = 0; j < m; ++j) {
                const double d = xi - yk[j];
                row[j] += d * d;
            }
        }
    }

    const Vector positions = Vector::LinSpaced(std::max(n, m), 0.0,
                                               static_cast<double>(std::max(n, m) - 1));
    Vector lo_x(n);
    Vector lo_y(m);
    Vector hi_y(m);
    double total = 0.0;
    for (Eigen::Index k = 0; k < p; ++k) {
        detail::lower_quantiles(xt.row(k).data(), wa, positions.data(), n, lo_x.data());
        detail::lower_quantiles(yt.row(k).data(), wb, positions.data(), m, lo_y.data());
        hi_y = lo_y + target.weights();
        const double* ly = lo_y.data();
        const double* hy = hi_y.data();
        for (Eigen::Index i = 0; i < n; ++i) {
            const double li = lo_x[i];
            const double hi = li + wa[i];
            const double* row = cost.row(i).data();
            double acc = 0.0;
            // Interval overlap of the two quantile cells is the monotone plan entry.
#pragma omp simd reduction(+ : acc)
            for (Eigen::Index j = 0; j < m; ++j) {
                const double upper = hi < hy[j] ? hi : hy[j];
                const double lower = li > ly[j] ? li : ly[j];
                double overlap = upper - lower;
                overlap = overlap > detail::kMergeTolerance ? overlap : 0.0;
                acc += overlap * row[j];
            }
            total += acc;
        }
    }
    return std::sqrt(total / static_cast<double>(p));
}

inline double rpw2(const DiscreteDistribution& source, const DiscreteDistribution& target,
                   Rpw2Impl impl = Rpw2Impl::sequential) {
    return impl == Rpw2Impl::sequential ? rpw2_sequential(source, target)
                                        : rpw2_quadratic(source, target);
}

namespace detail {

inline Vector project(const Matrix& support, const Eigen::RowVectorXd& direction) {
    return support * direction.transpose();
}

}  // namespace detail

/// Monte-Carlo sliced W2 over cfg.num_projections random unit directions.
inline double sw2(const DiscreteDistribution& source, const DiscreteDistribution& target,
                  const SlicedConfig& cfg = {}) {
    detail::require_same_dim(source, target);
    const Matrix dirs = detail::sample_directions(source.dim(), cfg);
    std::vector<detail::Keyed> oa;
    std::vector<detail::Keyed> ob;
    double total = 0.0;
    for (Eigen::Index m = 0; m < dirs.rows(); ++m) {
        const Vector px = detail::project(source.support(), dirs.row(m));
        const Vector py = detail::project(target.support(), dirs.row(m));
        detail::sorted_order(px, oa);
        detail::sorted_order(py, ob);
        detail::monotone_merge(oa, source.weights(), ob, target.weights(),
                               [&](Eigen::Index i, Eigen::Index j, double mass) {
                                   const double d = px[i] - py[j];
                                   total += mass * d * d;
                               });
    }
    return std::sqrt(total / static_cast<double>(dirs.rows()));
}

/// Projected W2: plans from random 1-D projections, costs in the ambient space.
inline double pw2(const DiscreteDistribution& source, const DiscreteDistribution& target,
                  const SlicedConfig& cfg = {}) {
    detail::require_same_dim(source, target);
    const Matrix dirs = detail::sample_directions(source.dim(), cfg);
    const Matrix& x = source.support();
    const Matrix& y = target.support();
    std::vector<detail::Keyed> oa;
    std::vector<detail::Keyed> ob;
    double total = 0.0;
    for (Eigen::Index m = 0; m < dirs.rows(); ++m) {
        const Vector px = detail::project(x, dirs.row(m));
        const Vector py = detail::project(y, dirs.row(m));
        detail::sorted_order(px, oa);
        detail::sorted_order(py, ob);
        detail::monotone_merge(oa, source.weights(), ob, target.weights(),
                               [&](Eigen::Index i, Eigen::Index j, double mass) {
                                   total += mass * detail::squared_distance(x, i, y, j);
                               });
    }
    return std::sqrt(total / static_cast<double>(dirs.rows()));
}

/// Number of (i, j, k) with x_i(k) == y_j(k) while x_i != y_j. Non-zero
/// counts mark instances where the 1-D tie-break can change the distance.
inline std::size_t tie_diagnostic(const DiscreteDistribution& source,
                                  const DiscreteDistribution& target) {
    detail::require_same_dim(source, target);
    const Matrix& x = source.support();
    const Matrix& y = target.support();
    std::size_t ties = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < y.rows(); ++j) {
            if (x.row(i) == y.row(j)) continue;
            for (Eigen::Index k = 0; k < x.cols(); ++k) {
                if (x(i, k) == y(j, k)) ++ties;
            }
        }
    }
    return ties;
}

/// The couplings behind one distance evaluation, kept so that gradients can be
/// taken with the plans held fixed.
struct Coupling {
    DistanceKind kind = DistanceKind::rpw2;
    Matrix directions;  // one row per projection; unused for rpw2 (canonical axes)
    std::vector<TransportPlan> plans;
    double squared = 0.0;

    double distance() const { return std::sqrt(squared); }
};

inline Coupling couple(const DiscreteDistribution& source, const DiscreteDistribution& target,
                       DistanceKind kind, const SlicedConfig& cfg = {}) {
    detail::require_same_dim(source, target);
    const Matrix& x = source.support();
    const Matrix& y = target.support();
    Coupling c;
    c.kind = kind;
    double total = 0.0;
    if (kind == DistanceKind::rpw2) {
        c.plans = axis_plans(source, target);
        for (const auto& plan : c.plans) {
            for (const auto& e : plan.entries) {
                total += e.mass * detail::squared_distance(x, e.source, y, e.target);
            }
        }
        c.squared = total / static_cast<double>(x.cols());
        return c;
    }
    c.directions = detail::sample_directions(source.dim(), cfg);
    c.plans.reserve(static_cast<std::size_t>(c.directions.rows()));
    for (Eigen::Index m = 0; m < c.directions.rows(); ++m) {
        const Vector px = detail::project(x, c.directions.row(m));
        const Vector py = detail::project(y, c.directions.row(m));
        c.plans.push_back(detail::monotone_plan(px, source.weights(), py, target.weights()));
        for (const auto& e : c.plans.back().entries) {
            if (kind == DistanceKind::sw2) {
                const double d = px[e.source] - py[e.target];
                total += e.mass * d * d;
            } else {
                total += e.mass * detail::squared_distance(x, e.source, y, e.target);
            }
        }
    }
    c.squared = total / static_cast<double>(c.directions.rows());
    return c;
}

/// Adds scale * d(squared distance)/d(support) for both sides, plans fixed.
inline void accumulate_squared_gradient(const Coupling& c, const Matrix& x, const Matrix& y,
                                        double scale, Matrix& grad_x, Matrix& grad_y) {
    const double per_plan = 2.0 * scale / static_cast<double>(c.plans.size());
    Eigen::RowVectorXd diff(x.cols());
    for (std::size_t m = 0; m < c.plans.size(); ++m) {
        for (const auto& e : c.plans[m].entries) {
            diff = x.row(e.source) - y.row(e.target);
            if (c.kind == DistanceKind::sw2) {
                const auto theta = c.directions.row(static_cast<Eigen::Index>(m));
                const double along = diff.dot(theta);
                diff = along * theta;
            }
            diff *= per_plan * e.mass;
            grad_x.row(e.source) += diff;
            grad_y.row(e.target) -= diff;
        }
    }
}

}  // namespace sgml
