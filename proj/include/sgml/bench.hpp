#pragma once

// Runtime scaling of the distance implementations on random normal clouds.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "sgml/distribution.hpp"
#include "sgml/error.hpp"
#include "sgml/exact_w2.hpp"
#include "sgml/ot.hpp"
#include "sgml/random.hpp"

namespace sgml {

enum class BenchMethod { rpw2_sequential, rpw2_quadratic, sw2, pw2, w2_oracle };

inline const char* to_string(BenchMethod m) {
    switch (m) {
        case BenchMethod::rpw2_sequential: return "rpw2-seq";
        case BenchMethod::rpw2_quadratic: return "rpw2-quad";
        case BenchMethod::sw2: return "sw2";
        case BenchMethod::pw2: return "pw2";
        case BenchMethod::w2_oracle: return "w2-oracle";
    }
    return "?";
}

inline BenchMethod parse_bench_method(const std::string& text) {
    for (auto m : {BenchMethod::rpw2_sequential, BenchMethod::rpw2_quadratic, BenchMethod::sw2,
                   BenchMethod::pw2, BenchMethod::w2_oracle}) {
        if (text == to_string(m)) return m;
    }
    throw ConfigError("unknown bench method '" + text + "'");
}

struct BenchSpec {
    std::vector<Eigen::Index> sizes{10, 100, 1000, 10000, 100000, 1000000};
    Eigen::Index dim = 5;
    int repetitions = 3;
    std::vector<BenchMethod> methods{BenchMethod::rpw2_sequential, BenchMethod::rpw2_quadratic,
                                     BenchMethod::sw2, BenchMethod::pw2, BenchMethod::w2_oracle};
    double quadratic_memory_budget = 8e9;  // bytes for the n x n cost matrix
    SlicedConfig sliced{};
    std::uint64_t seed = 0;

    void validate() const {
        if (sizes.empty()) throw ConfigError("bench needs at least one size");
        if (!std::is_sorted(sizes.begin(), sizes.end())) throw ConfigError("bench sizes must be ascending");
        if (sizes.front() < 1) throw ConfigError("bench sizes must be positive");
        if (repetitions < 1) throw ConfigError("bench repetitions must be >= 1");
        if (dim < 1) throw ConfigError("bench dimension must be >= 1");
    }
};

struct BenchRow {
    BenchMethod method{};
    Eigen::Index n = 0;
    bool skipped = false;
    std::string note;
    double median_seconds = 0.0;
    double distance = 0.0;
};

struct BenchSlope {
    BenchMethod method{};
    double slope = std::numeric_limits<double>::quiet_NaN();
    int points = 0;
};

inline DiscreteDistribution normal_cloud(Eigen::Index n, Eigen::Index dim, std::uint64_t seed) {
    Rng rng(seed);
    Matrix support(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < dim; ++k) support(i, k) = rng.normal();
    }
    return DiscreteDistribution::uniform(std::move(support));
}

/// Median wall time of `repetitions` calls after one discarded warm-up call.
template <typename F>
double median_seconds(F&& f, int repetitions, double& last_value) {
    last_value = f();
    std::vector<double> times;
    for (int r = 0; r < repetitions; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        last_value = f();
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    const auto mid = times.size() / 2;
    return times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
}

inline BenchRow bench_one(BenchMethod method, const DiscreteDistribution& a, const DiscreteDistribution& b,
                          const BenchSpec& spec) {
    BenchRow row;
    row.method = method;
    row.n = a.size();
    std::function<double()> f;
    switch (method) {
        case BenchMethod::rpw2_sequential: f = [&] { return rpw2_sequential(a, b); }; break;
        case BenchMethod::rpw2_quadratic: {
            const double bytes = 8.0 * static_cast<double>(a.size()) * static_cast<double>(b.size());
            if (bytes > spec.quadratic_memory_budget) {
                row.skipped = true;
                row.note = "cost matrix exceeds memory budget";
                return row;
            }
            f = [&] { return rpw2_quadratic(a, b); };
            break;
        }
        case BenchMethod::sw2: f = [&] { return sw2(a, b, spec.sliced); }; break;
        case BenchMethod::pw2: f = [&] { return pw2(a, b, spec.sliced); }; break;
        case BenchMethod::w2_oracle:
            if (a.size() * b.size() > kExactOracleMaxCells) {
                row.skipped = true;
                row.note = "beyond exact oracle size";
                return row;
            }
            f = [&] { return exact_w2_oracle(a, b); };
            break;
    }
    row.median_seconds = median_seconds(f, spec.repetitions, row.distance);
    return row;
}

/// For each size, two seeded clouds are drawn and every method timed on them.
inline std::vector<BenchRow> bench_scaling(const BenchSpec& spec) {
    spec.validate();
    std::vector<BenchRow> rows;
    for (Eigen::Index n : spec.sizes) {
        const auto a = normal_cloud(n, spec.dim, derive_seed(spec.seed, 2 * static_cast<std::uint64_t>(n)));
        const auto b = normal_cloud(n, spec.dim, derive_seed(spec.seed, 2 * static_cast<std::uint64_t>(n) + 1));
        for (BenchMethod m : spec.methods) {
            try {
                rows.push_back(bench_one(m, a, b, spec));
            } catch (const std::bad_alloc&) {
                BenchRow r;
                r.method = m;
                r.n = n;
                r.skipped = true;
                r.note = "out of memory";
                rows.push_back(r);
            }
        }
    }
    return rows;
}

/// Least-squares slope of log10(time) against log10(n) over n in [lo, hi].
inline BenchSlope fit_slope(const std::vector<BenchRow>& rows, BenchMethod method, double lo, double hi) {
    BenchSlope s;
    s.method = method;
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& r : rows) {
        if (r.method != method || r.skipped || r.median_seconds <= 0.0) continue;
        const auto n = static_cast<double>(r.n);
        if (n < lo || n > hi) continue;
        xs.push_back(std::log10(n));
        ys.push_back(std::log10(r.median_seconds));
    }
    s.points = static_cast<int>(xs.size());
    if (xs.size() < 2) return s;
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    s.slope = sxy / sxx;
    return s;
}

/// Slope of each method over the top decade of the measured sizes.
inline std::vector<BenchSlope> top_decade_slopes(const std::vector<BenchRow>& rows, const BenchSpec& spec) {
    std::vector<BenchSlope> out;
    const auto top = static_cast<double>(spec.sizes.back());
    for (BenchMethod m : spec.methods) out.push_back(fit_slope(rows, m, top / 10.0, top));
    return out;
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
    out << "method,n,median_seconds,distance,status\n";
    for (const auto& r : rows) {
        out << to_string(r.method) << ',' << r.n << ',' << std::setprecision(6) << r.median_seconds << ','
            << std::setprecision(17) << r.distance << ',' << (r.skipped ? "skipped: " + r.note : "ok") << '\n';
    }
}

}  // namespace sgml
