#pragma once

// Pairwise distance matrices, k-NN classification, the split / train /
// cross-validate evaluation protocol, and kernel export.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sgml/distribution.hpp"
#include "sgml/error.hpp"
#include "sgml/graph_data.hpp"
#include "sgml/ot.hpp"
#include "sgml/random.hpp"
#include "sgml/sgcn.hpp"
#include "sgml/train.hpp"

namespace sgml {

struct DistanceMatrix {
    Matrix values;               // symmetric, zero diagonal
    std::vector<int> index_map;  // dataset index of each row

    Eigen::Index size() const { return values.rows(); }
};

struct DistanceOptions {
    DistanceKind kind = DistanceKind::rpw2;
    Rpw2Impl impl = Rpw2Impl::sequential;
    SlicedConfig sliced{};
    unsigned threads = 1;
};

inline double distribution_distance(const DiscreteDistribution& a, const DiscreteDistribution& b,
                                    const DistanceOptions& opt) {
    switch (opt.kind) {
        case DistanceKind::rpw2: return rpw2(a, b, opt.impl);
        case DistanceKind::sw2: return sw2(a, b, opt.sliced);
        case DistanceKind::pw2: return pw2(a, b, opt.sliced);
    }
    return 0.0;
}

/// Embeds each listed graph once, then fills the upper triangle and mirrors it.
/// Rows are split across `threads` workers; each cell is written by one worker,
/// so the result does not depend on the thread count.
inline DistanceMatrix distance_matrix(const GraphDataset& dataset, std::span<const int> indices,
                                      const SgcnParams& params, const DistanceOptions& opt = {}) {
    params.validate();
    const auto n = static_cast<Eigen::Index>(indices.size());
    std::vector<DiscreteDistribution> dists;
    dists.reserve(indices.size());
    int all_zero = 0;
    for (int g : indices) {
        const Graph& graph = dataset.graphs.at(static_cast<std::size_t>(g));
        auto e = embed_propagated(propagate(graph, params.depth, params.normalize_adjacency), params);
        all_zero += e.all_zero();
        dists.push_back(std::move(e.distribution));
    }
    if (all_zero > 0) {
        std::clog << "warning: " << all_zero << " of " << n << " graphs embed to all-zero support (depth "
                  << params.depth << ")\n";
    }
    DistanceMatrix out;
    out.index_map.assign(indices.begin(), indices.end());
    out.values = Matrix::Zero(n, n);
    auto fill_rows = [&](unsigned worker, unsigned workers) {
        for (Eigen::Index i = worker; i < n; i += workers) {
            for (Eigen::Index j = i + 1; j < n; ++j) {
                out.values(i, j) = distribution_distance(dists[static_cast<std::size_t>(i)],
                                                         dists[static_cast<std::size_t>(j)], opt);
            }
        }
    };
    const unsigned workers = std::max(1u, opt.threads);
    if (workers == 1) {
        fill_rows(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(fill_rows, w, workers);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) out.values(j, i) = out.values(i, j);
    }
    return out;
}

/// Majority vote among the k nearest rows of `train_rows` (positions in the
/// matrix). Nearest-neighbour ties in distance keep the lower row position;
/// vote ties go to the smaller summed distance, then the smaller class id.
inline int knn_predict(std::span<const int> train_rows, std::span<const int> train_labels,
                       int test_row, int k, const DistanceMatrix& matrix) {
    if (train_rows.size() != train_labels.size()) throw ProtocolError("train rows and labels differ in length");
    if (k < 1 || static_cast<std::size_t>(k) > train_rows.size()) {
        throw ProtocolError("k = " + std::to_string(k) + " outside [1, " + std::to_string(train_rows.size()) + "]");
    }
    std::vector<std::size_t> order(train_rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto dist = [&](std::size_t t) { return matrix.values(test_row, train_rows[t]); };
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::size_t a, std::size_t b) {
        const double da = dist(a);
        const double db = dist(b);
        return da < db || (da == db && train_rows[a] < train_rows[b]);
    });
    std::map<int, std::pair<int, double>> votes;  // label -> (count, summed distance)
    for (int r = 0; r < k; ++r) {
        auto& v = votes[train_labels[order[static_cast<std::size_t>(r)]]];
        ++v.first;
        v.second += dist(order[static_cast<std::size_t>(r)]);
    }
    int best = votes.begin()->first;
    for (const auto& [label, v] : votes) {
        const auto& b = votes[best];
        if (v.first > b.first || (v.first == b.first && v.second < b.second)) best = label;
    }
    return best;
}

/// Entrywise exp(-λ d).
inline Matrix kernel_matrix(const DistanceMatrix& matrix, double lambda) {
    if (!(lambda > 0.0)) throw ConfigError("kernel lambda must be > 0");
    return (-lambda * matrix.values.array()).exp().matrix();
}

/// n values evenly spaced in log10 between lo and hi (inclusive).
inline std::vector<double> log_grid(double lo, double hi, int n) {
    std::vector<double> out;
    const double a = std::log10(lo);
    const double b = std::log10(hi);
    for (int i = 0; i < n; ++i) out.push_back(std::pow(10.0, n == 1 ? a : a + (b - a) * i / (n - 1)));
    return out;
}

/// Kernel bandwidths exported with the kernel: 6 log-spaced values in [1e-4, 1e1].
inline std::vector<double> default_lambda_grid() { return log_grid(1e-4, 1e1, 6); }

/// SVM C values for external solvers: 12 log-spaced values in [1e-4, 1e5], the
/// one nearest 1 snapped to exactly 1.
inline std::vector<double> default_c_grid() {
    auto grid = log_grid(1e-4, 1e5, 12);
    auto nearest = std::min_element(grid.begin(), grid.end(), [](double a, double b) {
        return std::abs(std::log10(a)) < std::abs(std::log10(b));
    });
    *nearest = 1.0;
    return grid;
}

struct EvalProtocol {
    std::vector<int> k_grid{1, 2, 3, 5, 7};
    std::vector<int> r_grid{1, 2, 3, 4};
    int folds = 5;
    int runs = 10;
    double train_fraction = 0.9;
    std::vector<double> lambda_grid = default_lambda_grid();
    std::uint64_t seed = 0;

    void validate() const {
        if (k_grid.empty() || r_grid.empty()) throw ConfigError("protocol grids must be non-empty");
        if (folds < 2) throw ConfigError("need at least two folds");
        if (runs < 1) throw ConfigError("need at least one run");
        for (int k : k_grid) {
            if (k < 1) throw ConfigError("k must be >= 1");
        }
        for (int r : r_grid) {
            if (r < 0) throw ConfigError("depth must be >= 0");
        }
    }
};

/// Grid used for MUTAG-sized protocols: depths 1..7.
inline EvalProtocol extended_depth_protocol() {
    EvalProtocol p;
    p.r_grid = {1, 2, 3, 4, 5, 6, 7};
    return p;
}

/// Stratified k-fold assignment: each class is shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes stay balanced.
inline std::vector<std::vector<int>> stratified_folds(std::span<const int> items, std::span<const int> labels,
                                                      int folds, std::uint64_t seed) {
    if (folds < 2 || static_cast<std::size_t>(folds) > items.size()) {
        throw ProtocolError("cannot build " + std::to_string(folds) + " folds from " +
                            std::to_string(items.size()) + " items");
    }
    std::map<int, std::vector<int>> by_class;
    for (int i : items) by_class[labels[static_cast<std::size_t>(i)]].push_back(i);
    Rng rng(derive_seed(seed, 0xf01d));
    std::vector<std::vector<int>> out(static_cast<std::size_t>(folds));
    std::size_t next = 0;
    for (auto& [label, members] : by_class) {
        rng.shuffle(std::span<int>(members));
        for (int i : members) out[next++ % out.size()].push_back(i);
    }
    for (const auto& f : out) {
        if (f.empty()) throw ProtocolError("degenerate fold with no members");
    }
    return out;
}

struct TrainSettings {
    TrainConfig train;
    Eigen::Index output_dim = 0;  // 0 selects min(5, q)
    bool normalize_adjacency = false;
    DistanceOptions distance;     // used for the final matrix; kind must match train.distance
    // Ablation switch: skip training and use the random initial Θ.
    bool untrained = false;
};

struct RunReport {
    int run = 0;
    int r_star = 0;
    int k_star = 0;
    double val_acc = 0.0;
    double test_acc = 0.0;
};

struct ProtocolReport {
    std::vector<RunReport> runs;
    double mean = 0.0;
    double std = 0.0;  // population standard deviation of test accuracy
};

namespace detail {

inline double accuracy(int correct, std::size_t total) {
    return total == 0 ? 0.0 : 100.0 * correct / static_cast<double>(total);
}

inline void require_disjoint(std::span<const int> a, std::span<const int> b, const char* what) {
    std::set<int> s(a.begin(), a.end());
    for (int x : b) {
        if (s.count(x)) throw ProtocolError(std::string("test index leaked into ") + what);
    }
}

}  // namespace detail

/// Validation accuracy of k-NN with the given k, each fold predicted from the others.
inline double cross_validate_k(const DistanceMatrix& matrix, std::span<const int> labels,
                               const std::vector<std::vector<int>>& folds, int k) {
    int correct = 0;
    std::size_t total = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<int> rows;
        std::vector<int> row_labels;
        for (std::size_t g = 0; g < folds.size(); ++g) {
            if (g == f) continue;
            for (int i : folds[g]) {
                rows.push_back(i);
                row_labels.push_back(labels[static_cast<std::size_t>(i)]);
            }
        }
        const int kk = std::min<int>(k, static_cast<int>(rows.size()));
        for (int i : folds[f]) {
            correct += knn_predict(rows, row_labels, i, kk, matrix) == labels[static_cast<std::size_t>(i)];
            ++total;
        }
    }
    return detail::accuracy(correct, total);
}

/// Full protocol: per run a stratified split; per depth r, train on the train
/// split, cross-validate k on the train split with the learned distance; keep
/// the (r, k) with the best validation accuracy (ties: smaller r, then k) and
/// report its k-NN test accuracy with the whole train split as reference set.
inline ProtocolReport run_protocol(const GraphDataset& dataset, const EvalProtocol& protocol,
                                   const TrainSettings& settings) {
    protocol.validate();
    settings.train.validate();
    const Eigen::Index q = dataset.feature_dim();
    const Eigen::Index p = settings.output_dim > 0 ? settings.output_dim : default_output_dim(q);
    std::vector<int> all(dataset.size());
    std::iota(all.begin(), all.end(), 0);

    ProtocolReport report;
    for (int run = 0; run < protocol.runs; ++run) {
        const std::uint64_t run_seed = derive_seed(protocol.seed, static_cast<std::uint64_t>(run));
        const Split split = stratified_split(dataset, protocol.train_fraction, run_seed);
        detail::require_disjoint(split.test, split.train, "the train split");
        const auto folds = stratified_folds(split.train, dataset.labels, protocol.folds, run_seed);
        for (const auto& f : folds) detail::require_disjoint(split.test, f, "a validation fold");

        RunReport best;
        best.run = run;
        best.val_acc = -1.0;
        DistanceMatrix best_matrix;
        for (int r : protocol.r_grid) {
            SgcnParams params = init_params(q, p, r, settings.normalize_adjacency,
                                            derive_seed(run_seed, 0x1000 + static_cast<std::uint64_t>(r)));
            if (!settings.untrained) {
                TrainConfig cfg = settings.train;
                cfg.seed = derive_seed(run_seed, 0x2000 + static_cast<std::uint64_t>(r));
                const auto propagated = propagate_all(dataset, r, settings.normalize_adjacency);
                params = train(dataset, split.train, std::move(params), cfg, &propagated).params;
            }
            DistanceOptions opt = settings.distance;
            opt.kind = settings.train.distance;
            opt.sliced.num_projections = settings.train.num_projections;
            opt.sliced.rng_seed = derive_seed(run_seed, 0x3000 + static_cast<std::uint64_t>(r));
            DistanceMatrix matrix = distance_matrix(dataset, all, params, opt);
            for (int k : protocol.k_grid) {
                const double val = cross_validate_k(matrix, dataset.labels, folds, k);
                if (val > best.val_acc) {
                    best.val_acc = val;
                    best.r_star = r;
                    best.k_star = k;
                    best_matrix = matrix;
                }
            }
        }
        std::vector<int> train_labels;
        for (int i : split.train) train_labels.push_back(dataset.labels[static_cast<std::size_t>(i)]);
        const int k = std::min<int>(best.k_star, static_cast<int>(split.train.size()));
        int correct = 0;
        for (int i : split.test) {
            correct += knn_predict(split.train, train_labels, i, k, best_matrix) ==
                       dataset.labels[static_cast<std::size_t>(i)];
        }
        best.test_acc = detail::accuracy(correct, split.test.size());
        report.runs.push_back(best);
    }
    double sum = 0.0;
    for (const auto& r : report.runs) sum += r.test_acc;
    report.mean = sum / static_cast<double>(report.runs.size());
    double var = 0.0;
    for (const auto& r : report.runs) var += (r.test_acc - report.mean) * (r.test_acc - report.mean);
    report.std = std::sqrt(var / static_cast<double>(report.runs.size()));
    return report;
}

/// "N" on the first line, then N rows of N space-separated values.
inline void write_square_matrix(std::ostream& out, const Matrix& values) {
    out << values.rows() << '\n' << std::setprecision(17);
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) out << (j ? " " : "") << values(i, j);
        out << '\n';
    }
}

inline void write_square_matrix(const std::filesystem::path& path, const Matrix& values) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    write_square_matrix(out, values);
}

inline Matrix read_square_matrix(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    Eigen::Index n = 0;
    in >> n;
    if (!in || n < 0) throw Error(path.string() + ": bad matrix header");
    Matrix m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) in >> m(i, j);
    }
    if (!in) throw Error(path.string() + ": truncated matrix");
    return m;
}

/// CSV rows `run,r_star,k_star,val_acc,test_acc`, then `mean,std` and its values.
inline void write_report(std::ostream& out, const ProtocolReport& report) {
    out << "run,r_star,k_star,val_acc,test_acc\n" << std::fixed << std::setprecision(4);
    for (const auto& r : report.runs) {
        out << r.run << ',' << r.r_star << ',' << r.k_star << ',' << r.val_acc << ',' << r.test_acc << '\n';
    }
    out << "mean,std\n" << report.mean << ',' << report.std << '\n';
}

}  // namespace sgml
