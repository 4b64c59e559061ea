#pragma once

// Metric learning on top of the SGCN embedding: class-cloud (NCCML) and NCA
// softmax losses, gradients through fixed transport plans, Adam, and the
// epoch/batch training loop.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sgml/distribution.hpp"
#include "sgml/error.hpp"
#include "sgml/graph_data.hpp"
#include "sgml/ot.hpp"
#include "sgml/random.hpp"
#include "sgml/sgcn.hpp"

namespace sgml {

enum class LossKind { nccml, nca };

inline const char* to_string(LossKind kind) { return kind == LossKind::nccml ? "nccml" : "nca"; }

inline LossKind parse_loss_kind(std::string_view text) {
    if (text == "nccml") return LossKind::nccml;
    if (text == "nca") return LossKind::nca;
    throw ConfigError("unknown loss '" + std::string(text) + "' (expected nccml or nca)");
}

inline DistanceKind parse_distance_kind(std::string_view text) {
    if (text == "rpw2") return DistanceKind::rpw2;
    if (text == "sw2") return DistanceKind::sw2;
    if (text == "pw2") return DistanceKind::pw2;
    throw ConfigError("unknown distance '" + std::string(text) + "' (expected rpw2, sw2 or pw2)");
}

struct TrainConfig {
    double learning_rate = 0.999e-2;
    int epochs = 10;
    int batch_size = 8;
    LossKind loss = LossKind::nccml;
    DistanceKind distance = DistanceKind::rpw2;
    int num_projections = 50;  // sw2 / pw2 only
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 2) throw ConfigError("batch size must be >= 2");
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
        if (num_projections < 1) throw ConfigError("num_projections must be >= 1");
    }
};

/// Distance between two graphs through their embeddings, with the couplings.
struct GraphDistance {
    double distance = 0.0;
    Coupling coupling;
};

inline GraphDistance pairwise_graph_distance(const Graph& g1, const Graph& g2,
                                             const SgcnParams& params, DistanceKind kind,
                                             const SlicedConfig& sliced = {}) {
    if (g1.feature_dim() != g2.feature_dim()) throw DistanceError("graphs have different feature widths");
    const Embedding e1 = embed(g1, params);
    const Embedding e2 = embed(g2, params);
    GraphDistance out;
    out.coupling = couple(e1.distribution, e2.distribution, kind, sliced);
    out.distance = out.coupling.distance();
    return out;
}

/// Loss value and its derivative with respect to every within-batch squared
/// distance (symmetric; entry (a, b) already sums both orderings).
struct SoftmaxLossTerms {
    double loss = 0.0;
    Matrix d_loss_d_squared;
};

namespace detail {

inline std::vector<int> present_classes(std::span<const int> labels) {
    std::set<int> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
}

inline void require_loss_batch(std::span<const int> labels, std::size_t rows) {
    if (labels.size() != rows) throw LossError("label count does not match distance matrix");
    if (labels.size() < 2) throw LossError("a batch needs at least two graphs");
}

}  // namespace detail

/// Class-cloud softmax loss from a batch's squared-distance matrix.
/// p(e | G) ∝ exp(-Σ_{G' in batch, label e} d²(G, G')), softmax over the
/// classes present in the batch; loss = -Σ_G log p(label(G) | G).
inline SoftmaxLossTerms nccml_terms(const Matrix& squared, std::span<const int> labels) {
    detail::require_loss_batch(labels, static_cast<std::size_t>(squared.rows()));
    const std::vector<int> classes = detail::present_classes(labels);
    if (classes.size() < 2) throw LossError("nccml needs at least two classes in the batch");
    const auto batch = static_cast<Eigen::Index>(labels.size());
    const auto num_classes = static_cast<Eigen::Index>(classes.size());
    std::vector<Eigen::Index> slot(labels.size());
    for (std::size_t b = 0; b < labels.size(); ++b) {
        slot[b] = std::lower_bound(classes.begin(), classes.end(), labels[b]) - classes.begin();
    }
    SoftmaxLossTerms out;
    out.d_loss_d_squared = Matrix::Zero(batch, batch);
    Vector cloud(num_classes);
    Vector prob(num_classes);
    for (Eigen::Index a = 0; a < batch; ++a) {
        cloud.setZero();
        for (Eigen::Index b = 0; b < batch; ++b) cloud[slot[static_cast<std::size_t>(b)]] += squared(a, b);
        const double shift = cloud.minCoeff();
        prob = (-(cloud.array() - shift)).exp();
        const double z = prob.sum();
        prob /= z;
        const Eigen::Index own = slot[static_cast<std::size_t>(a)];
        out.loss += cloud[own] - shift + std::log(z);
        for (Eigen::Index b = 0; b < batch; ++b) {
            if (b == a) continue;
            const Eigen::Index cb = slot[static_cast<std::size_t>(b)];
            const double coef = (cb == own ? 1.0 : 0.0) - prob[cb];
            out.d_loss_d_squared(a, b) += coef;
            out.d_loss_d_squared(b, a) += coef;
        }
    }
    return out;
}

/// NCA over a batch: P(i, j) = exp(-d²_ij) / Σ_{k≠k'} exp(-d²_kk'), loss =
/// -Σ_{i≠j, same label} P(i, j).
inline SoftmaxLossTerms nca_terms(const Matrix& squared, std::span<const int> labels) {
    detail::require_loss_batch(labels, static_cast<std::size_t>(squared.rows()));
    const auto batch = static_cast<Eigen::Index>(labels.size());
    double shift = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < batch; ++i) {
        for (Eigen::Index j = 0; j < batch; ++j) {
            if (i != j) shift = std::min(shift, squared(i, j));
        }
    }
    Matrix e = Matrix::Zero(batch, batch);
    double z = 0.0;
    double same = 0.0;
    for (Eigen::Index i = 0; i < batch; ++i) {
        for (Eigen::Index j = 0; j < batch; ++j) {
            if (i == j) continue;
            e(i, j) = std::exp(-(squared(i, j) - shift));
            z += e(i, j);
            if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) same += e(i, j);
        }
    }
    SoftmaxLossTerms out;
    out.loss = -same / z;
    out.d_loss_d_squared = Matrix::Zero(batch, batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
        for (Eigen::Index j = 0; j < batch; ++j) {
            if (i == j) continue;
            const bool match = labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)];
            out.d_loss_d_squared(i, j) += e(i, j) / z * ((match ? 1.0 : 0.0) - same / z);
        }
    }
    // Ordered pairs (i, j) and (j, i) share one squared distance.
    const Matrix sym = out.d_loss_d_squared + out.d_loss_d_squared.transpose();
    out.d_loss_d_squared = sym;
    return out;
}

struct LossResult {
    double loss = 0.0;
    Matrix gradient;  // q x p, dLoss/dΘ
};

/// Loss and dLoss/dΘ for one batch, given Ã^r X for every graph of the dataset.
/// Plans are held fixed while differentiating (they are piecewise constant in Θ).
inline LossResult batch_loss(std::span<const int> batch, const std::vector<Matrix>& propagated,
                             std::span<const int> labels, const SgcnParams& params, LossKind loss,
                             DistanceKind kind, const SlicedConfig& sliced = {}) {
    const auto size = static_cast<Eigen::Index>(batch.size());
    std::vector<int> batch_labels;
    std::vector<Embedding> emb;
    batch_labels.reserve(batch.size());
    emb.reserve(batch.size());
    for (int g : batch) {
        batch_labels.push_back(labels[static_cast<std::size_t>(g)]);
        emb.push_back(embed_propagated(propagated[static_cast<std::size_t>(g)], params));
    }
    Matrix squared = Matrix::Zero(size, size);
    std::vector<Coupling> couplings;
    couplings.reserve(batch.size() * (batch.size() - 1) / 2);
    for (Eigen::Index a = 0; a < size; ++a) {
        for (Eigen::Index b = a + 1; b < size; ++b) {
            couplings.push_back(couple(emb[static_cast<std::size_t>(a)].distribution,
                                       emb[static_cast<std::size_t>(b)].distribution, kind, sliced));
            squared(a, b) = squared(b, a) = couplings.back().squared;
        }
    }
    const SoftmaxLossTerms terms =
        loss == LossKind::nccml ? nccml_terms(squared, batch_labels) : nca_terms(squared, batch_labels);

    std::vector<Matrix> upstream;
    upstream.reserve(batch.size());
    for (const auto& e : emb) upstream.push_back(Matrix::Zero(e.support().rows(), e.support().cols()));
    std::size_t pair = 0;
    for (Eigen::Index a = 0; a < size; ++a) {
        for (Eigen::Index b = a + 1; b < size; ++b, ++pair) {
            const double w = terms.d_loss_d_squared(a, b);
            if (w == 0.0) continue;
            accumulate_squared_gradient(couplings[pair], emb[static_cast<std::size_t>(a)].support(),
                                        emb[static_cast<std::size_t>(b)].support(), w,
                                        upstream[static_cast<std::size_t>(a)],
                                        upstream[static_cast<std::size_t>(b)]);
        }
    }
    LossResult out;
    out.loss = terms.loss;
    out.gradient = Matrix::Zero(params.input_dim(), params.output_dim());
    for (std::size_t b = 0; b < emb.size(); ++b) out.gradient += embed_gradient(emb[b], params, upstream[b]);
    return out;
}

inline LossResult nccml_loss(std::span<const int> batch, const GraphDataset& dataset,
                             const SgcnParams& params, DistanceKind kind,
                             const SlicedConfig& sliced = {}) {
    std::vector<Matrix> propagated(dataset.size());
    for (int g : batch) {
        propagated[static_cast<std::size_t>(g)] =
            propagate(dataset.graphs[static_cast<std::size_t>(g)], params.depth, params.normalize_adjacency);
    }
    return batch_loss(batch, propagated, dataset.labels, params, LossKind::nccml, kind, sliced);
}

inline LossResult nca_loss(std::span<const int> batch, const GraphDataset& dataset,
                           const SgcnParams& params, DistanceKind kind,
                           const SlicedConfig& sliced = {}) {
    std::vector<Matrix> propagated(dataset.size());
    for (int g : batch) {
        propagated[static_cast<std::size_t>(g)] =
            propagate(dataset.graphs[static_cast<std::size_t>(g)], params.depth, params.normalize_adjacency);
    }
    return batch_loss(batch, propagated, dataset.labels, params, LossKind::nca, kind, sliced);
}

struct AdamState {
    Matrix first_moment;
    Matrix second_moment;
    long step_count = 0;
};

/// One bias-corrected Adam step, descending the loss.
inline void adam_step(AdamState& state, const Matrix& gradient, const TrainConfig& cfg, Matrix& theta) {
    if (gradient.rows() != theta.rows() || gradient.cols() != theta.cols()) {
        throw TrainingError("gradient shape does not match theta");
    }
    if (!gradient.allFinite()) throw TrainingError("non-finite gradient, aborting training");
    if (state.step_count == 0) {
        state.first_moment = Matrix::Zero(theta.rows(), theta.cols());
        state.second_moment = Matrix::Zero(theta.rows(), theta.cols());
    }
    ++state.step_count;
    state.first_moment = cfg.adam_beta1 * state.first_moment + (1.0 - cfg.adam_beta1) * gradient;
    state.second_moment =
        cfg.adam_beta2 * state.second_moment + (1.0 - cfg.adam_beta2) * gradient.cwiseAbs2();
    const auto t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
    theta.array() -= cfg.learning_rate * (state.first_moment.array() / c1) /
                     ((state.second_moment.array() / c2).sqrt() + cfg.adam_epsilon);
}

/// Partitions a shuffled index list into chunks of `batch_size`. A chunk
/// holding a single class is merged into the next one (the last into the
/// previous), so every batch has two or more classes.
inline std::vector<std::vector<int>> make_batches(std::span<const int> shuffled, int batch_size,
                                                  std::span<const int> labels) {
    std::vector<std::vector<int>> batches;
    std::vector<int> pending;
    auto multi_class = [&](const std::vector<int>& b) {
        for (int g : b) {
            if (labels[static_cast<std::size_t>(g)] != labels[static_cast<std::size_t>(b.front())]) return true;
        }
        return false;
    };
    for (std::size_t start = 0; start < shuffled.size(); start += static_cast<std::size_t>(batch_size)) {
        const auto stop = std::min(shuffled.size(), start + static_cast<std::size_t>(batch_size));
        pending.insert(pending.end(), shuffled.begin() + static_cast<std::ptrdiff_t>(start),
                       shuffled.begin() + static_cast<std::ptrdiff_t>(stop));
        if (multi_class(pending)) {
            batches.push_back(std::move(pending));
            pending.clear();
        }
    }
    if (!pending.empty()) {
        if (batches.empty()) throw TrainingError("training indices contain a single class");
        batches.back().insert(batches.back().end(), pending.begin(), pending.end());
    }
    return batches;
}

struct LossRecord {
    int epoch = 0;
    int batch = 0;
    double loss = 0.0;
};

struct TrainResult {
    SgcnParams params;
    std::vector<LossRecord> history;
};

/// Epoch/batch loop: shuffle, batch, one Adam step per batch.
/// `propagated` may hold precomputed Ã^r X for every dataset graph.
inline TrainResult train(const GraphDataset& dataset, std::span<const int> train_indices,
                         SgcnParams initial, const TrainConfig& cfg,
                         const std::vector<Matrix>* propagated = nullptr) {
    cfg.validate();
    initial.validate();
    if (train_indices.size() < 2) throw TrainingError("need at least two training graphs");
    std::vector<Matrix> own;
    if (propagated == nullptr) {
        own.resize(dataset.size());
        for (int g : train_indices) {
            own[static_cast<std::size_t>(g)] = propagate(dataset.graphs[static_cast<std::size_t>(g)],
                                                         initial.depth, initial.normalize_adjacency);
        }
        propagated = &own;
    }
    TrainResult result{std::move(initial), {}};
    AdamState adam;
    Rng rng(derive_seed(cfg.seed, 0xba7c));
    std::vector<int> order(train_indices.begin(), train_indices.end());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(std::span<int>(order));
        const auto batches = make_batches(order, cfg.batch_size, dataset.labels);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const SlicedConfig sliced{cfg.num_projections,
                                      derive_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) | b)};
            const LossResult lr = batch_loss(batches[b], *propagated, dataset.labels, result.params,
                                             cfg.loss, cfg.distance, sliced);
            if (!std::isfinite(lr.loss)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << " batch " << b << " (graphs";
                for (int g : batches[b]) msg << ' ' << g;
                msg << ')';
                throw TrainingError(msg.str());
            }
            result.history.push_back({epoch, static_cast<int>(b), lr.loss});
            adam_step(adam, lr.gradient, cfg, result.params.theta);
        }
    }
    return result;
}

inline void write_loss_history(const std::filesystem::path& path, std::span<const LossRecord> history) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "epoch,batch,loss\n" << std::setprecision(17);
    for (const auto& r : history) out << r.epoch << ',' << r.batch << ',' << r.loss << '\n';
}

}  // namespace sgml
