#pragma once

// Simple graph convolution Y = ReLU(Ã^r X Θ), Ã = A + I, and the uniform
// distribution over the rows of Y.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "sgml/distribution.hpp"
#include "sgml/error.hpp"
#include "sgml/graph_data.hpp"
#include "sgml/random.hpp"

namespace sgml {

struct SgcnParams {
    Matrix theta;  // q x p
    int depth = 0;
    bool normalize_adjacency = false;
    std::uint64_t seed = 0;

    Eigen::Index input_dim() const { return theta.rows(); }
    Eigen::Index output_dim() const { return theta.cols(); }

    void validate() const {
        if (theta.rows() < 1 || theta.cols() < 1) throw ConfigError("theta must be non-empty");
        if (theta.cols() > theta.rows()) {
            throw ConfigError("output width p=" + std::to_string(theta.cols()) +
                              " exceeds input width q=" + std::to_string(theta.rows()));
        }
        if (!theta.allFinite()) throw ConfigError("theta is not finite");
        if (depth < 0) throw ConfigError("depth must be >= 0");
    }
};

/// Θ with entries uniform on ±sqrt(6 / (q + p)).
inline SgcnParams init_params(Eigen::Index q, Eigen::Index p, int depth, bool normalize,
                              std::uint64_t seed) {
    if (p < 1 || q < 1 || p > q) throw ConfigError("need 1 <= p <= q");
    SgcnParams params;
    params.depth = depth;
    params.normalize_adjacency = normalize;
    params.seed = seed;
    params.theta.resize(q, p);
    Rng rng(derive_seed(seed, 0x7e7a));
    const double bound = std::sqrt(6.0 / static_cast<double>(q + p));
    for (Eigen::Index i = 0; i < q; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) params.theta(i, j) = rng.uniform(-bound, bound);
    }
    params.validate();
    return params;
}

/// Default output width: min(5, q).
inline Eigen::Index default_output_dim(Eigen::Index q) { return std::min<Eigen::Index>(5, q); }

/// Ã^r X as r sparse products (or the symmetric-normalized operator).
inline Matrix propagate(const Graph& graph, int depth, bool normalize) {
    if (depth < 0) throw ConfigError("depth must be >= 0");
    Matrix h = graph.attributes;
    if (depth == 0) return h;
    const Eigen::Index n = graph.node_count();
    SparseMatrix identity(n, n);
    identity.setIdentity();
    SparseMatrix op = graph.adjacency + identity;
    if (normalize) {
        Vector inv_sqrt_degree(n);
        for (Eigen::Index i = 0; i < n; ++i) inv_sqrt_degree[i] = 1.0 / std::sqrt(op.row(i).sum());
        for (Eigen::Index i = 0; i < op.outerSize(); ++i) {
            for (SparseMatrix::InnerIterator it(op, i); it; ++it) {
                it.valueRef() *= inv_sqrt_degree[it.row()] * inv_sqrt_degree[it.col()];
            }
        }
    }
    Matrix next(h.rows(), h.cols());
    for (int step = 0; step < depth; ++step) {
        next.noalias() = op * h;
        std::swap(h, next);
    }
    return h;
}

/// Ã^r X for every graph of a dataset; Θ-independent, so computed once.
inline std::vector<Matrix> propagate_all(const GraphDataset& dataset, int depth, bool normalize) {
    std::vector<Matrix> out;
    out.reserve(dataset.size());
    for (const auto& g : dataset.graphs) out.push_back(propagate(g, depth, normalize));
    return out;
}

/// Forward record of one graph: the distribution plus what the backward pass needs.
struct Embedding {
    DiscreteDistribution distribution;
    Matrix features;   // Ã^r X
    Matrix relu_mask;  // 1 where the pre-activation is > 0
    Matrix theta;      // Θ used for this forward pass

    const Matrix& support() const { return distribution.support(); }
    bool all_zero() const { return (relu_mask.array() == 0.0).all(); }
};

inline Embedding embed_propagated(const Matrix& features, const SgcnParams& params) {
    if (features.cols() != params.input_dim()) {
        throw ConfigError("graph has " + std::to_string(features.cols()) +
                          " features but theta expects " + std::to_string(params.input_dim()));
    }
    Matrix pre = features * params.theta;
    Matrix mask = (pre.array() > 0.0).cast<double>();
    Matrix support = pre.cwiseMax(0.0);
    Embedding e{DiscreteDistribution::uniform(std::move(support)), features, std::move(mask),
                params.theta};
    return e;
}

inline Embedding embed(const Graph& graph, const SgcnParams& params) {
    Embedding e = embed_propagated(propagate(graph, params.depth, params.normalize_adjacency), params);
    if (e.all_zero()) {
        std::clog << "warning: graph " << graph.graph_id << " embeds to all-zero support\n";
    }
    return e;
}

/// dLoss/dΘ = Hᵀ (upstream ⊙ mask), given dLoss/dY for the recorded forward pass.
inline Matrix embed_gradient(const Embedding& forward, const SgcnParams& params,
                             const Matrix& upstream) {
    if (forward.theta.rows() != params.theta.rows() || forward.theta.cols() != params.theta.cols() ||
        forward.theta != params.theta) {
        throw ContractError("embed_gradient: forward pass was not run at the current theta");
    }
    if (upstream.rows() != forward.relu_mask.rows() || upstream.cols() != forward.relu_mask.cols()) {
        throw ContractError("embed_gradient: upstream shape does not match the embedding");
    }
    return forward.features.transpose() * upstream.cwiseProduct(forward.relu_mask);
}

// Checkpoint: "sgml-theta 1", then "q p depth normalize seed", then q rows of p values.
inline void save_checkpoint(const std::filesystem::path& path, const SgcnParams& params) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << "sgml-theta 1\n"
        << params.input_dim() << ' ' << params.output_dim() << ' ' << params.depth << ' '
        << (params.normalize_adjacency ? 1 : 0) << ' ' << params.seed << '\n';
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < params.theta.rows(); ++i) {
        for (Eigen::Index j = 0; j < params.theta.cols(); ++j) {
            out << (j ? " " : "") << params.theta(i, j);
        }
        out << '\n';
    }
    if (!out) throw Error("failed writing checkpoint " + path.string());
}

inline SgcnParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "sgml-theta" || version != 1) throw Error(path.string() + " is not a theta checkpoint");
    Eigen::Index q = 0;
    Eigen::Index p = 0;
    int normalize = 0;
    SgcnParams params;
    in >> q >> p >> params.depth >> normalize >> params.seed;
    if (!in || q < 1 || p < 1) throw Error(path.string() + ": malformed checkpoint header");
    params.normalize_adjacency = normalize != 0;
    params.theta.resize(q, p);
    for (Eigen::Index i = 0; i < q; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) in >> params.theta(i, j);
    }
    if (!in) throw Error(path.string() + ": truncated checkpoint");
    params.validate();
    return params;
}

}  // namespace sgml
