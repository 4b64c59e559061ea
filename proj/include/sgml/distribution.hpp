#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "sgml/error.hpp"

namespace sgml {

/// Row-major dense matrix; rows are points / nodes.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Weighted point cloud in R^p with strictly positive weights summing to one.
class DiscreteDistribution {
public:
    static constexpr double kWeightSumTolerance = 1e-12;
    static constexpr double kRenormalizeTolerance = 1e-9;

    DiscreteDistribution(Matrix support, Vector weights)
        : support_(std::move(support)), weights_(std::move(weights)) {
        if (support_.rows() == 0 || support_.cols() == 0) {
            throw DistributionError("distribution support must be non-empty with p >= 1");
        }
        if (weights_.size() != support_.rows()) {
            throw DistributionError("weight count " + std::to_string(weights_.size()) +
                                    " does not match support size " +
                                    std::to_string(support_.rows()));
        }
        if (!support_.allFinite()) throw DistributionError("distribution support is not finite");
        for (Eigen::Index i = 0; i < weights_.size(); ++i) {
            if (!(weights_[i] > 0.0) || !std::isfinite(weights_[i])) {
                throw DistributionError("weights must be strictly positive and finite");
            }
        }
        const double total = weights_.sum();
        if (std::abs(total - 1.0) > kRenormalizeTolerance) {
            throw DistributionError("weights sum to " + std::to_string(total) + ", expected 1");
        }
        if (std::abs(total - 1.0) > kWeightSumTolerance) weights_ /= total;
    }

    static DiscreteDistribution uniform(Matrix support) {
        const auto n = support.rows();
        Vector weights = Vector::Constant(n, n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
        return {std::move(support), std::move(weights)};
    }

    const Matrix& support() const { return support_; }
    const Vector& weights() const { return weights_; }
    Eigen::Index size() const { return support_.rows(); }
    Eigen::Index dim() const { return support_.cols(); }

private:
    Matrix support_;
    Vector weights_;
};

struct PlanEntry {
    Eigen::Index source;
    Eigen::Index target;
    double mass;
};

/// Sparse coupling between two discrete distributions.
struct TransportPlan {
    std::vector<PlanEntry> entries;
    Eigen::Index source_size = 0;
    Eigen::Index target_size = 0;

    Vector row_marginals() const {
        Vector rows = Vector::Zero(source_size);
        for (const auto& e : entries) rows[e.source] += e.mass;
        return rows;
    }

    Vector column_marginals() const {
        Vector cols = Vector::Zero(target_size);
        for (const auto& e : entries) cols[e.target] += e.mass;
        return cols;
    }
};

/// Debug dump, one `i,j,mass` line per entry.
inline void write_plan(std::ostream& out, const TransportPlan& plan) {
    const auto old_precision = out.precision(17);
    for (const auto& e : plan.entries) out << e.source << ',' << e.target << ',' << e.mass << '\n';
    out.precision(old_precision);
}

}  // namespace sgml
