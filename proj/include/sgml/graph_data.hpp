#pragma once

// Attributed graph datasets in the TU graph-kernel collection layout.
//
//   <DS>_A.txt               edge list "u, v" with 1-based global node ids
//   <DS>_graph_indicator.txt graph id (1-based) of every node, one per line
//   <DS>_graph_labels.txt    class label of every graph, one per line
//   <DS>_node_labels.txt     optional discrete node label per line
//   <DS>_node_attributes.txt optional comma-separated reals per line
//
// Edges are symmetrized, duplicates collapse and self loops are dropped.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sgml/distribution.hpp"
#include "sgml/error.hpp"
#include "sgml/random.hpp"

namespace sgml {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Graph {
    int graph_id = 0;
    SparseMatrix adjacency;  // symmetric 0/1, zero diagonal
    Matrix attributes;       // n x q

    Eigen::Index node_count() const { return attributes.rows(); }
    Eigen::Index feature_dim() const { return attributes.cols(); }
};

struct GraphDataset {
    std::string name;
    std::vector<Graph> graphs;
    std::vector<int> labels;           // contiguous class ids 0..C-1
    std::vector<long> class_values;    // class id -> label as written in the file
    int degree_offset = 0;             // degree recipe: column c encodes degree c + degree_offset

    std::size_t size() const { return graphs.size(); }
    int num_classes() const { return static_cast<int>(class_values.size()); }
    Eigen::Index feature_dim() const { return graphs.empty() ? 0 : graphs.front().feature_dim(); }
};

enum class FeatureMode { raw_continuous, one_hot_labels, degree, extended_concat };

struct FeatureRecipe {
    FeatureMode mode = FeatureMode::degree;
    std::optional<int> degree_cap;  // larger degrees share the cap's column
    bool standardize = false;       // per-column z-score of continuous attributes
    std::optional<int> label_component;  // use one column of a multi-column label file
};

inline const char* to_string(FeatureMode mode) {
    switch (mode) {
        case FeatureMode::raw_continuous: return "raw";
        case FeatureMode::one_hot_labels: return "onehot";
        case FeatureMode::degree: return "degree";
        case FeatureMode::extended_concat: return "extended";
    }
    return "?";
}

inline FeatureMode parse_feature_mode(std::string_view text) {
    if (text == "raw") return FeatureMode::raw_continuous;
    if (text == "onehot") return FeatureMode::one_hot_labels;
    if (text == "degree") return FeatureMode::degree;
    if (text == "extended") return FeatureMode::extended_concat;
    throw RecipeError("unknown feature recipe '" + std::string(text) +
                      "' (expected raw, onehot, degree or extended)");
}

/// Row i has a single 1 at column labels[i].
inline Matrix one_hot_encode(std::span<const int> labels, int domain_size) {
    if (domain_size < 1) throw EncodingError("one-hot domain size must be positive");
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), domain_size);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= domain_size) {
            throw EncodingError("label " + std::to_string(labels[i]) + " outside [0, " +
                                std::to_string(domain_size) + ")");
        }
        out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return out;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

// Splits a line on commas (and surrounding blanks) into numbers.
template <typename T>
std::vector<T> parse_fields(std::string_view line, const std::filesystem::path& file,
                            std::size_t line_no) {
    std::vector<T> out;
    while (true) {
        const auto comma = line.find(',');
        const std::string_view field = trim(line.substr(0, comma));
        T value{};
        const auto* first = field.data();
        const auto* last = field.data() + field.size();
        const auto [ptr, ec] = std::from_chars(first, last, value);
        if (field.empty() || ec != std::errc{} || ptr != last) {
            throw LoadError(file.filename().string() + ":" + std::to_string(line_no) +
                            ": cannot parse '" + std::string(field) + "'");
        }
        out.push_back(value);
        if (comma == std::string_view::npos) break;
        line.remove_prefix(comma + 1);
    }
    return out;
}

template <typename T>
std::vector<std::vector<T>> read_rows(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw LoadError("cannot open " + file.string());
    std::vector<std::vector<T>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        rows.push_back(parse_fields<T>(line, file, line_no));
    }
    return rows;
}

template <typename T>
std::vector<T> read_column(const std::filesystem::path& file) {
    std::vector<T> out;
    for (auto& row : read_rows<T>(file)) {
        if (row.size() != 1) throw LoadError(file.filename().string() + ": expected one value per line");
        out.push_back(row.front());
    }
    return out;
}

/// Sorted distinct values and the index of each input in that order.
template <typename T>
std::pair<std::vector<T>, std::vector<int>> remap_contiguous(const std::vector<T>& values) {
    std::vector<T> distinct = values;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::vector<int> ids(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        ids[i] = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), values[i]) -
                                  distinct.begin());
    }
    return {std::move(distinct), std::move(ids)};
}

inline void standardize_columns(Matrix& values) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
        const double mean = values.col(c).mean();
        values.col(c).array() -= mean;
        const double sd = std::sqrt(values.col(c).squaredNorm() / static_cast<double>(values.rows()));
        if (sd > 0.0) values.col(c) /= sd;
    }
}

}  // namespace detail

/// Loads a TU-format dataset directory and builds node features per recipe.
inline GraphDataset tud_load(const std::filesystem::path& directory, const FeatureRecipe& recipe) {
    namespace fs = std::filesystem;
    auto dir = directory;
    if (!dir.has_filename()) dir = dir.parent_path();
    const std::string name = dir.filename().string();
    auto file_for = [&](const char* suffix) { return dir / (name + suffix); };
    auto require = [&](const fs::path& p) {
        if (!fs::is_regular_file(p)) throw LoadError("missing required file " + p.string());
    };

    const fs::path edges_file = file_for("_A.txt");
    const fs::path indicator_file = file_for("_graph_indicator.txt");
    const fs::path graph_labels_file = file_for("_graph_labels.txt");
    const fs::path node_labels_file = file_for("_node_labels.txt");
    const fs::path node_attrs_file = file_for("_node_attributes.txt");
    require(edges_file);
    require(indicator_file);
    require(graph_labels_file);
    const bool has_labels = fs::is_regular_file(node_labels_file);
    const bool has_attrs = fs::is_regular_file(node_attrs_file);
    if (!has_labels && !has_attrs) {
        throw LoadError("missing required file: need " + node_labels_file.string() + " or " +
                        node_attrs_file.string());
    }
    const bool needs_labels = recipe.mode == FeatureMode::one_hot_labels ||
                              recipe.mode == FeatureMode::extended_concat;
    const bool needs_attrs = recipe.mode == FeatureMode::raw_continuous ||
                             recipe.mode == FeatureMode::extended_concat;
    if (needs_labels && !has_labels) {
        throw RecipeError(std::string("recipe '") + to_string(recipe.mode) + "' needs " +
                          node_labels_file.filename().string());
    }
    if (needs_attrs && !has_attrs) {
        throw RecipeError(std::string("recipe '") + to_string(recipe.mode) + "' needs " +
                          node_attrs_file.filename().string());
    }
    if (recipe.degree_cap && *recipe.degree_cap < 0) throw RecipeError("degree cap must be >= 0");

    const auto indicator = detail::read_column<long>(indicator_file);
    const auto graph_label_values = detail::read_column<long>(graph_labels_file);
    const std::size_t num_nodes = indicator.size();
    const std::size_t num_graphs = graph_label_values.size();
    if (num_graphs == 0) throw LoadError(graph_labels_file.string() + " is empty");

    // Global node -> (graph, local index).
    std::vector<int> node_graph(num_nodes);
    std::vector<int> node_local(num_nodes);
    std::vector<int> graph_sizes(num_graphs, 0);
    for (std::size_t v = 0; v < num_nodes; ++v) {
        if (indicator[v] < 1 || static_cast<std::size_t>(indicator[v]) > num_graphs) {
            throw LoadError(indicator_file.filename().string() + ":" + std::to_string(v + 1) +
                            ": graph id " + std::to_string(indicator[v]) + " out of range");
        }
        const int g = static_cast<int>(indicator[v] - 1);
        node_graph[v] = g;
        node_local[v] = graph_sizes[static_cast<std::size_t>(g)]++;
    }
    for (std::size_t g = 0; g < num_graphs; ++g) {
        if (graph_sizes[g] == 0) throw LoadError("graph " + std::to_string(g + 1) + " has no nodes");
    }

    std::vector<std::vector<std::pair<int, int>>> graph_edges(num_graphs);
    const auto edge_rows = detail::read_rows<long>(edges_file);
    for (std::size_t e = 0; e < edge_rows.size(); ++e) {
        const auto& row = edge_rows[e];
        if (row.size() != 2) throw LoadError(edges_file.filename().string() + ": expected 'u, v' pairs");
        const long u = row[0] - 1;
        const long v = row[1] - 1;
        if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= num_nodes ||
            static_cast<std::size_t>(v) >= num_nodes) {
            throw LoadError(edges_file.filename().string() + ":" + std::to_string(e + 1) +
                            ": node id out of range");
        }
        const int g = node_graph[static_cast<std::size_t>(u)];
        if (g != node_graph[static_cast<std::size_t>(v)]) {
            throw LoadError(edges_file.filename().string() + ":" + std::to_string(e + 1) +
                            ": edge joins two graphs");
        }
        if (u == v) continue;
        const int a = node_local[static_cast<std::size_t>(u)];
        const int b = node_local[static_cast<std::size_t>(v)];
        graph_edges[static_cast<std::size_t>(g)].emplace_back(a, b);
        graph_edges[static_cast<std::size_t>(g)].emplace_back(b, a);
    }

    GraphDataset ds;
    ds.name = name;
    ds.graphs.resize(num_graphs);
    std::vector<std::vector<int>> degrees(num_graphs);
    int max_degree = 0;
    int min_degree = std::numeric_limits<int>::max();
    for (std::size_t g = 0; g < num_graphs; ++g) {
        auto& edges = graph_edges[g];
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        const int n = graph_sizes[g];
        std::vector<Eigen::Triplet<double>> triplets;
        triplets.reserve(edges.size());
        degrees[g].assign(static_cast<std::size_t>(n), 0);
        for (const auto& [a, b] : edges) {
            triplets.emplace_back(a, b, 1.0);
            ++degrees[g][static_cast<std::size_t>(a)];
        }
        for (int d : degrees[g]) {
            max_degree = std::max(max_degree, d);
            min_degree = std::min(min_degree, d);
        }
        Graph& graph = ds.graphs[g];
        graph.graph_id = static_cast<int>(g);
        graph.adjacency.resize(n, n);
        graph.adjacency.setFromTriplets(triplets.begin(), triplets.end());
        graph.adjacency.makeCompressed();
    }

    // Node-level feature blocks, stacked over the whole dataset.
    Matrix continuous;
    if (needs_attrs) {
        const auto rows = detail::read_rows<double>(node_attrs_file);
        if (rows.size() != num_nodes) {
            throw LoadError(node_attrs_file.filename().string() + " has " + std::to_string(rows.size()) +
                            " rows, expected " + std::to_string(num_nodes));
        }
        continuous.resize(static_cast<Eigen::Index>(num_nodes), static_cast<Eigen::Index>(rows.front().size()));
        for (std::size_t v = 0; v < num_nodes; ++v) {
            if (rows[v].size() != rows.front().size()) {
                throw LoadError(node_attrs_file.filename().string() + ":" + std::to_string(v + 1) +
                                ": inconsistent attribute count");
            }
            for (std::size_t c = 0; c < rows[v].size(); ++c) {
                continuous(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(c)) = rows[v][c];
            }
        }
        if (!continuous.allFinite()) throw LoadError(node_attrs_file.string() + " holds non-finite values");
        if (recipe.standardize) detail::standardize_columns(continuous);
    }
    Matrix discrete;
    if (needs_labels) {
        const auto label_rows = detail::read_rows<long>(node_labels_file);
        if (label_rows.size() != num_nodes) {
            throw LoadError(node_labels_file.filename().string() + " has " +
                            std::to_string(label_rows.size()) + " rows, expected " +
                            std::to_string(num_nodes));
        }
        const std::size_t components = label_rows.front().size();
        for (std::size_t v = 0; v < num_nodes; ++v) {
            if (label_rows[v].size() != components) {
                throw LoadError(node_labels_file.filename().string() + ":" + std::to_string(v + 1) +
                                ": inconsistent label count");
            }
        }
        if (recipe.label_component && (*recipe.label_component < 0 ||
                                       static_cast<std::size_t>(*recipe.label_component) >= components)) {
            throw RecipeError("label component " + std::to_string(*recipe.label_component) + " not in file (" +
                              std::to_string(components) + " present)");
        }
        // Each label component is one-hot encoded on its own; blocks are concatenated.
        std::vector<Matrix> blocks;
        Eigen::Index width = 0;
        for (std::size_t c = 0; c < components; ++c) {
            if (recipe.label_component && static_cast<std::size_t>(*recipe.label_component) != c) continue;
            std::vector<long> column(num_nodes);
            for (std::size_t v = 0; v < num_nodes; ++v) column[v] = label_rows[v][c];
            const auto [distinct, ids] = detail::remap_contiguous(column);
            blocks.push_back(one_hot_encode(ids, static_cast<int>(distinct.size())));
            width += blocks.back().cols();
        }
        discrete.resize(static_cast<Eigen::Index>(num_nodes), width);
        Eigen::Index at = 0;
        for (const auto& b : blocks) {
            discrete.middleCols(at, b.cols()) = b;
            at += b.cols();
        }
    }
    if (recipe.mode == FeatureMode::degree) {
        // Columns cover the observed degree range [min, max] (or [min, cap]).
        const int top = recipe.degree_cap ? *recipe.degree_cap : max_degree;
        if (top < min_degree) {
            throw RecipeError("degree cap " + std::to_string(top) + " is below the smallest degree " +
                              std::to_string(min_degree));
        }
        const int domain = top - min_degree + 1;
        ds.degree_offset = min_degree;
        std::vector<int> clamped;
        clamped.reserve(num_nodes);
        for (std::size_t v = 0; v < num_nodes; ++v) {
            const int d = degrees[static_cast<std::size_t>(node_graph[v])][static_cast<std::size_t>(node_local[v])];
            clamped.push_back(std::min(d, top) - min_degree);
        }
        discrete = one_hot_encode(clamped, domain);
    }
    Matrix features;
    switch (recipe.mode) {
        case FeatureMode::raw_continuous: features = std::move(continuous); break;
        case FeatureMode::one_hot_labels:
        case FeatureMode::degree: features = std::move(discrete); break;
        case FeatureMode::extended_concat:
            features.resize(static_cast<Eigen::Index>(num_nodes), continuous.cols() + discrete.cols());
            features << continuous, discrete;
            break;
    }

    // Nodes of a graph need not be contiguous on disk; gather by local index.
    for (std::size_t g = 0; g < num_graphs; ++g) ds.graphs[g].attributes.resize(graph_sizes[g], features.cols());
    for (std::size_t v = 0; v < num_nodes; ++v) {
        ds.graphs[static_cast<std::size_t>(node_graph[v])].attributes.row(node_local[v]) =
            features.row(static_cast<Eigen::Index>(v));
    }

    auto [classes, ids] = detail::remap_contiguous(graph_label_values);
    ds.class_values = std::move(classes);
    ds.labels = std::move(ids);
    return ds;
}

struct Split {
    std::vector<int> train;
    std::vector<int> test;
};

/// Per-class split: class c sends floor(f * |c|) members to train, and the
/// remaining round(f * N) - sum(floor) train slots go to the classes with the
/// largest fractional parts (seeded order on ties). Indices come back sorted.
inline Split stratified_split(std::span<const int> labels, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw SplitError("train fraction must lie in (0, 1)");
    }
    std::map<int, std::vector<int>> members;
    for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(static_cast<int>(i));
    if (members.empty()) throw SplitError("cannot split an empty dataset");
    for (const auto& [label, idx] : members) {
        if (idx.size() < 2) {
            throw SplitError("class " + std::to_string(label) + " has a single member");
        }
    }
    Rng rng(derive_seed(seed, 0x5157));
    struct Quota {
        int label;
        std::size_t take;
        double fraction;
        std::uint64_t tie;
    };
    std::vector<Quota> quotas;
    std::size_t assigned = 0;
    for (auto& [label, idx] : members) {
        rng.shuffle(std::span<int>(idx));
        const double exact = train_fraction * static_cast<double>(idx.size());
        const auto take = static_cast<std::size_t>(std::floor(exact));
        quotas.push_back({label, take, exact - static_cast<double>(take), rng.next()});
        assigned += take;
    }
    const auto target = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(labels.size())));
    std::vector<Quota*> order;
    for (auto& q : quotas) order.push_back(&q);
    std::sort(order.begin(), order.end(), [](const Quota* a, const Quota* b) {
        if (a->fraction != b->fraction) return a->fraction > b->fraction;
        return a->tie < b->tie;
    });
    for (std::size_t k = 0; assigned < target && k < order.size(); ++k) {
        if (order[k]->take < members[order[k]->label].size()) {
            ++order[k]->take;
            ++assigned;
        }
    }
    Split split;
    for (const auto& q : quotas) {
        const auto& idx = members[q.label];
        split.train.insert(split.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(q.take));
        split.test.insert(split.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(q.take), idx.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

inline Split stratified_split(const GraphDataset& dataset, double train_fraction, std::uint64_t seed) {
    return stratified_split(std::span<const int>(dataset.labels), train_fraction, seed);
}

}  // namespace sgml
