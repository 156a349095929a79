#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace entryfx::spatial {

struct Point {
    double x = 0.0;  // meters
    double y = 0.0;
};

struct Edge {
    int a = 0;
    int b = 0;
    bool knn = false;  // added by the isolate repair
};

struct SpatialGraph {
    std::vector<std::string> nodes;
    std::vector<Point> centroids;
    std::vector<Edge> edges;
    std::string crs;

    std::size_t size() const { return nodes.size(); }
    std::optional<int> find(const std::string& geoid) const;
};

/// Row-standardized weights. Rows of isolated nodes are all zero.
struct WeightsMatrix {
    Eigen::SparseMatrix<double, Eigen::RowMajor> w;

    std::size_t size() const { return static_cast<std::size_t>(w.rows()); }
    double s0() const { return w.sum(); }
    Eigen::VectorXd lag(const Eigen::VectorXd& x) const { return w * x; }
};

struct WeightsResult {
    SpatialGraph graph;  // input graph plus any KNN edges, deduplicated
    WeightsMatrix weights;
};

/// Adds k nearest-centroid links to every node that has no neighbor in the
/// input edge list, symmetrizes, and row-standardizes. Self-loops and
/// repeated pairs in the input are ignored.
WeightsResult build_weights(const SpatialGraph& graph, int k);

/// Row-standardizes a nonnegative matrix; zero rows stay zero.
Eigen::SparseMatrix<double, Eigen::RowMajor> row_standardize(
    const Eigen::SparseMatrix<double, Eigen::RowMajor>& m);

/// Dense centroid distance matrix in kilometers.
Eigen::MatrixXd pairwise_distances_km(const SpatialGraph& graph);

/// Rectangular lattice with rook adjacency. Nodes are numbered row-major
/// and only the first `n` lattice points are kept.
SpatialGraph grid_graph(int columns, int n, double spacing_m, const std::string& geoid_prefix = "72");

struct MoranResult {
    double statistic = 0.0;
    double p_value = 1.0;
    int n_permutations = 0;
    std::uint64_t seed = 0;
};

double morans_i(const Eigen::VectorXd& values, const WeightsMatrix& w);

/// Two-sided permutation test with the add-one correction.
MoranResult morans_perm_test(const Eigen::VectorXd& values, const WeightsMatrix& w, int n_perm,
                             std::uint64_t seed);

/// Trace form (n/S0) tr(Z'WZ) / tr(Z'Z) over column-demeaned Z.
double multivariate_morans_i(const Eigen::MatrixXd& values, const WeightsMatrix& w);

/// Permutes rows of `values` jointly.
MoranResult multivariate_morans_test(const Eigen::MatrixXd& values, const WeightsMatrix& w,
                                     int n_perm, std::uint64_t seed);

// --- file formats -----------------------------------------------------------

/// Reads centroids.csv (geoid, x_m, y_m[, crs]) and edges.csv (geoid_a, geoid_b).
/// Nodes are sorted by geoid.
SpatialGraph read_graph(const std::filesystem::path& centroids, const std::filesystem::path& edges);

/// weights.csv holds the nonzeros; nodes.csv holds the node list, centroids and CRS.
void write_weights(const std::filesystem::path& dir, const WeightsResult& result);
WeightsResult read_weights(const std::filesystem::path& dir);

/// Writes the graph back out as centroids.csv and edges.csv (input edges only).
void write_graph(const std::filesystem::path& dir, const SpatialGraph& graph);

}  // namespace entryfx::spatial
