#include "entryfx/spatial.hpp"

#include "entryfx/csv.hpp"
#include "entryfx/error.hpp"
#include "entryfx/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace entryfx::spatial {

std::optional<int> SpatialGraph::find(const std::string& geoid) const {
    auto it = std::find(nodes.begin(), nodes.end(), geoid);
    if (it == nodes.end()) return std::nullopt;
    return static_cast<int>(it - nodes.begin());
}

Eigen::SparseMatrix<double, Eigen::RowMajor> row_standardize(
    const Eigen::SparseMatrix<double, Eigen::RowMajor>& m) {
    Eigen::SparseMatrix<double, Eigen::RowMajor> out = m;
    for (Eigen::Index r = 0; r < out.outerSize(); ++r) {
        double sum = 0.0;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(out, r); it; ++it) {
            sum += it.value();
        }
        if (sum <= 0.0) continue;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(out, r); it; ++it) {
            it.valueRef() /= sum;
        }
    }
    return out;
}

WeightsResult build_weights(const SpatialGraph& graph, int k) {
    const auto n = static_cast<int>(graph.size());
    if (graph.centroids.size() != graph.nodes.size()) {
        throw ValidationError("missing_centroid", "every node needs a centroid");
    }
    if (k < 1 || k >= n) {
        throw ValidationError("invalid_k", fmt::format("k = {} must be in [1, {})", k, n));
    }
    {
        std::set<std::string> seen;
        for (const auto& id : graph.nodes) {
            if (!seen.insert(id).second) {
                throw ValidationError("duplicate_node", fmt::format("duplicate node id '{}'", id));
            }
        }
    }
    std::vector<std::set<int>> adj(static_cast<std::size_t>(n));
    std::set<std::pair<int, int>> input_pairs;
    for (const auto& e : graph.edges) {
        if (e.a < 0 || e.b < 0 || e.a >= n || e.b >= n) {
            throw ValidationError("unknown_node", "edge references a node outside the graph");
        }
        if (e.a == e.b) continue;
        adj[static_cast<std::size_t>(e.a)].insert(e.b);
        adj[static_cast<std::size_t>(e.b)].insert(e.a);
        input_pairs.insert(std::minmax(e.a, e.b));
    }

    WeightsResult result;
    result.graph = graph;
    result.graph.edges.clear();
    for (const auto& [a, b] : input_pairs) result.graph.edges.push_back({a, b, false});

    std::vector<int> isolates;
    for (int i = 0; i < n; ++i) {
        if (adj[static_cast<std::size_t>(i)].empty()) isolates.push_back(i);
    }
    std::set<std::pair<int, int>> knn_pairs;
    for (int i : isolates) {
        std::vector<std::pair<double, int>> d;
        const auto& pi = graph.centroids[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const auto& pj = graph.centroids[static_cast<std::size_t>(j)];
            d.emplace_back(std::hypot(pi.x - pj.x, pi.y - pj.y), j);
        }
        std::sort(d.begin(), d.end());
        for (int m = 0; m < k; ++m) {
            const int j = d[static_cast<std::size_t>(m)].second;
            const auto key = std::minmax(i, j);
            if (input_pairs.count(key) == 0) knn_pairs.insert(key);
        }
    }
    for (const auto& [a, b] : knn_pairs) {
        adj[static_cast<std::size_t>(a)].insert(b);
        adj[static_cast<std::size_t>(b)].insert(a);
        result.graph.edges.push_back({a, b, true});
    }

    std::vector<Eigen::Triplet<double>> triplets;
    for (int i = 0; i < n; ++i) {
        const auto& nb = adj[static_cast<std::size_t>(i)];
        for (int j : nb) triplets.emplace_back(i, j, 1.0 / static_cast<double>(nb.size()));
    }
    result.weights.w.resize(n, n);
    result.weights.w.setFromTriplets(triplets.begin(), triplets.end());
    result.weights.w.makeCompressed();
    return result;
}

Eigen::MatrixXd pairwise_distances_km(const SpatialGraph& graph) {
    const auto n = static_cast<Eigen::Index>(graph.centroids.size());
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const auto& a = graph.centroids[static_cast<std::size_t>(i)];
            const auto& b = graph.centroids[static_cast<std::size_t>(j)];
            d(i, j) = d(j, i) = std::hypot(a.x - b.x, a.y - b.y) / 1000.0;
        }
    }
    return d;
}

SpatialGraph grid_graph(int columns, int n, double spacing_m, const std::string& geoid_prefix) {
    if (columns < 1 || n < 1) throw ValidationError("invalid_grid", "grid needs positive size");
    SpatialGraph g;
    g.crs = "synthetic-grid";
    for (int i = 0; i < n; ++i) {
        g.nodes.push_back(fmt::format("{}{:03d}", geoid_prefix, 2 * i + 1));
        g.centroids.push_back({(i % columns) * spacing_m, (i / columns) * spacing_m});
    }
    for (int i = 0; i < n; ++i) {
        if ((i % columns) + 1 < columns && i + 1 < n) g.edges.push_back({i, i + 1, false});
        if (i + columns < n) g.edges.push_back({i, i + columns, false});
    }
    return g;
}

// --- Moran ------------------------------------------------------------------

namespace {

Eigen::VectorXd demeaned(const Eigen::VectorXd& v) {
    return v.array() - v.mean();
}

void check_values(const Eigen::VectorXd& values, const WeightsMatrix& w, std::string_view what) {
    if (static_cast<std::size_t>(values.size()) != w.size()) {
        throw ValidationError("size_mismatch", "values and weights differ in size");
    }
    if (!values.allFinite()) {
        throw ValidationError("non_finite", fmt::format("{} contains non-finite values", what));
    }
    if (values.size() < 2 || (values.array() == values(0)).all()) {
        throw NumericalError("degenerate_variance", fmt::format("{} is constant", what));
    }
}

bool at_least_as_extreme(double perm, double observed) {
    // Guards against ties that differ only by summation order.
    return std::abs(perm) >= std::abs(observed) - 1e-12 * std::max(1.0, std::abs(observed));
}

}  // namespace

double morans_i(const Eigen::VectorXd& values, const WeightsMatrix& w) {
    check_values(values, w, "values");
    const Eigen::VectorXd z = demeaned(values);
    const double n = static_cast<double>(z.size());
    return n / w.s0() * z.dot(w.w * z) / z.squaredNorm();
}

MoranResult morans_perm_test(const Eigen::VectorXd& values, const WeightsMatrix& w, int n_perm,
                             std::uint64_t seed) {
    if (n_perm < 99) throw ValidationError("invalid_n_perm", "n_perm must be at least 99");
    MoranResult r{morans_i(values, w), 1.0, n_perm, seed};
    const Eigen::VectorXd z = demeaned(values);
    const double scale = static_cast<double>(z.size()) / w.s0() / z.squaredNorm();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(z.size()));
    Eigen::VectorXd zp(z.size());
    int extreme = 0;
    for (int b = 0; b < n_perm; ++b) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
        std::iota(perm.begin(), perm.end(), Eigen::Index{0});
        shuffle(perm.begin(), perm.end(), rng);
        for (Eigen::Index i = 0; i < z.size(); ++i) zp(i) = z(perm[static_cast<std::size_t>(i)]);
        if (at_least_as_extreme(scale * zp.dot(w.w * zp), r.statistic)) ++extreme;
    }
    r.p_value = (1.0 + extreme) / (1.0 + n_perm);
    return r;
}

namespace {

Eigen::MatrixXd checked_demeaned(const Eigen::MatrixXd& values, const WeightsMatrix& w) {
    if (static_cast<std::size_t>(values.rows()) != w.size()) {
        throw ValidationError("size_mismatch", "values and weights differ in size");
    }
    if (values.cols() < 1) throw ValidationError("empty_matrix", "no outcome columns");
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
        check_values(values.col(c), w, fmt::format("column {}", c));
    }
    Eigen::MatrixXd z = values;
    z.rowwise() -= values.colwise().mean();
    return z;
}

}  // namespace

double multivariate_morans_i(const Eigen::MatrixXd& values, const WeightsMatrix& w) {
    const Eigen::MatrixXd z = checked_demeaned(values, w);
    const double n = static_cast<double>(z.rows());
    const Eigen::MatrixXd wz = w.w * z;
    return n / w.s0() * (z.array() * wz.array()).sum() / z.squaredNorm();
}

MoranResult multivariate_morans_test(const Eigen::MatrixXd& values, const WeightsMatrix& w,
                                     int n_perm, std::uint64_t seed) {
    if (n_perm < 99) throw ValidationError("invalid_n_perm", "n_perm must be at least 99");
    MoranResult r{multivariate_morans_i(values, w), 1.0, n_perm, seed};
    const Eigen::MatrixXd z = checked_demeaned(values, w);
    const double scale = static_cast<double>(z.rows()) / w.s0() / z.squaredNorm();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(z.rows()));
    Eigen::MatrixXd zp(z.rows(), z.cols());
    int extreme = 0;
    for (int b = 0; b < n_perm; ++b) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
        std::iota(perm.begin(), perm.end(), Eigen::Index{0});
        shuffle(perm.begin(), perm.end(), rng);
        for (Eigen::Index i = 0; i < z.rows(); ++i) zp.row(i) = z.row(perm[static_cast<std::size_t>(i)]);
        const Eigen::MatrixXd wz = w.w * zp;
        if (at_least_as_extreme(scale * (zp.array() * wz.array()).sum(), r.statistic)) ++extreme;
    }
    r.p_value = (1.0 + extreme) / (1.0 + n_perm);
    return r;
}

// --- file formats -----------------------------------------------------------

SpatialGraph read_graph(const std::filesystem::path& centroids, const std::filesystem::path& edges) {
    const auto ct = csv::read(centroids);
    csv::require_columns(ct, {"geoid", "x_m", "y_m"}, centroids);
    std::map<std::string, Point> points;
    SpatialGraph g;
    for (std::size_t r = 0; r < ct.rows(); ++r) {
        const auto& id = ct.cell(r, "geoid");
        if (points.count(id) != 0) {
            throw ValidationError("duplicate_node", fmt::format("duplicate node id '{}'", id));
        }
        points[id] = {csv::parse_double(ct.cell(r, "x_m"), "x_m"),
                      csv::parse_double(ct.cell(r, "y_m"), "y_m")};
        if (ct.has_column("crs") && g.crs.empty()) g.crs = ct.cell(r, "crs");
    }
    for (const auto& [id, p] : points) {
        g.nodes.push_back(id);
        g.centroids.push_back(p);
    }
    const auto et = csv::read(edges);
    csv::require_columns(et, {"geoid_a", "geoid_b"}, edges);
    if (et.has_column("hops")) {
        for (std::size_t r = 0; r < et.rows(); ++r) {
            if (csv::parse_int(et.cell(r, "hops"), "hops") > 1) {
                throw ValidationError("multi_hop", "exposure inputs with h > 1 are not supported");
            }
        }
    }
    for (std::size_t r = 0; r < et.rows(); ++r) {
        const auto a = g.find(et.cell(r, "geoid_a"));
        const auto b = g.find(et.cell(r, "geoid_b"));
        if (!a || !b) {
            throw ValidationError("unknown_node",
                                  fmt::format("{}: edge {}-{} references an unknown geoid",
                                              edges.string(), et.cell(r, "geoid_a"),
                                              et.cell(r, "geoid_b")));
        }
        g.edges.push_back({*a, *b, false});
    }
    return g;
}

void write_graph(const std::filesystem::path& dir, const SpatialGraph& graph) {
    csv::Table c({"geoid", "x_m", "y_m", "crs"});
    for (std::size_t i = 0; i < graph.size(); ++i) {
        c.add_row({graph.nodes[i], csv::format(graph.centroids[i].x),
                   csv::format(graph.centroids[i].y), graph.crs});
    }
    csv::write(dir / "centroids.csv", c);
    csv::Table e({"geoid_a", "geoid_b"});
    for (const auto& edge : graph.edges) {
        if (edge.knn) continue;
        e.add_row({graph.nodes[static_cast<std::size_t>(edge.a)],
                   graph.nodes[static_cast<std::size_t>(edge.b)]});
    }
    csv::write(dir / "edges.csv", e);
}

void write_weights(const std::filesystem::path& dir, const WeightsResult& result) {
    const auto& g = result.graph;
    csv::Table nodes({"i", "geoid", "x_m", "y_m", "crs"});
    for (std::size_t i = 0; i < g.size(); ++i) {
        nodes.add_row({std::to_string(i), g.nodes[i], csv::format(g.centroids[i].x),
                       csv::format(g.centroids[i].y), g.crs});
    }
    csv::write(dir / "nodes.csv", nodes);

    std::set<std::pair<int, int>> knn;
    for (const auto& e : g.edges) {
        if (e.knn) knn.insert(std::minmax(e.a, e.b));
    }
    csv::Table w({"i", "j", "geoid_i", "geoid_j", "w_ij", "knn"});
    const auto& m = result.weights.w;
    for (Eigen::Index r = 0; r < m.outerSize(); ++r) {
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(m, r); it; ++it) {
            const auto i = static_cast<int>(it.row());
            const auto j = static_cast<int>(it.col());
            w.add_row({std::to_string(i), std::to_string(j), g.nodes[static_cast<std::size_t>(i)],
                       g.nodes[static_cast<std::size_t>(j)], csv::format(it.value()),
                       knn.count(std::minmax(i, j)) != 0 ? "1" : "0"});
        }
    }
    csv::write(dir / "weights.csv", w);
}

WeightsResult read_weights(const std::filesystem::path& dir) {
    const auto nt = csv::read(dir / "nodes.csv");
    csv::require_columns(nt, {"i", "geoid", "x_m", "y_m"}, dir / "nodes.csv");
    WeightsResult out;
    for (std::size_t r = 0; r < nt.rows(); ++r) {
        if (csv::parse_int(nt.cell(r, "i"), "i") != static_cast<long long>(r)) {
            throw ValidationError("bad_node_index", "nodes.csv must list nodes in index order");
        }
        out.graph.nodes.push_back(nt.cell(r, "geoid"));
        out.graph.centroids.push_back({csv::parse_double(nt.cell(r, "x_m"), "x_m"),
                                       csv::parse_double(nt.cell(r, "y_m"), "y_m")});
        if (nt.has_column("crs") && out.graph.crs.empty()) out.graph.crs = nt.cell(r, "crs");
    }
    const auto n = static_cast<Eigen::Index>(out.graph.size());
    const auto wt = csv::read(dir / "weights.csv");
    csv::require_columns(wt, {"i", "j", "w_ij"}, dir / "weights.csv");
    std::vector<Eigen::Triplet<double>> triplets;
    for (std::size_t r = 0; r < wt.rows(); ++r) {
        const auto i = static_cast<int>(csv::parse_int(wt.cell(r, "i"), "i"));
        const auto j = static_cast<int>(csv::parse_int(wt.cell(r, "j"), "j"));
        if (i < 0 || j < 0 || i >= n || j >= n) {
            throw ValidationError("bad_node_index", "weights.csv references an unknown node");
        }
        triplets.emplace_back(i, j, csv::parse_double(wt.cell(r, "w_ij"), "w_ij"));
        if (i < j) {
            const bool knn = wt.has_column("knn") && wt.cell(r, "knn") == "1";
            out.graph.edges.push_back({i, j, knn});
        }
    }
    out.weights.w.resize(n, n);
    out.weights.w.setFromTriplets(triplets.begin(), triplets.end());
    out.weights.w.makeCompressed();
    return out;
}

}  // namespace entryfx::spatial
