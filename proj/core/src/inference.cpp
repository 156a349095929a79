#include "entryfx/inference.hpp"

#include "entryfx/csv.hpp"
#include "entryfx/error.hpp"
#include "entryfx/stats.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

namespace entryfx::inference {

std::string to_string(Method method) {
    switch (method) {
    case Method::cluster:
        return "cluster";
    case Method::twoway:
        return "twoway";
    case Method::twoway_serial:
        return "twoway_serial";
    case Method::shac:
        return "shac";
    case Method::scpc:
        return "scpc";
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    for (auto m : {Method::cluster, Method::twoway, Method::twoway_serial, Method::shac, Method::scpc}) {
        if (to_string(m) == name) return m;
    }
    throw ValidationError("unknown_method", fmt::format("unknown inference method '{}'", name));
}

std::string VarianceEstimate::params_json() const {
    std::vector<std::string> parts;
    for (const auto& [k, v] : params) parts.push_back(fmt::format("\"{}\":{}", k, csv::format(v)));
    return fmt::format("{{{}}}", fmt::join(parts, ","));
}

double VarianceEstimate::p_value(Eigen::Index j, double estimate) const {
    const double s = se(j);
    if (!(s > 0.0)) return estimate == 0.0 ? 1.0 : 0.0;
    const double z = std::abs(estimate / s);
    if (df > 0.0) return 2.0 * (1.0 - stats::student_t_cdf(z, df));
    return 2.0 * (1.0 - stats::normal_cdf(z));
}

double VarianceEstimate::critical_value(double alpha) const {
    return df > 0.0 ? stats::student_t_quantile(1.0 - alpha / 2.0, df)
                    : stats::normal_quantile(1.0 - alpha / 2.0);
}

Eigen::MatrixXd bread(const Eigen::MatrixXd& X) {
    const Eigen::MatrixXd xtx = X.transpose() * X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        (ldlt.vectorD().array() <= 0.0).any()) {
        throw NumericalError("singular_design", "X'X is singular");
    }
    return ldlt.solve(Eigen::MatrixXd::Identity(X.cols(), X.cols()));
}

namespace {

void check_inputs(const Eigen::MatrixXd& X, const Eigen::VectorXd& u, std::size_t ids) {
    if (X.rows() != u.size() || static_cast<std::size_t>(X.rows()) != ids) {
        throw ValidationError("size_mismatch", "design, residual and id lengths differ");
    }
    if (X.rows() <= X.cols()) {
        throw ValidationError("too_few_rows", "need more observations than parameters");
    }
}

/// Maps arbitrary ids to 0..G-1 in order of first appearance.
std::vector<int> compact(std::span<const int> ids, int& n_groups) {
    std::unordered_map<int, int> map;
    std::vector<int> out(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto [it, inserted] = map.emplace(ids[i], static_cast<int>(map.size()));
        out[i] = it->second;
    }
    n_groups = static_cast<int>(map.size());
    return out;
}

/// Per-group score sums, G x k.
Eigen::MatrixXd group_scores(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                             const std::vector<int>& group, int n_groups) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n_groups, X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) s.row(group[static_cast<std::size_t>(i)]) += u(i) * X.row(i);
    return s;
}

double small_cluster_factor(int G, Eigen::Index N, Eigen::Index k) {
    return static_cast<double>(G) / (G - 1) * static_cast<double>(N - 1) / static_cast<double>(N - k);
}

Eigen::MatrixXd cluster_vcov(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                             std::span<const int> ids, const Eigen::MatrixXd& B, int& G) {
    const auto g = compact(ids, G);
    if (G < 2) throw ValidationError("too_few_clusters", "cluster-robust variance needs >= 2 clusters");
    const auto s = group_scores(X, u, g, G);
    return small_cluster_factor(G, X.rows(), X.cols()) * B * (s.transpose() * s) * B;
}

void finish(VarianceEstimate& v) {
    v.vcov = 0.5 * (v.vcov + v.vcov.transpose());
    v.se = v.vcov.diagonal().array().max(0.0).sqrt();
}

/// Eigenvalue truncation when a two-way sum has a negative variance.
void repair(VarianceEstimate& v) {
    if ((v.vcov.diagonal().array() >= 0.0).all()) return;
    const Eigen::MatrixXd sym = 0.5 * (v.vcov + v.vcov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const Eigen::VectorXd lam = es.eigenvalues().array().max(0.0);
    v.vcov = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    v.flags.push_back("eigen_truncated");
}

}  // namespace

VarianceEstimate cluster_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                            std::span<const int> cluster) {
    check_inputs(X, u, cluster.size());
    VarianceEstimate v;
    v.method = Method::cluster;
    int G = 0;
    v.vcov = cluster_vcov(X, u, cluster, bread(X), G);
    v.params["n_clusters"] = G;
    v.df_note = "normal reference";
    finish(v);
    return v;
}

VarianceEstimate hc0_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u) {
    if (X.rows() != u.size()) throw ValidationError("size_mismatch", "design and residuals differ");
    const auto B = bread(X);
    const Eigen::MatrixXd xu = X.array().colwise() * u.array();
    VarianceEstimate v;
    v.method = Method::cluster;
    v.vcov = B * (xu.transpose() * xu) * B;
    v.params["n_clusters"] = static_cast<double>(X.rows());
    v.df_note = "HC0";
    finish(v);
    return v;
}

VarianceEstimate twoway_cluster_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                                   std::span<const int> ids_a, std::span<const int> ids_b) {
    check_inputs(X, u, ids_a.size());
    check_inputs(X, u, ids_b.size());
    const auto B = bread(X);
    int Ga = 0;
    int Gb = 0;
    int Gab = 0;
    const Eigen::MatrixXd va = cluster_vcov(X, u, ids_a, B, Ga);
    const Eigen::MatrixXd vb = cluster_vcov(X, u, ids_b, B, Gb);
    std::vector<int> inter(ids_a.size());
    {
        std::map<std::pair<int, int>, int> pairs;
        for (std::size_t i = 0; i < ids_a.size(); ++i) {
            auto [it, ins] = pairs.emplace(std::pair(ids_a[i], ids_b[i]), static_cast<int>(pairs.size()));
            inter[i] = it->second;
        }
    }
    const Eigen::MatrixXd vab = cluster_vcov(X, u, inter, B, Gab);
    VarianceEstimate v;
    v.method = Method::twoway;
    v.vcov = va + vb - vab;
    v.params = {{"n_clusters_a", Ga}, {"n_clusters_b", Gb}, {"n_clusters_ab", Gab}};
    v.df_note = "normal reference";
    repair(v);
    finish(v);
    return v;
}

int andrews_lag(const Eigen::MatrixXd& scores) {
    const auto T = scores.rows();
    if (T < 3) throw ValidationError("too_few_periods", "automatic lag selection needs T >= 3");
    double num = 0.0;
    double den = 0.0;
    for (Eigen::Index a = 0; a < scores.cols(); ++a) {
        const Eigen::VectorXd s = scores.col(a);
        const Eigen::VectorXd y = s.tail(T - 1);
        const Eigen::VectorXd x = s.head(T - 1);
        const double xx = x.squaredNorm();
        if (xx <= 0.0) continue;
        const double rho = std::clamp(x.dot(y) / xx, -0.97, 0.97);
        const double sigma2 = (y - rho * x).squaredNorm() / static_cast<double>(T - 1);
        const double s4 = sigma2 * sigma2;
        num += 4.0 * rho * rho * s4 / (std::pow(1.0 - rho, 6) * std::pow(1.0 + rho, 2));
        den += s4 / std::pow(1.0 - rho, 4);
    }
    const double a1 = den > 0.0 ? num / den : 0.0;
    const int L = static_cast<int>(std::ceil(1.1447 * std::cbrt(a1 * static_cast<double>(T))));
    return std::clamp(L, 0, static_cast<int>(T) - 1);
}

VarianceEstimate twoway_serial_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                                  std::span<const int> unit_ids, std::span<const int> time_ids,
                                  std::optional<int> lag) {
    check_inputs(X, u, unit_ids.size());
    check_inputs(X, u, time_ids.size());
    auto v = twoway_cluster_se(X, u, unit_ids, time_ids);
    v.method = Method::twoway_serial;

    // Time periods are ordered by their id value.
    std::vector<int> times(time_ids.begin(), time_ids.end());
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    const auto T = static_cast<Eigen::Index>(times.size());
    std::vector<int> tpos(time_ids.size());
    for (std::size_t i = 0; i < time_ids.size(); ++i) {
        tpos[i] = static_cast<int>(std::lower_bound(times.begin(), times.end(), time_ids[i]) - times.begin());
    }
    int G = 0;
    const auto unit = compact(unit_ids, G);
    const auto k = X.cols();
    Eigen::MatrixXd st = Eigen::MatrixXd::Zero(T, k);
    // Unit x time score sums, stored sparsely per time.
    std::vector<std::unordered_map<int, Eigen::VectorXd>> ut(static_cast<std::size_t>(T));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const Eigen::VectorXd s = u(i) * X.row(i).transpose();
        st.row(tpos[static_cast<std::size_t>(i)]) += s.transpose();
        auto& cell = ut[static_cast<std::size_t>(tpos[static_cast<std::size_t>(i)])];
        auto it = cell.find(unit[static_cast<std::size_t>(i)]);
        if (it == cell.end()) {
            cell.emplace(unit[static_cast<std::size_t>(i)], s);
        } else {
            it->second += s;
        }
    }
    const int L = lag ? *lag : andrews_lag(st);
    if (L < 0) throw ValidationError("invalid_lag", "lag must be nonnegative");
    Eigen::MatrixXd extra = Eigen::MatrixXd::Zero(k, k);
    for (int l = 1; l <= L && l < T; ++l) {
        const double w = 1.0 - static_cast<double>(l) / (L + 1);
        Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(k, k);
        for (Eigen::Index t = l; t < T; ++t) {
            gamma += st.row(t).transpose() * st.row(t - l);
            // Same-unit cross-time products already sit in the unit meat.
            const auto& now = ut[static_cast<std::size_t>(t)];
            const auto& before = ut[static_cast<std::size_t>(t - l)];
            for (const auto& [g, s] : now) {
                auto it = before.find(g);
                if (it != before.end()) gamma -= s * it->second.transpose();
            }
        }
        extra += w * (gamma + gamma.transpose());
    }
    const auto B = bread(X);
    const double factor = small_cluster_factor(static_cast<int>(T), X.rows(), k);
    v.vcov += factor * B * extra * B;
    v.params["lag"] = L;
    v.params["lag_automatic"] = lag ? 0.0 : 1.0;
    repair(v);
    finish(v);
    return v;
}

VarianceEstimate shac_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                         std::span<const int> muni, std::span<const int> time,
                         const Eigen::MatrixXd& dist_km, double cutoff_km) {
    check_inputs(X, u, muni.size());
    check_inputs(X, u, time.size());
    if (!(cutoff_km > 0.0)) throw ValidationError("invalid_cutoff", "SHAC cutoff must be positive");
    const auto k = X.cols();
    std::map<int, std::map<int, Eigen::VectorXd>> by_time;  // time -> muni -> score sum
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const int m = muni[static_cast<std::size_t>(i)];
        if (m < 0 || m >= dist_km.rows()) {
            throw ValidationError("missing_coordinates", "observation without municipality coordinates");
        }
        auto& cell = by_time[time[static_cast<std::size_t>(i)]];
        auto it = cell.find(m);
        const Eigen::VectorXd s = u(i) * X.row(i).transpose();
        if (it == cell.end()) {
            cell.emplace(m, s);
        } else {
            it->second += s;
        }
    }
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
    std::vector<int> ids;
    Eigen::MatrixXd S;
    for (const auto& [t, cells] : by_time) {
        ids.clear();
        S.resize(static_cast<Eigen::Index>(cells.size()), k);
        Eigen::Index r = 0;
        for (const auto& [m, s] : cells) {
            ids.push_back(m);
            S.row(r++) = s.transpose();
        }
        const auto n = static_cast<Eigen::Index>(ids.size());
        Eigen::MatrixXd K(n, n);
        for (Eigen::Index a = 0; a < n; ++a) {
            for (Eigen::Index b = 0; b < n; ++b) {
                K(a, b) = std::max(0.0, 1.0 - dist_km(ids[static_cast<std::size_t>(a)],
                                                      ids[static_cast<std::size_t>(b)]) /
                                                  cutoff_km);
            }
        }
        meat += S.transpose() * K * S;
    }
    const auto B = bread(X);
    VarianceEstimate v;
    v.method = Method::shac;
    v.vcov = B * meat * B;
    v.params["cutoff_km"] = cutoff_km;
    v.df_note = "normal reference, contemporaneous spatial kernel";
    repair(v);
    finish(v);
    return v;
}

FdrResult fdr_adjust(std::span<const double> p, const std::string& family) {
    FdrResult r;
    r.family = family;
    r.p.assign(p.begin(), p.end());
    const auto m = p.size();
    for (double v : p) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ValidationError("invalid_p_value", fmt::format("p-value {} is outside [0,1]", v));
        }
    }
    r.bh.assign(m, 1.0);
    r.by.assign(m, 1.0);
    if (m == 0) return r;
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
    double harmonic = 0.0;
    for (std::size_t i = 1; i <= m; ++i) harmonic += 1.0 / static_cast<double>(i);
    double running = std::numeric_limits<double>::infinity();
    for (std::size_t rank = m; rank >= 1; --rank) {
        const auto idx = order[rank - 1];
        running = std::min(running, static_cast<double>(m) * p[idx] / static_cast<double>(rank));
        r.bh[idx] = std::min(1.0, running);
        r.by[idx] = std::min(1.0, running * harmonic);
    }
    return r;
}

void write_inference(const std::filesystem::path& path, std::span<const InferenceRow> rows) {
    csv::Table t({"estimate_id", "parameter", "method", "estimate", "se", "p_value", "df",
                  "params_json", "flags"});
    for (const auto& r : rows) {
        const auto& v = r.variance;
        t.add_row({r.estimate_id, r.parameter, to_string(v.method), csv::format(r.estimate),
                   csv::format(v.se(r.index)), csv::format(v.p_value(r.index, r.estimate)),
                   csv::format(v.df), v.params_json(), fmt::format("{}", fmt::join(v.flags, ";"))});
    }
    csv::write(path, t);
}

std::vector<InferenceRecord> read_inference(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"estimate_id", "parameter", "method", "estimate", "se", "p_value"}, path);
    std::vector<InferenceRecord> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        InferenceRecord rec;
        rec.estimate_id = t.cell(r, "estimate_id");
        rec.parameter = t.cell(r, "parameter");
        rec.method = t.cell(r, "method");
        rec.estimate = csv::parse_double(t.cell(r, "estimate"), "estimate");
        rec.se = csv::parse_double(t.cell(r, "se"), "se");
        rec.p_value = csv::parse_double(t.cell(r, "p_value"), "p_value");
        if (t.has_column("params_json")) rec.params_json = t.cell(r, "params_json");
        if (t.has_column("flags")) rec.flags = t.cell(r, "flags");
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace entryfx::inference
