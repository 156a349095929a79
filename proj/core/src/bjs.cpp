#include "entryfx/did_direct.hpp"

#include "entryfx/error.hpp"
#include "entryfx/random.hpp"
#include "entryfx/stats.hpp"

#include <Eigen/Cholesky>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace entryfx::direct {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    int find(int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            x = parent[static_cast<std::size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

}  // namespace

TwoWayFit fit_two_way(std::span<const int> unit, std::span<const int> time, std::span<const double> y,
                      int n_units, int n_times, const std::function<std::string(int)>& unit_name) {
    const auto n = unit.size();
    if (time.size() != n || y.size() != n) {
        throw ValidationError("size_mismatch", "unit, time and outcome vectors differ in length");
    }
    std::vector<int> unit_rows(static_cast<std::size_t>(n_units), 0);
    std::vector<int> time_rows(static_cast<std::size_t>(n_times), 0);
    UnionFind uf(n_units + n_times);
    for (std::size_t r = 0; r < n; ++r) {
        ++unit_rows[static_cast<std::size_t>(unit[r])];
        ++time_rows[static_cast<std::size_t>(time[r])];
        uf.unite(unit[r], n_units + time[r]);
    }
    std::map<int, std::pair<std::vector<int>, std::vector<int>>> components;
    for (int u = 0; u < n_units; ++u) {
        if (unit_rows[static_cast<std::size_t>(u)] > 0) components[uf.find(u)].first.push_back(u);
    }
    for (int t = 0; t < n_times; ++t) {
        if (time_rows[static_cast<std::size_t>(t)] > 0) {
            components[uf.find(n_units + t)].second.push_back(t + 1);
        }
    }
    if (components.size() > 1) {
        std::vector<std::string> parts;
        for (const auto& [root, members] : components) {
            std::vector<std::string> names;
            for (int u : members.first) names.push_back(unit_name ? unit_name(u) : std::to_string(u));
            parts.push_back(fmt::format("{{units [{}], quarters [{}]}}", fmt::join(names, " "),
                                        fmt::join(members.second, " ")));
        }
        throw NumericalError("disconnected_design",
                             fmt::format("untreated design splits into {} components: {}",
                                         components.size(), fmt::join(parts, ", ")));
    }

    // Parameters: alpha for units with rows, lambda for times with rows except
    // the first such time, which is normalized to zero.
    std::vector<int> unit_col(static_cast<std::size_t>(n_units), -1);
    std::vector<int> time_col(static_cast<std::size_t>(n_times), -1);
    int p = 0;
    for (int u = 0; u < n_units; ++u) {
        if (unit_rows[static_cast<std::size_t>(u)] > 0) unit_col[static_cast<std::size_t>(u)] = p++;
    }
    bool first = true;
    for (int t = 0; t < n_times; ++t) {
        if (time_rows[static_cast<std::size_t>(t)] == 0) continue;
        if (first) {
            first = false;
            continue;
        }
        time_col[static_cast<std::size_t>(t)] = p++;
    }
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (std::size_t r = 0; r < n; ++r) {
        const int a = unit_col[static_cast<std::size_t>(unit[r])];
        const int b = time_col[static_cast<std::size_t>(time[r])];
        A(a, a) += 1.0;
        rhs(a) += y[r];
        if (b >= 0) {
            A(b, b) += 1.0;
            A(a, b) += 1.0;
            A(b, a) += 1.0;
            rhs(b) += y[r];
        }
    }
    TwoWayFit fit;
    fit.alpha.assign(static_cast<std::size_t>(n_units), kNaN);
    fit.lambda.assign(static_cast<std::size_t>(n_times), kNaN);
    if (p == 0) return fit;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success) {
        throw NumericalError("singular_design", "two-way normal equations could not be factored");
    }
    const Eigen::VectorXd beta = ldlt.solve(rhs);
    for (int u = 0; u < n_units; ++u) {
        const int c = unit_col[static_cast<std::size_t>(u)];
        if (c >= 0) fit.alpha[static_cast<std::size_t>(u)] = beta(c);
    }
    for (int t = 0; t < n_times; ++t) {
        if (time_rows[static_cast<std::size_t>(t)] == 0) continue;
        const int c = time_col[static_cast<std::size_t>(t)];
        fit.lambda[static_cast<std::size_t>(t)] = c >= 0 ? beta(c) : 0.0;
    }
    std::vector<double> res_sum(static_cast<std::size_t>(n_times), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        res_sum[static_cast<std::size_t>(time[r])] +=
            y[r] - fit.alpha[static_cast<std::size_t>(unit[r])] - fit.lambda[static_cast<std::size_t>(time[r])];
    }
    for (int t = 0; t < n_times; ++t) {
        if (time_rows[static_cast<std::size_t>(t)] == 0) continue;
        fit.max_residual_mean =
            std::max(fit.max_residual_mean, std::abs(res_sum[static_cast<std::size_t>(t)]) /
                                                time_rows[static_cast<std::size_t>(t)]);
    }
    return fit;
}

ImputationResult bjs_impute(const panel::Panel& panel, const events::CohortMap& cohorts,
                            panel::Outcome outcome, int delta, Mode mode, events::Horizon horizon) {
    if (delta < 0) throw ValidationError("invalid_delta", "delta must be nonnegative");
    if (cohorts.size() != panel.n_cells()) {
        throw ValidationError("size_mismatch", "cohort map does not match the panel");
    }
    const auto Y = panel.outcome_matrix(outcome);
    const int T = static_cast<int>(panel.n_quarters());
    const auto n_cells = panel.n_cells();
    ImputationResult res;
    res.effects = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_cells), T, kNaN);
    res.unit_effects = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_cells), 1, kNaN);
    res.time_effects =
        Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(panel.industries().size()), T, kNaN);

    auto untreated = [&](std::size_t c, int t) {
        return !cohorts[c].g || t < *cohorts[c].g - delta;
    };

    for (std::size_t k = 0; k < panel.industries().size(); ++k) {
        std::vector<std::size_t> cells;
        for (std::size_t c = 0; c < n_cells; ++c) {
            if (panel.industry_of_cell()[c] == static_cast<int>(k)) cells.push_back(c);
        }
        std::vector<int> unit;
        std::vector<int> time;
        std::vector<double> y;
        for (std::size_t u = 0; u < cells.size(); ++u) {
            for (int t = 1; t <= T; ++t) {
                const double v = Y(static_cast<Eigen::Index>(cells[u]), t - 1);
                if (!std::isfinite(v) || !untreated(cells[u], t)) continue;
                unit.push_back(static_cast<int>(u));
                time.push_back(t - 1);
                y.push_back(v);
            }
        }
        auto name = [&](int u) {
            const auto& key = panel.cells()[cells[static_cast<std::size_t>(u)]];
            return fmt::format("{}/{}", key.geoid, key.naics);
        };
        const auto fit = fit_two_way(unit, time, y, static_cast<int>(cells.size()), T, name);
        for (int t = 0; t < T; ++t) {
            res.time_effects(static_cast<Eigen::Index>(k), t) = fit.lambda[static_cast<std::size_t>(t)];
        }
        for (std::size_t u = 0; u < cells.size(); ++u) {
            const auto c = cells[u];
            res.unit_effects(static_cast<Eigen::Index>(c), 0) = fit.alpha[u];
            if (!cohorts[c].g) continue;
            if (std::isnan(fit.alpha[u])) {
                res.excluded.push_back(fmt::format("{}: no untreated observations", name(static_cast<int>(u))));
                continue;
            }
            for (int t = std::max(1, *cohorts[c].g - delta); t <= T; ++t) {
                const double v = Y(static_cast<Eigen::Index>(c), t - 1);
                const double lam = fit.lambda[static_cast<std::size_t>(t - 1)];
                if (std::isfinite(v) && std::isfinite(lam)) {
                    res.effects(static_cast<Eigen::Index>(c), t - 1) = v - fit.alpha[u] - lam;
                }
            }
        }
    }

    auto& path = res.path;
    path.estimator = "bjs";
    path.outcome = panel::to_string(outcome);
    path.mode = mode;
    path.delta = delta;
    const int n_munis = static_cast<int>(panel.geoids().size());
    const auto n_points = horizon.hi - horizon.lo + 1;
    path.points.resize(static_cast<std::size_t>(n_points));
    res.muni_sums = Eigen::MatrixXd::Zero(n_munis, n_points);
    res.muni_counts = Eigen::MatrixXd::Zero(n_munis, n_points);
    for (int i = 0; i < n_points; ++i) {
        auto& p = path.points[static_cast<std::size_t>(i)];
        p.ell = horizon.lo + i;
        p.reference = p.ell == path.reference_ell();
        p.anticipation = p.ell >= -delta && p.ell <= -1;
    }
    for (std::size_t c = 0; c < n_cells; ++c) {
        const auto& e = cohorts[c];
        if (!e.g || (mode == Mode::balanced && !e.balanced_window)) continue;
        const int m = panel.geoid_of_cell()[c];
        for (int i = 0; i < n_points; ++i) {
            const int ell = horizon.lo + i;
            const int t = *e.g + ell;
            if (t < 1 || t > T) continue;
            auto& p = path.points[static_cast<std::size_t>(i)];
            if (p.reference) {
                if (std::isfinite(Y(static_cast<Eigen::Index>(c), t - 1))) ++p.n_treated;
                continue;
            }
            const double v = res.effects(static_cast<Eigen::Index>(c), t - 1);
            if (!std::isfinite(v)) continue;
            res.muni_sums(m, i) += v;
            res.muni_counts(m, i) += 1.0;
        }
    }
    for (int i = 0; i < n_points; ++i) {
        auto& p = path.points[static_cast<std::size_t>(i)];
        if (p.reference) {
            p.available = p.n_treated > 0;
            continue;
        }
        const double n = res.muni_counts.col(i).sum();
        if (n <= 0.0) continue;
        p.available = true;
        p.att = res.muni_sums.col(i).sum() / n;
        p.n_treated = static_cast<int>(n);
        p.band_lo = p.band_hi = p.att;
    }
    return res;
}

void bjs_bootstrap(ImputationResult& result, int B, double alpha, std::uint64_t seed) {
    if (B < 199) throw ValidationError("invalid_bootstrap", "B must be at least 199");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("invalid_alpha", "alpha must be in (0,1)");
    auto& path = result.path;
    const auto n_munis = result.muni_sums.rows();
    const auto n_points = static_cast<Eigen::Index>(path.points.size());
    path.draws = Eigen::MatrixXd::Zero(B, n_points);
    Eigen::RowVectorXd mult(n_munis);
    for (int b = 0; b < B; ++b) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
        mult.setZero();
        for (Eigen::Index m = 0; m < n_munis; ++m) {
            mult(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n_munis)))) += 1.0;
        }
        const Eigen::RowVectorXd sums = mult * result.muni_sums;
        const Eigen::RowVectorXd counts = mult * result.muni_counts;
        for (Eigen::Index i = 0; i < n_points; ++i) {
            const auto& p = path.points[static_cast<std::size_t>(i)];
            if (!p.available || p.reference || counts(i) <= 0.0) continue;
            path.draws(b, i) = sums(i) / counts(i) - p.att;
        }
    }
    for (Eigen::Index i = 0; i < n_points; ++i) {
        auto& p = path.points[static_cast<std::size_t>(i)];
        if (!p.available || p.reference) continue;
        std::vector<double> col(path.draws.col(i).data(), path.draws.col(i).data() + B);
        p.se = stats::sample_sd(col);
    }
    finish_band(path, alpha);
}

}  // namespace entryfx::direct
