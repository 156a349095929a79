#include "entryfx/sensitivity.hpp"

#include "entryfx/csv.hpp"
#include "entryfx/drdid.hpp"
#include "entryfx/error.hpp"
#include "entryfx/inference.hpp"
#include "entryfx/random.hpp"
#include "entryfx/stats.hpp"

#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>

namespace entryfx::sensitivity {

HonestBounds honest_sd_bounds(std::span<const int> ells, const Eigen::VectorXd& beta,
                              const Eigen::MatrixXd& cov, const Eigen::VectorXd& target_weights,
                              int anchor_ell, std::span<const double> M_grid, double alpha) {
    const auto n = static_cast<Eigen::Index>(ells.size());
    if (beta.size() != n || target_weights.size() != n || cov.rows() != n || cov.cols() != n) {
        throw ValidationError("size_mismatch", "path, covariance and weights differ in size");
    }
    std::map<int, Eigen::Index> pos;
    for (Eigen::Index i = 0; i < n; ++i) pos[ells[static_cast<std::size_t>(i)]] = i;
    for (int back = 0; back <= 2; ++back) {
        if (!pos.contains(anchor_ell - back)) {
            throw ValidationError("too_few_pre_periods",
                                  fmt::format("smoothness bounds need leads {}, {} and {}", anchor_ell - 2,
                                              anchor_ell - 1, anchor_ell));
        }
    }
    if (cov.size() > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()), Eigen::EigenvaluesOnly);
        const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
        if (es.eigenvalues().minCoeff() < -1e-10 * scale) {
            throw NumericalError("covariance_not_psd",
                                 fmt::format("path covariance has eigenvalue {:.3g} (largest {:.3g})",
                                             es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()));
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (ells[static_cast<std::size_t>(i)] <= anchor_ell && target_weights(i) != 0.0) {
            throw ValidationError("invalid_target", "target weights must sit after the anchor lead");
        }
    }

    HonestBounds out;
    // Curvature among consecutive pre-period leads.
    for (const auto& [ell, i] : pos) {
        if (ell > anchor_ell) break;
        if (pos.contains(ell - 1) && pos.contains(ell - 2)) {
            const double d2 = beta(i) - 2.0 * beta(pos[ell - 1]) + beta(pos[ell - 2]);
            out.pre_curvature = std::max(out.pre_curvature, std::abs(d2));
        }
    }
    const double level = beta(pos[anchor_ell]);
    const double slope = level - beta(pos[anchor_ell - 1]);
    int horizon = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (target_weights(i) != 0.0) horizon = std::max(horizon, ells[static_cast<std::size_t>(i)] - anchor_ell);
    }
    // delta(anchor + m) = level + m * slope + sum_{k<=m} (m - k + 1) * eta_k.
    std::vector<double> loading(static_cast<std::size_t>(horizon), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double l = target_weights(i);
        if (l == 0.0) continue;
        const int m = ells[static_cast<std::size_t>(i)] - anchor_ell;
        out.estimate += l * beta(i);
        out.extrapolated_bias += l * (level + m * slope);
        for (int k = 1; k <= m; ++k) loading[static_cast<std::size_t>(k - 1)] += l * (m - k + 1);
    }
    for (double g : loading) out.curvature_loading += std::abs(g);
    out.se = std::sqrt(std::max(0.0, target_weights.dot(cov * target_weights)));
    const double z = stats::normal_quantile(1.0 - alpha / 2.0);
    out.baseline_lo = out.estimate - z * out.se;
    out.baseline_hi = out.estimate + z * out.se;
    const double center = out.estimate - out.extrapolated_bias;
    for (double M : M_grid) {
        if (M < 0.0) throw ValidationError("invalid_m", "M must be nonnegative");
        const double half = z * out.se + M * out.curvature_loading;
        out.rows.push_back({M, center - half, center + half, out.pre_curvature <= M + 1e-12});
    }
    return out;
}

HonestBounds honest_for_path(const direct::EventStudyPath& path, const Eigen::MatrixXd& cov,
                             exposure::Slice slice, std::span<const double> M_grid, double alpha) {
    std::vector<int> ells;
    std::vector<Eigen::Index> idx;
    std::vector<int> missing;
    for (std::size_t i = 0; i < path.points.size(); ++i) {
        const auto& p = path.points[i];
        if (p.available || p.reference) {
            ells.push_back(p.ell);
            idx.push_back(static_cast<Eigen::Index>(i));
        } else if (p.ell >= slice.a && p.ell <= slice.b) {
            missing.push_back(p.ell);
        }
    }
    if (!missing.empty()) {
        throw ValidationError("unavailable_event_times",
                              fmt::format("event times {} are unavailable for the target",
                                          fmt::join(missing, ", ")));
    }
    const auto n = static_cast<Eigen::Index>(ells.size());
    Eigen::VectorXd beta(n);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& p = path.points[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        beta(i) = p.reference ? 0.0 : p.att;
        if (p.ell >= slice.a && p.ell <= slice.b) w(i) = 1.0;
    }
    const Eigen::MatrixXd sub = cov(idx, idx);
    auto out = honest_sd_bounds(ells, beta, sub, w, path.reference_ell(), M_grid, alpha);
    out.outcome = path.outcome;
    out.target = fmt::format("{}:{}", path.estimator, slice.label());
    return out;
}

void write_honest(const std::filesystem::path& path, std::span<const HonestBounds> bounds) {
    csv::Table t({"outcome", "target", "M", "lo", "hi", "estimate", "se", "extrapolated_bias",
                  "curvature_loading", "pre_curvature", "consistent"});
    for (const auto& b : bounds) {
        for (const auto& r : b.rows) {
            t.add_row({b.outcome, b.target, csv::format(r.M), csv::format(r.lo), csv::format(r.hi),
                       csv::format(b.estimate), csv::format(b.se), csv::format(b.extrapolated_bias),
                       csv::format(b.curvature_loading), csv::format(b.pre_curvature),
                       r.consistent ? "1" : "0"});
        }
    }
    csv::write(path, t);
}

// --- heterogeneity ----------------------------------------------------------

namespace {

struct Variable {
    std::string name;
    std::array<std::string, 2> levels;
    /// Level index of a cell, or -1 when unknown.
    std::function<int(const panel::StrataLabel&)> level_of;
};

std::vector<Variable> stratum_variables() {
    return {
        {"tradable", {"tradable", "nontradable"},
         [](const panel::StrataLabel& s) { return s.tradable == panel::Tradable::tradable ? 0 : 1; }},
        {"metro", {"metro", "nonmetro"},
         [](const panel::StrataLabel& s) { return s.metro == panel::Metro::metro ? 0 : 1; }},
        {"wage_stratum", {"high", "low"},
         [](const panel::StrataLabel& s) {
             switch (s.wage) {
             case panel::WageStratum::high:
                 return 0;
             case panel::WageStratum::low:
                 return 1;
             default:
                 return -1;
             }
         }},
    };
}

}  // namespace

std::vector<HeterogeneityRow> heterogeneity_twfe(const panel::Panel& panel,
                                                 const events::CohortMap& cohorts,
                                                 const exposure::ExposureSeries& series,
                                                 std::span<const panel::StrataLabel> strata,
                                                 panel::Outcome outcome,
                                                 std::span<const exposure::Slice> slices, int delta,
                                                 double alpha) {
    if (strata.size() != panel.n_cells()) {
        throw ValidationError("size_mismatch", "strata must cover every panel cell");
    }
    const double z = stats::normal_quantile(1.0 - alpha / 2.0);
    std::vector<HeterogeneityRow> out;
    for (const auto& slice : slices) {
        drdid::SampleOptions opt;
        opt.delta = delta;
        opt.balanced = true;
        opt.trim = false;
        const auto reg = drdid::build_slice_regressors(panel, cohorts, series, {}, outcome, slice, opt);
        const auto first = out.size();
        for (const auto& var : stratum_variables()) {
            std::vector<Eigen::Index> rows;
            std::vector<int> level;
            for (Eigen::Index i = 0; i < reg.y.size(); ++i) {
                const int l = var.level_of(strata[reg.cell[static_cast<std::size_t>(i)]]);
                if (l < 0) continue;
                rows.push_back(i);
                level.push_back(l);
            }
            const auto n = static_cast<Eigen::Index>(rows.size());
            std::vector<int> unit(rows.size());
            std::vector<int> time(rows.size());
            std::vector<int> muni(rows.size());
            Eigen::VectorXd y(n);
            Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, 4);  // D x lvl0, D x lvl1, S x lvl0, S x lvl1
            for (Eigen::Index r = 0; r < n; ++r) {
                const auto i = rows[static_cast<std::size_t>(r)];
                const auto ri = static_cast<std::size_t>(r);
                unit[ri] = static_cast<int>(reg.cell[static_cast<std::size_t>(i)]);
                time[ri] = reg.t[static_cast<std::size_t>(i)];
                muni[ri] = reg.muni[static_cast<std::size_t>(i)];
                y(r) = reg.y(i);
                X(r, level[ri]) = reg.D(i);
                X(r, 2 + level[ri]) = reg.S(i, 0);
            }
            std::vector<Eigen::Index> keep;
            Eigen::MatrixXd Xd(n, 4);
            Eigen::VectorXd yd;
            std::array<long long, 2> n_level{};
            for (int l : level) ++n_level[static_cast<std::size_t>(l)];
            if (n > 0) {
                yd = drdid::two_way_demean(y, unit, time);
                for (Eigen::Index j = 0; j < 4; ++j) {
                    Xd.col(j) = drdid::two_way_demean(X.col(j), unit, time);
                    if (Xd.col(j).norm() > 1e-8 * std::max(1.0, X.col(j).norm())) keep.push_back(j);
                }
            }
            Eigen::VectorXd beta = Eigen::VectorXd::Zero(4);
            Eigen::MatrixXd V = Eigen::MatrixXd::Zero(4, 4);
            std::array<bool, 4> has{};
            if (!keep.empty() && n > static_cast<Eigen::Index>(keep.size())) {
                const Eigen::MatrixXd Xk = Xd(Eigen::all, keep);
                const auto B = inference::bread(Xk);
                const Eigen::VectorXd bk = B * (Xk.transpose() * yd);
                const auto v = inference::cluster_se(Xk, yd - Xk * bk, muni);
                for (std::size_t a = 0; a < keep.size(); ++a) {
                    has[static_cast<std::size_t>(keep[a])] = true;
                    beta(keep[a]) = bk(static_cast<Eigen::Index>(a));
                    for (std::size_t b = 0; b < keep.size(); ++b) {
                        V(keep[a], keep[b]) = v.vcov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
                    }
                }
            }
            for (int l = 0; l < 2; ++l) {
                const std::array<std::pair<std::string, Eigen::Vector4d>, 3> params = {{
                    {"DATT", Eigen::Vector4d::Unit(l)},
                    {"SATT_same", Eigen::Vector4d::Unit(2 + l)},
                    {"TATT", Eigen::Vector4d::Unit(l) + Eigen::Vector4d::Unit(2 + l)},
                }};
                for (const auto& [name, w] : params) {
                    HeterogeneityRow row;
                    row.outcome = panel::to_string(outcome);
                    row.slice = slice.label();
                    row.variable = var.name;
                    row.level = var.levels[static_cast<std::size_t>(l)];
                    row.parameter = name;
                    row.n = n_level[static_cast<std::size_t>(l)];
                    bool ok = true;
                    for (Eigen::Index j = 0; j < 4; ++j) {
                        if (w(j) != 0.0 && !has[static_cast<std::size_t>(j)]) ok = false;
                    }
                    row.available = ok;
                    if (ok) {
                        row.estimate = w.dot(beta);
                        row.se = std::sqrt(std::max(0.0, w.dot(V * w)));
                        row.ci_lo = row.estimate - z * row.se;
                        row.ci_hi = row.estimate + z * row.se;
                    }
                    out.push_back(std::move(row));
                }
            }
        }
        // FDR over the available rows of this (outcome, slice) family.
        std::vector<double> p;
        std::vector<std::size_t> where;
        for (std::size_t i = first; i < out.size(); ++i) {
            if (!out[i].available) continue;
            const auto& r = out[i];
            const double t = r.se > 0.0 ? std::abs(r.estimate / r.se) : (r.estimate == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
            p.push_back(std::clamp(2.0 * (1.0 - stats::normal_cdf(t)), 0.0, 1.0));
            where.push_back(i);
        }
        const auto fdr = inference::fdr_adjust(p, fmt::format("{}:{}", panel::to_string(outcome), slice.label()));
        for (std::size_t k = 0; k < where.size(); ++k) {
            out[where[k]].bh = fdr.bh[k];
            out[where[k]].by = fdr.by[k];
        }
    }
    return out;
}

void write_heterogeneity(const std::filesystem::path& path, std::span<const HeterogeneityRow> rows) {
    csv::Table t({"outcome", "slice", "variable", "level", "parameter", "available", "estimate", "se",
                  "ci_lo", "ci_hi", "bh_q", "by_q", "n"});
    for (const auto& r : rows) {
        auto num = [&](double v) { return r.available ? csv::format(v) : std::string("NA"); };
        t.add_row({r.outcome, r.slice, r.variable, r.level, r.parameter, r.available ? "1" : "0",
                   num(r.estimate), num(r.se), num(r.ci_lo), num(r.ci_hi), num(r.bh), num(r.by),
                   std::to_string(r.n)});
    }
    csv::write(path, t);
}

std::vector<HeterogeneityRow> read_heterogeneity(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"outcome", "slice", "variable", "level", "parameter", "available", "estimate",
                             "se", "ci_lo", "ci_hi", "bh_q", "by_q", "n"},
                         path);
    std::vector<HeterogeneityRow> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        HeterogeneityRow row;
        row.outcome = t.cell(r, "outcome");
        row.slice = t.cell(r, "slice");
        row.variable = t.cell(r, "variable");
        row.level = t.cell(r, "level");
        row.parameter = t.cell(r, "parameter");
        row.available = t.cell(r, "available") == "1";
        if (row.available) {
            row.estimate = csv::parse_double(t.cell(r, "estimate"), "estimate");
            row.se = csv::parse_double(t.cell(r, "se"), "se");
            row.ci_lo = csv::parse_double(t.cell(r, "ci_lo"), "ci_lo");
            row.ci_hi = csv::parse_double(t.cell(r, "ci_hi"), "ci_hi");
            row.bh = csv::parse_double(t.cell(r, "bh_q"), "bh_q");
            row.by = csv::parse_double(t.cell(r, "by_q"), "by_q");
        }
        row.n = csv::parse_int(t.cell(r, "n"), "n");
        out.push_back(std::move(row));
    }
    return out;
}

// --- Moran trigger ----------------------------------------------------------

std::string select_method(double p_value, double threshold) {
    return p_value < threshold ? "scpc" : "cluster";
}

MoranTrigger moran_gate(const std::string& model, std::span<const ResidualPoint> residuals,
                        const spatial::WeightsMatrix& w, int n_perm, std::uint64_t seed,
                        double threshold) {
    const auto n = static_cast<Eigen::Index>(w.size());
    std::map<int, std::size_t> quarter_pos;
    for (const auto& r : residuals) quarter_pos.emplace(r.t, 0);
    std::size_t q = 0;
    for (auto& [t, p] : quarter_pos) p = q++;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(q));
    Eigen::MatrixXd cnt = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(q));
    for (const auto& r : residuals) {
        if (r.node < 0 || r.node >= n) {
            throw ValidationError("unknown_node", "residual municipality is not on the weights graph");
        }
        const auto j = static_cast<Eigen::Index>(quarter_pos[r.t]);
        sum(r.node, j) += r.residual;
        cnt(r.node, j) += 1.0;
    }
    // Municipality means; municipalities without rows take the quarter mean
    // so they carry no signal.
    std::vector<Eigen::Index> usable;
    Eigen::MatrixXd Z(n, static_cast<Eigen::Index>(q));
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
        double total = 0.0;
        double present = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (cnt(i, j) > 0.0) {
                Z(i, j) = sum(i, j) / cnt(i, j);
                total += Z(i, j);
                present += 1.0;
            }
        }
        const double fill = present > 0.0 ? total / present : 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (cnt(i, j) == 0.0) Z(i, j) = fill;
        }
        const double var = (Z.col(j).array() - Z.col(j).mean()).square().sum();
        if (present >= 3.0 && var > 1e-24) usable.push_back(j);
    }
    MoranTrigger out;
    out.model = model;
    out.quarters = static_cast<int>(usable.size());
    if (usable.empty()) {
        throw NumericalError("degenerate_variance", fmt::format("model {} has no usable residual quarter", model));
    }
    int significant = 0;
    for (std::size_t k = 0; k < usable.size(); ++k) {
        const auto r = spatial::morans_perm_test(Z.col(usable[k]), w, n_perm, derive_seed(seed, k));
        if (r.p_value < threshold) ++significant;
    }
    out.share_significant = static_cast<double>(significant) / static_cast<double>(usable.size());
    const auto pooled = spatial::multivariate_morans_test(Z(Eigen::all, usable), w, n_perm,
                                                          derive_seed(seed, "pooled"));
    out.statistic = pooled.statistic;
    out.p_value = pooled.p_value;
    out.triggered = out.p_value < threshold;
    out.selected = select_method(out.p_value, threshold);
    return out;
}

void write_moran(const std::filesystem::path& path, std::span<const MoranTrigger> rows) {
    csv::Table t({"model", "statistic", "p_value", "share_significant", "quarters", "triggered", "selected"});
    for (const auto& r : rows) {
        t.add_row({r.model, csv::format(r.statistic), csv::format(r.p_value), csv::format(r.share_significant),
                   std::to_string(r.quarters), r.triggered ? "1" : "0", r.selected});
    }
    csv::write(path, t);
}

std::vector<MoranTrigger> read_moran(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"model", "statistic", "p_value", "share_significant", "quarters", "triggered",
                             "selected"},
                         path);
    std::vector<MoranTrigger> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        MoranTrigger m;
        m.model = t.cell(r, "model");
        m.statistic = csv::parse_optional(t.cell(r, "statistic"), "statistic").value_or(std::numeric_limits<double>::quiet_NaN());
        m.p_value = csv::parse_optional(t.cell(r, "p_value"), "p_value").value_or(std::numeric_limits<double>::quiet_NaN());
        m.share_significant = csv::parse_double(t.cell(r, "share_significant"), "share_significant");
        m.quarters = static_cast<int>(csv::parse_int(t.cell(r, "quarters"), "quarters"));
        m.triggered = t.cell(r, "triggered") == "1";
        m.selected = t.cell(r, "selected");
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace entryfx::sensitivity
