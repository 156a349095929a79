#include "entryfx/did_direct.hpp"
#include "entryfx/drdid.hpp"
#include "entryfx/error.hpp"
#include "entryfx/inference.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

namespace entryfx::direct {

namespace {

struct CohortGroup {
    std::vector<std::size_t> treated;
    std::vector<std::size_t> control;
    int control_limit = 0;  // control rows must satisfy t < limit (0 = no limit)
};

}  // namespace

std::vector<LeadLagRow> sun_abraham_iw(const panel::Panel& panel, const events::CohortMap& cohorts,
                                       panel::Outcome outcome, events::Horizon window) {
    const auto T = static_cast<int>(panel.n_quarters());
    const Eigen::MatrixXd Y = panel.outcome_matrix(outcome);
    const auto n_ind = panel.industries().size();

    // Group cells by industry, then cohort.
    std::vector<std::map<int, std::vector<std::size_t>>> by_cohort(n_ind);
    std::vector<std::vector<std::size_t>> never(n_ind);
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        const auto ind = static_cast<std::size_t>(panel.industry_of_cell()[c]);
        if (cohorts[c].treated()) {
            by_cohort[ind][*cohorts[c].g].push_back(c);
        } else {
            never[ind].push_back(c);
        }
    }
    std::vector<CohortGroup> groups;
    std::vector<int> group_g;
    bool any_comparison = false;
    for (std::size_t ind = 0; ind < n_ind; ++ind) {
        if (by_cohort[ind].empty()) continue;
        const int g_last = by_cohort[ind].rbegin()->first;
        for (const auto& [g, cells] : by_cohort[ind]) {
            CohortGroup grp;
            grp.treated = cells;
            if (!never[ind].empty()) {
                grp.control = never[ind];
            } else if (g < g_last) {
                grp.control = by_cohort[ind].at(g_last);
                grp.control_limit = g_last;
            } else {
                continue;
            }
            any_comparison = true;
            groups.push_back(std::move(grp));
            group_g.push_back(g);
        }
    }
    if (!any_comparison) {
        throw ValidationError("no_comparison_group",
                              "no industry has never-treated or later-treated comparison cells");
    }

    const auto M = static_cast<Eigen::Index>(panel.geoids().size());
    std::vector<LeadLagRow> rows;
    for (int ell = window.lo; ell <= window.hi; ++ell) {
        LeadLagRow row;
        row.estimator = "sa_iw";
        row.outcome = panel::to_string(outcome);
        row.ell = ell;
        if (ell == -1) {
            row.available = true;
            rows.push_back(row);
            continue;
        }
        double num = 0.0;
        int weight = 0;
        Eigen::VectorXd psi = Eigen::VectorXd::Zero(M);
        struct Piece {
            double catt;
            int n;
            Eigen::VectorXd infl;
        };
        std::vector<Piece> pieces;
        for (std::size_t k = 0; k < groups.size(); ++k) {
            const int g = group_g[k];
            const int t = g + ell;
            const int base = g - 1;
            if (t < 1 || t > T || base < 1) continue;
            const auto& grp = groups[k];
            if (grp.control_limit > 0 && std::max(t, base) >= grp.control_limit) continue;
            auto diffs = [&](const std::vector<std::size_t>& cells) {
                std::vector<std::pair<std::size_t, double>> out;
                for (auto c : cells) {
                    const double d = Y(static_cast<Eigen::Index>(c), t - 1) - Y(static_cast<Eigen::Index>(c), base - 1);
                    if (std::isfinite(d)) out.emplace_back(c, d);
                }
                return out;
            };
            const auto tr = diffs(grp.treated);
            const auto co = diffs(grp.control);
            if (tr.empty() || co.empty()) continue;
            double mt = 0.0;
            double mc = 0.0;
            for (const auto& [c, d] : tr) mt += d;
            for (const auto& [c, d] : co) mc += d;
            mt /= static_cast<double>(tr.size());
            mc /= static_cast<double>(co.size());
            Piece piece{mt - mc, static_cast<int>(tr.size()), Eigen::VectorXd::Zero(M)};
            for (const auto& [c, d] : tr) piece.infl(panel.geoid_of_cell()[c]) += (d - mt) / static_cast<double>(tr.size());
            for (const auto& [c, d] : co) piece.infl(panel.geoid_of_cell()[c]) -= (d - mc) / static_cast<double>(co.size());
            pieces.push_back(std::move(piece));
        }
        for (const auto& p : pieces) weight += p.n;
        if (weight == 0) {
            rows.push_back(row);
            continue;
        }
        for (const auto& p : pieces) {
            const double w = static_cast<double>(p.n) / weight;
            num += w * p.catt;
            psi += w * p.infl;
        }
        row.available = true;
        row.coef = num;
        row.se = psi.norm();
        row.n = weight;
        rows.push_back(row);
    }
    return rows;
}

std::vector<LeadLagRow> pooled_twfe_event_study(const panel::Panel& panel,
                                                const events::CohortMap& cohorts,
                                                panel::Outcome outcome, events::Horizon window) {
    const auto T = static_cast<int>(panel.n_quarters());
    const Eigen::MatrixXd Y = panel.outcome_matrix(outcome);
    std::vector<int> ells;
    for (int ell = window.lo; ell <= window.hi; ++ell) {
        if (ell != -1) ells.push_back(ell);
    }
    const auto k = static_cast<Eigen::Index>(ells.size());
    std::vector<double> y;
    std::vector<int> unit;
    std::vector<int> time;
    std::vector<int> muni;
    std::vector<int> col;  // dummy column, -1 for none
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        for (int t = 1; t <= T; ++t) {
            const double v = Y(static_cast<Eigen::Index>(c), t - 1);
            if (!std::isfinite(v)) continue;
            int j = -1;
            if (cohorts[c].treated()) {
                const int ell = std::clamp(t - *cohorts[c].g, window.lo, window.hi);
                if (ell != -1) j = static_cast<int>(std::find(ells.begin(), ells.end(), ell) - ells.begin());
            }
            y.push_back(v);
            unit.push_back(static_cast<int>(c));
            time.push_back(t);
            muni.push_back(panel.geoid_of_cell()[c]);
            col.push_back(j);
        }
    }
    const auto n = static_cast<Eigen::Index>(y.size());
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, k);
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int j = col[static_cast<std::size_t>(i)];
        if (j >= 0) {
            X(i, j) = 1.0;
            ++count[static_cast<std::size_t>(j)];
        }
    }
    const Eigen::VectorXd yd = drdid::two_way_demean(Eigen::Map<const Eigen::VectorXd>(y.data(), n), unit, time);
    std::vector<Eigen::Index> keep;
    Eigen::MatrixXd Xd(n, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        if (count[static_cast<std::size_t>(j)] == 0) continue;
        Xd.col(j) = drdid::two_way_demean(X.col(j), unit, time);
        if (Xd.col(j).norm() > 1e-8) keep.push_back(j);
    }
    std::vector<LeadLagRow> rows;
    const Eigen::MatrixXd Xk = Xd(Eigen::all, keep);
    Eigen::VectorXd beta;
    inference::VarianceEstimate v;
    bool fitted = false;
    if (!keep.empty()) {
        const auto B = inference::bread(Xk);
        beta = B * (Xk.transpose() * yd);
        v = inference::cluster_se(Xk, yd - Xk * beta, muni);
        fitted = true;
    }
    for (int ell = window.lo; ell <= window.hi; ++ell) {
        LeadLagRow row;
        row.estimator = "twfe_pooled";
        row.outcome = panel::to_string(outcome);
        row.ell = ell;
        if (ell == -1) {
            row.available = true;
        } else if (fitted) {
            const auto j = static_cast<Eigen::Index>(std::find(ells.begin(), ells.end(), ell) - ells.begin());
            const auto pos = std::find(keep.begin(), keep.end(), j);
            if (pos != keep.end()) {
                const auto idx = pos - keep.begin();
                row.available = true;
                row.coef = beta(idx);
                row.se = v.se(idx);
                row.n = count[static_cast<std::size_t>(j)];
            }
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace entryfx::direct
