#include "entryfx/drdid.hpp"

#include "entryfx/csv.hpp"
#include "entryfx/error.hpp"

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace entryfx::drdid {

using exposure::Channel;
using exposure::Form;
using exposure::kChannels;

SliceRegressors build_slice_regressors(const panel::Panel& panel, const events::CohortMap& cohorts,
                                       const exposure::ExposureSeries& series,
                                       std::span<const panel::StrataLabel> strata,
                                       panel::Outcome outcome, exposure::Slice slice,
                                       const SampleOptions& options) {
    if (cohorts.size() != panel.n_cells() || series.n_cells() != panel.n_cells()) {
        throw ValidationError("size_mismatch", "cohorts and exposure must cover every panel cell");
    }
    if (!strata.empty() && strata.size() != panel.n_cells()) {
        throw ValidationError("size_mismatch", "strata must cover every panel cell");
    }
    const auto T = static_cast<int>(panel.n_quarters());
    const Eigen::MatrixXd Y = panel.outcome_matrix(outcome);
    std::array<Eigen::MatrixXd, 3> sums;
    for (std::size_t k = 0; k < 3; ++k) sums[k] = exposure::slice_sums(series, kChannels[k], slice);
    const Form form = options.flavor == exposure::HistoryFlavor::any ? Form::any : Form::early;
    const double L = slice.length();

    SliceRegressors out;
    out.slice = slice;
    std::vector<double> y;
    std::vector<double> d;
    std::vector<std::array<double, 3>> s;
    std::vector<std::vector<double>> feats;
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        const auto& entry = cohorts[c];
        if (entry.treated() && options.balanced && !entry.balanced_window) continue;
        for (int t = 1; t <= T; ++t) {
            double dv = 0.0;
            if (entry.treated()) {
                const int ell = t - *entry.g;
                if (ell >= slice.a && ell <= slice.b) {
                    dv = 1.0;
                } else if (ell >= -options.delta) {
                    continue;
                }
            }
            const double yv = Y(static_cast<Eigen::Index>(c), t - 1);
            if (!std::isfinite(yv)) continue;
            ++out.candidates;
            std::array<double, 3> sv{};
            bool keep = true;
            for (std::size_t k = 0; k < 3; ++k) {
                sv[k] = sums[k](static_cast<Eigen::Index>(c), t - 1);
                const bool kk = exposure::keep_rule(sv[k] / L, options.epsilon);
                if (kk) ++out.kept_by_channel[k];
                keep = keep && kk;
            }
            if (options.trim && !keep) continue;

            std::vector<double> f;
            const int anchor = t - slice.b;
            for (int lag = 1; lag <= exposure::kLags; ++lag) f.push_back(series.own_share(form, c, anchor - lag));
            for (auto ch : kChannels) {
                for (int lag = 1; lag <= exposure::kLags; ++lag) f.push_back(series.share(ch, form, c, anchor - lag));
            }
            if (!strata.empty()) {
                const auto& st = strata[c];
                f.push_back(st.tradable == panel::Tradable::tradable ? 1.0 : 0.0);
                f.push_back(st.metro == panel::Metro::metro ? 1.0 : 0.0);
                f.push_back(st.wage == panel::WageStratum::high ? 1.0 : 0.0);
                f.push_back(st.wage == panel::WageStratum::low ? 1.0 : 0.0);
            }
            out.cell.push_back(c);
            out.t.push_back(t);
            out.muni.push_back(panel.geoid_of_cell()[c]);
            y.push_back(yv);
            d.push_back(dv);
            s.push_back(sv);
            feats.push_back(std::move(f));
        }
    }
    const auto n = static_cast<Eigen::Index>(y.size());
    out.y = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
    out.D = Eigen::Map<const Eigen::VectorXd>(d.data(), n);
    out.S.resize(n, 3);
    const auto p = feats.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(feats.front().size());
    out.features.resize(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < 3; ++k) out.S(i, k) = s[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        for (Eigen::Index j = 0; j < p; ++j) out.features(i, j) = feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return out;
}

void check_collinearity(const Eigen::MatrixXd& X, std::span<const std::string> names,
                        double max_condition) {
    const auto k = X.cols();
    Eigen::VectorXd norms = X.colwise().norm();
    for (Eigen::Index j = 0; j < k; ++j) {
        if (!(norms(j) > 0.0)) {
            throw NumericalError("collinear_regressors",
                                 fmt::format("regressor {} has no variation after residualization",
                                             names[static_cast<std::size_t>(j)]));
        }
    }
    const Eigen::MatrixXd Z = X * norms.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd G = Z.transpose() * Z;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (cond <= max_condition) return;
    Eigen::Index ba = 0;
    Eigen::Index bb = 1;
    double best = -1.0;
    for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = a + 1; b < k; ++b) {
            if (std::abs(G(a, b)) > best) {
                best = std::abs(G(a, b));
                ba = a;
                bb = b;
            }
        }
    }
    throw NumericalError("collinear_regressors",
                         fmt::format("condition number {:.3g} exceeds {:.3g}; most collinear pair {} and "
                                     "{} (|cos| = {:.6f})",
                                     cond, max_condition, names[static_cast<std::size_t>(ba)],
                                     names[static_cast<std::size_t>(bb)], best));
}

Eigen::Vector4d SliceEstimate::coefficients() const {
    return {datt, satt_channel[0], satt_channel[1], satt_channel[2]};
}

double SliceEstimate::se(const std::string& method, const Eigen::Vector4d& weights) const {
    const auto it = variance.find(method);
    if (it == variance.end()) {
        throw ValidationError("missing_variance", fmt::format("no {} variance for slice {}", method, slice.label()));
    }
    return std::sqrt(std::max(0.0, weights.dot(it->second.vcov * weights)));
}

SliceEstimate estimate_slice(const SliceRegressors& reg, const FoldAssignment& folds,
                             const panel::Panel& panel, const EstimateOptions& options) {
    const auto n = reg.y.size();
    if (n < options.min_n) {
        throw ValidationError(
            "insufficient_sample",
            fmt::format("slice {} keeps {} rows after trimming, below the minimum {} (of {} candidate rows "
                        "kept per channel: same {}, cross {}, nall {})",
                        reg.slice.label(), n, options.min_n, reg.candidates, reg.kept_by_channel[0],
                        reg.kept_by_channel[1], reg.kept_by_channel[2]));
    }
    std::vector<int> fold_of_muni(panel.geoids().size());
    for (std::size_t m = 0; m < panel.geoids().size(); ++m) fold_of_muni[m] = folds.fold_of(panel.geoids()[m]);
    std::vector<int> row_fold(static_cast<std::size_t>(n));
    std::vector<int> unit(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < row_fold.size(); ++i) {
        row_fold[i] = fold_of_muni[static_cast<std::size_t>(reg.muni[i])];
        unit[i] = static_cast<int>(reg.cell[i]);
    }

    const auto& spec = options.learner;
    // Nuisance models see within-transformed outcomes, shares and features so
    // the cell effects cannot load on the features; the residuals are
    // within-transformed again before the final regression.
    auto within = [&](const Eigen::VectorXd& v) { return two_way_demean(v, unit, reg.t); };
    Eigen::MatrixXd F(reg.features.rows(), reg.features.cols());
    for (Eigen::Index j = 0; j < F.cols(); ++j) F.col(j) = within(reg.features.col(j));
    auto residualize = [&](const Eigen::VectorXd& v, Learner learner) {
        return within(crossfit_residualize(v, F, learner, row_fold, folds.K, spec));
    };
    const auto y_res = residualize(within(reg.y), Learner::ridge);
    Eigen::MatrixXd X(n, 4);
    X.col(0) = residualize(reg.D, Learner::logistic);
    for (Eigen::Index k = 0; k < 3; ++k) X.col(k + 1) = residualize(within(reg.S.col(k)), Learner::ridge);
    const std::vector<std::string> names = {"D_slice", "S_same", "S_cross", "S_nall"};
    check_collinearity(X, names, options.max_condition);

    const Eigen::MatrixXd B = inference::bread(X);
    const Eigen::Vector4d beta = B * (X.transpose() * y_res);

    SliceEstimate est;
    est.slice = reg.slice;
    est.datt = beta(0);
    est.satt_channel = {beta(1), beta(2), beta(3)};
    est.satt = est.satt_channel[0] + est.satt_channel[1] + est.satt_channel[2];
    est.tatt = est.datt + est.satt;
    est.n_after_trim = n;
    est.X = X;
    est.u = y_res - X * beta;
    est.muni = reg.muni;
    est.unit = unit;
    est.time = reg.t;
    est.variance.emplace("cluster", inference::cluster_se(est.X, est.u, est.muni));
    return est;
}

void write_slices(const std::filesystem::path& path, std::span<const SliceEstimate> estimates,
                  const SliceMeta& meta) {
    csv::Table t({"outcome", "slice", "parameter", "estimate", "se_cluster", "n", "history_flavor",
                  "epsilon", "min_n"});
    const std::array<Eigen::Vector4d, 6> weights = {
        Eigen::Vector4d(1, 0, 0, 0), Eigen::Vector4d(0, 1, 0, 0), Eigen::Vector4d(0, 0, 1, 0),
        Eigen::Vector4d(0, 0, 0, 1), Eigen::Vector4d(0, 1, 1, 1), Eigen::Vector4d(1, 1, 1, 1)};
    for (const auto& e : estimates) {
        const std::array<double, 6> values = {e.datt, e.satt_channel[0], e.satt_channel[1],
                                              e.satt_channel[2], e.satt, e.tatt};
        for (std::size_t p = 0; p < 6; ++p) {
            t.add_row({e.outcome, e.slice.label(), kParameters[p], csv::format(values[p]),
                       csv::format(e.se("cluster", weights[p])), std::to_string(e.n_after_trim),
                       exposure::to_string(meta.flavor), csv::format(meta.epsilon),
                       std::to_string(meta.min_n)});
        }
    }
    csv::write(path, t);
}

std::vector<SliceRecord> read_slices(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"outcome", "slice", "parameter", "estimate", "se_cluster", "n"}, path);
    std::vector<SliceRecord> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        SliceRecord rec;
        rec.outcome = t.cell(r, "outcome");
        rec.slice = t.cell(r, "slice");
        rec.parameter = t.cell(r, "parameter");
        rec.estimate = csv::parse_double(t.cell(r, "estimate"), "estimate");
        rec.se_cluster = csv::parse_double(t.cell(r, "se_cluster"), "se_cluster");
        rec.n = csv::parse_int(t.cell(r, "n"), "n");
        out.push_back(std::move(rec));
    }
    return out;
}

void write_residuals(const std::filesystem::path& path, const panel::Panel& panel,
                     std::span<const SliceEstimate> estimates) {
    csv::Table t({"outcome", "slice", "geoid", "naics", "t", "residual"});
    for (const auto& e : estimates) {
        for (Eigen::Index i = 0; i < e.u.size(); ++i) {
            const auto cell = static_cast<std::size_t>(e.unit[static_cast<std::size_t>(i)]);
            const auto& key = panel.cells()[cell];
            t.add_row({e.outcome, e.slice.label(), key.geoid, key.naics,
                       std::to_string(e.time[static_cast<std::size_t>(i)]), csv::format(e.u(i))});
        }
    }
    csv::write(path, t);
}

std::vector<ResidualRecord> read_residuals(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"outcome", "slice", "geoid", "t", "residual"}, path);
    std::vector<ResidualRecord> out;
    out.reserve(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        out.push_back({t.cell(r, "outcome"), t.cell(r, "slice"), t.cell(r, "geoid"),
                       static_cast<int>(csv::parse_int(t.cell(r, "t"), "t")),
                       csv::parse_double(t.cell(r, "residual"), "residual")});
    }
    return out;
}

}  // namespace entryfx::drdid
