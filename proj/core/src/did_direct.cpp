#include "entryfx/did_direct.hpp"

#include "entryfx/csv.hpp"
#include "entryfx/error.hpp"
#include "entryfx/random.hpp"
#include "entryfx/stats.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <map>

namespace entryfx::direct {

std::string to_string(Mode mode) { return mode == Mode::balanced ? "balanced" : "unbalanced"; }

Mode parse_mode(std::string_view name) {
    if (name == "balanced") return Mode::balanced;
    if (name == "unbalanced") return Mode::unbalanced;
    throw ValidationError("unknown_mode", fmt::format("unknown mode '{}'", name));
}

// --- group-time ATTs --------------------------------------------------------

GroupTimeGrid cs_group_time(const panel::Panel& panel, const events::CohortMap& cohorts,
                            panel::Outcome outcome, int delta, Mode mode, events::Horizon horizon) {
    if (delta < 0) throw ValidationError("invalid_delta", "delta must be nonnegative");
    if (cohorts.size() != panel.n_cells()) {
        throw ValidationError("size_mismatch", "cohort map does not match the panel");
    }
    GroupTimeGrid grid;
    grid.outcome = panel::to_string(outcome);
    grid.mode = mode;
    grid.delta = delta;
    grid.horizon = horizon;
    grid.n_munis = static_cast<int>(panel.geoids().size());
    const auto Y = panel.outcome_matrix(outcome);
    const int T = static_cast<int>(panel.n_quarters());
    const auto& muni = panel.geoid_of_cell();

    for (std::size_t k = 0; k < panel.industries().size(); ++k) {
        const auto& naics = panel.industries()[k];
        std::vector<std::size_t> never;
        std::map<int, std::vector<std::size_t>> all_cohorts;
        for (std::size_t c = 0; c < panel.n_cells(); ++c) {
            if (panel.industry_of_cell()[c] != static_cast<int>(k)) continue;
            if (cohorts[c].g) {
                all_cohorts[*cohorts[c].g].push_back(c);
            } else {
                never.push_back(c);
            }
        }
        for (const auto& [g, members] : all_cohorts) {
            std::vector<std::size_t> treated;
            for (auto c : members) {
                if (mode == Mode::unbalanced || cohorts[c].balanced_window) treated.push_back(c);
            }
            if (treated.empty()) continue;
            const int b = g - delta - 1;
            if (b < 1) {
                grid.dropped.push_back(fmt::format("{} g={}: no baseline quarter", naics, g));
                continue;
            }
            for (int ell = horizon.lo; ell <= horizon.hi; ++ell) {
                const int t = g + ell;
                if (t < 1 || t > T) continue;
                auto diff = [&](std::size_t c) {
                    return Y(static_cast<Eigen::Index>(c), t - 1) -
                           Y(static_cast<Eigen::Index>(c), b - 1);
                };
                std::vector<std::pair<std::size_t, double>> tr;
                std::vector<std::pair<std::size_t, double>> co;
                for (auto c : treated) {
                    const double d = diff(c);
                    if (std::isfinite(d)) tr.emplace_back(c, d);
                }
                for (auto c : never) {
                    const double d = diff(c);
                    if (std::isfinite(d)) co.emplace_back(c, d);
                }
                for (const auto& [g2, others] : all_cohorts) {
                    if (g2 == g || std::max(t, b) >= g2 - delta) continue;
                    for (auto c : others) {
                        const double d = diff(c);
                        if (std::isfinite(d)) co.emplace_back(c, d);
                    }
                }
                if (tr.empty() || co.empty()) continue;
                double mt = 0.0;
                double mc = 0.0;
                for (const auto& [c, d] : tr) mt += d;
                for (const auto& [c, d] : co) mc += d;
                mt /= static_cast<double>(tr.size());
                mc /= static_cast<double>(co.size());

                GroupTimeCell cell;
                cell.naics = naics;
                cell.g = g;
                cell.t = t;
                cell.att = t == b ? 0.0 : mt - mc;
                cell.n_treated = static_cast<int>(tr.size());
                cell.control_n = static_cast<int>(co.size());
                // Deviations are scaled by sqrt(n / (n - 1)) so the squared
                // influence is unbiased for the variance of each group mean;
                // treated groups are often a handful of cells.
                auto scale = [](std::size_t n) {
                    const auto m = static_cast<double>(n);
                    return n > 1 ? std::sqrt(m / (m - 1.0)) / m : 1.0;
                };
                std::map<int, double> psi;
                if (t != b) {
                    const double st = scale(tr.size());
                    const double sc = scale(co.size());
                    for (const auto& [c, d] : tr) psi[muni[c]] += (d - mt) * st;
                    for (const auto& [c, d] : co) psi[muni[c]] -= (d - mc) * sc;
                }
                cell.influence.assign(psi.begin(), psi.end());
                grid.cells.push_back(std::move(cell));
            }
        }
    }
    return grid;
}

// --- aggregation ------------------------------------------------------------

const PathPoint* EventStudyPath::find(int ell) const {
    for (const auto& p : points) {
        if (p.ell == ell) return &p;
    }
    return nullptr;
}

std::size_t EventStudyPath::index_of(int ell) const {
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].ell == ell) return i;
    }
    throw ValidationError("missing_event_time", fmt::format("event time {} is not on the path", ell));
}

Eigen::MatrixXd EventStudyPath::covariance() const {
    const auto n = static_cast<Eigen::Index>(points.size());
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
    if (influence.size() > 0) {
        v = influence.transpose() * influence;
    } else if (draws.rows() > 1) {
        Eigen::MatrixXd centered = draws.rowwise() - draws.colwise().mean();
        v = centered.transpose() * centered / static_cast<double>(draws.rows() - 1);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!points[static_cast<std::size_t>(i)].available) {
            v.row(i).setZero();
            v.col(i).setZero();
        }
    }
    return v;
}

EventStudyPath aggregate_event_time(const GroupTimeGrid& grid) {
    EventStudyPath path;
    path.estimator = "cs";
    path.outcome = grid.outcome;
    path.mode = grid.mode;
    path.delta = grid.delta;
    const int lo = grid.horizon.lo;
    const int hi = grid.horizon.hi;
    const auto n_points = static_cast<std::size_t>(hi - lo + 1);
    path.points.resize(n_points);
    path.influence = Eigen::MatrixXd::Zero(grid.n_munis, static_cast<Eigen::Index>(n_points));
    std::vector<double> weight_sum(n_points, 0.0);
    for (std::size_t i = 0; i < n_points; ++i) {
        auto& p = path.points[i];
        p.ell = lo + static_cast<int>(i);
        p.reference = p.ell == path.reference_ell();
        p.anticipation = p.ell >= -grid.delta && p.ell <= -1;
    }
    for (const auto& cell : grid.cells) {
        const auto i = static_cast<std::size_t>(cell.ell() - lo);
        weight_sum[i] += cell.n_treated;
    }
    for (const auto& cell : grid.cells) {
        const auto i = static_cast<std::size_t>(cell.ell() - lo);
        auto& p = path.points[i];
        const double w = cell.n_treated / weight_sum[i];
        p.available = true;
        p.att += w * cell.att;
        p.n_treated += cell.n_treated;
        for (const auto& [m, v] : cell.influence) {
            path.influence(m, static_cast<Eigen::Index>(i)) += w * v;
        }
    }
    for (std::size_t i = 0; i < n_points; ++i) {
        auto& p = path.points[i];
        if (p.reference) {
            p.att = 0.0;
            path.influence.col(static_cast<Eigen::Index>(i)).setZero();
        }
        p.se = std::sqrt(path.influence.col(static_cast<Eigen::Index>(i)).squaredNorm());
        p.band_lo = p.band_hi = p.att;
    }
    return path;
}

bool in_sup_set(const PathPoint& p) { return p.available && !p.reference && !p.anticipation; }

void finish_band(EventStudyPath& path, double alpha) {
    const auto B = path.draws.rows();
    std::vector<double> sup(static_cast<std::size_t>(B), 0.0);
    bool any = false;
    for (std::size_t i = 0; i < path.points.size(); ++i) {
        const auto& p = path.points[i];
        if (!in_sup_set(p)) continue;
        if (!(p.se > 0.0)) {
            path.warnings.push_back(
                fmt::format("event time {} has zero variance and is left out of the max-|t|", p.ell));
            continue;
        }
        any = true;
        for (Eigen::Index b = 0; b < B; ++b) {
            sup[static_cast<std::size_t>(b)] =
                std::max(sup[static_cast<std::size_t>(b)],
                         std::abs(path.draws(b, static_cast<Eigen::Index>(i))) / p.se);
        }
    }
    const double z = stats::normal_quantile(1.0 - alpha / 2.0);
    // The sup-t quantile can fall under the pointwise value with few event
    // times; the band is never allowed to be narrower than the pointwise one.
    const double q = any ? stats::quantile_linear(sup, 1.0 - alpha) : z;
    path.crit = std::max(q, z);
    path.alpha = alpha;
    for (auto& p : path.points) {
        if (!p.available) continue;
        p.band_lo = p.att - path.crit * p.se;
        p.band_hi = p.att + path.crit * p.se;
    }
}

void multiplier_band(EventStudyPath& path, int B, double alpha, std::uint64_t seed) {
    if (B < 199) throw ValidationError("invalid_bootstrap", "B must be at least 199");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("invalid_alpha", "alpha must be in (0,1)");
    const auto n_munis = path.influence.rows();
    path.draws.resize(B, static_cast<Eigen::Index>(path.points.size()));
    Eigen::RowVectorXd xi(n_munis);
    for (int b = 0; b < B; ++b) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
        for (Eigen::Index m = 0; m < n_munis; ++m) xi(m) = rademacher(rng);
        path.draws.row(b) = xi * path.influence;
    }
    finish_band(path, alpha);
}

CumulativeSlice cumulative_slice(const EventStudyPath& path, exposure::Slice slice) {
    std::vector<int> gaps;
    std::vector<std::size_t> idx;
    for (int ell = slice.a; ell <= slice.b; ++ell) {
        const auto* p = path.find(ell);
        if (p == nullptr || !p->available) {
            gaps.push_back(ell);
        } else {
            idx.push_back(static_cast<std::size_t>(p - path.points.data()));
        }
    }
    if (!gaps.empty()) {
        throw ValidationError("missing_event_time",
                              fmt::format("slice {} has unavailable event times: {}", slice.label(),
                                          fmt::join(gaps, ", ")));
    }
    CumulativeSlice out;
    out.slice = slice;
    for (auto i : idx) out.value += path.points[i].att;
    if (path.influence.size() > 0) {
        Eigen::VectorXd psi = Eigen::VectorXd::Zero(path.influence.rows());
        for (auto i : idx) psi += path.influence.col(static_cast<Eigen::Index>(i));
        out.se = std::sqrt(psi.squaredNorm());
    }
    if (path.draws.rows() > 1) {
        std::vector<double> sums(static_cast<std::size_t>(path.draws.rows()), 0.0);
        for (Eigen::Index b = 0; b < path.draws.rows(); ++b) {
            for (auto i : idx) sums[static_cast<std::size_t>(b)] += path.draws(b, static_cast<Eigen::Index>(i));
        }
        if (path.influence.size() == 0) out.se = stats::sample_sd(sums);
        const double a = path.alpha;
        // Basic percentile interval of the centered draws around the estimate.
        out.ci_lo = out.value - stats::quantile_linear(sums, 1.0 - a / 2.0);
        out.ci_hi = out.value - stats::quantile_linear(sums, a / 2.0);
    } else {
        const double z = stats::normal_quantile(1.0 - path.alpha / 2.0);
        out.ci_lo = out.value - z * out.se;
        out.ci_hi = out.value + z * out.se;
    }
    return out;
}

// --- file formats -----------------------------------------------------------

void write_paths(const std::filesystem::path& path, std::span<const EventStudyPath> paths) {
    csv::Table t({"estimator", "outcome", "mode", "ell", "available", "reference", "anticipation",
                  "att", "se", "band_lo", "band_hi", "n_treated", "crit", "delta"});
    for (const auto& p : paths) {
        for (const auto& pt : p.points) {
            const bool a = pt.available;
            t.add_row({p.estimator, p.outcome, to_string(p.mode), std::to_string(pt.ell),
                       a ? "1" : "0", pt.reference ? "1" : "0", pt.anticipation ? "1" : "0",
                       a ? csv::format(pt.att) : "NA", a ? csv::format(pt.se) : "NA",
                       a ? csv::format(pt.band_lo) : "NA", a ? csv::format(pt.band_hi) : "NA",
                       std::to_string(pt.n_treated), csv::format(p.crit), std::to_string(p.delta)});
        }
    }
    csv::write(path, t);
}

std::vector<EventStudyPath> read_paths(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"estimator", "outcome", "mode", "ell", "available", "att", "se",
                             "band_lo", "band_hi", "n_treated"},
                         path);
    std::vector<EventStudyPath> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const auto& est = t.cell(r, "estimator");
        const auto& oc = t.cell(r, "outcome");
        const auto mode = parse_mode(t.cell(r, "mode"));
        if (out.empty() || out.back().estimator != est || out.back().outcome != oc ||
            out.back().mode != mode) {
            EventStudyPath p;
            p.estimator = est;
            p.outcome = oc;
            p.mode = mode;
            if (t.has_column("delta")) p.delta = static_cast<int>(csv::parse_int(t.cell(r, "delta"), "delta"));
            if (t.has_column("crit")) p.crit = csv::parse_double(t.cell(r, "crit"), "crit");
            out.push_back(std::move(p));
        }
        PathPoint pt;
        pt.ell = static_cast<int>(csv::parse_int(t.cell(r, "ell"), "ell"));
        pt.available = t.cell(r, "available") == "1";
        pt.reference = t.has_column("reference") && t.cell(r, "reference") == "1";
        pt.anticipation = t.has_column("anticipation") && t.cell(r, "anticipation") == "1";
        if (pt.available) {
            pt.att = csv::parse_double(t.cell(r, "att"), "att");
            pt.se = csv::parse_double(t.cell(r, "se"), "se");
            pt.band_lo = csv::parse_double(t.cell(r, "band_lo"), "band_lo");
            pt.band_hi = csv::parse_double(t.cell(r, "band_hi"), "band_hi");
        }
        pt.n_treated = static_cast<int>(csv::parse_int(t.cell(r, "n_treated"), "n_treated"));
        out.back().points.push_back(pt);
    }
    return out;
}

void write_path_covariances(const std::filesystem::path& path, std::span<const EventStudyPath> paths) {
    csv::Table t({"estimator", "outcome", "mode", "ell_i", "ell_j", "cov"});
    for (const auto& p : paths) {
        const auto v = p.covariance();
        for (std::size_t i = 0; i < p.points.size(); ++i) {
            if (!p.points[i].available) continue;
            for (std::size_t j = 0; j < p.points.size(); ++j) {
                if (!p.points[j].available) continue;
                t.add_row({p.estimator, p.outcome, to_string(p.mode), std::to_string(p.points[i].ell),
                           std::to_string(p.points[j].ell),
                           csv::format(v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))});
            }
        }
    }
    csv::write(path, t);
}

Eigen::MatrixXd read_path_covariance(const std::filesystem::path& path, const EventStudyPath& target) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"estimator", "outcome", "mode", "ell_i", "ell_j", "cov"}, path);
    const auto n = static_cast<Eigen::Index>(target.points.size());
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
    const auto mode = to_string(target.mode);
    bool found = false;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (t.cell(r, "estimator") != target.estimator || t.cell(r, "outcome") != target.outcome ||
            t.cell(r, "mode") != mode) {
            continue;
        }
        const auto* a = target.find(static_cast<int>(csv::parse_int(t.cell(r, "ell_i"), "ell_i")));
        const auto* b = target.find(static_cast<int>(csv::parse_int(t.cell(r, "ell_j"), "ell_j")));
        if (a == nullptr || b == nullptr) continue;
        v(a - target.points.data(), b - target.points.data()) = csv::parse_double(t.cell(r, "cov"), "cov");
        found = true;
    }
    if (!found) {
        throw MissingArtifactError("missing_covariance",
                                   fmt::format("{}: no covariance for {} {} {}", path.string(),
                                               target.estimator, target.outcome, mode));
    }
    return v;
}

void write_cumulative(const std::filesystem::path& path, std::span<const CumulativeRow> rows) {
    csv::Table t({"estimator", "outcome", "mode", "slice", "value", "se", "ci_lo", "ci_hi"});
    for (const auto& r : rows) {
        t.add_row({r.estimator, r.outcome, to_string(r.mode), r.slice.slice.label(),
                   csv::format(r.slice.value), csv::format(r.slice.se), csv::format(r.slice.ci_lo),
                   csv::format(r.slice.ci_hi)});
    }
    csv::write(path, t);
}

std::vector<CumulativeRow> read_cumulative(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"estimator", "outcome", "mode", "slice", "value", "se", "ci_lo", "ci_hi"},
                         path);
    std::vector<CumulativeRow> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        CumulativeRow row;
        row.estimator = t.cell(r, "estimator");
        row.outcome = t.cell(r, "outcome");
        row.mode = parse_mode(t.cell(r, "mode"));
        row.slice.slice = exposure::Slice::parse(t.cell(r, "slice"));
        row.slice.value = csv::parse_double(t.cell(r, "value"), "value");
        row.slice.se = csv::parse_double(t.cell(r, "se"), "se");
        row.slice.ci_lo = csv::parse_double(t.cell(r, "ci_lo"), "ci_lo");
        row.slice.ci_hi = csv::parse_double(t.cell(r, "ci_hi"), "ci_hi");
        out.push_back(std::move(row));
    }
    return out;
}

void write_lead_lag(const std::filesystem::path& path, std::span<const LeadLagRow> rows) {
    csv::Table t({"estimator", "outcome", "ell", "available", "coef", "se", "n"});
    for (const auto& r : rows) {
        t.add_row({r.estimator, r.outcome, std::to_string(r.ell), r.available ? "1" : "0",
                   r.available ? csv::format(r.coef) : "NA", r.available ? csv::format(r.se) : "NA",
                   std::to_string(r.n)});
    }
    csv::write(path, t);
}

}  // namespace entryfx::direct
