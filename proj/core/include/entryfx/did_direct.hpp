#pragma once

#include "entryfx/events.hpp"
#include "entryfx/exposure.hpp"
#include "entryfx/panel.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace entryfx::direct {

enum class Mode { balanced, unbalanced };

std::string to_string(Mode mode);
Mode parse_mode(std::string_view name);

/// Sparse influence vector over municipalities.
using Influence = std::vector<std::pair<int, double>>;

struct GroupTimeCell {
    std::string naics;
    int g = 0;
    int t = 0;
    double att = 0.0;
    int n_treated = 0;
    int control_n = 0;
    Influence influence;

    int ell() const { return t - g; }
};

struct GroupTimeGrid {
    std::vector<GroupTimeCell> cells;
    std::vector<std::string> dropped;  // "naics g: reason"
    std::string outcome;
    Mode mode = Mode::balanced;
    int delta = 2;
    int n_munis = 0;
    events::Horizon horizon;
};

/// Unconditional group-time ATTs, industry by industry, against the
/// not-yet-treated (t < g' - delta) and never-treated cells of the same
/// industry. Baseline quarter is g - (delta + 1). Event times outside the
/// horizon are not computed.
GroupTimeGrid cs_group_time(const panel::Panel& panel, const events::CohortMap& cohorts,
                            panel::Outcome outcome, int delta, Mode mode,
                            events::Horizon horizon = {});

struct PathPoint {
    int ell = 0;
    bool available = false;
    bool reference = false;
    bool anticipation = false;  // -delta <= ell <= -1
    double att = 0.0;
    double se = 0.0;
    double band_lo = 0.0;
    double band_hi = 0.0;
    int n_treated = 0;
};

struct EventStudyPath {
    std::string estimator;  // "cs" or "bjs"
    std::string outcome;
    Mode mode = Mode::balanced;
    int delta = 2;
    std::vector<PathPoint> points;  // ascending ell over the horizon
    /// Municipality x point influence matrix; empty for bootstrap-only
    /// estimators, whose covariance comes from `draws`.
    Eigen::MatrixXd influence;
    /// Bootstrap draws of (estimate* - estimate), B x points.
    Eigen::MatrixXd draws;
    double crit = 0.0;
    double alpha = 0.05;
    std::vector<std::string> warnings;

    int reference_ell() const { return -(delta + 1); }
    const PathPoint* find(int ell) const;
    std::size_t index_of(int ell) const;  // throws if ell is outside the path
    /// Covariance of the available points (0 rows/cols for unavailable ones).
    Eigen::MatrixXd covariance() const;
};

/// Cohort-size weighted mean of ATT(g, g + ell) across cohorts and industries.
EventStudyPath aggregate_event_time(const GroupTimeGrid& grid);

/// Rademacher multiplier bootstrap over municipalities; fills se, the
/// uniform band and `draws`. Event times in the anticipation window and the
/// reference bin do not enter the max-|t| statistic.
void multiplier_band(EventStudyPath& path, int B, double alpha, std::uint64_t seed);

/// Sup-t critical value and bands from already filled `draws` and SEs.
void finish_band(EventStudyPath& path, double alpha);

/// Whether an event time enters the max-|t| statistic.
bool in_sup_set(const PathPoint& p);

struct CumulativeSlice {
    exposure::Slice slice;
    double value = 0.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

/// Exact sum of the path over the slice, with the bootstrap percentile CI.
/// Throws listing any unavailable event times.
CumulativeSlice cumulative_slice(const EventStudyPath& path, exposure::Slice slice);

// --- imputation -------------------------------------------------------------

struct ImputationResult {
    /// cells x T; NaN where no effect is imputed (untreated rows, unsupported units).
    Eigen::MatrixXd effects;
    Eigen::MatrixXd unit_effects;  // alpha_i per cell (NaN if unidentified), 1 column
    Eigen::MatrixXd time_effects;  // industries x T (NaN if unidentified)
    std::vector<std::string> excluded;  // "geoid naics: reason"
    EventStudyPath path;
    /// Municipality x point sums and counts of the imputed effects.
    Eigen::MatrixXd muni_sums;
    Eigen::MatrixXd muni_counts;
};

struct TwoWayFit {
    std::vector<double> alpha;   // per unit, NaN when the unit has no rows
    std::vector<double> lambda;  // per time, NaN when the time has no rows
    double max_residual_mean = 0.0;
};

/// Least squares fit of y = alpha_u + lambda_t on the listed rows, solved
/// exactly through the normal equations. Throws when the bipartite
/// unit-time design is disconnected, naming the components via `unit_name`.
TwoWayFit fit_two_way(std::span<const int> unit, std::span<const int> time, std::span<const double> y,
                      int n_units, int n_times,
                      const std::function<std::string(int)>& unit_name = {});

/// Imputation estimator. Untreated rows are never-treated rows and treated
/// rows with t < g - delta; effects are imputed for t >= g - delta.
ImputationResult bjs_impute(const panel::Panel& panel, const events::CohortMap& cohorts,
                            panel::Outcome outcome, int delta, Mode mode,
                            events::Horizon horizon = {});

/// Cluster bootstrap over municipalities on the imputed effects, without
/// refitting. Fills se, the uniform band and `draws`.
void bjs_bootstrap(ImputationResult& result, int B, double alpha, std::uint64_t seed);

// --- interaction-weighted event study ---------------------------------------

struct LeadLagRow {
    std::string estimator;  // "sa_iw" or "twfe_pooled"
    std::string outcome;
    int ell = 0;
    bool available = false;
    double coef = 0.0;
    double se = 0.0;
    int n = 0;
};

/// Interaction-weighted event study against never-treated cells (or the
/// last-treated cohort when an industry has none), reference ell = -1.
std::vector<LeadLagRow> sun_abraham_iw(const panel::Panel& panel, const events::CohortMap& cohorts,
                                       panel::Outcome outcome, events::Horizon window = {});

/// Pooled two-way fixed effects event study with relative-time dummies
/// (endpoints binned), reference ell = -1. Shown next to the IW estimates.
std::vector<LeadLagRow> pooled_twfe_event_study(const panel::Panel& panel,
                                                const events::CohortMap& cohorts,
                                                panel::Outcome outcome, events::Horizon window = {});

// --- file formats -----------------------------------------------------------

void write_paths(const std::filesystem::path& path, std::span<const EventStudyPath> paths);
std::vector<EventStudyPath> read_paths(const std::filesystem::path& path);

/// Long-format covariance of each path's points.
void write_path_covariances(const std::filesystem::path& path, std::span<const EventStudyPath> paths);
/// Covariance for (estimator, outcome, mode) restricted to the listed points.
Eigen::MatrixXd read_path_covariance(const std::filesystem::path& path, const EventStudyPath& target);

struct CumulativeRow {
    std::string estimator;
    std::string outcome;
    Mode mode = Mode::balanced;
    CumulativeSlice slice;
};

void write_cumulative(const std::filesystem::path& path, std::span<const CumulativeRow> rows);
std::vector<CumulativeRow> read_cumulative(const std::filesystem::path& path);

void write_lead_lag(const std::filesystem::path& path, std::span<const LeadLagRow> rows);

}  // namespace entryfx::direct
