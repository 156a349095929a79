#pragma once

#include "entryfx/events.hpp"
#include "entryfx/exposure.hpp"
#include "entryfx/panel.hpp"
#include "entryfx/random.hpp"
#include "entryfx/spatial.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace entryfx::dgp {

struct ScheduledCohort {
    int muni = 0;      // index into the generated municipalities
    int industry = 0;  // index into the generated industries
    int g = 0;
    events::Trigger trigger = events::Trigger::T1_new_entry;
};

struct DgpConfig {
    int n_munis = 78;
    int n_industries = 12;
    int n_quarters = 45;
    int grid_columns = 10;
    double spacing_km = 10.0;
    int knn = 3;
    int start_year = 2014;

    /// Explicit schedule; when empty, cohorts are drawn at random.
    std::vector<ScheduledCohort> schedule;
    double treated_share = 0.4;
    int g_min = 10;
    int g_max = 20;
    std::array<double, 3> trigger_mix = {1.0, 1.0, 1.0};  // T1, T2, T3 weights

    double direct = 0.0;            // effect at ell >= 0
    double direct_slope = 0.0;      // added per post-treatment quarter
    double direct_cohort_slope = 0.0;  // added per quarter of g above g_min
    double direct_cell_sd = 0.0;    // cell-level effect heterogeneity
    /// Direct effect for tradable / nontradable industries when set.
    std::optional<std::array<double, 2>> direct_by_tradable;
    std::vector<double> anticipation;  // anticipation[k] is the effect at ell = -(k + 1)
    std::array<double, 3> satt = {0.0, 0.0, 0.0};  // same, cross, nall
    exposure::Slice spill_slice{0, 4};

    double unit_sd = 1.0;
    double time_sd = 0.2;
    double noise_sd = 0.1;
    double spatial_sd = 0.0;
    double spatial_range_km = 0.0;
    double metro_share = 0.5;
    std::uint64_t seed = 1;

    /// The JSON text the config was read from, echoed verbatim on output.
    std::string source;
};

DgpConfig parse_config(const std::string& json_text);
DgpConfig read_config(const std::filesystem::path& path);
std::string to_json(const DgpConfig& config);

/// Per-cell, per-quarter decomposition; matrices are cells x T.
struct GroundTruth {
    Eigen::MatrixXd untreated;  // unit + time effects
    Eigen::MatrixXd direct;
    Eigen::MatrixXd anticipation;
    std::array<Eigen::MatrixXd, 3> spill;  // same, cross, nall
    Eigen::MatrixXd noise;
    Eigen::MatrixXd outcome;
};

struct Simulation {
    DgpConfig config;
    panel::Panel panel;
    events::CohortMap cohorts;
    spatial::SpatialGraph graph;
    spatial::WeightsResult weights;
    exposure::ExposureSeries exposure;
    std::map<std::string, bool> metro;
    GroundTruth truth;
    std::vector<std::string> flags;
};

/// Generates a panel whose establishment series fire the scheduled triggers
/// exactly, plus outcomes with known effect components. The outcome is
/// written to log_covered_emp; wages move with it at an industry-specific
/// wage level.
Simulation simulate(const DgpConfig& config);

struct SpatialField {
    Eigen::MatrixXd chol;  // lower Cholesky factor of sd^2 exp(-d / range)
    bool iid = true;
    double sd = 0.0;
    bool jittered = false;

    Eigen::VectorXd draw(Rng& rng) const;
};

/// Gaussian field over the centroids with covariance sd^2 exp(-d / range);
/// range 0 gives i.i.d. draws. A failed factorization is retried once with
/// 1e-10 added to the diagonal and flagged.
SpatialField make_spatial_field(const std::vector<spatial::Point>& centroids, double range_km, double sd);

Eigen::VectorXd spatial_noise(const std::vector<spatial::Point>& centroids, double range_km, double sd,
                              std::uint64_t seed, bool* jittered = nullptr);

/// Mean true direct (plus anticipation) effect of the treated cells at each
/// event time of the horizon, over cells in the balanced sample when
/// `balanced` is set. Event times without treated cells are NaN.
std::vector<double> true_event_path(const Simulation& sim, events::Horizon horizon, bool balanced);

/// Writes panel.csv, cpi.csv, metro.csv, centroids.csv, edges.csv,
/// planted_cohorts.csv, truth.csv and dgp_config.json.
void write_simulation(const std::filesystem::path& dir, const Simulation& sim);

}  // namespace entryfx::dgp
