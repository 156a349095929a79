#pragma once

#include "entryfx/did_direct.hpp"
#include "entryfx/events.hpp"
#include "entryfx/exposure.hpp"
#include "entryfx/panel.hpp"
#include "entryfx/spatial.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace entryfx::sensitivity {

// --- HonestDiD smoothness bounds --------------------------------------------

struct HonestRow {
    double M = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    /// False when the observed pre-period curvature already exceeds M.
    bool consistent = true;
};

struct HonestBounds {
    std::string outcome;
    std::string target;
    double estimate = 0.0;  // target combination of the path
    double se = 0.0;
    double baseline_lo = 0.0;
    double baseline_hi = 0.0;
    /// Trend bias implied by the linear extrapolation of the last two
    /// pre-period coefficients.
    double extrapolated_bias = 0.0;
    /// Sum of |weights| on the second-difference shocks; bound half-width is
    /// M times this plus the sampling band.
    double curvature_loading = 0.0;
    double pre_curvature = 0.0;  // max |second difference| among pre-period leads
    std::vector<HonestRow> rows;
};

/// SD(M) bounds for l'theta, with theta the post-period effects. `ells` are
/// the event times of `beta`; the trend is anchored at `anchor_ell` (the last
/// pre-period lead used) and extrapolated through every later event time,
/// anticipation leads included. Coefficients at ells <= anchor are read as
/// pure trend. Requires the anchor and the two leads before it.
HonestBounds honest_sd_bounds(std::span<const int> ells, const Eigen::VectorXd& beta,
                              const Eigen::MatrixXd& cov, const Eigen::VectorXd& target_weights,
                              int anchor_ell, std::span<const double> M_grid, double alpha);

/// Bounds for the cumulative sum over `slice` of an event-study path,
/// anchored at its reference bin.
HonestBounds honest_for_path(const direct::EventStudyPath& path, const Eigen::MatrixXd& cov,
                             exposure::Slice slice, std::span<const double> M_grid, double alpha);

void write_honest(const std::filesystem::path& path, std::span<const HonestBounds> bounds);

// --- heterogeneity ----------------------------------------------------------

struct HeterogeneityRow {
    std::string outcome;
    std::string slice;
    std::string variable;  // tradable, metro, wage_stratum
    std::string level;
    std::string parameter;  // DATT, SATT_same, TATT
    bool available = false;
    double estimate = 0.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double bh = 1.0;
    double by = 1.0;
    long long n = 0;
};

/// Within-demeaned regression of the outcome on D_slice and the
/// same-industry slice sum, each interacted with the levels of one stratum
/// variable, on the balanced-window sample. One row per variable x level x
/// parameter; BH/BY q-values are computed within each (outcome, slice).
std::vector<HeterogeneityRow> heterogeneity_twfe(const panel::Panel& panel,
                                                 const events::CohortMap& cohorts,
                                                 const exposure::ExposureSeries& series,
                                                 std::span<const panel::StrataLabel> strata,
                                                 panel::Outcome outcome,
                                                 std::span<const exposure::Slice> slices, int delta,
                                                 double alpha = 0.05);

void write_heterogeneity(const std::filesystem::path& path, std::span<const HeterogeneityRow> rows);
std::vector<HeterogeneityRow> read_heterogeneity(const std::filesystem::path& path);

// --- Moran trigger ----------------------------------------------------------

struct MoranTrigger {
    std::string model;
    double statistic = 0.0;  // pooled multivariate statistic
    double p_value = 1.0;
    double share_significant = 0.0;  // quarters with p < threshold
    int quarters = 0;
    bool triggered = false;
    std::string selected;  // "scpc" or "cluster"
};

struct ResidualPoint {
    int node = 0;  // index into the weights graph
    int t = 0;
    double residual = 0.0;
};

/// Municipality-mean residuals per quarter, a permutation Moran test per
/// quarter and a pooled multivariate statistic over quarters.
MoranTrigger moran_gate(const std::string& model, std::span<const ResidualPoint> residuals,
                        const spatial::WeightsMatrix& w, int n_perm, std::uint64_t seed,
                        double threshold = 0.05);

/// Selection rule on its own.
std::string select_method(double p_value, double threshold = 0.05);

void write_moran(const std::filesystem::path& path, std::span<const MoranTrigger> rows);
std::vector<MoranTrigger> read_moran(const std::filesystem::path& path);

}  // namespace entryfx::sensitivity
