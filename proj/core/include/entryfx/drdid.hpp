#pragma once

#include "entryfx/events.hpp"
#include "entryfx/exposure.hpp"
#include "entryfx/inference.hpp"
#include "entryfx/panel.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace entryfx::drdid {

// --- folds and learners -----------------------------------------------------

struct FoldAssignment {
    std::vector<std::string> geoids;  // sorted, distinct
    std::vector<int> fold;            // parallel to `geoids`
    int K = 0;
    std::uint64_t seed = 0;

    int fold_of(const std::string& geoid) const;  // throws for unknown geoids
    std::vector<int> sizes() const;
};

/// Shuffles the municipalities with `seed` and deals them round-robin into K
/// folds, so sizes differ by at most one.
FoldAssignment make_folds(std::span<const std::string> geoids, int K, std::uint64_t seed);

enum class Learner { ridge, logistic };

struct LearnerSpec {
    double ridge_lambda = 1.0;
    /// L2 penalty on the standardized logistic slopes; the intercept is free.
    double logistic_lambda = 1.0;
    int max_iter = 100;
    double tol = 1e-8;
};

/// Ridge with an unpenalized intercept on features standardized with the
/// training rows; constant training columns are dropped.
Eigen::VectorXd ridge_predict(const Eigen::MatrixXd& X_train, const Eigen::VectorXd& y_train,
                              const Eigen::MatrixXd& X_test, double lambda);

/// Penalized logistic regression by Newton steps; returns probabilities for
/// the test rows. Throws `propensity_separation` when the training labels
/// are constant and `no_convergence` (with the iteration count) otherwise.
Eigen::VectorXd logistic_predict(const Eigen::MatrixXd& X_train, const Eigen::VectorXd& d_train,
                                 const Eigen::MatrixXd& X_test, const LearnerSpec& spec);

/// value - out-of-fold prediction for every row. `row_fold` gives each row's
/// fold id in [0, K).
Eigen::VectorXd crossfit_residualize(const Eigen::VectorXd& values, const Eigen::MatrixXd& features,
                                     Learner learner, std::span<const int> row_fold, int K,
                                     const LearnerSpec& spec = {});

/// Alternating projections on unit and time means until the largest
/// absolute group mean falls below `tol`.
Eigen::VectorXd two_way_demean(const Eigen::VectorXd& values, std::span<const int> unit,
                               std::span<const int> time, double tol = 1e-10, int max_iter = 100000);

// --- slice regressors -------------------------------------------------------

struct SampleOptions {
    int delta = 2;
    double epsilon = 0.02;
    bool balanced = true;
    exposure::HistoryFlavor flavor = exposure::HistoryFlavor::any;
    bool trim = true;
};

/// Rows entering one slice regression. Rows are (cell, t) pairs with
/// never-treated cells, treated cells before g - delta (D = 0) and treated
/// cells inside the slice window (D = 1).
struct SliceRegressors {
    exposure::Slice slice;
    std::vector<std::size_t> cell;
    std::vector<int> t;
    std::vector<int> muni;  // panel geoid index
    Eigen::VectorXd y;
    Eigen::VectorXd D;
    Eigen::MatrixXd S;         // n x 3, channel order of exposure::kChannels
    Eigen::MatrixXd features;  // exposure histories and strata indicators
    long long candidates = 0;  // rows before trimming
    std::array<long long, 3> kept_by_channel{};
};

/// `strata` may be empty, in which case no strata indicators enter.
SliceRegressors build_slice_regressors(const panel::Panel& panel, const events::CohortMap& cohorts,
                                       const exposure::ExposureSeries& series,
                                       std::span<const panel::StrataLabel> strata,
                                       panel::Outcome outcome, exposure::Slice slice,
                                       const SampleOptions& options);

// --- estimation -------------------------------------------------------------

struct SliceEstimate {
    exposure::Slice slice;
    std::string outcome;
    double datt = 0.0;
    std::array<double, 3> satt_channel{};  // same, cross, nall
    double satt = 0.0;
    double tatt = 0.0;
    /// Variance of (DATT, SATT_same, SATT_cross, SATT_nall), keyed by method.
    std::map<std::string, inference::VarianceEstimate> variance;
    long long n_after_trim = 0;

    // Final-stage design, kept for alternative variance estimators and diagnostics.
    Eigen::MatrixXd X;
    Eigen::VectorXd u;
    std::vector<int> muni;
    std::vector<int> unit;
    std::vector<int> time;

    /// Coefficient vector (DATT, SATT_same, SATT_cross, SATT_nall).
    Eigen::Vector4d coefficients() const;
    /// Standard error of a linear combination under one variance record.
    double se(const std::string& method, const Eigen::Vector4d& weights) const;
};

struct EstimateOptions {
    int min_n = 50;
    LearnerSpec learner;
    double max_condition = 1e10;
};

/// Cross-fitted residualization of within-transformed variables, two-way
/// demeaning of the residuals by (cell, quarter) and a no-intercept OLS of the outcome residual on the four regressor residuals,
/// with municipality-clustered covariance.
SliceEstimate estimate_slice(const SliceRegressors& regressors, const FoldAssignment& folds,
                             const panel::Panel& panel, const EstimateOptions& options);

/// Condition number of X'X after scaling the columns to unit norm; throws
/// `collinear_regressors` naming the most correlated pair when it exceeds
/// `max_condition`.
void check_collinearity(const Eigen::MatrixXd& X, std::span<const std::string> names,
                        double max_condition);

// --- file formats -----------------------------------------------------------

struct SliceMeta {
    exposure::HistoryFlavor flavor = exposure::HistoryFlavor::any;
    double epsilon = 0.02;
    int min_n = 50;
};

/// One row per parameter (DATT, SATT_same, SATT_cross, SATT_nall, SATT, TATT).
void write_slices(const std::filesystem::path& path, std::span<const SliceEstimate> estimates,
                  const SliceMeta& meta);

struct SliceRecord {
    std::string outcome;
    std::string slice;
    std::string parameter;
    double estimate = 0.0;
    double se_cluster = 0.0;
    long long n = 0;
};

std::vector<SliceRecord> read_slices(const std::filesystem::path& path);

/// Final-stage residuals with their municipality and quarter, used by the
/// spatial diagnostics.
void write_residuals(const std::filesystem::path& path, const panel::Panel& panel,
                     std::span<const SliceEstimate> estimates);

struct ResidualRecord {
    std::string outcome;
    std::string slice;
    std::string geoid;
    int t = 0;
    double residual = 0.0;
};

std::vector<ResidualRecord> read_residuals(const std::filesystem::path& path);

inline constexpr std::array<const char*, 6> kParameters = {"DATT",       "SATT_same", "SATT_cross",
                                                           "SATT_nall", "SATT",      "TATT"};

}  // namespace entryfx::drdid
