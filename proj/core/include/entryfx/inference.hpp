#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace entryfx::inference {

enum class Method { cluster, twoway, twoway_serial, shac, scpc };

std::string to_string(Method method);
Method parse_method(std::string_view name);

struct VarianceEstimate {
    Method method = Method::cluster;
    Eigen::MatrixXd vcov;
    Eigen::VectorXd se;
    /// Method parameters exactly as used, e.g. {"cutoff_km": 75}.
    std::map<std::string, double> params;
    std::vector<std::string> flags;
    /// Degrees of freedom for the reference distribution; 0 means normal.
    double df = 0.0;
    std::string df_note;

    std::string params_json() const;
    /// Two-sided p-value and critical value under the reference distribution.
    double p_value(Eigen::Index j, double estimate) const;
    double critical_value(double alpha) const;
};

/// (X'X)^-1 of the design, with a check on the conditioning.
Eigen::MatrixXd bread(const Eigen::MatrixXd& X);

/// Municipality (or any group) cluster-robust sandwich with the
/// G/(G-1) * (N-1)/(N-k) factor.
VarianceEstimate cluster_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                            std::span<const int> cluster);

/// Heteroskedasticity-robust sandwich (HC0) without any finite-sample factor.
VarianceEstimate hc0_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u);

/// V_a + V_b - V_ab. A negative-definite result is repaired by truncating
/// eigenvalues at zero and flagged.
VarianceEstimate twoway_cluster_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                                   std::span<const int> ids_a, std::span<const int> ids_b);

/// Two-way clustering by unit and time with Bartlett-weighted cross-time,
/// cross-unit score products up to lag L. Without `lag` the lag follows the
/// Andrews AR(1) plug-in on the time-aggregated scores.
VarianceEstimate twoway_serial_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                                  std::span<const int> unit_ids, std::span<const int> time_ids,
                                  std::optional<int> lag);

/// Andrews (1991) AR(1) plug-in lag for the Bartlett kernel on the rows of
/// `scores` (T x k). Throws for T < 3.
int andrews_lag(const Eigen::MatrixXd& scores);

/// Spatial Bartlett kernel over municipality centroids, contemporaneous
/// only: scores are summed by (municipality, quarter) and weighted across
/// municipalities within each quarter.
VarianceEstimate shac_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                         std::span<const int> muni, std::span<const int> time,
                         const Eigen::MatrixXd& dist_km, double cutoff_km);

struct ScpcBasis {
    double c = 0.0;  // decay rate of exp(-c d)
    int q = 0;
    Eigen::MatrixXd r;  // n x q, columns orthogonal to 1 with squared norm n
    std::vector<int> munis;  // municipality ids the rows refer to
};

/// Decay rate c such that the mean off-diagonal of exp(-c d) equals rho_bar.
double calibrate_decay(const Eigen::MatrixXd& dist_km, double rho_bar);

/// Smallest q >= 4 at which t_q-based expected interval length stops
/// falling by more than 1% when q grows by one.
int automatic_q(int max_q);

ScpcBasis scpc_basis(const Eigen::MatrixXd& dist_km, double rho_bar, std::optional<int> q);

/// Simplified spatial-correlation principal-components variance: projects
/// municipality-summed influence onto the top-q principal components of the
/// calibrated covariance and uses Student-t(q) critical values.
VarianceEstimate scpc_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                         std::span<const int> muni, const Eigen::MatrixXd& dist_km, double rho_bar,
                         std::optional<int> q);

/// Same construction applied to an already formed municipality x parameter
/// influence matrix (rows follow `dist_km`).
VarianceEstimate scpc_from_influence(const Eigen::MatrixXd& psi, const Eigen::MatrixXd& dist_km,
                                     double rho_bar, std::optional<int> q);

struct FdrResult {
    std::string family;
    std::vector<double> p;
    std::vector<double> bh;
    std::vector<double> by;
};

FdrResult fdr_adjust(std::span<const double> p, const std::string& family);

// --- output -----------------------------------------------------------------

struct InferenceRow {
    std::string estimate_id;
    std::string parameter;
    double estimate = 0.0;
    VarianceEstimate variance;
    Eigen::Index index = 0;  // which parameter of `variance`
};

void write_inference(const std::filesystem::path& path, std::span<const InferenceRow> rows);

struct InferenceRecord {
    std::string estimate_id;
    std::string parameter;
    std::string method;
    double estimate = 0.0;
    double se = 0.0;
    double p_value = 1.0;
    std::string params_json;
    std::string flags;
};

std::vector<InferenceRecord> read_inference(const std::filesystem::path& path);

}  // namespace entryfx::inference
