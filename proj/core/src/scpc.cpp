#include "entryfx/error.hpp"
#include "entryfx/inference.hpp"
#include "entryfx/stats.hpp"

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include <cmath>

namespace entryfx::inference {

namespace {

double mean_off_diagonal(const Eigen::MatrixXd& d, double c) {
    const auto n = d.rows();
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j) s += std::exp(-c * d(i, j));
        }
    }
    return s / static_cast<double>(n * (n - 1));
}

double expected_length(int q) {
    const double t = stats::student_t_quantile(0.975, q);
    return t * std::sqrt(2.0 / q) * std::exp(std::lgamma((q + 1) / 2.0) - std::lgamma(q / 2.0));
}

}  // namespace

double calibrate_decay(const Eigen::MatrixXd& dist_km, double rho_bar) {
    if (dist_km.rows() != dist_km.cols() || dist_km.rows() < 2) {
        throw ValidationError("invalid_distances", "distance matrix must be square with n >= 2");
    }
    if (!(rho_bar > 0.0 && rho_bar < 1.0)) {
        throw ValidationError("invalid_rho", "average correlation must lie in (0, 1)");
    }
    // Mean off-diagonal correlation falls monotonically in c.
    double lo = std::log(1e-12);
    double hi = std::log(1e6);
    if (mean_off_diagonal(dist_km, std::exp(lo)) < rho_bar || mean_off_diagonal(dist_km, std::exp(hi)) > rho_bar) {
        throw NumericalError("decay_not_bracketed",
                             fmt::format("no decay rate reaches average correlation {}", rho_bar));
    }
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mean_off_diagonal(dist_km, std::exp(mid)) > rho_bar) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return std::exp(0.5 * (lo + hi));
}

int automatic_q(int max_q) {
    if (max_q < 4) throw ValidationError("too_few_units", "SCPC needs at least 5 municipalities");
    for (int q = 4; q < max_q; ++q) {
        const double a = expected_length(q);
        const double b = expected_length(q + 1);
        if ((a - b) / a < 0.01) return q;
    }
    return max_q;
}

ScpcBasis scpc_basis(const Eigen::MatrixXd& dist_km, double rho_bar, std::optional<int> q) {
    const auto n = dist_km.rows();
    ScpcBasis basis;
    basis.c = calibrate_decay(dist_km, rho_bar);
    basis.q = q ? *q : automatic_q(static_cast<int>(n) - 1);
    if (basis.q < 1 || basis.q >= n) {
        throw ValidationError("invalid_q", fmt::format("q = {} must lie in [1, {}]", basis.q, n - 1));
    }
    const Eigen::MatrixXd sigma = (-basis.c * dist_km.array()).exp().matrix();
    const Eigen::MatrixXd M =
        Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M * sigma * M);
    if (es.info() != Eigen::Success) throw NumericalError("eigen_failed", "SCPC eigendecomposition failed");
    // Eigenvalues are ascending; take the last q columns, largest first.
    basis.r.resize(n, basis.q);
    for (int l = 0; l < basis.q; ++l) {
        Eigen::VectorXd v = es.eigenvectors().col(n - 1 - l);
        basis.r.col(l) = v.normalized() * std::sqrt(static_cast<double>(n));
    }
    basis.munis.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) basis.munis[static_cast<std::size_t>(i)] = static_cast<int>(i);
    return basis;
}

VarianceEstimate scpc_from_influence(const Eigen::MatrixXd& psi, const Eigen::MatrixXd& dist_km,
                                     double rho_bar, std::optional<int> q) {
    if (psi.rows() != dist_km.rows()) {
        throw ValidationError("size_mismatch", "influence rows must follow the distance matrix");
    }
    const auto basis = scpc_basis(dist_km, rho_bar, q);
    const Eigen::MatrixXd Z = basis.r.transpose() * psi;  // q x k
    VarianceEstimate v;
    v.method = Method::scpc;
    v.vcov = Z.transpose() * Z / static_cast<double>(basis.q);
    v.se = v.vcov.diagonal().array().max(0.0).sqrt();
    v.df = basis.q;
    v.df_note = fmt::format("Student-t with {} degrees of freedom", basis.q);
    v.params = {{"rho_bar", rho_bar}, {"q", basis.q}, {"c", basis.c}};
    if (!q) v.flags.push_back("q_automatic");
    return v;
}

VarianceEstimate scpc_se(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                         std::span<const int> muni, const Eigen::MatrixXd& dist_km, double rho_bar,
                         std::optional<int> q) {
    if (X.rows() != u.size() || static_cast<std::size_t>(X.rows()) != muni.size()) {
        throw ValidationError("size_mismatch", "design, residual and id lengths differ");
    }
    const auto B = bread(X);
    Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(dist_km.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const int m = muni[static_cast<std::size_t>(i)];
        if (m < 0 || m >= dist_km.rows()) {
            throw ValidationError("missing_coordinates", "observation without municipality coordinates");
        }
        psi.row(m) += u(i) * X.row(i);
    }
    psi = psi * B;  // B is symmetric
    return scpc_from_influence(psi, dist_km, rho_bar, q);
}

}  // namespace entryfx::inference
