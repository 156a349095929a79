#include "entryfx/drdid.hpp"
#include "entryfx/error.hpp"
#include "entryfx/random.hpp"

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace entryfx::drdid {

int FoldAssignment::fold_of(const std::string& geoid) const {
    const auto it = std::lower_bound(geoids.begin(), geoids.end(), geoid);
    if (it == geoids.end() || *it != geoid) {
        throw ValidationError("unknown_geoid", fmt::format("geoid {} has no fold", geoid));
    }
    return fold[static_cast<std::size_t>(it - geoids.begin())];
}

std::vector<int> FoldAssignment::sizes() const {
    std::vector<int> out(static_cast<std::size_t>(K), 0);
    for (int f : fold) ++out[static_cast<std::size_t>(f)];
    return out;
}

FoldAssignment make_folds(std::span<const std::string> geoids, int K, std::uint64_t seed) {
    FoldAssignment fa;
    fa.geoids.assign(geoids.begin(), geoids.end());
    std::sort(fa.geoids.begin(), fa.geoids.end());
    fa.geoids.erase(std::unique(fa.geoids.begin(), fa.geoids.end()), fa.geoids.end());
    const auto n = static_cast<int>(fa.geoids.size());
    if (K < 2 || K > n) {
        throw ValidationError("invalid_folds", fmt::format("K = {} must lie in [2, {}]", K, n));
    }
    fa.K = K;
    fa.seed = seed;
    std::vector<std::size_t> order(fa.geoids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "folds"));
    shuffle(order.begin(), order.end(), rng);
    fa.fold.assign(fa.geoids.size(), 0);
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        fa.fold[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(K));
    }
    return fa;
}

namespace {

struct Standardizer {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd scale;  // 0 for constant columns

    explicit Standardizer(const Eigen::MatrixXd& X) {
        const auto n = static_cast<double>(X.rows());
        mean = X.colwise().mean();
        scale.resize(X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            const double sd = std::sqrt((X.col(j).array() - mean(j)).square().sum() / n);
            scale(j) = sd > 1e-12 ? 1.0 / sd : 0.0;
        }
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
        return (X.rowwise() - mean).array().rowwise() * scale.array();
    }
};

}  // namespace

Eigen::VectorXd ridge_predict(const Eigen::MatrixXd& X_train, const Eigen::VectorXd& y_train,
                              const Eigen::MatrixXd& X_test, double lambda) {
    if (X_train.rows() == 0) throw ValidationError("empty_training_fold", "no training rows");
    if (!(lambda > 0.0)) throw ValidationError("invalid_penalty", "ridge penalty must be positive");
    const Standardizer st(X_train);
    const Eigen::MatrixXd Z = st.apply(X_train);
    const double ybar = y_train.mean();
    const auto p = Z.cols();
    Eigen::MatrixXd A = Z.transpose() * Z;
    A.diagonal().array() += lambda;
    const Eigen::VectorXd beta = A.ldlt().solve(Z.transpose() * (y_train.array() - ybar).matrix());
    Eigen::VectorXd out = Eigen::VectorXd::Constant(X_test.rows(), ybar);
    if (p > 0) out += st.apply(X_test) * beta;
    return out;
}

Eigen::VectorXd logistic_predict(const Eigen::MatrixXd& X_train, const Eigen::VectorXd& d_train,
                                 const Eigen::MatrixXd& X_test, const LearnerSpec& spec) {
    if (X_train.rows() == 0) throw ValidationError("empty_training_fold", "no training rows");
    const double lo = d_train.minCoeff();
    const double hi = d_train.maxCoeff();
    if (lo == hi) {
        throw NumericalError("propensity_separation",
                             fmt::format("treatment is constant ({}) in the training rows", lo));
    }
    const Standardizer st(X_train);
    const auto n = X_train.rows();
    const auto p = X_train.cols() + 1;
    Eigen::MatrixXd Z(n, p);
    Z.col(0).setOnes();
    Z.rightCols(p - 1) = st.apply(X_train);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    const double pbar = d_train.mean();
    beta(0) = std::log(pbar / (1.0 - pbar));
    Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, spec.logistic_lambda);
    penalty(0) = 0.0;
    int it = 0;
    double step = 0.0;
    for (; it < spec.max_iter; ++it) {
        const Eigen::VectorXd eta = Z * beta;
        const Eigen::VectorXd mu = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
        const Eigen::VectorXd w = (mu.array() * (1.0 - mu.array())).max(1e-12).matrix();
        const Eigen::VectorXd grad = Z.transpose() * (d_train - mu) - penalty.cwiseProduct(beta);
        Eigen::MatrixXd H = Z.transpose() * w.asDiagonal() * Z;
        H.diagonal() += penalty;
        const Eigen::VectorXd delta = H.ldlt().solve(grad);
        beta += delta;
        step = delta.cwiseAbs().maxCoeff();
        if (!std::isfinite(step)) break;
        if (step < spec.tol) break;
    }
    if (!(step < spec.tol)) {
        throw NumericalError("no_convergence",
                             fmt::format("logistic propensity did not converge after {} iterations "
                                         "(last step {:.3g})",
                                         it, step));
    }
    Eigen::MatrixXd Zt(X_test.rows(), p);
    Zt.col(0).setOnes();
    Zt.rightCols(p - 1) = st.apply(X_test);
    return (1.0 / (1.0 + (-(Zt * beta).array()).exp())).matrix();
}

Eigen::VectorXd crossfit_residualize(const Eigen::VectorXd& values, const Eigen::MatrixXd& features,
                                     Learner learner, std::span<const int> row_fold, int K,
                                     const LearnerSpec& spec) {
    const auto n = values.size();
    if (features.rows() != n || static_cast<Eigen::Index>(row_fold.size()) != n) {
        throw ValidationError("size_mismatch", "values, features and folds differ in length");
    }
    if (!features.allFinite()) throw ValidationError("nonfinite_features", "features must be finite");
    Eigen::VectorXd resid(n);
    for (int k = 0; k < K; ++k) {
        std::vector<Eigen::Index> train;
        std::vector<Eigen::Index> test;
        for (Eigen::Index i = 0; i < n; ++i) (row_fold[static_cast<std::size_t>(i)] == k ? test : train).push_back(i);
        if (test.empty()) continue;
        if (train.empty()) {
            throw ValidationError("empty_training_fold", fmt::format("fold {} has no training rows", k));
        }
        const Eigen::MatrixXd Xtr = features(train, Eigen::all);
        const Eigen::VectorXd ytr = values(train);
        const Eigen::MatrixXd Xte = features(test, Eigen::all);
        const Eigen::VectorXd pred = learner == Learner::ridge
                                         ? ridge_predict(Xtr, ytr, Xte, spec.ridge_lambda)
                                         : logistic_predict(Xtr, ytr, Xte, spec);
        for (std::size_t j = 0; j < test.size(); ++j) resid(test[j]) = values(test[j]) - pred(static_cast<Eigen::Index>(j));
    }
    return resid;
}

namespace {

std::vector<int> compact_ids(std::span<const int> ids, int& n) {
    std::unordered_map<int, int> map;
    std::vector<int> out(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) out[i] = map.emplace(ids[i], static_cast<int>(map.size())).first->second;
    n = static_cast<int>(map.size());
    return out;
}

double subtract_means(Eigen::VectorXd& v, const std::vector<int>& g, int n_groups,
                      const std::vector<double>& counts) {
    std::vector<double> sum(static_cast<std::size_t>(n_groups), 0.0);
    for (Eigen::Index i = 0; i < v.size(); ++i) sum[static_cast<std::size_t>(g[static_cast<std::size_t>(i)])] += v(i);
    double worst = 0.0;
    for (int k = 0; k < n_groups; ++k) {
        sum[static_cast<std::size_t>(k)] /= counts[static_cast<std::size_t>(k)];
        worst = std::max(worst, std::abs(sum[static_cast<std::size_t>(k)]));
    }
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) -= sum[static_cast<std::size_t>(g[static_cast<std::size_t>(i)])];
    return worst;
}

std::vector<double> group_counts(const std::vector<int>& g, int n) {
    std::vector<double> c(static_cast<std::size_t>(n), 0.0);
    for (int k : g) c[static_cast<std::size_t>(k)] += 1.0;
    return c;
}

}  // namespace

Eigen::VectorXd two_way_demean(const Eigen::VectorXd& values, std::span<const int> unit,
                               std::span<const int> time, double tol, int max_iter) {
    if (static_cast<Eigen::Index>(unit.size()) != values.size() ||
        static_cast<Eigen::Index>(time.size()) != values.size()) {
        throw ValidationError("size_mismatch", "values, unit and time ids differ in length");
    }
    int nu = 0;
    int nt = 0;
    const auto u = compact_ids(unit, nu);
    const auto t = compact_ids(time, nt);
    const auto cu = group_counts(u, nu);
    const auto ct = group_counts(t, nt);
    Eigen::VectorXd v = values;
    double worst = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        const double du = subtract_means(v, u, nu, cu);
        subtract_means(v, t, nt, ct);
        // Time means are exactly zero after the time sweep; the unit means
        // it leaves behind measure convergence.
        if (it > 0 && du < tol) return v;
        worst = du;
    }
    throw NumericalError("demeaning_not_converged",
                         fmt::format("two-way demeaning stopped after {} iterations with residual group "
                                     "mean {:.3g} (residual norm {:.3g})",
                                     max_iter, worst, v.norm()));
}

}  // namespace entryfx::drdid
