#pragma once

// Isotropic Matern-5/2 covariance and Gram matrices with a jitter escalation policy.

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "hgp/error.hpp"

namespace hgp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Kernel hyperparameters, stored in log space.
struct Hyperparams {
    double log_lengthscale = 0.0;
    double log_magnitude = 0.0;

    [[nodiscard]] double lengthscale() const { return std::exp(log_lengthscale); }
    [[nodiscard]] double magnitude() const { return std::exp(log_magnitude); }
    [[nodiscard]] double variance() const { return std::exp(2.0 * log_magnitude); }
    [[nodiscard]] bool finite() const { return std::isfinite(log_lengthscale) && std::isfinite(log_magnitude); }

    friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

inline constexpr double kDefaultRelativeJitter = 1e-6;
inline constexpr double kMaxRelativeJitter = 1e-2;

/// Matern-5/2 as a function of the distance r.
inline double matern52_radial(double r, const Hyperparams& theta) {
    const double s = std::sqrt(5.0) * r / theta.lengthscale();
    return theta.variance() * (1.0 + s + s * s / 3.0) * std::exp(-s);
}

template <typename A, typename B>
double matern52(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& x2, const Hyperparams& theta) {
    if (x.size() != x2.size()) {
        throw InputError("matern52: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                         std::to_string(x2.size()) + ")");
    }
    return matern52_radial((x.derived() - x2.derived()).norm(), theta);
}

/// Kernel matrix between the rows of X1 and X2, no jitter.
inline MatrixXd cross_gram(const MatrixXd& X1, const MatrixXd& X2, const Hyperparams& theta) {
    if (X1.cols() != X2.cols()) {
        throw InputError("cross_gram: dimension mismatch (" + std::to_string(X1.cols()) + " vs " +
                         std::to_string(X2.cols()) + ")");
    }
    const MatrixXd A = X1.transpose();
    const MatrixXd B = X2.transpose();
    MatrixXd K(X1.rows(), X2.rows());
    for (Eigen::Index j = 0; j < B.cols(); ++j) {
        for (Eigen::Index i = 0; i < A.cols(); ++i) {
            K(i, j) = matern52_radial((A.col(i) - B.col(j)).norm(), theta);
        }
    }
    return K;
}

/// Symmetric kernel matrix of X plus `jitter` on the diagonal. No factorization is attempted.
inline MatrixXd kernel_matrix(const MatrixXd& X, const Hyperparams& theta, double jitter) {
    const Eigen::Index n = X.rows();
    const MatrixXd Xt = X.transpose();  // columns are contiguous
    MatrixXd K(n, n);
    const double diag = theta.variance() + jitter;
    for (Eigen::Index j = 0; j < n; ++j) {
        K(j, j) = diag;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const double v = matern52_radial((Xt.col(i) - Xt.col(j)).norm(), theta);
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    return K;
}

/// A jittered, Cholesky-factorizable kernel matrix. `K` already includes the jitter.
struct GramMatrix {
    MatrixXd K;
    double jitter = 0.0;
    Eigen::LLT<MatrixXd> chol;

    [[nodiscard]] Eigen::Index size() const { return K.rows(); }
};

inline bool cholesky_ok(const Eigen::LLT<MatrixXd>& llt) {
    if (llt.info() != Eigen::Success) return false;
    const auto diag = llt.matrixLLT().diagonal();
    return diag.allFinite() && (diag.array() > 0.0).all();
}

/// Wraps an explicit SPD matrix (used by tests and by callers that build K themselves).
inline GramMatrix gram_from(MatrixXd K) {
    GramMatrix g;
    g.chol.compute(K);
    if (!cholesky_ok(g.chol)) throw NumericError("gram_from: matrix is not positive definite");
    g.K = std::move(K);
    return g;
}

/// Builds K + jitter*I. When the factorization fails the jitter is raised tenfold (starting at
/// 1e-6 sigma^2 if it was zero) until it would exceed 1e-2 sigma^2, after which NumericError is thrown.
inline GramMatrix gram(const MatrixXd& X, const Hyperparams& theta, double jitter) {
    if (!(jitter >= 0.0)) throw InputError("gram: jitter must be non-negative");
    if (!theta.finite()) throw InputError("gram: non-finite hyperparameters");
    const double var = theta.variance();
    if (!(std::isfinite(var) && var > 0.0)) {
        // Jitter escalation is relative to var and could never terminate.
        throw NumericError("gram: kernel variance overflows or underflows at log_magnitude=" +
                           std::to_string(theta.log_magnitude));
    }
    MatrixXd K = kernel_matrix(X, theta, 0.0);
    double j = jitter;
    while (true) {
        GramMatrix g;
        g.K = K;
        g.K.diagonal().array() += j;
        g.chol.compute(g.K);
        if (cholesky_ok(g.chol)) {
            g.jitter = j;
            return g;
        }
        j = j == 0.0 ? kDefaultRelativeJitter * var : 10.0 * j;
        if (j > kMaxRelativeJitter * var * (1.0 + 1e-12)) {
            throw NumericError("gram: Cholesky failed even with jitter " + std::to_string(j / 10.0) +
                               " (log_lengthscale=" + std::to_string(theta.log_lengthscale) +
                               ", log_magnitude=" + std::to_string(theta.log_magnitude) + ")");
        }
    }
}

/// Default policy: relative jitter scaled by the kernel variance.
inline GramMatrix gram_relative(const MatrixXd& X, const Hyperparams& theta,
                                double relative_jitter = kDefaultRelativeJitter) {
    return gram(X, theta, relative_jitter * theta.variance());
}

}  // namespace hgp
