#pragma once

// Gaussian posterior in site form: q(f) proportional to N(f; 0, K) prod_i exp(lambda1_i f_i + lambda2_i f_i^2).
//
// With B = diag(-2 lambda2) and A = I + B^{1/2} K B^{1/2} = L L^T, every quantity below is computed from
// the Cholesky factor of A, so K never has to be inverted:
//   S = (K^{-1} + B)^{-1} = K - V^T V,   V = L^{-1} B^{1/2} K
//   m = S lambda1,  K^{-1} m = lambda1 - B m
//   log|I + K B| = log|A|,  tr(K^{-1} S) = tr(A^{-1}) = n - sum_i b_i S_ii

#include <cmath>
#include <concepts>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "hgp/error.hpp"
#include "hgp/kernel.hpp"
#include "hgp/likelihood.hpp"

namespace hgp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Per-point observation model used by inference: size() points and Gaussian expectations.
template <typename L>
concept PointLikelihood = requires(const L& lik, Eigen::Index i, const MarginalMoments& mm) {
    { lik.size() } -> std::convertible_to<Eigen::Index>;
    { lik.expect(i, mm) } -> std::convertible_to<ExpectationStats>;
};

/// Natural parameters of the Gaussian sites t_i(f) = exp(lambda1_i f + lambda2_i f^2).
struct Sites {
    VectorXd lambda1;
    VectorXd lambda2;

    static Sites zeros(Eigen::Index n) { return {VectorXd::Zero(n), VectorXd::Zero(n)}; }

    [[nodiscard]] Eigen::Index size() const { return lambda1.size(); }
    [[nodiscard]] VectorXd precision() const { return -2.0 * lambda2; }
};

inline void validate(const Sites& s, Eigen::Index n) {
    if (s.lambda1.size() != n || s.lambda2.size() != n) {
        throw InputError("sites have size " + std::to_string(s.lambda1.size()) + "/" +
                         std::to_string(s.lambda2.size()) + ", expected " + std::to_string(n));
    }
    if (!s.lambda1.allFinite() || !s.lambda2.allFinite()) throw NumericError("sites contain non-finite values");
    if ((s.lambda2.array() > 0.0).any()) throw InputError("sites: lambda2 must be non-positive");
}

struct GaussianPosterior {
    VectorXd m;
    MatrixXd S;    // empty when only the marginals were assembled
    VectorXd var;  // diag(S)
    // Factorization of A = I + B^{1/2} K B^{1/2}, reused by energies and predictions.
    Eigen::LLT<MatrixXd> a_chol;
    VectorXd sqrt_b;
    VectorXd alpha;  // K^{-1} m
    double log_det_a = 0.0;

    [[nodiscard]] Eigen::Index size() const { return m.size(); }
    [[nodiscard]] bool has_covariance() const { return S.rows() == m.size(); }
    [[nodiscard]] MarginalMoments marginal(Eigen::Index i) const { return {m[i], var[i]}; }
};

namespace detail {

struct SiteFactor {
    Eigen::LLT<MatrixXd> chol;
    VectorXd sqrt_b;
    double log_det = 0.0;
};

inline SiteFactor factor_sites(const MatrixXd& K, const Sites& sites) {
    validate(sites, K.rows());
    SiteFactor f;
    f.sqrt_b = (-2.0 * sites.lambda2).cwiseSqrt();
    MatrixXd A = f.sqrt_b.asDiagonal() * K * f.sqrt_b.asDiagonal();
    A.diagonal().array() += 1.0;
    f.chol.compute(A);
    if (!cholesky_ok(f.chol)) throw NumericError("posterior: factorization of I + B^1/2 K B^1/2 failed");
    f.log_det = 2.0 * f.chol.matrixLLT().diagonal().array().log().sum();
    return f;
}

/// m = S lambda1 = K lambda1 - K B^{1/2} A^{-1} B^{1/2} K lambda1, in O(n^2) given the factor.
inline VectorXd site_mean(const MatrixXd& K, const Sites& sites, const SiteFactor& f) {
    const VectorXd k_lambda = K * sites.lambda1;
    const VectorXd inner = f.chol.solve(f.sqrt_b.cwiseProduct(k_lambda));
    return k_lambda - K * f.sqrt_b.cwiseProduct(inner);
}

inline GaussianPosterior assemble_impl(const GramMatrix& gram, const Sites& sites, bool full_covariance) {
    const MatrixXd& K = gram.K;
    auto f = detail::factor_sites(K, sites);
    GaussianPosterior post;
    MatrixXd V = f.sqrt_b.asDiagonal() * K;
    f.chol.matrixL().solveInPlace(V);
    if (full_covariance) {
        post.S = K;
        post.S.selfadjointView<Eigen::Lower>().rankUpdate(V.transpose(), -1.0);
        post.S.triangularView<Eigen::StrictlyUpper>() = post.S.transpose();
        post.var = post.S.diagonal();
        post.m = post.S * sites.lambda1;
    } else {
        post.var = K.diagonal() - V.colwise().squaredNorm().transpose();
        post.m = detail::site_mean(K, sites, f);
    }
    post.alpha = sites.lambda1 + 2.0 * sites.lambda2.cwiseProduct(post.m);
    post.a_chol = std::move(f.chol);
    post.sqrt_b = std::move(f.sqrt_b);
    post.log_det_a = f.log_det;
    return post;
}

}  // namespace detail

/// Full posterior N(m, S) from prior and sites.
inline GaussianPosterior assemble(const GramMatrix& gram, const Sites& sites) {
    return detail::assemble_impl(gram, sites, true);
}

/// Mean and marginal variances only, skipping the dense S.
inline GaussianPosterior assemble_marginals(const GramMatrix& gram, const Sites& sites) {
    return detail::assemble_impl(gram, sites, false);
}

/// log of the integral of N(f; 0, K) times the unnormalized sites:
/// -1/2 log|I + K B| + 1/2 lambda1^T (K^{-1} + B)^{-1} lambda1.
inline double ep_like_energy(const GramMatrix& gram, const Sites& sites) {
    const auto f = detail::factor_sites(gram.K, sites);
    const VectorXd m = detail::site_mean(gram.K, sites, f);
    return -0.5 * f.log_det + 0.5 * sites.lambda1.dot(m);
}

inline double ep_like_energy(const GaussianPosterior& post, const Sites& sites) {
    return -0.5 * post.log_det_a + 0.5 * sites.lambda1.dot(post.m);
}

/// KL(N(m, S) || N(0, K)) from the site factorization.
inline double kl_to_prior(const GaussianPosterior& post) {
    const auto n = static_cast<double>(post.size());
    const double trace_term = n - post.sqrt_b.cwiseAbs2().dot(post.var);
    const double quad = post.m.dot(post.alpha);
    return 0.5 * (trace_term + quad - n + post.log_det_a);
}

/// Sum of per-point expected log-likelihoods under the posterior marginals.
template <PointLikelihood Likelihood>
double expected_loglik_sum(const GaussianPosterior& post, const Likelihood& lik) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < post.size(); ++i) sum += lik.expect(i, post.marginal(i)).e;
    return sum;
}

template <PointLikelihood Likelihood>
double elbo(const GaussianPosterior& post, const Likelihood& lik) {
    return expected_loglik_sum(post, lik) - kl_to_prior(post);
}

/// -KL(q || prior) + sum_i E_q[log p(y_i | f_i)] for a generic per-point likelihood.
template <PointLikelihood Likelihood>
double elbo(const GramMatrix& gram, const Sites& sites, const Likelihood& lik) {
    if (lik.size() != gram.size()) throw InputError("elbo: likelihood size does not match K");
    const auto post = assemble_marginals(gram, sites);
    return elbo(post, lik);
}

/// Probit ELBO for labels y.
inline double elbo(const GramMatrix& gram, const Sites& sites, const VectorXd& y,
                   int quadrature_order = kDefaultQuadratureOrder) {
    return elbo(gram, sites, ProbitLikelihood(y, quadrature_order));
}

/// Latent predictive moments at m test points given K(X, X*) and diag K(X*, X*).
/// mean = k*^T K^{-1} m, var = k** - k*^T B^{1/2} A^{-1} B^{1/2} k*, clamped at zero.
inline std::vector<MarginalMoments> latent_predict(const GaussianPosterior& post, const MatrixXd& k_star,
                                                   const VectorXd& k_starstar_diag) {
    if (k_star.rows() != post.size() || k_star.cols() != k_starstar_diag.size()) {
        throw InputError("latent_predict: shape mismatch (k_star " + std::to_string(k_star.rows()) + "x" +
                         std::to_string(k_star.cols()) + ", n=" + std::to_string(post.size()) + ", m=" +
                         std::to_string(k_starstar_diag.size()) + ")");
    }
    const VectorXd mean = k_star.transpose() * post.alpha;
    MatrixXd W = post.sqrt_b.asDiagonal() * k_star;
    post.a_chol.matrixL().solveInPlace(W);
    const VectorXd reduction = W.colwise().squaredNorm().transpose();
    std::vector<MarginalMoments> out(static_cast<std::size_t>(k_star.cols()));
    for (Eigen::Index j = 0; j < k_star.cols(); ++j) {
        out[static_cast<std::size_t>(j)] = {mean[j], std::max(0.0, k_starstar_diag[j] - reduction[j])};
    }
    return out;
}

inline std::vector<MarginalMoments> latent_predict(const GramMatrix& gram, const MatrixXd& k_star,
                                                   const VectorXd& k_starstar_diag, const Sites& sites) {
    return latent_predict(assemble_marginals(gram, sites), k_star, k_starstar_diag);
}

}  // namespace hgp
