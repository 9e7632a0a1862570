#pragma once

// Probit Bernoulli likelihood p(y | f) = Phi(y f).

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "hgp/error.hpp"

namespace hgp {

using Eigen::VectorXd;

struct MarginalMoments {
    double mean = 0.0;
    double var = 0.0;
};

/// Expected log-likelihood under N(mean, var) and its derivatives with respect to mean and var.
struct ExpectationStats {
    double e = 0.0;
    double g_m = 0.0;
    double g_v = 0.0;
};

struct TiltedMoments {
    double log_z = 0.0;
    double mean = 0.0;
    double var = 0.0;
};

inline constexpr int kDefaultQuadratureOrder = 50;

namespace detail {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2 pi))

struct LogCdf {
    double log_cdf;     // log Phi(z)
    double pdf_over_cdf;  // phi(z) / Phi(z)
};

/// log Phi(z) together with the inverse Mills ratio. Below z = -20 the Mills ratio
/// Phi(z)/phi(z) comes from its continued fraction, which keeps both finite far into the tail.
inline LogCdf log_cdf_and_ratio(double z) {
    if (z < -20.0) {
        const double t = -z;
        double frac = t;
        for (int k = 64; k >= 1; --k) frac = t + k / frac;
        const double mills = 1.0 / frac;  // Phi(z) / phi(z)
        const double log_pdf = -0.5 * z * z - kLogSqrt2Pi;
        return {log_pdf + std::log(mills), 1.0 / mills};
    }
    const double pdf = std::exp(-0.5 * z * z - kLogSqrt2Pi);
    if (z > 0.0) {
        const double upper = 0.5 * std::erfc(z / std::numbers::sqrt2);
        return {std::log1p(-upper), pdf / (1.0 - upper)};
    }
    const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    return {std::log(cdf), pdf / cdf};
}

inline void check_label(double y) {
    if (y != 1.0 && y != -1.0) throw InputError("label must be -1 or +1, got " + std::to_string(y));
}

}  // namespace detail

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double log_norm_cdf(double z) { return detail::log_cdf_and_ratio(z).log_cdf; }

inline double log_lik(double y, double f) {
    detail::check_label(y);
    return log_norm_cdf(y * f);
}

/// First and second derivative of log Phi(y f) in f.
struct LogLikDerivs {
    double value;
    double d1;
    double d2;
};

inline LogLikDerivs log_lik_derivs(double y, double f) {
    const double z = y * f;
    const auto [lc, r] = detail::log_cdf_and_ratio(z);
    return {lc, y * r, -r * (z + r)};
}

/// Gauss-Hermite rule for expectations under N(0, 1): E[g(x)] ~= sum_k w_k g(x_k).
struct GaussHermiteRule {
    VectorXd nodes;
    VectorXd weights;
};

/// Nodes from the Golub-Welsch eigenproblem, polished by Newton steps on the orthonormal
/// Hermite recurrence; weights are the Christoffel numbers 1 / sum_k p_k(x)^2.
inline GaussHermiteRule make_gauss_hermite(int order) {
    if (order < 3) throw InputError("quadrature order must be at least 3, got " + std::to_string(order));
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
    for (int k = 1; k < order; ++k) {
        J(k, k - 1) = std::sqrt(static_cast<double>(k));
        J(k - 1, k) = J(k, k - 1);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J, Eigen::EigenvaluesOnly);
    GaussHermiteRule rule;
    rule.nodes = eig.eigenvalues();
    rule.weights.resize(order);

    auto recurrence = [order](double x, double& p_n, double& p_nm1, double& sum_sq) {
        double p_prev = 0.0;
        double p = 1.0;
        sum_sq = 1.0;
        for (int k = 0; k < order; ++k) {
            const double next = (x * p - std::sqrt(static_cast<double>(k)) * p_prev) / std::sqrt(k + 1.0);
            p_prev = p;
            p = next;
            if (k + 1 < order) sum_sq += p * p;
        }
        p_n = p;
        p_nm1 = p_prev;
    };
    for (int i = 0; i < order; ++i) {
        double x = rule.nodes[i];
        double p_n = 0.0, p_nm1 = 0.0, sum_sq = 0.0;
        for (int it = 0; it < 3; ++it) {
            recurrence(x, p_n, p_nm1, sum_sq);
            x -= p_n / (std::sqrt(static_cast<double>(order)) * p_nm1);
        }
        recurrence(x, p_n, p_nm1, sum_sq);
        rule.nodes[i] = x;
        rule.weights[i] = 1.0 / sum_sq;
    }
    return rule;
}

/// Cached rule; references stay valid for the lifetime of the program.
inline const GaussHermiteRule& gauss_hermite(int order) {
    static std::mutex mu;
    static std::map<int, GaussHermiteRule> cache;
    std::lock_guard lock(mu);
    auto it = cache.find(order);
    if (it == cache.end()) it = cache.emplace(order, make_gauss_hermite(order)).first;
    return it->second;
}

namespace detail {

// Above this standard deviation the probit transition (width ~1 in f) is too narrow for a global
// Gauss-Hermite rule; a 50-point rule is exact to rounding below it.
inline constexpr double kHermiteMaxSd = 1.0;

inline constexpr double kLegendreNodes[5] = {0.14887433898163121, 0.43339539412924719, 0.67940956829902441,
                                             0.86506336668898451, 0.97390652851717172};
inline constexpr double kLegendreWeights[5] = {0.29552422471475287, 0.26926671930999636, 0.21908636251598204,
                                               0.14945134915058059, 0.066671344308688138};

/// Calls visit(f, w) with nodes and weights of a composite 10-point Gauss-Legendre rule for
/// expectations under N(mean, sd^2), on x = (f - mean) / sd in [-10, 10]. Panels are at most one
/// unit of x wide and are refined around z = y f = 0, where they grow geometrically away from the
/// transition region [-8, 4].
template <typename Visit>
void composite_gaussian_rule(double y, double mean, double sd, Visit&& visit) {
    constexpr double half_width = 10.0;
    std::vector<double> breaks;
    breaks.reserve(64);
    for (int k = -10; k <= 10; ++k) breaks.push_back(k);
    auto add_z = [&](double z) {
        const double x = (y * z - mean) / sd;
        if (x > -half_width && x < half_width) breaks.push_back(x);
    };
    for (int z = -8; z <= 4; ++z) add_z(z);
    for (double step = 1.0; step < 2.0 * half_width * sd + std::abs(mean); step *= 1.5) {
        add_z(-8.0 - step);
        add_z(4.0 + step);
    }
    std::sort(breaks.begin(), breaks.end());
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
        const double a = breaks[p], b = breaks[p + 1];
        if (!(b > a)) continue;
        const double c = 0.5 * (a + b), h = 0.5 * (b - a);
        for (int k = 0; k < 5; ++k) {
            for (double sign : {-1.0, 1.0}) {
                const double x = c + sign * h * kLegendreNodes[k];
                visit(mean + sd * x, h * kLegendreWeights[k] * inv_sqrt_2pi * std::exp(-0.5 * x * x));
            }
        }
    }
}

}  // namespace detail

/// E[log Phi(y f)] for f ~ N(mm.mean, mm.var), with g_m = E[d/df log p] and
/// g_v = 0.5 E[d^2/df^2 log p]. A zero variance gives the point-mass values exactly. Narrow
/// marginals use a Gauss-Hermite rule of the given order; wider ones a composite rule.
inline ExpectationStats expected_loglik(double y, const MarginalMoments& mm,
                                        int order = kDefaultQuadratureOrder) {
    detail::check_label(y);
    if (!(mm.var >= 0.0)) throw InputError("expected_loglik: negative variance " + std::to_string(mm.var));
    if (order < 3) throw InputError("quadrature order must be at least 3, got " + std::to_string(order));
    if (mm.var == 0.0) {
        const auto d = log_lik_derivs(y, mm.mean);
        return {d.value, d.d1, 0.5 * d.d2};
    }
    const double sd = std::sqrt(mm.var);
    ExpectationStats s;
    double d2 = 0.0;
    auto accumulate = [&](double f, double w) {
        const auto d = log_lik_derivs(y, f);
        s.e += w * d.value;
        s.g_m += w * d.d1;
        d2 += w * d.d2;
    };
    if (sd <= detail::kHermiteMaxSd) {
        const auto& rule = gauss_hermite(order);
        for (Eigen::Index k = 0; k < rule.nodes.size(); ++k) accumulate(mm.mean + sd * rule.nodes[k], rule.weights[k]);
    } else {
        detail::composite_gaussian_rule(y, mm.mean, sd, accumulate);
    }
    s.g_v = 0.5 * d2;
    return s;
}

/// Normalizer and moments of Phi(y f) N(f; cavity.mean, cavity.var) / Z.
inline TiltedMoments ep_tilted_moments(double y, const MarginalMoments& cavity) {
    detail::check_label(y);
    if (!(cavity.var > 0.0)) {
        throw InputError("ep_tilted_moments: cavity variance must be positive, got " + std::to_string(cavity.var));
    }
    const double s = std::sqrt(1.0 + cavity.var);
    const double z = y * cavity.mean / s;
    const auto [log_z, r] = detail::log_cdf_and_ratio(z);
    TiltedMoments t;
    t.log_z = log_z;
    t.mean = cavity.mean + y * cavity.var * r / s;
    t.var = cavity.var - cavity.var * cavity.var * r * (z + r) / (1.0 + cavity.var);
    return t;
}

/// p(y* | x*) = Phi(y m / sqrt(1 + v)).
inline double predictive_prob(double y, const MarginalMoments& star) {
    detail::check_label(y);
    if (!(star.var >= 0.0)) throw InputError("predictive_prob: negative variance " + std::to_string(star.var));
    return norm_cdf(y * star.mean / std::sqrt(1.0 + star.var));
}

inline double log_predictive_prob(double y, const MarginalMoments& star) {
    detail::check_label(y);
    if (!(star.var >= 0.0)) throw InputError("log_predictive_prob: negative variance " + std::to_string(star.var));
    return log_norm_cdf(y * star.mean / std::sqrt(1.0 + star.var));
}

/// Per-datapoint probit expectations, the likelihood plugged into inference by default.
struct ProbitLikelihood {
    VectorXd y;
    int order = kDefaultQuadratureOrder;

    explicit ProbitLikelihood(VectorXd labels, int quadrature_order = kDefaultQuadratureOrder)
        : y(std::move(labels)), order(quadrature_order) {}

    [[nodiscard]] Eigen::Index size() const { return y.size(); }
    [[nodiscard]] ExpectationStats expect(Eigen::Index i, const MarginalMoments& mm) const {
        return expected_loglik(y[i], mm, order);
    }
};

/// Gaussian observation model N(y_i; f_i, noise_var). Its expectations are exact, which makes it
/// the conjugate reference case for site-based inference.
struct GaussianLikelihood {
    VectorXd y;
    double noise_var = 1.0;

    [[nodiscard]] Eigen::Index size() const { return y.size(); }
    [[nodiscard]] ExpectationStats expect(Eigen::Index i, const MarginalMoments& mm) const {
        const double r = y[i] - mm.mean;
        return {-0.5 * std::log(2.0 * std::numbers::pi * noise_var) - 0.5 * (r * r + mm.var) / noise_var,
                r / noise_var, -0.5 / noise_var};
    }
};

}  // namespace hgp
