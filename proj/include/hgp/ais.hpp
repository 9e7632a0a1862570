#pragma once

// Annealed importance sampling of log p(y) with elliptical slice sampling bridges.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hgp/kernel.hpp"
#include "hgp/likelihood.hpp"

namespace hgp {

struct AisConfig {
    int T = 8000;
    int repeats = 3;
    std::uint64_t seed = 0;
    double schedule_exponent = 4.0;
};

struct AisEstimate {
    double log_ml = 0.0;              // mean of per_repeat
    std::vector<double> per_repeat;

    [[nodiscard]] double standard_error() const {
        const auto k = static_cast<double>(per_repeat.size());
        if (k < 2) return std::numeric_limits<double>::quiet_NaN();
        double ss = 0.0;
        for (double v : per_repeat) ss += (v - log_ml) * (v - log_ml);
        return std::sqrt(ss / (k - 1.0) / k);
    }
};

/// tau(t) = (t / T)^exponent.
inline double temperature(int t, const AisConfig& cfg) {
    if (cfg.T < 1) throw InputError("AIS needs T >= 1");
    if (t < 0 || t > cfg.T) {
        throw InputError("temperature: step " + std::to_string(t) + " outside [0, " + std::to_string(cfg.T) + "]");
    }
    return std::pow(static_cast<double>(t) / cfg.T, cfg.schedule_exponent);
}

namespace detail {

inline VectorXd draw_prior(const Eigen::LLT<MatrixXd>& prior_chol, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    VectorXd z(prior_chol.matrixLLT().rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    return prior_chol.matrixL() * z;
}

/// One elliptical slice transition for the target exp(power * base(f)) N(f; 0, K). `base_current`
/// is base(f); the returned pair holds the new state and its base value.
template <typename BaseLogLik>
std::pair<VectorXd, double> ess_tempered(const VectorXd& f, double base_current, const BaseLogLik& base,
                                         double power, const Eigen::LLT<MatrixXd>& prior_chol,
                                         std::mt19937_64& rng) {
    const VectorXd nu = draw_prior(prior_chol, rng);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double two_pi = 2.0 * std::numbers::pi;

    double angle = unif(rng) * two_pi;
    if (power == 0.0) {
        // Flat likelihood: the first proposal is always accepted.
        VectorXd prop = f * std::cos(angle) + nu * std::sin(angle);
        const double b = base(prop);
        return {std::move(prop), b};
    }
    const double threshold = power * base_current + std::log(unif(rng));
    double lo = angle - two_pi;
    double hi = angle;
    while (true) {
        VectorXd prop = f * std::cos(angle) + nu * std::sin(angle);
        double b = base(prop);
        if (!std::isfinite(b)) b = -std::numeric_limits<double>::infinity();
        if (power * b > threshold) return {std::move(prop), b};
        if (angle < 0.0) {
            lo = angle;
        } else {
            hi = angle;
        }
        if (hi - lo < 1e-12) return {f, base_current};
        angle = lo + unif(rng) * (hi - lo);
    }
}

}  // namespace detail

/// Elliptical slice step leaving exp(loglik(f)) N(f; 0, K) invariant, K = L L^T from `prior_chol`.
template <typename LogLik>
VectorXd ess_step(const VectorXd& f, const LogLik& loglik, const Eigen::LLT<MatrixXd>& prior_chol,
                  std::mt19937_64& rng) {
    double current = loglik(f);
    if (!std::isfinite(current)) current = -std::numeric_limits<double>::infinity();
    return detail::ess_tempered(f, current, loglik, 1.0, prior_chol, rng).first;
}

inline double probit_loglik_sum(const VectorXd& y, const VectorXd& f) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) s += log_norm_cdf(y[i] * f[i]);
    return s;
}

/// Single-sample AIS: log p(y) ~ sum_t (tau(t) - tau(t-1)) log p(y | f_t), f_t drawn by one ESS
/// transition targeting p(y|f)^tau(t-1) p(f). Repeat r uses its own generator seeded with seed + r;
/// the estimates are combined by their mean (geometric mean of the evidences).
inline AisEstimate ais_lml(const GramMatrix& gram, const VectorXd& y, const AisConfig& cfg = {}) {
    if (cfg.T < 1 || cfg.repeats < 1) throw InputError("ais_lml: T and repeats must be positive");
    if (y.size() != gram.size()) throw InputError("ais_lml: label count does not match K");
    for (Eigen::Index i = 0; i < y.size(); ++i) detail::check_label(y[i]);
    const auto base = [&y](const VectorXd& f) { return probit_loglik_sum(y, f); };

    std::vector<double> tau(static_cast<std::size_t>(cfg.T) + 1);
    for (int t = 0; t <= cfg.T; ++t) tau[static_cast<std::size_t>(t)] = temperature(t, cfg);

    AisEstimate est;
    for (int r = 0; r < cfg.repeats; ++r) {
        std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(r));
        VectorXd f = detail::draw_prior(gram.chol, rng);
        double b = base(f);
        double log_w = 0.0;
        for (int t = 1; t <= cfg.T; ++t) {
            const auto ts = static_cast<std::size_t>(t);
            auto [next, nb] = detail::ess_tempered(f, b, base, tau[ts - 1], gram.chol, rng);
            f = std::move(next);
            b = nb;
            log_w += (tau[ts] - tau[ts - 1]) * b;
        }
        if (!std::isfinite(log_w)) throw NumericError("ais_lml: non-finite importance weight");
        est.per_repeat.push_back(log_w);
    }
    est.log_ml = std::accumulate(est.per_repeat.begin(), est.per_repeat.end(), 0.0) /
                 static_cast<double>(est.per_repeat.size());
    return est;
}

}  // namespace hgp
