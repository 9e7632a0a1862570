#pragma once

// Sequential expectation propagation for the probit model.

#include <algorithm>
#include <cmath>
#include <string>

#include "hgp/posterior.hpp"

namespace hgp {

/// Sites plus the per-site log normalizers of classic EP.
struct EpSites {
    Sites sites;
    VectorXd log_scale;
};

struct EpConfig {
    int max_sweeps = 100;
    double damping = 0.9;
    double tol = 1e-6;
};

struct EpResult {
    EpSites ep_sites;
    GaussianPosterior posterior;
    bool converged = false;
    int sweeps = 0;
    int skipped_updates = 0;  // negative-cavity skips over all sweeps
};

namespace detail {

/// log of the integral of N(f; mean, var) exp(nu f - tau f^2 / 2).
inline double log_gauss_site_integral(double mean, double var, double nu, double tau) {
    const double precision = 1.0 / var + tau;
    const double shift = mean / var + nu;
    return -0.5 * std::log1p(tau * var) + 0.5 * shift * shift / precision - 0.5 * mean * mean / var;
}

}  // namespace detail

/// log Z_i - log of the cavity integral of the unscaled site, for every site, at the given posterior.
/// Sites whose cavity is improper get log_scale 0.
inline VectorXd ep_log_scales(const GaussianPosterior& post, const Sites& sites, const VectorXd& y) {
    const Eigen::Index n = post.size();
    VectorXd out = VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double tau = -2.0 * sites.lambda2[i];
        const double nu = sites.lambda1[i];
        const double tau_c = 1.0 / post.var[i] - tau;
        if (!(tau_c > 0.0)) continue;
        const double nu_c = post.m[i] / post.var[i] - nu;
        const MarginalMoments cavity{nu_c / tau_c, 1.0 / tau_c};
        const auto tilted = ep_tilted_moments(y[i], cavity);
        out[i] = tilted.log_z - detail::log_gauss_site_integral(cavity.mean, cavity.var, nu, tau);
    }
    return out;
}

/// Sweeps the sites in index order. Each update removes site i from the current marginal, matches the
/// tilted moments and interpolates the new site with the old one in natural parameters
/// (new = damping * matched + (1 - damping) * old). The covariance is updated by a rank-one correction
/// after every site and recomputed from scratch at the end of each sweep.
inline EpResult ep_inference(const GramMatrix& gram, const VectorXd& y, const EpConfig& cfg = {}) {
    if (cfg.max_sweeps < 1) throw InputError("ep_inference: need at least one sweep");
    if (!(cfg.damping > 0.0 && cfg.damping <= 1.0)) throw InputError("ep_inference: damping must lie in (0, 1]");
    const Eigen::Index n = gram.size();
    if (y.size() != n) throw InputError("ep_inference: label count does not match K");

    VectorXd tau = VectorXd::Zero(n);
    VectorXd nu = VectorXd::Zero(n);
    MatrixXd Sigma = gram.K;
    VectorXd mu = VectorXd::Zero(n);

    EpResult res;
    for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double tau_c = 1.0 / Sigma(i, i) - tau[i];
            if (!(tau_c > 0.0)) {
                ++res.skipped_updates;
                continue;
            }
            const double nu_c = mu[i] / Sigma(i, i) - nu[i];
            const auto tilted = ep_tilted_moments(y[i], {nu_c / tau_c, 1.0 / tau_c});
            const double tau_match = std::max(0.0, 1.0 / tilted.var - tau_c);
            const double nu_match = tilted.mean / tilted.var - nu_c;
            const double tau_new = cfg.damping * tau_match + (1.0 - cfg.damping) * tau[i];
            const double nu_new = cfg.damping * nu_match + (1.0 - cfg.damping) * nu[i];
            const double d_tau = tau_new - tau[i];
            const double d_nu = nu_new - nu[i];
            if (!std::isfinite(d_tau) || !std::isfinite(d_nu)) {
                throw NumericError("ep_inference: non-finite site update at index " + std::to_string(i));
            }
            max_change = std::max({max_change, std::abs(d_nu), 0.5 * std::abs(d_tau)});
            tau[i] = tau_new;
            nu[i] = nu_new;
            const VectorXd s = Sigma.col(i);
            Sigma.noalias() -= (d_tau / (1.0 + d_tau * s[i])) * s * s.transpose();
            mu.noalias() = Sigma * nu;
        }
        ++res.sweeps;
        Sites current{nu, -0.5 * tau};
        res.posterior = assemble(gram, current);
        Sigma = res.posterior.S;
        mu = res.posterior.m;
        if (!mu.allFinite()) throw NumericError("ep_inference: posterior mean became non-finite");
        if (max_change < cfg.tol) {
            res.converged = true;
            break;
        }
    }
    res.ep_sites.sites = {nu, -0.5 * tau};
    res.ep_sites.log_scale = ep_log_scales(res.posterior, res.ep_sites.sites, y);
    return res;
}

/// Classic EP evidence: the EP-like energy of the sites plus their log normalizers.
inline double ep_energy(const GramMatrix& gram, const EpSites& ep) {
    if (ep.log_scale.size() != ep.sites.size()) throw InputError("ep_energy: log_scale size mismatch");
    if (!ep.log_scale.allFinite()) throw NumericError("ep_energy: non-finite site scales");
    return ep_like_energy(gram, ep.sites) + ep.log_scale.sum();
}

}  // namespace hgp
