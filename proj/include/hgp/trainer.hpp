#pragma once

// Variational EM: CVI E-steps alternating with gradient-ascent M-steps on the kernel hyperparameters.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "hgp/cvi.hpp"
#include "hgp/datamodel.hpp"
#include "hgp/kernel.hpp"
#include "hgp/posterior.hpp"

namespace hgp {

/// Learning objective for the M-step: the ELBO ("VI") or the EP-like energy of the CVI sites ("Ours").
enum class Objective { Elbo, EpLike };

inline std::string_view to_string(Objective o) { return o == Objective::Elbo ? "elbo" : "ep_like"; }

inline Objective parse_objective(std::string_view s) {
    if (s == "elbo") return Objective::Elbo;
    if (s == "ep_like") return Objective::EpLike;
    throw InputError("unknown objective '" + std::string(s) + "' (expected elbo or ep_like)");
}

struct TrainConfig {
    Objective objective = Objective::EpLike;
    int e_iters = 20;
    int m_iters = 20;
    double e_step_size = 0.1;
    double m_learning_rate = 0.001;
    int outer_rounds = 50;
    double outer_tol = 1e-4;
    Hyperparams theta0{};
    std::uint64_t seed = 0;  // fit itself is deterministic; carried for reproducible reporting
    double relative_jitter = kDefaultRelativeJitter;
    int quadrature_order = kDefaultQuadratureOrder;
    double fd_step = 1e-4;
    int max_halvings = 10;
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.e_iters < 0 || cfg.m_iters < 0 || cfg.outer_rounds < 1) {
        throw InputError("train config: iteration counts must be non-negative and outer_rounds >= 1");
    }
    if (!(cfg.e_step_size > 0.0 && cfg.e_step_size <= 1.0)) throw InputError("train config: e_step_size must lie in (0, 1]");
    if (!(cfg.m_learning_rate > 0.0)) throw InputError("train config: m_learning_rate must be positive");
    if (!(cfg.outer_tol >= 0.0)) throw InputError("train config: outer_tol must be non-negative");
    if (!(cfg.fd_step > 0.0)) throw InputError("train config: fd_step must be positive");
    if (!(cfg.relative_jitter >= 0.0)) throw InputError("train config: jitter must be non-negative");
    if (!cfg.theta0.finite()) throw InputError("train config: theta0 must be finite");
}

struct RoundTrace {
    int round = 0;
    double objective = 0.0;
    double elbo = 0.0;
    Hyperparams theta;
};

struct TrainResult {
    Hyperparams theta;
    Sites sites;
    std::vector<double> objective_trace;
    std::vector<double> elbo_trace;
    std::vector<RoundTrace> rounds;
};

/// Objective at (sites, theta): rebuilds K at theta, then the ELBO or the EP-like energy.
inline double objective_value(const MatrixXd& X, const VectorXd& y, const Sites& sites, const Hyperparams& theta,
                              Objective objective, double relative_jitter = kDefaultRelativeJitter,
                              int quadrature_order = kDefaultQuadratureOrder) {
    const auto g = gram_relative(X, theta, relative_jitter);
    if (objective == Objective::EpLike) return ep_like_energy(g, sites);
    return elbo(g, sites, y, quadrature_order);
}

inline double objective_value(const Dataset& ds, const Sites& sites, const Hyperparams& theta, Objective objective,
                              double relative_jitter = kDefaultRelativeJitter) {
    return objective_value(ds.X, ds.y, sites, theta, objective, relative_jitter);
}

/// Central finite-difference gradient in (log lengthscale, log magnitude).
template <typename F>
std::array<double, 2> fd_gradient(const F& value, const Hyperparams& theta, double h) {
    auto shifted = [&](int axis, double delta) {
        Hyperparams t = theta;
        (axis == 0 ? t.log_lengthscale : t.log_magnitude) += delta;
        return value(t);
    };
    return {(shifted(0, h) - shifted(0, -h)) / (2.0 * h), (shifted(1, h) - shifted(1, -h)) / (2.0 * h)};
}

namespace detail {

inline void require_finite(double v, const char* what, const Hyperparams& theta, int round) {
    if (!std::isfinite(v)) {
        throw NumericError(std::string(what) + " became non-finite in round " + std::to_string(round) +
                           " at log_lengthscale=" + std::to_string(theta.log_lengthscale) +
                           ", log_magnitude=" + std::to_string(theta.log_magnitude));
    }
}

}  // namespace detail

/// Gradient ascent on theta with the sites held fixed. A step that lowers the objective is halved,
/// at most `max_halvings` times; if none helps, theta stays put for that iteration.
template <typename F>
Hyperparams m_step(const F& value, Hyperparams theta, double& current, const TrainConfig& cfg) {
    for (int it = 0; it < cfg.m_iters; ++it) {
        const auto grad = fd_gradient(value, theta, cfg.fd_step);
        double rate = cfg.m_learning_rate;
        for (int h = 0; h <= cfg.max_halvings; ++h, rate *= 0.5) {
            const Hyperparams trial{theta.log_lengthscale + rate * grad[0], theta.log_magnitude + rate * grad[1]};
            double v = -std::numeric_limits<double>::infinity();
            try {
                v = value(trial);
            } catch (const NumericError&) {
                // Treated as a decrease; the step is halved.
            }
            if (std::isfinite(v) && v >= current) {
                theta = trial;
                current = v;
                break;
            }
        }
    }
    return theta;
}

/// Alternates an E-step (warm-started CVI at the current theta) with an M-step on the configured
/// objective until `outer_rounds` rounds or a round moves theta by less than `outer_tol` in max-norm.
/// A final E-step at the returned theta makes the returned sites consistent with it.
inline TrainResult fit(const Dataset& ds, const TrainConfig& cfg) {
    validate(ds);
    validate(cfg);
    const ProbitLikelihood lik(ds.y, cfg.quadrature_order);
    TrainResult res;
    Hyperparams theta = cfg.theta0;
    Sites sites = Sites::zeros(ds.n());

    for (int round = 0; round < cfg.outer_rounds; ++round) {
        {
            const auto g = gram_relative(ds.X, theta, cfg.relative_jitter);
            sites = e_step(g, lik, std::move(sites), cfg.e_step_size, cfg.e_iters).sites;
        }
        const auto value = [&](const Hyperparams& t) {
            return objective_value(ds.X, ds.y, sites, t, cfg.objective, cfg.relative_jitter, cfg.quadrature_order);
        };
        double current = value(theta);
        detail::require_finite(current, "objective", theta, round);
        const Hyperparams before = theta;
        theta = m_step(value, theta, current, cfg);

        const double elbo_now = cfg.objective == Objective::Elbo
                                    ? current
                                    : objective_value(ds.X, ds.y, sites, theta, Objective::Elbo,
                                                      cfg.relative_jitter, cfg.quadrature_order);
        detail::require_finite(elbo_now, "ELBO", theta, round);
        res.objective_trace.push_back(current);
        res.elbo_trace.push_back(elbo_now);
        res.rounds.push_back({round, current, elbo_now, theta});

        const double moved = std::max(std::abs(theta.log_lengthscale - before.log_lengthscale),
                                      std::abs(theta.log_magnitude - before.log_magnitude));
        if (moved < cfg.outer_tol) break;
    }
    const auto g = gram_relative(ds.X, theta, cfg.relative_jitter);
    res.sites = e_step(g, lik, std::move(sites), cfg.e_step_size, cfg.e_iters).sites;
    res.theta = theta;
    return res;
}

/// Per-round trace CSV: round, objective, elbo, log_lengthscale, log_magnitude.
inline void write_trace_csv(std::ostream& os, const TrainResult& res) {
    os << "round,objective,elbo,log_lengthscale,log_magnitude\n";
    char buf[160];
    for (const auto& r : res.rounds) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.round, r.objective, r.elbo,
                      r.theta.log_lengthscale, r.theta.log_magnitude);
        os << buf;
    }
}

}  // namespace hgp
