#pragma once

// Conjugate-computation VI: natural-gradient steps on the ELBO expressed through the sites.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "hgp/posterior.hpp"

namespace hgp {

struct EStepResult {
    Sites sites;
    std::vector<double> elbo_trace;  // iters + 1 values, initial state first
};

/// Runs exactly `iters` synchronous updates
///   lambda1 <- (1 - beta) lambda1 + beta (g_m - 2 g_v m),   lambda2 <- (1 - beta) lambda2 + beta g_v
/// where (g_m, g_v) are the expected log-likelihood gradients at the current marginals.
template <PointLikelihood Likelihood>
EStepResult e_step(const GramMatrix& gram, const Likelihood& lik, Sites sites, double beta, int iters) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw InputError("e_step: step size must lie in [0, 1]");
    if (iters < 0) throw InputError("e_step: negative iteration count");
    if (lik.size() != gram.size()) throw InputError("e_step: likelihood size does not match K");
    const Eigen::Index n = gram.size();

    EStepResult out;
    out.elbo_trace.reserve(static_cast<std::size_t>(iters) + 1);
    VectorXd target1(n), target2(n);
    for (int it = 0; it <= iters; ++it) {
        const auto post = assemble_marginals(gram, sites);
        double expected = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto mm = post.marginal(i);
            const auto st = lik.expect(i, mm);
            expected += st.e;
            target1[i] = st.g_m - 2.0 * st.g_v * mm.mean;
            target2[i] = st.g_v;
        }
        const double value = expected - kl_to_prior(post);
        if (!std::isfinite(value)) {
            std::ostringstream msg;
            msg << "e_step: ELBO became non-finite at iteration " << it;
            if (!out.elbo_trace.empty()) msg << " (last finite ELBO " << out.elbo_trace.back() << ")";
            throw NumericError(msg.str());
        }
        out.elbo_trace.push_back(value);
        if (it == iters) break;
        sites.lambda1 = (1.0 - beta) * sites.lambda1 + beta * target1;
        sites.lambda2 = ((1.0 - beta) * sites.lambda2 + beta * target2).cwiseMin(0.0);
    }
    out.sites = std::move(sites);
    return out;
}

inline EStepResult e_step(const GramMatrix& gram, const VectorXd& y, Sites sites, double beta, int iters,
                          int quadrature_order = kDefaultQuadratureOrder) {
    return e_step(gram, ProbitLikelihood(y, quadrature_order), std::move(sites), beta, iters);
}

}  // namespace hgp
