#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "hgp/datamodel.hpp"
#include "hgp/ep.hpp"

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using hgp::Sites;

struct Toy {
    hgp::GramMatrix gram;
    VectorXd y;
};

Toy toy(Eigen::Index n, unsigned seed, double log_magnitude = 0.5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    MatrixXd X(n, 2);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = normal(rng);
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = X(i, 1) + 0.7 * normal(rng) > 0 ? 1.0 : -1.0;
    return {hgp::gram_relative(X, {0.0, log_magnitude}), y};
}

TEST(EpInference, ScalarSingleUndampedSweep) {
    const auto g = hgp::gram_from(MatrixXd::Identity(1, 1));
    const auto r = hgp::ep_inference(g, VectorXd::Ones(1), {1, 1.0, 1e-6});
    EXPECT_EQ(r.sweeps, 1);
    EXPECT_NEAR(r.posterior.m[0], 1.0 / std::sqrt(std::numbers::pi), 1e-14);
    EXPECT_NEAR(r.posterior.S(0, 0), 1.0 - 1.0 / std::numbers::pi, 1e-14);
    EXPECT_NEAR(hgp::ep_energy(g, r.ep_sites), std::log(0.5), 1e-12);
}

TEST(EpInference, LabelFlipNegatesMean) {
    const auto t = toy(12, 1);
    const auto a = hgp::ep_inference(t.gram, t.y);
    const auto b = hgp::ep_inference(t.gram, -t.y);
    EXPECT_LE((a.posterior.m + b.posterior.m).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((a.posterior.S - b.posterior.S).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(EpInference, SonarConvergesAtInteriorGridPoint) {
    const auto ds = hgp::load_csv(std::string(HGP_DATA_DIR) + "/sonar.csv", hgp::LabelColumn::last());
    const auto split = hgp::make_folds(static_cast<std::size_t>(ds.n()), 5, 0);
    const auto train = hgp::standardize(hgp::subset(ds, split.train_rows(0)), {}).first;
    const auto g = hgp::gram_relative(train.X, {2.0, 2.0});
    const auto r = hgp::ep_inference(g, train.y, {50, 0.9, 1e-6});
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.sweeps, 50);
    EXPECT_TRUE(std::isfinite(hgp::ep_energy(g, r.ep_sites)));
}

TEST(EpInference, MomentMatchingAtConvergence) {
    const auto t = toy(20, 2);
    const auto r = hgp::ep_inference(t.gram, t.y);
    ASSERT_TRUE(r.converged);
    const auto& s = r.ep_sites.sites;
    for (Eigen::Index i = 0; i < 20; ++i) {
        const double tau = -2.0 * s.lambda2[i];
        const double v = r.posterior.var[i];
        const double tau_c = 1.0 / v - tau;
        const double nu_c = r.posterior.m[i] / v - s.lambda1[i];
        const auto tilted = hgp::ep_tilted_moments(t.y[i], {nu_c / tau_c, 1.0 / tau_c});
        EXPECT_NEAR(r.posterior.m[i], tilted.mean, 1e-5);
        EXPECT_NEAR(v, tilted.var, 1e-5);
    }
}

TEST(EpInference, DampingDoesNotChangeFixedPoint) {
    const auto t = toy(15, 3);
    const auto damped = hgp::ep_inference(t.gram, t.y, {200, 0.5, 1e-9});
    const auto plain = hgp::ep_inference(t.gram, t.y, {200, 1.0, 1e-9});
    ASSERT_TRUE(damped.converged);
    ASSERT_TRUE(plain.converged);
    EXPECT_LE((damped.ep_sites.sites.lambda1 - plain.ep_sites.sites.lambda1).cwiseAbs().maxCoeff(), 1e-4);
    EXPECT_LE((damped.ep_sites.sites.lambda2 - plain.ep_sites.sites.lambda2).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(EpInference, ScalarEvidenceIsExact) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> unif(0.05, 20.0);
    for (int trial = 0; trial < 10; ++trial) {
        const auto g = hgp::gram_from(MatrixXd::Constant(1, 1, unif(rng)));
        const double y = trial % 2 ? 1.0 : -1.0;
        const auto r = hgp::ep_inference(g, VectorXd::Constant(1, y));
        ASSERT_TRUE(r.converged);
        EXPECT_NEAR(hgp::ep_energy(g, r.ep_sites), std::log(0.5), 1e-6);
    }
}

TEST(EpInference, Errors) {
    const auto t = toy(3, 5);
    EXPECT_THROW(hgp::ep_inference(t.gram, t.y, {0, 0.9, 1e-6}), hgp::InputError);
    EXPECT_THROW(hgp::ep_inference(t.gram, t.y, {10, 0.0, 1e-6}), hgp::InputError);
    EXPECT_THROW(hgp::ep_inference(t.gram, VectorXd::Ones(4)), hgp::InputError);
}

TEST(EpEnergy, ZeroSitesAndScales) {
    const auto t = toy(4, 6);
    EXPECT_EQ(hgp::ep_energy(t.gram, {Sites::zeros(4), VectorXd::Zero(4)}), 0.0);
    EXPECT_THROW(hgp::ep_energy(t.gram, {Sites::zeros(4), VectorXd::Zero(3)}), hgp::InputError);
}

TEST(EpEnergy, ConjugateSitesGiveRegressionEvidence) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal;
    const auto t = toy(6, 7);
    VectorXd y(6);
    for (auto& v : y) v = normal(rng);
    const double s2 = 0.3;
    hgp::EpSites ep{{y / s2, VectorXd::Constant(6, -0.5 / s2)}, VectorXd(6)};
    for (int i = 0; i < 6; ++i) ep.log_scale[i] = -0.5 * y[i] * y[i] / s2 - 0.5 * std::log(2 * std::numbers::pi * s2);

    const MatrixXd C = t.gram.K + s2 * MatrixXd::Identity(6, 6);
    const double exact = -0.5 * y.dot(C.inverse() * y) - 0.5 * std::log(C.determinant()) -
                         3.0 * std::log(2 * std::numbers::pi);
    EXPECT_NEAR(hgp::ep_energy(t.gram, ep), exact, 1e-8);
}

}  // namespace
