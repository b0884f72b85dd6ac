#include "stepnav/difp.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace stepnav;

namespace {

Eigen::MatrixXd random_features(std::mt19937_64& rng, int T, int D) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd Z(T, D);
    for (int t = 0; t < T; ++t)
        for (int d = 0; d < D; ++d) Z(t, d) = n(rng);
    return Z;
}

}  // namespace

TEST(Difp, SolvesStationaritySystem) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const int T = 1 + trial % 8, D = 1 + trial % 4;
        const auto Z = random_features(rng, T, D);
        const auto r = difp::refine(difp::FeatureSequence(Z));
        const auto L = difp::temporal_laplacian(T);
        const Eigen::MatrixXd lhs = (2.0 * Eigen::MatrixXd::Identity(T, T) + L.transpose() * L) * r.refined;
        const Eigen::MatrixXd rhs = Z + Eigen::VectorXd::Ones(T) * r.zc.transpose();
        EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Difp, MatchesGradientDescent) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const int T = 1 + trial % 8, D = 1 + (trial * 3) % 4;
        const auto Z = random_features(rng, T, D);
        const auto r = difp::refine(difp::FeatureSequence(Z));
        const auto ref = oracle::difp_descent(Z, r.zc);
        EXPECT_LE((r.refined - ref).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Difp, ContextIsSoftmaxOfFeatureVelocity) {
    Eigen::MatrixXd Z(3, 1);
    Z << 0.0, 1.0, 3.0;
    const auto c = difp::context_vector(Z);
    const double e0 = std::exp(0.0), e1 = std::exp(1.0), e2 = std::exp(2.0);
    const double s = e0 + e1 + e2;
    EXPECT_NEAR(c.weights(0), e0 / s, 1e-15);
    EXPECT_NEAR(c.weights(2), e2 / s, 1e-15);
    EXPECT_NEAR(c.zc(0), (1.0 * e1 + 3.0 * e2) / s, 1e-14);
}

TEST(Difp, ConstantSequenceIsFixedPoint) {
    Eigen::MatrixXd Z(6, 3);
    Z.rowwise() = Eigen::RowVector3d(0.3, -1.2, 4.0);
    const auto r = difp::refine(difp::FeatureSequence(Z));
    EXPECT_EQ((r.refined - Z).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Difp, SingleFrameIsFixedPoint) {
    Eigen::MatrixXd Z(1, 4);
    Z << 1.5, -2.0, 0.25, 7.0;
    const auto r = difp::refine(difp::FeatureSequence(Z));
    EXPECT_EQ((r.refined - Z).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_DOUBLE_EQ(r.weights(0), 1.0);
}

TEST(Difp, RefinementDoesNotIncreaseObjective) {
    std::mt19937_64 rng(7);
    const auto Z = random_features(rng, 8, 4);
    const auto r = difp::refine(difp::FeatureSequence(Z));
    const double best = difp::projection_objective(r.refined, Z, r.zc);
    std::normal_distribution<double> n(0.0, 1e-3);
    for (int k = 0; k < 50; ++k) {
        Eigen::MatrixXd p = r.refined;
        for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] += n(rng);
        EXPECT_GT(difp::projection_objective(p, Z, r.zc), best);
    }
}

TEST(Difp, GoalFrameExtendsWeights) {
    std::mt19937_64 rng(9);
    const auto Z = random_features(rng, 5, 2);
    difp::RefineOptions opt;
    opt.goal_feature = Eigen::Vector2d(10.0, -10.0);
    const auto r = difp::refine(difp::FeatureSequence(Z), opt);
    EXPECT_EQ(r.weights.size(), 6);
    EXPECT_NEAR(r.weights.sum(), 1.0, 1e-12);
    EXPECT_EQ(r.refined.rows(), 5);
    opt.goal_feature = Eigen::Vector3d(1, 2, 3);
    EXPECT_THROW(difp::refine(difp::FeatureSequence(Z), opt), Error);
}

TEST(Difp, RejectsEmptyOrNonFinite) {
    EXPECT_THROW(difp::FeatureSequence(Eigen::MatrixXd(0, 3)), Error);
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(2, 2);
    Z(1, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(difp::FeatureSequence{Z}, Error);
}
