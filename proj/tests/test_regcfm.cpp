#include "stepnav/regcfm.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace stepnav;
using namespace stepnav::regcfm;

namespace {

FlowArchitecture tiny_arch() {
    FlowArchitecture a;
    a.waypoints = 5;
    a.context_dim = 2;
    a.hidden = {6, 5};
    a.frequencies = 2;
    return a;
}

// d(x, y) = 1 + 0.3 x + 0.2 y sampled at cell centers; bilinear interpolation
// reproduces it exactly, so the barrier is smooth in the interior.
DistanceMap affine_distances() {
    Grid2D<double> d(20, 20);
    for (int j = 0; j < 20; ++j)
        for (int i = 0; i < 20; ++i) d(i, j) = 1.0 + 0.3 * (i + 0.5) * 0.1 + 0.2 * (j + 0.5) * 0.1;
    return DistanceMap(std::move(d), 0.1);
}

Trajectory random_trajectory(std::mt19937_64& rng, int K) {
    std::uniform_real_distribution<double> u(0.3, 1.7);
    std::vector<Point> pts;
    for (int k = 0; k < K; ++k) pts.emplace_back(u(rng), u(rng));
    return Trajectory(std::move(pts));
}

struct Fixture {
    std::vector<FlowPair> pairs;
    std::vector<BatchEntry> batch;
};

Fixture make_fixture(std::mt19937_64& rng, const DistanceMap& dist, int n) {
    Fixture f;
    std::uniform_real_distribution<double> t(0.0, 1.0);
    for (int b = 0; b < n; ++b)
        f.pairs.push_back({random_trajectory(rng, 5), random_trajectory(rng, 5), Eigen::Vector2d(t(rng), -t(rng)), &dist});
    for (const auto& p : f.pairs) f.batch.push_back({&p, t(rng)});
    return f;
}

}  // namespace

TEST(Regularizers, SmoothLossGradient) {
    std::mt19937_64 rng(1);
    const Eigen::VectorXd x = random_trajectory(rng, 7).flat();
    Eigen::VectorXd g;
    smooth_loss(x, &g);
    const auto num = oracle::numeric_gradient([](const Eigen::VectorXd& y) { return smooth_loss(y); }, x);
    EXPECT_LE(oracle::relative_error(g, num), 1e-7);
}

TEST(Regularizers, SmoothLossVanishesOnQuadratics) {
    std::vector<Point> pts;
    for (int k = 0; k < 9; ++k) pts.emplace_back(0.5 * k * k - k, 2.0 * k + 1.0);
    EXPECT_NEAR(smooth_loss(Trajectory(pts)), 0.0, 1e-18);
}

TEST(Regularizers, SafeLossGradientAndClamp) {
    std::mt19937_64 rng(2);
    const auto dist = affine_distances();
    const Eigen::VectorXd x = random_trajectory(rng, 6).flat();
    Eigen::VectorXd g;
    safe_loss(x, dist, 0.15, kDefaultDistanceFloor, &g);
    const auto num = oracle::numeric_gradient(
        [&](const Eigen::VectorXd& y) { return safe_loss(y, dist, 0.15, kDefaultDistanceFloor); }, x);
    EXPECT_LE(oracle::relative_error(g, num), 1e-7);

    // Inside the margin every term is -log(d_floor) with zero gradient.
    const Eigen::VectorXd y = x;
    safe_loss(y, dist, 10.0, 1e-4, &g);
    EXPECT_NEAR(safe_loss(y, dist, 10.0, 1e-4), -6.0 * std::log(1e-4), 1e-9);
    EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Interpolant, EndpointsAndVelocity) {
    std::mt19937_64 rng(3);
    const auto a = random_trajectory(rng, 5), b = random_trajectory(rng, 5);
    EXPECT_EQ(interpolant(a, b, 0.0).tau_t, a);
    EXPECT_LE((interpolant(a, b, 1.0).tau_t.flat() - b.flat()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE((interpolant(a, b, 0.3).velocity - (b.flat() - a.flat())).cwiseAbs().maxCoeff(), 1e-15);
}

class LossGradients : public ::testing::TestWithParam<RegTarget> {};

TEST_P(LossGradients, EveryTermMatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    const auto dist = affine_distances();
    TrainConfig cfg;
    cfg.reg_target = GetParam();
    for (int trial = 0; trial < 5; ++trial) {
        FlowModel model(tiny_arch(), 100 + trial, 0.5, Point(1.0, 1.0));
        const auto fx = make_fixture(rng, dist, 4);
        TermGradients grads;
        regcfm_loss(model, fx.batch, nullptr, cfg, &grads);
        const Eigen::VectorXd theta = model.parameters();
        auto term = [&](auto pick) {
            return [&, pick](const Eigen::VectorXd& p) {
                FlowModel m = model;
                m.set_parameters(p);
                return pick(regcfm_loss(m, fx.batch, nullptr, cfg));
            };
        };
        const auto num_fm = oracle::numeric_gradient(term([](const LossBreakdown& l) { return l.fm; }), theta);
        const auto num_sm = oracle::numeric_gradient(term([](const LossBreakdown& l) { return l.smooth; }), theta);
        const auto num_sf = oracle::numeric_gradient(term([](const LossBreakdown& l) { return l.safe; }), theta);
        EXPECT_LE(oracle::relative_error(grads.fm, num_fm), 1e-4);
        if (GetParam() == RegTarget::Prediction) {
            EXPECT_LE(oracle::relative_error(grads.smooth, num_sm), 1e-4);
            EXPECT_LE(oracle::relative_error(grads.safe, num_sf), 1e-4);
        } else {
            EXPECT_EQ(grads.smooth.cwiseAbs().maxCoeff(), 0.0);
            EXPECT_EQ(grads.safe.cwiseAbs().maxCoeff(), 0.0);
            EXPECT_LE(num_sm.cwiseAbs().maxCoeff(), 1e-6);
        }
    }
}

TEST_P(LossGradients, DecompositionIdentity) {
    std::mt19937_64 rng(5);
    const auto dist = affine_distances();
    TrainConfig cfg;
    cfg.rho = 0.37;
    cfg.kappa = 0.021;
    cfg.reg_target = GetParam();
    FlowModel model(tiny_arch(), 7, 0.5, Point(1.0, 1.0));
    const auto fx = make_fixture(rng, dist, 6);
    TermGradients parts;
    const auto l = regcfm_loss(model, fx.batch, nullptr, cfg, &parts);
    EXPECT_NEAR(l.total, l.fm + cfg.rho * l.smooth + cfg.kappa * l.safe, 1e-12 * std::max(1.0, std::abs(l.total)));
    Eigen::VectorXd total;
    const auto l2 = regcfm_loss_gradient(model, fx.batch, nullptr, cfg, total);
    EXPECT_EQ(l2.total, l.total);
    const Eigen::VectorXd combined = parts.fm + cfg.rho * parts.smooth + cfg.kappa * parts.safe;
    EXPECT_LE((total - combined).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, combined.cwiseAbs().maxCoeff()));
}

INSTANTIATE_TEST_SUITE_P(Targets, LossGradients, ::testing::Values(RegTarget::Prediction, RegTarget::Interpolant));

TEST(FlowModel, EndpointVelocitiesAreZero) {
    FlowModel model(tiny_arch(), 1, 2.0, Point(1.0, 1.0));
    std::mt19937_64 rng(6);
    const auto v = model.velocity(random_trajectory(rng, 5).flat(), 0.4, Eigen::Vector2d(0.1, 0.2));
    EXPECT_EQ(v(0), 0.0);
    EXPECT_EQ(v(1), 0.0);
    EXPECT_EQ(v(8), 0.0);
    EXPECT_EQ(v(9), 0.0);
    EXPECT_NE(v(4), 0.0);
}

TEST(FlowModel, ParametersRoundTrip) {
    FlowModel a(tiny_arch(), 3), b(tiny_arch(), 4);
    EXPECT_FALSE(a == b);
    b.set_parameters(a.parameters());
    EXPECT_TRUE(a == b);
    EXPECT_THROW(b.set_parameters(Eigen::VectorXd::Zero(3)), Error);
}

TEST(Euler, FirstOrderConvergence) {
    std::vector<Point> pts{Point(0, 0), Point(1.0, -2.0), Point(0.5, 3.0), Point(4, 4)};
    const Trajectory tau0(pts);
    auto error = [&](int N) {
        const auto tau = euler_refine(tau0, N, [](const Eigen::VectorXd& x, double) { return Eigen::VectorXd(-x); });
        double e = 0.0;
        for (std::size_t k = 1; k + 1 < tau.size(); ++k)
            e = std::max(e, (tau[k] - tau0[k] * std::exp(-1.0)).norm());
        return e;
    };
    for (int N : {4, 8, 16}) EXPECT_NEAR(error(N) / error(2 * N), 2.0, 0.4);
    const auto tau = euler_refine(tau0, 4, [](const Eigen::VectorXd& x, double) { return Eigen::VectorXd(-x); });
    EXPECT_EQ(tau.front(), tau0.front());
    EXPECT_EQ(tau.back(), tau0.back());
}

TEST(Euler, RejectsBadInput) {
    const Trajectory tau0({Point(0, 0), Point(1, 1)});
    EXPECT_THROW(euler_refine(tau0, 0, [](const Eigen::VectorXd& x, double) { return x; }), Error);
    EXPECT_THROW(euler_refine(tau0, 2, [](const Eigen::VectorXd&, double) { return Eigen::VectorXd(3); }), Error);
}

TEST(Training, ReducesLossAndIsDeterministic) {
    std::mt19937_64 rng(8);
    const auto dist = affine_distances();
    const auto fx = make_fixture(rng, dist, 16);
    TrainConfig cfg;
    cfg.steps = 300;
    cfg.batch_size = 8;
    cfg.learning_rate = 3e-3;
    FlowModel a(tiny_arch(), 9, 0.5, Point(1, 1)), b = a;
    const auto ra = train(a, fx.pairs, nullptr, cfg);
    const auto rb = train(b, fx.pairs, nullptr, cfg);
    EXPECT_EQ(ra.trace, rb.trace);
    EXPECT_TRUE(a == b);
    auto mean = [](const std::vector<double>& v, std::size_t from, std::size_t to) {
        double s = 0.0;
        for (std::size_t k = from; k < to; ++k) s += v[k];
        return s / static_cast<double>(to - from);
    };
    EXPECT_LT(mean(ra.trace, 250, 300), mean(ra.trace, 0, 50));
}

TEST(Training, DivergenceIsReported) {
    std::mt19937_64 rng(9);
    const auto dist = affine_distances();
    const auto fx = make_fixture(rng, dist, 4);
    TrainConfig cfg;
    cfg.steps = 50;
    cfg.learning_rate = 1e300;
    FlowModel m(tiny_arch(), 1, 0.5, Point(1, 1));
    try {
        train(m, fx.pairs, nullptr, cfg);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_FALSE(e.trace().empty());
    }
    EXPECT_THROW(train(m, {}, nullptr, TrainConfig{}), Error);
}

TEST(Checkpoint, BinaryAndCsvRoundTrip) {
    FlowModel m(tiny_arch(), 11, 2.4, Point(2.4, 2.3));
    std::stringstream bin, csv;
    save_checkpoint(m, bin);
    save_checkpoint_csv(m, csv);
    EXPECT_TRUE(load_checkpoint(bin) == m);
    EXPECT_TRUE(load_checkpoint_csv(csv) == m);
    EXPECT_EQ(bin.str().substr(0, 4), "SNFM");
}

TEST(Checkpoint, RejectsCorruptInput) {
    FlowModel m(tiny_arch(), 11);
    std::stringstream bin;
    save_checkpoint(m, bin);
    std::string bytes = bin.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
    EXPECT_THROW(load_checkpoint(truncated), Error);
    bytes[0] = 'X';
    std::stringstream bad_magic(bytes);
    EXPECT_THROW(load_checkpoint(bad_magic), Error);
    std::stringstream bad_csv("key,value\nversion,9\n");
    EXPECT_THROW(load_checkpoint_csv(bad_csv), Error);
}
