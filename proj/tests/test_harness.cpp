#include "stepnav/harness.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace stepnav;
using namespace stepnav::harness;

namespace {

PipelineConfig small_config() {
    PipelineConfig cfg;
    cfg.episodes_per_kind = 4;
    cfg.training_scenes_per_kind = 4;
    cfg.train.steps = 200;
    return cfg;
}

// Shared benchmark with a reduced but real training budget.
Benchmark& trained_benchmark() {
    static Benchmark bench = [] {
        PipelineConfig cfg;
        cfg.episodes_per_kind = 12;
        cfg.training_scenes_per_kind = 20;
        cfg.train.steps = 2000;
        return Benchmark(cfg);
    }();
    return bench;
}

}  // namespace

TEST(Config, JsonRoundTripPreservesHash) {
    PipelineConfig cfg;
    cfg.field.mu = 0.7;
    cfg.prior.k_paths = 5;
    cfg.train.kappa = 0.02;
    cfg.mode = Mode::NoSafe;
    cfg.kinds = {ScenarioKind::Open, ScenarioKind::Clutter};
    const auto back = config_from_json(to_json(cfg));
    EXPECT_EQ(to_json(back), to_json(cfg));
    EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(Config, HashTracksEveryChange) {
    const PipelineConfig base;
    auto other = base;
    other.train.rho = 0.1000001;
    EXPECT_NE(config_hash(base), config_hash(other));
    other = base;
    other.seed = 1;
    EXPECT_NE(config_hash(base), config_hash(other));
    EXPECT_EQ(hex64(0xABCULL), "0000000000000abc");
}

TEST(Config, RejectsInvalidValues) {
    EXPECT_THROW(config_from_json(nlohmann::json{{"flow", {{"steps", -1}}}}), Error);
    EXPECT_THROW(config_from_json(nlohmann::json{{"mode", "turbo"}}), Error);
    EXPECT_THROW(config_from_json(nlohmann::json{{"world", {{"width", "wide"}}}}), Error);
    EXPECT_THROW(config_from_json(nlohmann::json{{"benchmark", {{"kinds", nlohmann::json::array()}}}}), Error);
}

TEST(Modes, NamesRoundTripAndTrainingOverrides) {
    for (Mode m : kAllModes) EXPECT_EQ(parse_mode(to_string(m)), m);
    const PipelineConfig cfg;
    EXPECT_EQ(train_config(cfg, Mode::NoSmooth).rho, 0.0);
    EXPECT_EQ(train_config(cfg, Mode::NoSmooth).kappa, cfg.train.kappa);
    EXPECT_EQ(train_config(cfg, Mode::NoSafe).kappa, 0.0);
    EXPECT_EQ(train_config(cfg, Mode::NoRegularizers).rho, 0.0);
    EXPECT_EQ(train_config(cfg, Mode::Full).rho, cfg.train.rho);
}

TEST(Stage, ErrorsCarryStageName) {
    try {
        stage("field", []() -> int { throw Error("boom"); });
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "field");
    }
    // An inner stage error is not re-labelled by an outer stage.
    try {
        stage("outer", [] { return stage("inner", []() -> int { throw Error("x"); }); });
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "inner");
    }
}

TEST(ParallelMap, ResultsIndependentOfThreadCount) {
    auto f = [](std::size_t i) { return static_cast<int>(i * i); };
    EXPECT_EQ(parallel_map<int>(50, 1, f), parallel_map<int>(50, 4, f));
    EXPECT_THROW(parallel_map<int>(10, 3, [](std::size_t i) -> int {
                     if (i == 7) throw Error("seven");
                     return 0;
                 }),
                 Error);
}

TEST(Seeds, TrainingAndEvaluationStreamsAreDisjoint) {
    std::set<std::uint64_t> eval, train;
    for (auto kind : {ScenarioKind::TJunction, ScenarioKind::Corridor, ScenarioKind::Clutter})
        for (int i = 0; i < 200; ++i) {
            eval.insert(scenario_seed(0, kind, i, false));
            train.insert(scenario_seed(0, kind, i, true));
        }
    EXPECT_EQ(eval.size(), 600u);
    for (auto s : train) EXPECT_FALSE(eval.count(s));
}

TEST(Pipeline, ContextSatisfiesStageContracts) {
    const auto cfg = small_config();
    const auto ctx = build_context(generate_scenario(ScenarioKind::TJunction, 3, 48, 48), cfg);
    EXPECT_EQ(ctx.features.zc.size(), cfg.feature_dim);
    EXPECT_FALSE(ctx.experts.empty());
    for (const auto& e : ctx.experts) EXPECT_TRUE(collision_free(ctx.scenario.grid, e));
    EXPECT_GT(ctx.shortest_length, 0.0);
    std::vector<regcfm::FlowPair> pairs;
    append_training_pairs(ctx, cfg, Mode::Full, pairs);
    EXPECT_EQ(pairs.size(), ctx.mixture.size());
    pairs.clear();
    append_training_pairs(ctx, cfg, Mode::GaussianPrior, pairs);
    EXPECT_EQ(pairs.size(), static_cast<std::size_t>(cfg.gaussian_train_samples));
}

TEST(Pipeline, DeterministicEndToEnd) {
    const auto cfg = small_config();
    const auto sc = generate_scenario(ScenarioKind::Clutter, 9, 48, 48);
    const auto model = make_model(cfg);
    const auto a = run_pipeline(cfg, sc, model, 5);
    const auto b = run_pipeline(cfg, sc, model, 5);
    EXPECT_EQ(a.trajectory, b.trajectory);
    EXPECT_EQ(a.success, b.success);
    EXPECT_EQ(a.executed_length, b.executed_length);
}

TEST(Pipeline, StageErrorsIdentifyTheStage) {
    auto cfg = small_config();
    cfg.field.max_iterations = 1;
    cfg.field.tol = 1e-15;
    const auto sc = generate_scenario(ScenarioKind::Clutter, 9, 48, 48);
    try {
        build_context(sc, cfg);
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "field");
    }
    const auto ctx = build_context(sc, small_config());
    EXPECT_THROW(run_episode(ctx, make_model(cfg), cfg, Mode::Full, 0, 1), StageError);
}

TEST(Benchmark, PairedScenesAndThreadIndependence) {
    auto cfg = small_config();
    cfg.threads = 1;
    Benchmark one(cfg);
    cfg.threads = 3;
    Benchmark three(cfg);
    const auto a = one.evaluate(Mode::Full, 3);
    const auto b = three.evaluate(Mode::Full, 3);
    const auto g = one.evaluate(Mode::GaussianPrior, 3);
    ASSERT_EQ(a.episodes.size(), 12u);
    for (std::size_t i = 0; i < a.episodes.size(); ++i) {
        EXPECT_EQ(a.episodes[i].result.trajectory, b.episodes[i].result.trajectory);
        EXPECT_EQ(a.episodes[i].scenario_seed, g.episodes[i].scenario_seed);
    }
    EXPECT_EQ(one.ablation_suite({Mode::NoSafe}).size(), 1u);
    EXPECT_THROW(one.steps_sweep(Mode::Full, {0}), Error);
    EXPECT_THROW(one.steps_sweep(Mode::Full, {}), Error);
}

TEST(Refine, ZeroAndConstantFlows) {
    const Trajectory tau0({Point(0, 0), Point(1, 2), Point(3, 1), Point(4, 4)});
    Eigen::VectorXd c(8);
    c << 0, 0, 0.5, -0.25, 1.0, 2.0, 0, 0;
    const auto zero = regcfm::euler_refine(tau0, 7, [](const Eigen::VectorXd& x, double) {
        return Eigen::VectorXd::Zero(x.size()).eval();
    });
    EXPECT_EQ(zero, tau0);
    const auto shifted = regcfm::euler_refine(tau0, 8, [&](const Eigen::VectorXd&, double) { return c; });
    EXPECT_LE((shifted.flat() - (tau0.flat() + c)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Training, SinglePairOverfits) {
    auto cfg = small_config();
    const auto ctx = build_context(generate_scenario(ScenarioKind::Corridor, 1, 48, 48), cfg);
    std::vector<regcfm::FlowPair> pairs{{ctx.mixture.candidates()[0], ctx.experts[0], ctx.features.zc, &ctx.distances}};
    auto model = make_model(cfg);
    regcfm::TrainConfig t;
    t.rho = 0.0;
    t.kappa = 0.0;
    t.steps = 1500;
    t.batch_size = 16;
    const auto r = regcfm::train(model, pairs, nullptr, t);
    EXPECT_LT(r.trace.back() / r.trace.front(), 0.01);
}

TEST(TrainedHarness, TwoCorridorPriorsStayInTheirCorridor) {
    auto& bench = trained_benchmark();
    const auto& model = bench.model(Mode::Full);
    int checked = 0, kept = 0;
    for (const auto& ctx : bench.scenes()) {
        if (ctx.scenario.kind != ScenarioKind::TJunction) continue;
        for (const auto& c : ctx.mixture.candidates()) {
            const auto tau = regcfm::refine(model, c, ctx.features.zc, 5);
            std::vector<Cell> before, after;
            for (const auto& p : c.waypoints()) before.push_back(ctx.scenario.grid.cell_of(p));
            for (const auto& p : tau.waypoints()) after.push_back(ctx.scenario.grid.cell_of(p));
            const int s0 = oracle::passing_side(ctx.scenario.grid, before);
            if (s0 == 0) continue;
            ++checked;
            kept += oracle::passing_side(ctx.scenario.grid, after) == s0;
        }
    }
    ASSERT_GT(checked, 10);
    EXPECT_EQ(kept, checked);
}

TEST(TrainedHarness, MoreStepsAreNoRougherOnTJunctions) {
    auto& bench = trained_benchmark();
    const auto& cfg = bench.config();
    const auto& model = bench.model(Mode::Full);
    double s1 = 0.0, s10 = 0.0;
    int counted = 0;
    for (std::size_t i = 0; i < bench.scenes().size(); ++i) {
        const auto& ctx = bench.scenes()[i];
        if (ctx.scenario.kind != ScenarioKind::TJunction) continue;
        ++counted;
        s1 += regcfm::smooth_loss(run_episode(ctx, model, cfg, Mode::Full, 1, episode_seed(cfg.seed, int(i))).result.trajectory);
        s10 += regcfm::smooth_loss(run_episode(ctx, model, cfg, Mode::Full, 10, episode_seed(cfg.seed, int(i))).result.trajectory);
    }
    ASSERT_EQ(counted, cfg.episodes_per_kind);
    EXPECT_LE(s10, s1);
}

TEST(TrainedHarness, OpenWorldIsNearlyOptimal) {
    auto& bench = trained_benchmark();
    const auto& cfg = bench.config();
    const auto& model = bench.model(Mode::Full);
    const auto sc = generate_scenario(ScenarioKind::Open, 1, 48, 48);
    const auto r = run_pipeline(cfg, sc, model, 1);
    EXPECT_TRUE(r.success);
    EXPECT_GE(r.spl(), 0.9);
}

TEST(TrainedHarness, GaussianSingleStepCollidesMoreOnClutter) {
    auto& bench = trained_benchmark();
    auto cfg = bench.config();
    const auto& full = bench.model(Mode::Full);
    const auto& gauss = bench.model(Mode::GaussianPrior);
    int coll_full = 0, coll_gauss = 0;
    const auto ctxs = parallel_map<ScenarioContext>(100, cfg.threads, [&](std::size_t i) {
        return build_context(generate_scenario(ScenarioKind::Clutter, scenario_seed(99, ScenarioKind::Clutter, int(i), false),
                                               cfg.width, cfg.height),
                             cfg);
    });
    for (std::size_t i = 0; i < ctxs.size(); ++i) {
        coll_full += run_episode(ctxs[i], full, cfg, Mode::Full, 1, episode_seed(7, int(i))).result.collided;
        coll_gauss += run_episode(ctxs[i], gauss, cfg, Mode::GaussianPrior, 1, episode_seed(7, int(i))).result.collided;
    }
    EXPECT_GT(coll_gauss, coll_full);
}
