#include "stepnav/env.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <queue>

using namespace stepnav;

namespace {

// Plain Dijkstra over the same move rules, for A* optimality.
double reference_shortest(const OccupancyGrid& g, const Cell& s, const Cell& t) {
    std::vector<double> dist(g.size(), std::numeric_limits<double>::infinity());
    using E = std::pair<double, std::size_t>;
    std::priority_queue<E, std::vector<E>, std::greater<>> q;
    dist[g.index(s)] = 0.0;
    q.emplace(0.0, g.index(s));
    while (!q.empty()) {
        auto [d, u] = q.top();
        q.pop();
        if (d > dist[u]) continue;
        const Cell c = g.cell(u);
        for (int dj = -1; dj <= 1; ++dj)
            for (int di = -1; di <= 1; ++di) {
                if (di == 0 && dj == 0) continue;
                const Cell n{c.i + di, c.j + dj};
                if (!g.free(n)) continue;
                if (di != 0 && dj != 0 && (!g.free({c.i + di, c.j}) || !g.free({c.i, c.j + dj}))) continue;
                const double nd = d + std::hypot(di, dj) * g.resolution();
                if (nd < dist[g.index(n)]) dist[g.index(n)] = nd, q.emplace(nd, g.index(n));
            }
    }
    return dist[g.index(t)];
}

}  // namespace

TEST(DistanceTransform, MatchesBruteForceOnRandomGrids) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto g = oracle::random_grid(9 + trial % 5, 7 + trial % 4, 0.15, rng);
        if (g.occupied_count() == 0) continue;
        const auto fast = distance_transform(g);
        const auto ref = oracle::brute_distance(g);
        for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(fast[k], ref[k], 1e-12);
    }
}

TEST(DistanceTransform, EmptyGridIsInfinite) {
    const auto g = OccupancyGrid::open(5, 4, 0.1, false);
    const auto d = distance_transform(g);
    for (double v : d.data()) EXPECT_TRUE(std::isinf(v));
}

TEST(AStar, MatchesDijkstraLength) {
    std::mt19937_64 rng(11);
    int checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
        auto g = oracle::random_grid(14, 12, 0.25, rng);
        g.set(0, 0, false);
        g.set(13, 11, false);
        const double ref = reference_shortest(g, {0, 0}, {13, 11});
        const auto path = astar(g, {0, 0}, {13, 11});
        if (std::isinf(ref)) {
            EXPECT_FALSE(path.has_value());
            continue;
        }
        ASSERT_TRUE(path.has_value());
        EXPECT_NEAR(path->cost, ref, 1e-12);
        EXPECT_NEAR(path->length, ref, 1e-12);
        ++checked;
    }
    EXPECT_GT(checked, 5);
}

TEST(AStar, NeverCutsCorners) {
    std::vector<std::uint8_t> cells{0, 1, 1, 0};  // 2x2, free diagonal only
    OccupancyGrid g(2, 2, 1.0, cells);
    EXPECT_FALSE(astar(g, {0, 0}, {1, 1}).has_value());
}

TEST(FirstBlocked, AgreesWithDenseSampling) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int trial = 0; trial < 200; ++trial) {
        const auto g = oracle::random_grid(10, 10, 0.1, rng);
        const Point a(u(rng), u(rng)), b(u(rng), u(rng));
        const auto hit = first_blocked(g, a, b);
        // Sampling can only miss corner grazes, so it never reports a hit earlier.
        std::optional<double> sampled;
        for (int s = 0; s <= 20000; ++s) {
            const double f = s / 20000.0;
            const Point p = a + f * (b - a);
            if (g.occupied(g.cell_of(p))) {
                sampled = f;
                break;
            }
        }
        if (sampled) {
            ASSERT_TRUE(hit.has_value());
            EXPECT_LE(*hit, *sampled + 1e-9);
            EXPECT_GE(*hit, *sampled - 1e-3);
        }
    }
}

TEST(Scenario, GeneratedScenariosAreValidAndDeterministic) {
    for (auto kind : {ScenarioKind::TJunction, ScenarioKind::Corridor, ScenarioKind::Clutter, ScenarioKind::Open})
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto a = generate_scenario(kind, seed, 48, 48);
            EXPECT_NO_THROW(a.validate());
            EXPECT_EQ(a, generate_scenario(kind, seed, 48, 48));
        }
}

TEST(Scenario, ValidateRejectsBrokenWorlds) {
    auto sc = generate_scenario(ScenarioKind::Open, 1, 16, 16);
    auto no_border = sc;
    no_border.grid.set(0, 5, false);
    EXPECT_THROW(no_border.validate(), Error);
    auto blocked_goal = sc;
    blocked_goal.grid.set(blocked_goal.goal_cell().i, blocked_goal.goal_cell().j, true);
    EXPECT_THROW(blocked_goal.validate(), Error);
    EXPECT_THROW(generate_scenario(ScenarioKind::Clutter, 0, 4, 48), Error);
}

TEST(Scenario, TJunctionHasTwoArmsAroundOneIsland) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto sc = generate_scenario(ScenarioKind::TJunction, seed, 48, 48);
        const auto islands = oracle::interior_obstacles(sc.grid);
        ASSERT_FALSE(islands.empty());
        const auto path = astar(sc.grid, sc.start_cell(), sc.goal_cell());
        ASSERT_TRUE(path.has_value());
        EXPECT_NE(oracle::passing_side(sc.grid, path->cells), 0);
    }
}

TEST(Demonstrations, LabelsAreBinaryAndZeroOnObstacles) {
    const auto sc = generate_scenario(ScenarioKind::Corridor, 4, 48, 48);
    const auto demos = synthesize_demonstrations(sc, 10, 1.0);
    EXPECT_EQ(demos.paths.size(), 10u);
    for (int j = 0; j < sc.grid.height(); ++j)
        for (int i = 0; i < sc.grid.width(); ++i) {
            const double y = demos.labels(i, j);
            EXPECT_TRUE(y == 0.0 || y == 1.0);
            if (sc.grid.occupied(i, j)) {
                EXPECT_EQ(y, 0.0);
            }
        }
    for (const auto& p : demos.paths) {
        EXPECT_EQ(p.front(), sc.start_cell());
        EXPECT_EQ(p.back(), sc.goal_cell());
        for (const auto& c : p) EXPECT_TRUE(sc.grid.free(c));
    }
}

TEST(Demonstrations, NoiseFreeDemosAreIdentical) {
    const auto sc = generate_scenario(ScenarioKind::Clutter, 2, 48, 48);
    const auto demos = synthesize_demonstrations(sc, 3, 0.0);
    EXPECT_EQ(demos.paths[0], demos.paths[1]);
    EXPECT_EQ(demos.paths[1], demos.paths[2]);
    EXPECT_THROW(synthesize_demonstrations(sc, 0, 0.0), Error);
    EXPECT_THROW(synthesize_demonstrations(sc, 1, -1.0), Error);
}

TEST(Bilinear, ReproducesAffineFunctions) {
    Grid2D<double> g(6, 5);
    for (int j = 0; j < 5; ++j)
        for (int i = 0; i < 6; ++i) g(i, j) = 2.0 + 0.5 * (i + 0.5) - 1.5 * (j + 0.5);
    Point grad;
    const double v = bilinear(g, 1.0, Point(2.3, 1.7), &grad);
    EXPECT_NEAR(v, 2.0 + 0.5 * 2.3 - 1.5 * 1.7, 1e-12);
    EXPECT_NEAR(grad.x(), 0.5, 1e-12);
    EXPECT_NEAR(grad.y(), -1.5, 1e-12);
}

TEST(Scenario, OpenWorldHasOnlyBorderWalls) {
    const auto sc = generate_scenario(ScenarioKind::Open, 1, 16, 16);
    EXPECT_EQ(sc.grid.occupied_count(), 4u * 16 - 4);
    EXPECT_EQ(sc.start_cell(), (Cell{1, 1}));
    EXPECT_EQ(sc.goal_cell(), (Cell{14, 14}));
}

TEST(Scenario, LargeTJunctionHasTwoCorridors) {
    const auto sc = generate_scenario(ScenarioKind::TJunction, 7, 64, 64);
    // Blocking either side of the island must leave the other route open.
    const auto islands = oracle::interior_obstacles(sc.grid);
    ASSERT_FALSE(islands.empty());
    int imin = 64, imax = -1, jmin = 64, jmax = -1;
    for (const auto& c : islands.front()) {
        imin = std::min(imin, c.i), imax = std::max(imax, c.i);
        jmin = std::min(jmin, c.j), jmax = std::max(jmax, c.j);
    }
    for (int side : {-1, 1}) {
        auto g = sc.grid;
        const int jmid = (jmin + jmax) / 2;
        for (int i = 0; i < g.width(); ++i)
            if (side < 0 ? i < imin : i > imax) g.set(i, jmid, true);
        EXPECT_TRUE(connected(g, sc.start_cell(), sc.goal_cell()));
    }
}

TEST(Demonstrations, OpenWorldSingleDemoIsDilatedChord) {
    const auto sc = generate_scenario(ScenarioKind::Open, 1, 16, 16);
    DemoConfig cfg;
    cfg.dilation = 0;
    const auto demos = synthesize_demonstrations(sc, 1, 0.0, cfg);
    for (int j = 0; j < 16; ++j)
        for (int i = 0; i < 16; ++i) {
            const bool on_diagonal = i == j && i >= 1 && i <= 14;
            EXPECT_EQ(demos.labels(i, j), on_diagonal ? 1.0 : 0.0) << i << ',' << j;
        }
}

TEST(Demonstrations, TJunctionLabelsBothCorridors) {
    const auto sc = generate_scenario(ScenarioKind::TJunction, 2, 48, 48);
    const auto demos = synthesize_demonstrations(sc, 20, 1.0);
    bool left = false, right = false;
    for (const auto& p : demos.paths) {
        const int s = oracle::passing_side(sc.grid, p);
        left |= s < 0;
        right |= s > 0;
    }
    EXPECT_TRUE(left && right);
}

TEST(DistanceTransform, WallNeighborIsOneCell) {
    const auto sc = generate_scenario(ScenarioKind::Open, 1, 16, 16);
    const auto d = distance_transform(sc.grid);
    EXPECT_NEAR(d(1, 5), 0.1, 1e-15);
    EXPECT_EQ(d(0, 5), 0.0);
}
