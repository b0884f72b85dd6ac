#pragma once

// Procedural occupancy-grid worlds, classical grid search, exact Euclidean
// distance transform and A*-based demonstration synthesis.

#include "stepnav/core.hpp"
#include "stepnav/trajectory.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace stepnav {

inline constexpr double kDefaultResolution = 0.1;

// Binary obstacle map: 0 free, 1 occupied. Closed-border and minimum-size
// requirements are enforced on Scenario, not here, so that small or
// borderless grids remain usable as test fixtures.
class OccupancyGrid {
public:
    OccupancyGrid(int width, int height, double resolution, std::vector<std::uint8_t> cells)
        : cells_(width, height, std::move(cells)), resolution_(resolution) {
        if (!(resolution > 0.0) || !std::isfinite(resolution))
            throw Error("grid resolution must be positive");
        for (auto c : cells_.data())
            if (c > 1) throw Error("occupancy values must be 0 or 1");
    }

    static OccupancyGrid open(int width, int height, double resolution, bool closed_border) {
        std::vector<std::uint8_t> cells(static_cast<std::size_t>(width) * height, 0);
        OccupancyGrid g(width, height, resolution, std::move(cells));
        if (closed_border) g.close_border();
        return g;
    }

    int width() const noexcept { return cells_.width(); }
    int height() const noexcept { return cells_.height(); }
    double resolution() const noexcept { return resolution_; }
    std::size_t size() const noexcept { return cells_.size(); }
    double extent_x() const noexcept { return width() * resolution_; }
    double extent_y() const noexcept { return height() * resolution_; }

    bool in_bounds(int i, int j) const noexcept { return cells_.in_bounds(i, j); }
    bool in_bounds(const Point& p) const noexcept {
        return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= extent_x() && p.y() <= extent_y();
    }
    bool occupied(int i, int j) const { return cells_(i, j) != 0; }
    bool occupied(const Cell& c) const { return occupied(c.i, c.j); }
    bool free(const Cell& c) const { return in_bounds(c.i, c.j) && !occupied(c); }
    void set(int i, int j, bool occ) { cells_(i, j) = occ ? 1 : 0; }

    std::size_t index(const Cell& c) const noexcept { return cells_.index(c.i, c.j); }
    Cell cell(std::size_t idx) const noexcept { return cells_.cell(idx); }
    Point center(const Cell& c) const {
        return {(c.i + 0.5) * resolution_, (c.j + 0.5) * resolution_};
    }
    Cell cell_of(const Point& p) const {
        const int i = std::clamp(static_cast<int>(std::floor(p.x() / resolution_)), 0, width() - 1);
        const int j = std::clamp(static_cast<int>(std::floor(p.y() / resolution_)), 0, height() - 1);
        return {i, j};
    }

    bool closed_border() const {
        for (int i = 0; i < width(); ++i)
            if (!occupied(i, 0) || !occupied(i, height() - 1)) return false;
        for (int j = 0; j < height(); ++j)
            if (!occupied(0, j) || !occupied(width() - 1, j)) return false;
        return true;
    }
    void close_border() {
        for (int i = 0; i < width(); ++i) set(i, 0, true), set(i, height() - 1, true);
        for (int j = 0; j < height(); ++j) set(0, j, true), set(width() - 1, j, true);
    }
    std::size_t occupied_count() const {
        return static_cast<std::size_t>(std::count(cells_.data().begin(), cells_.data().end(), 1));
    }

    const Grid2D<std::uint8_t>& cells() const noexcept { return cells_; }

    friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;

private:
    Grid2D<std::uint8_t> cells_;
    double resolution_;
};

enum class ScenarioKind { TJunction, Corridor, Clutter, Open };

inline std::string_view to_string(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::TJunction: return "tjunction";
        case ScenarioKind::Corridor: return "corridor";
        case ScenarioKind::Clutter: return "clutter";
        case ScenarioKind::Open: return "open";
    }
    return "unknown";
}

inline ScenarioKind parse_scenario_kind(std::string_view s) {
    if (s == "tjunction" || s == "TJunction") return ScenarioKind::TJunction;
    if (s == "corridor" || s == "Corridor") return ScenarioKind::Corridor;
    if (s == "clutter" || s == "Clutter") return ScenarioKind::Clutter;
    if (s == "open" || s == "Open") return ScenarioKind::Open;
    throw Error("unknown scenario kind: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Grid search

namespace detail {

inline constexpr std::array<std::array<int, 2>, 8> kMoves{{
    {1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}}};

// Diagonal moves may not cut between two cells when either orthogonal
// neighbor is occupied.
inline bool move_allowed(const OccupancyGrid& g, const Cell& from, int di, int dj) {
    const Cell to{from.i + di, from.j + dj};
    if (!g.free(to)) return false;
    if (di != 0 && dj != 0)
        return g.free({from.i + di, from.j}) && g.free({from.i, from.j + dj});
    return true;
}

}  // namespace detail

// Cells reachable from `from` under the 8-connected, no-corner-cutting move
// model. Result is a per-cell mask.
inline std::vector<std::uint8_t> reachable(const OccupancyGrid& g, const Cell& from) {
    std::vector<std::uint8_t> seen(g.size(), 0);
    if (!g.free(from)) return seen;
    std::deque<Cell> queue{from};
    seen[g.index(from)] = 1;
    while (!queue.empty()) {
        const Cell c = queue.front();
        queue.pop_front();
        for (const auto& [di, dj] : detail::kMoves) {
            if (!detail::move_allowed(g, c, di, dj)) continue;
            const Cell n{c.i + di, c.j + dj};
            auto& s = seen[g.index(n)];
            if (!s) {
                s = 1;
                queue.push_back(n);
            }
        }
    }
    return seen;
}

inline bool connected(const OccupancyGrid& g, const Cell& a, const Cell& b) {
    if (!g.free(a) || !g.free(b)) return false;
    return reachable(g, a)[g.index(b)] != 0;
}

struct GridPath {
    std::vector<Cell> cells;
    double cost = 0.0;    // weighted cost (meters x cost factor)
    double length = 0.0;  // geometric length in meters
};

// A* over free cells, 8-connected without corner cutting. The optional
// per-cell cost factor (>= 1) scales each move by the mean factor of its two
// cells; the octile heuristic stays admissible.
inline std::optional<GridPath> astar(const OccupancyGrid& g, const Cell& start, const Cell& goal,
                                     const Grid2D<double>* cost_factor = nullptr) {
    if (!g.free(start) || !g.free(goal)) return std::nullopt;
    const double res = g.resolution();
    auto factor = [&](const Cell& c) { return cost_factor ? (*cost_factor)(c.i, c.j) : 1.0; };
    auto heuristic = [&](const Cell& c) {
        const double dx = std::abs(c.i - goal.i), dy = std::abs(c.j - goal.j);
        return res * (std::max(dx, dy) + (std::sqrt(2.0) - 1.0) * std::min(dx, dy));
    };
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> gscore(g.size(), inf);
    std::vector<std::int64_t> parent(g.size(), -1);
    std::vector<std::uint8_t> closed(g.size(), 0);
    using Entry = std::tuple<double, std::size_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
    const auto s = g.index(start), t = g.index(goal);
    gscore[s] = 0.0;
    open.emplace(heuristic(start), s);
    while (!open.empty()) {
        const auto [f, idx] = open.top();
        open.pop();
        if (closed[idx]) continue;
        closed[idx] = 1;
        if (idx == t) break;
        const Cell c = g.cell(idx);
        for (const auto& [di, dj] : detail::kMoves) {
            if (!detail::move_allowed(g, c, di, dj)) continue;
            const Cell n{c.i + di, c.j + dj};
            const auto nidx = g.index(n);
            if (closed[nidx]) continue;
            const double step = (di != 0 && dj != 0 ? std::sqrt(2.0) : 1.0) * res;
            const double cand = gscore[idx] + step * 0.5 * (factor(c) + factor(n));
            if (cand < gscore[nidx]) {
                gscore[nidx] = cand;
                parent[nidx] = static_cast<std::int64_t>(idx);
                open.emplace(cand + heuristic(n), nidx);
            }
        }
    }
    if (!closed[t]) return std::nullopt;
    GridPath path;
    path.cost = gscore[t];
    for (std::int64_t at = static_cast<std::int64_t>(t); at >= 0; at = parent[static_cast<std::size_t>(at)])
        path.cells.push_back(g.cell(static_cast<std::size_t>(at)));
    std::reverse(path.cells.begin(), path.cells.end());
    for (std::size_t k = 0; k + 1 < path.cells.size(); ++k)
        path.length += (g.center(path.cells[k + 1]) - g.center(path.cells[k])).norm();
    return path;
}

// Exact Euclidean distance (meters) from each cell center to the nearest
// occupied cell center, via the separable lower-envelope transform of
// Felzenszwalb and Huttenlocher. Occupied cells read 0; a grid without
// obstacles reads +inf everywhere.
inline Grid2D<double> distance_transform(const OccupancyGrid& g) {
    const int w = g.width(), h = g.height();
    const double inf = std::numeric_limits<double>::infinity();
    Grid2D<double> sq(w, h, inf);
    if (g.occupied_count() == 0) return sq;
    for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i)
            if (g.occupied(i, j)) sq(i, j) = 0.0;

    // Lower envelope of parabolas rooted at the finite samples only.
    auto transform_1d = [](const std::vector<double>& f, std::vector<double>& d) {
        const int n = static_cast<int>(f.size());
        std::vector<int> v(static_cast<std::size_t>(n));
        std::vector<double> z(static_cast<std::size_t>(n) + 1);
        auto meet = [&](int q, int p) {
            return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
        };
        int k = -1;
        for (int q = 0; q < n; ++q) {
            if (!std::isfinite(f[q])) continue;
            if (k < 0) {
                k = 0;
                v[0] = q;
                z[0] = -std::numeric_limits<double>::infinity();
                z[1] = std::numeric_limits<double>::infinity();
                continue;
            }
            double s = meet(q, v[k]);
            while (s <= z[k]) s = meet(q, v[--k]);
            ++k;
            v[k] = q;
            z[k] = s;
            z[k + 1] = std::numeric_limits<double>::infinity();
        }
        if (k < 0) {
            std::fill(d.begin(), d.end(), std::numeric_limits<double>::infinity());
            return;
        }
        int m = 0;
        for (int q = 0; q < n; ++q) {
            while (z[m + 1] < q) ++m;
            const double diff = q - v[m];
            d[q] = diff * diff + f[v[m]];
        }
    };

    std::vector<double> f(static_cast<std::size_t>(h)), d(static_cast<std::size_t>(h));
    for (int i = 0; i < w; ++i) {
        for (int j = 0; j < h; ++j) f[j] = sq(i, j);
        transform_1d(f, d);
        for (int j = 0; j < h; ++j) sq(i, j) = d[j];
    }
    f.resize(static_cast<std::size_t>(w));
    d.resize(static_cast<std::size_t>(w));
    for (int j = 0; j < h; ++j) {
        for (int i = 0; i < w; ++i) f[i] = sq(i, j);
        transform_1d(f, d);
        for (int i = 0; i < w; ++i) sq(i, j) = std::sqrt(d[i]) * g.resolution();
    }
    return sq;
}

// Exact segment-versus-grid test. Walks every cell the closed segment touches
// (corner crossings visit both side cells) and returns the fraction along
// a->b at which the first occupied or out-of-bounds cell is entered.
inline std::optional<double> first_blocked(const OccupancyGrid& g, const Point& a, const Point& b) {
    const double res = g.resolution();
    const Point pa = a / res, pb = b / res;
    auto blocked = [&](int i, int j) { return !g.in_bounds(i, j) || g.occupied(i, j); };
    int i = static_cast<int>(std::floor(pa.x()));
    int j = static_cast<int>(std::floor(pa.y()));
    const int ie = static_cast<int>(std::floor(pb.x()));
    const int je = static_cast<int>(std::floor(pb.y()));
    if (blocked(i, j)) return 0.0;
    const Point dir = pb - pa;
    const int si = dir.x() > 0 ? 1 : (dir.x() < 0 ? -1 : 0);
    const int sj = dir.y() > 0 ? 1 : (dir.y() < 0 ? -1 : 0);
    const double inf = std::numeric_limits<double>::infinity();
    double t_max_x = si == 0 ? inf : ((si > 0 ? (i + 1) : i) - pa.x()) / dir.x();
    double t_max_y = sj == 0 ? inf : ((sj > 0 ? (j + 1) : j) - pa.y()) / dir.y();
    const double t_dx = si == 0 ? inf : 1.0 / std::abs(dir.x());
    const double t_dy = sj == 0 ? inf : 1.0 / std::abs(dir.y());
    const int max_steps = std::abs(ie - i) + std::abs(je - j) + 2;
    for (int step = 0; step < max_steps && !(i == ie && j == je); ++step) {
        if (std::abs(t_max_x - t_max_y) <= 1e-12) {
            const double t = t_max_x;
            if (t > 1.0) break;
            if (blocked(i + si, j) || blocked(i, j + sj) || blocked(i + si, j + sj)) return t;
            i += si;
            j += sj;
            t_max_x += t_dx;
            t_max_y += t_dy;
        } else if (t_max_x < t_max_y) {
            const double t = t_max_x;
            if (t > 1.0) break;
            i += si;
            t_max_x += t_dx;
            if (blocked(i, j)) return t;
        } else {
            const double t = t_max_y;
            if (t > 1.0) break;
            j += sj;
            t_max_y += t_dy;
            if (blocked(i, j)) return t;
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Scenarios

struct Scenario {
    ScenarioKind kind = ScenarioKind::Open;
    std::uint64_t seed = 0;
    OccupancyGrid grid;
    Point start;
    Point goal;

    Cell start_cell() const { return grid.cell_of(start); }
    Cell goal_cell() const { return grid.cell_of(goal); }

    // Throws unless the closed-world scenario invariants hold.
    void validate() const {
        if (grid.width() < 8 || grid.height() < 8) throw Error("scenario grid must be at least 8x8");
        if (!grid.closed_border()) throw Error("scenario grid border must be occupied");
        if (!grid.in_bounds(start) || !grid.in_bounds(goal)) throw Error("start/goal outside grid");
        if (grid.occupied(start_cell())) throw Error("start lies in an occupied cell");
        if (grid.occupied(goal_cell())) throw Error("goal lies in an occupied cell");
        if (!connected(grid, start_cell(), goal_cell()))
            throw Error("no free-space path between start and goal");
    }

    friend bool operator==(const Scenario&, const Scenario&) = default;
};

namespace detail {

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive
    return lo + static_cast<int>(uniform01(rng) * (hi - lo + 1));
}

inline void carve(OccupancyGrid& g, int i0, int j0, int i1, int j1) {
    for (int j = std::max(1, std::min(j0, j1)); j <= std::min(g.height() - 2, std::max(j0, j1)); ++j)
        for (int i = std::max(1, std::min(i0, i1)); i <= std::min(g.width() - 2, std::max(i0, i1)); ++i)
            g.set(i, j, false);
}

inline OccupancyGrid solid(int w, int h, double res) {
    return OccupancyGrid(w, h, res, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, 1));
}

// A stem rising from the start into a rectangular loop around a central
// block; two arms rejoin below a stub that leads to the goal. The layout is
// mirror-symmetric about the stem column, so neither arm is preferred.
inline Scenario tjunction(std::uint64_t seed, int w, int h, double res, Rng& rng) {
    if (w < 24 || h < 24) throw Error("tjunction scenarios need at least 24x24 cells");
    constexpr int cw = 5;
    const int c = (w - 1) / 2 - uniform_int(rng, 0, 1);
    const int xl = 2 + uniform_int(rng, 0, 2);
    const int xr = 2 * c - xl;
    const int yb = static_cast<int>(std::lround(h * 0.25)) + uniform_int(rng, -1, 1);
    const int yt = h - 1 - static_cast<int>(std::lround(h * 0.25)) + uniform_int(rng, -1, 1);
    if (xr > w - 3 || xr - xl + 1 < 2 * cw + 3 || yt - yb + 1 < 2 * cw + 3)
        throw Error("tjunction layout does not fit the requested size");
    OccupancyGrid g = solid(w, h, res);
    carve(g, c - cw / 2, 1, c + cw / 2, yb);        // stem
    carve(g, xl, yb, xr, yb + cw - 1);              // lower bar
    carve(g, xl, yt - cw + 1, xr, yt);              // upper bar
    carve(g, xl, yb, xl + cw - 1, yt);              // left arm
    carve(g, xr - cw + 1, yb, xr, yt);              // right arm
    carve(g, c - cw / 2, yt, c + cw / 2, h - 2);    // goal stub
    const Point s = g.center({c, std::min(3, yb)});
    const Point t = g.center({c, std::max(h - 4, yt)});
    return Scenario{ScenarioKind::TJunction, seed, std::move(g), s, t};
}

// Serpentine corridor of two or three horizontal runs joined at alternate ends.
inline Scenario corridor(std::uint64_t seed, int w, int h, double res, Rng& rng) {
    if (w < 24 || h < 24) throw Error("corridor scenarios need at least 24x24 cells");
    const int cw = std::max(3, std::min(w, h) / 8 + uniform_int(rng, 0, 1));
    int runs = 2 + uniform_int(rng, 0, 1);
    while (runs > 2 && runs * cw + (runs - 1) * (cw + 1) > h - 2) --runs;
    const int band = (h - 2) / runs;
    const bool flip = uniform01(rng) < 0.5;
    const int x0 = 2, x1 = w - 3;
    OccupancyGrid g = solid(w, h, res);
    std::vector<int> rows(static_cast<std::size_t>(runs));
    for (int r = 0; r < runs; ++r) {
        const int slack = std::max(0, band - cw);
        rows[r] = 1 + r * band + std::clamp(slack / 2 + uniform_int(rng, -1, 1), 0, slack);
        carve(g, x0, rows[r], x1, rows[r] + cw - 1);
    }
    for (int r = 0; r + 1 < runs; ++r) {
        const bool right = (r % 2 == 0);
        const int cx0 = right ? x1 - cw + 1 : x0;
        carve(g, cx0, rows[r], cx0 + cw - 1, rows[r + 1] + cw - 1);
    }
    const Cell s{x0 + cw / 2, rows[0] + cw / 2};
    const bool ends_right = (runs % 2 == 1);
    const Cell t{ends_right ? x1 - cw / 2 : x0 + cw / 2, rows[runs - 1] + cw / 2};
    if (flip) {
        OccupancyGrid f = solid(w, h, res);
        for (int j = 0; j < h; ++j)
            for (int i = 0; i < w; ++i) f.set(w - 1 - i, j, g.occupied(i, j));
        const Point fs = f.center({w - 1 - s.i, s.j}), ft = f.center({w - 1 - t.i, t.j});
        return Scenario{ScenarioKind::Corridor, seed, std::move(f), fs, ft};
    }
    const Point ps = g.center(s), pt = g.center(t);
    return Scenario{ScenarioKind::Corridor, seed, std::move(g), ps, pt};
}

// Rectangular obstacles scattered in an open room; start and goal in opposite
// corners with a clear neighborhood.
inline Scenario clutter(std::uint64_t seed, int w, int h, double res, Rng& rng) {
    if (w < 16 || h < 16) throw Error("clutter scenarios need at least 16x16 cells");
    OccupancyGrid g = OccupancyGrid::open(w, h, res, true);
    const Cell s{2 + uniform_int(rng, 0, 1), 2 + uniform_int(rng, 0, 1)};
    const Cell t{w - 3 - uniform_int(rng, 0, 1), h - 3 - uniform_int(rng, 0, 1)};
    const int count = static_cast<int>(std::lround(w * h / 230.0)) + uniform_int(rng, 0, 2);
    const int keep_clear = std::max(3, std::min(w, h) / 10);
    for (int n = 0; n < count; ++n) {
        const int ow = uniform_int(rng, 2, std::max(2, w / 8));
        const int oh = uniform_int(rng, 2, std::max(2, h / 8));
        const int oi = uniform_int(rng, 2, w - 3 - ow);
        const int oj = uniform_int(rng, 2, h - 3 - oh);
        auto near = [&](const Cell& c) {
            const int dx = std::max({oi - c.i, 0, c.i - (oi + ow - 1)});
            const int dy = std::max({oj - c.j, 0, c.j - (oj + oh - 1)});
            return std::max(dx, dy) < keep_clear;
        };
        if (near(s) || near(t)) continue;
        for (int j = oj; j < oj + oh; ++j)
            for (int i = oi; i < oi + ow; ++i) g.set(i, j, true);
    }
    const Point ps = g.center(s), pt = g.center(t);
    return Scenario{ScenarioKind::Clutter, seed, std::move(g), ps, pt};
}

}  // namespace detail

inline constexpr int kMaxGenerationAttempts = 64;

// Deterministic in (kind, seed, width, height, resolution).
inline Scenario generate_scenario(ScenarioKind kind, std::uint64_t seed, int width, int height,
                                  double resolution = kDefaultResolution) {
    if (width < 8 || height < 8 || width > 512 || height > 512)
        throw Error("scenario size must be within [8, 512] cells per axis");
    std::string last_error;
    for (int attempt = 0; attempt < kMaxGenerationAttempts; ++attempt) {
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(attempt) * 4 + static_cast<std::uint64_t>(kind));
        auto build = [&]() -> Scenario {
            switch (kind) {
                case ScenarioKind::TJunction: return detail::tjunction(seed, width, height, resolution, rng);
                case ScenarioKind::Corridor: return detail::corridor(seed, width, height, resolution, rng);
                case ScenarioKind::Clutter: return detail::clutter(seed, width, height, resolution, rng);
                case ScenarioKind::Open: break;
            }
            OccupancyGrid g = OccupancyGrid::open(width, height, resolution, true);
            const Point s = g.center({1, 1}), t = g.center({width - 2, height - 2});
            return Scenario{kind, seed, std::move(g), s, t};
        };
        try {
            Scenario sc = build();
            sc.validate();
            return sc;
        } catch (const Error& e) {
            last_error = e.what();
        }
    }
    throw Error("scenario generation failed after " + std::to_string(kMaxGenerationAttempts) +
                " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// Demonstrations

// Per-cell supervision y(x) in [0, 1] with the grid's dimensions.
class LabelField {
public:
    explicit LabelField(Grid2D<double> values) : values_(std::move(values)) {
        for (auto& v : values_.data()) {
            if (!std::isfinite(v)) throw Error("label values must be finite");
            v = std::clamp(v, 0.0, 1.0);
        }
    }

    int width() const noexcept { return values_.width(); }
    int height() const noexcept { return values_.height(); }
    double operator()(int i, int j) const { return values_(i, j); }
    const Grid2D<double>& values() const noexcept { return values_; }

private:
    Grid2D<double> values_;
};

struct Demonstrations {
    LabelField labels;
    std::vector<std::vector<Cell>> paths;
};

struct DemoConfig {
    int dilation = 3;               // Chebyshev radius in cells
    double clearance_radius = 0.5;  // meters; inflation reach of the demo costmap
    double clearance_weight = 3.0;  // extra cost factor at contact
    double via_clearance = 0.25;    // meters; preferred clearance of via points
};

namespace detail {

inline std::vector<Cell> remove_loops(const std::vector<Cell>& path) {
    std::vector<Cell> out;
    std::map<Cell, std::size_t> where;
    for (const auto& c : path) {
        if (auto it = where.find(c); it != where.end()) {
            for (std::size_t k = it->second + 1; k < out.size(); ++k) where.erase(out[k]);
            out.resize(it->second + 1);
            continue;
        }
        where[c] = out.size();
        out.push_back(c);
    }
    return out;
}

}  // namespace detail

// Cost factor >= 1 that grows near obstacles; used so demonstrations keep
// clearance the way a costmap-inflated planner would.
inline Grid2D<double> clearance_costmap(const Grid2D<double>& distances, const DemoConfig& cfg) {
    Grid2D<double> out(distances.width(), distances.height(), 1.0);
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double gap = std::max(0.0, 1.0 - distances[k] / cfg.clearance_radius);
        out[k] = 1.0 + cfg.clearance_weight * gap * gap;
    }
    return out;
}

// Runs the clearance-aware A* n_demos times. With noise > 0 each run passes
// through a via point jittered (isotropic normal, std-dev `noise` meters)
// around a random point of the start-goal chord. Labels are 1 on the dilated
// raster of every demonstration and 0 elsewhere, including every occupied cell.
inline Demonstrations synthesize_demonstrations(const Scenario& sc, int n_demos, double noise,
                                                const DemoConfig& cfg = {},
                                                std::uint64_t salt = 0) {
    if (n_demos < 1) throw Error("n_demos must be at least 1");
    if (noise < 0.0) throw Error("demonstration noise must be non-negative");
    const auto& g = sc.grid;
    const auto dist = distance_transform(g);
    const auto costmap = clearance_costmap(dist, cfg);
    const auto reach = reachable(g, sc.start_cell());
    Rng rng = make_rng(sc.seed, 0xDE30 + salt);
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto snap = [&](const Point& p) {
        double best = std::numeric_limits<double>::infinity(), best_any = best;
        Cell pick{-1, -1}, pick_any{-1, -1};
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (!reach[k]) continue;
            const Cell c = g.cell(k);
            const double d2 = (g.center(c) - p).squaredNorm();
            if (d2 < best_any) best_any = d2, pick_any = c;
            if (dist[k] >= cfg.via_clearance && d2 < best) best = d2, pick = c;
        }
        return pick.i >= 0 ? pick : pick_any;
    };

    Grid2D<double> y(g.width(), g.height(), 0.0);
    std::vector<std::vector<Cell>> paths;
    for (int d = 0; d < n_demos; ++d) {
        std::vector<Cell> cells;
        if (noise > 0.0) {
            const double s = 0.3 + 0.4 * uniform01(rng);
            const double ox = gauss(rng) * noise, oy = gauss(rng) * noise;
            const Point via_p = sc.start + s * (sc.goal - sc.start) + Point(ox, oy);
            const Cell via = snap(via_p);
            auto first = astar(g, sc.start_cell(), via, &costmap);
            auto second = astar(g, via, sc.goal_cell(), &costmap);
            if (!first || !second) throw Error("no feasible demonstration path");
            cells = first->cells;
            cells.insert(cells.end(), second->cells.begin() + 1, second->cells.end());
            cells = detail::remove_loops(cells);
        } else {
            auto direct = astar(g, sc.start_cell(), sc.goal_cell(), &costmap);
            if (!direct) throw Error("no feasible demonstration path");
            cells = std::move(direct->cells);
        }
        for (const auto& c : cells)
            for (int dj = -cfg.dilation; dj <= cfg.dilation; ++dj)
                for (int di = -cfg.dilation; di <= cfg.dilation; ++di) {
                    const Cell n{c.i + di, c.j + dj};
                    if (g.free(n)) y(n.i, n.j) = 1.0;
                }
        paths.push_back(std::move(cells));
    }
    return Demonstrations{LabelField(std::move(y)), std::move(paths)};
}

inline Trajectory cells_to_trajectory(const OccupancyGrid& g, const std::vector<Cell>& cells) {
    std::vector<Point> pts;
    pts.reserve(std::max<std::size_t>(cells.size(), 2));
    for (const auto& c : cells) pts.push_back(g.center(c));
    if (pts.size() == 1) pts.push_back(pts.front());
    return Trajectory(std::move(pts));
}

}  // namespace stepnav
