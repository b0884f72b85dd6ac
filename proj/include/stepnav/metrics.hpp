#pragma once

// Episode execution and the navigation metrics: success rate, SPL,
// collision rate and minimum snap.

#include "stepnav/core.hpp"
#include "stepnav/env.hpp"
#include "stepnav/trajectory.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <vector>

namespace stepnav::metrics {

struct EpisodeConfig {
    double step_length = 0.05;     // meters per follower step
    int max_steps = 500;
    double goal_tolerance = 0.2;   // meters
    double nominal_speed = 0.5;    // m/s, time axis for minimum snap
};

struct EpisodeResult {
    bool success = false;
    double executed_length = 0.0;  // P
    double shortest_length = 0.0;  // L
    bool collided = false;
    int steps = 0;
    double terminal_distance = 0.0;
    double ms = 0.0;               // minimum snap of the commanded trajectory
    Trajectory trajectory;

    double spl() const {
        if (!(shortest_length > 0.0)) throw Error("shortest path length must be positive");
        return success ? shortest_length / std::max(executed_length, shortest_length) : 0.0;
    }
};

inline double spl(std::span<const EpisodeResult> episodes) {
    if (episodes.empty()) throw Error("spl needs at least one episode");
    double sum = 0.0;
    for (const auto& e : episodes) sum += e.spl();
    return sum / static_cast<double>(episodes.size());
}

// Integral of the squared snap over the whole time span (K - 1) dt: central
// fourth differences / dt^4, squared and summed over axes, averaged over the
// K - 4 interior stencils and multiplied by the span.
inline double minimum_snap(const Trajectory& tau, double dt) {
    const std::size_t K = tau.size();
    if (K < 5) throw Error("minimum snap needs at least five waypoints");
    if (!(dt > 0.0)) throw Error("minimum snap needs dt > 0");
    const double dt4 = dt * dt * dt * dt;
    double sum = 0.0;
    for (std::size_t k = 2; k + 2 < K; ++k) {
        const Point d4 = (tau[k - 2] - 4.0 * tau[k - 1] + 6.0 * tau[k] - 4.0 * tau[k + 1] + tau[k + 2]) / dt4;
        sum += d4.squaredNorm();
    }
    return static_cast<double>(K - 1) * dt * sum / static_cast<double>(K - 4);
}

// Uniform time step for a trajectory traversed at `speed`.
inline double snap_time_step(const Trajectory& tau, double speed = 0.5) {
    if (!(speed > 0.0)) throw Error("nominal speed must be positive");
    const double dt = tau.length() / static_cast<double>(tau.size() - 1) / speed;
    return dt > 0.0 ? dt : 1.0;
}

inline double minimum_snap(const Trajectory& tau) { return minimum_snap(tau, snap_time_step(tau)); }

// Length of the 8-connected grid shortest path between start and goal cells.
inline double shortest_path_length(const Scenario& sc) {
    const auto path = astar(sc.grid, sc.start_cell(), sc.goal_cell());
    if (!path) throw Error("scenario start and goal are disconnected");
    return path->length > 0.0 ? path->length : sc.grid.resolution();
}

// Point follower: advances along the polyline by `step_length` per step;
// every step segment is checked exactly against the grid. Stops on
// collision, at the last waypoint, or after `max_steps` steps.
inline EpisodeResult evaluate_episode(const Scenario& sc, const Trajectory& tau, const EpisodeConfig& cfg = {},
                                      std::optional<double> shortest = std::nullopt) {
    if (!(cfg.step_length > 0.0) || cfg.max_steps < 1) throw Error("invalid episode configuration");
    const double L = shortest ? *shortest : shortest_path_length(sc);
    Point pos = tau.front();
    bool collided = !sc.grid.in_bounds(pos) || sc.grid.occupied(sc.grid.cell_of(pos));
    double executed = 0.0;
    int steps = 0;
    std::size_t seg = 0;
    double along = 0.0;  // distance already covered on segment `seg`
    while (!collided && seg + 1 < tau.size() && steps < cfg.max_steps) {
        double budget = cfg.step_length;
        Point next = pos;
        while (budget > 0.0 && seg + 1 < tau.size()) {
            const double len = (tau[seg + 1] - tau[seg]).norm();
            const double left = len - along;
            if (left <= budget) {
                budget -= left;
                next = tau[seg + 1];
                ++seg;
                along = 0.0;
            } else {
                along += budget;
                next = tau[seg] + (along / len) * (tau[seg + 1] - tau[seg]);
                budget = 0.0;
            }
        }
        ++steps;
        if (auto hit = first_blocked(sc.grid, pos, next)) {
            executed += *hit * (next - pos).norm();
            collided = true;
            break;
        }
        executed += (next - pos).norm();
        pos = next;
    }
    const double terminal = (pos - sc.goal).norm();
    EpisodeResult r{.success = !collided && terminal <= cfg.goal_tolerance && steps <= cfg.max_steps,
                    .executed_length = executed,
                    .shortest_length = L,
                    .collided = collided,
                    .steps = steps,
                    .terminal_distance = terminal,
                    .ms = tau.size() >= 5 ? minimum_snap(tau, snap_time_step(tau, cfg.nominal_speed)) : 0.0,
                    .trajectory = tau};
    return r;
}

struct Stat {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for one sample
};

inline Stat mean_std(std::span<const double> xs) {
    if (xs.empty()) throw Error("statistics need at least one value");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0};
}

struct MetricsReport {
    Stat sr;              // percent
    Stat spl;
    Stat collision_rate;  // percent
    Stat ms;
    std::size_t episodes = 0;
    std::vector<EpisodeResult> records;
};

struct AggregateOptions {
    bool ms_successes_only = false;
};

inline MetricsReport aggregate(std::vector<EpisodeResult> episodes, const AggregateOptions& opt = {}) {
    if (episodes.empty()) throw Error("aggregate needs at least one episode");
    std::vector<double> sr, spl_v, coll, ms;
    for (const auto& e : episodes) {
        sr.push_back(e.success ? 100.0 : 0.0);
        spl_v.push_back(e.spl());
        coll.push_back(e.collided ? 100.0 : 0.0);
        if (!opt.ms_successes_only || e.success) ms.push_back(e.ms);
    }
    MetricsReport r;
    r.sr = mean_std(sr);
    r.spl = mean_std(spl_v);
    r.collision_rate = mean_std(coll);
    if (!ms.empty()) r.ms = mean_std(ms);
    r.episodes = episodes.size();
    r.records = std::move(episodes);
    return r;
}

}  // namespace stepnav::metrics
