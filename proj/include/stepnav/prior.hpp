#pragma once

// Structured multi-modal trajectory priors extracted from a success field:
// energy graph, Yen's K shortest loopless paths, greedy max-min Hausdorff
// diversity selection and a softmax-weighted mixture over the survivors.

#include "stepnav/core.hpp"
#include "stepnav/env.hpp"
#include "stepnav/field.hpp"
#include "stepnav/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <queue>
#include <set>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

namespace stepnav::prior {

using field::SuccessField;

// Minimum per-meter traversal cost, so every graph edge weight is positive
// even where F + delta >= 1.
inline constexpr double kMinCellCost = 1e-6;

inline double traversal_cost(double f, double delta) {
    return std::max(-std::log(f + delta), kMinCellCost);
}

// Trapezoidal discretization of the path energy
// sum_k 0.5 * [-log(F(x_k) + d) - log(F(x_{k+1}) + d)] * |x_{k+1} - x_k|.
inline double path_energy(const Trajectory& tau, const SuccessField& field, double delta) {
    if (!(delta > 0.0)) throw Error("path energy floor delta must be positive");
    double total = 0.0;
    double prev = -std::log(field::query_field(field, tau[0]) + delta);
    for (std::size_t k = 0; k + 1 < tau.size(); ++k) {
        const double next = -std::log(field::query_field(field, tau[k + 1]) + delta);
        total += 0.5 * (prev + next) * (tau[k + 1] - tau[k]).norm();
        prev = next;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Graphs

// Directed graph in compressed sparse row form; arcs sorted by (source, target).
class WeightedGraph {
public:
    struct Arc {
        int from;
        int to;
        double weight;
    };

    WeightedGraph() = default;
    WeightedGraph(int nodes, std::vector<Arc> arcs) : nodes_(nodes) {
        if (nodes < 0) throw Error("graph node count must be non-negative");
        std::sort(arcs.begin(), arcs.end(), [](const Arc& a, const Arc& b) {
            return std::tie(a.from, a.to) < std::tie(b.from, b.to);
        });
        offsets_.assign(static_cast<std::size_t>(nodes) + 1, 0);
        for (const auto& a : arcs) {
            if (a.from < 0 || a.to < 0 || a.from >= nodes || a.to >= nodes)
                throw Error("arc endpoint out of range");
            if (!(a.weight > 0.0) || !std::isfinite(a.weight))
                throw Error("arc weights must be finite and positive");
            ++offsets_[static_cast<std::size_t>(a.from) + 1];
            targets_.push_back(a.to);
            weights_.push_back(a.weight);
        }
        std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
    }

    int nodes() const noexcept { return nodes_; }
    std::size_t arcs() const noexcept { return targets_.size(); }
    std::span<const int> targets(int u) const {
        return {targets_.data() + offsets_[u], targets_.data() + offsets_[u + 1]};
    }
    std::span<const double> weights(int u) const {
        return {weights_.data() + offsets_[u], weights_.data() + offsets_[u + 1]};
    }
    std::optional<double> weight(int u, int v) const {
        const auto t = targets(u);
        for (std::size_t k = 0; k < t.size(); ++k)
            if (t[k] == v) return weights(u)[k];
        return std::nullopt;
    }

private:
    int nodes_ = 0;
    std::vector<std::size_t> offsets_{0};
    std::vector<int> targets_;
    std::vector<double> weights_;
};

struct GraphPath {
    std::vector<int> nodes;
    double cost = 0.0;

    friend bool operator==(const GraphPath&, const GraphPath&) = default;
};

// Sum of arc weights in path order.
inline double path_cost(const WeightedGraph& g, const std::vector<int>& nodes) {
    double cost = 0.0;
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
        const auto w = g.weight(nodes[k], nodes[k + 1]);
        if (!w) throw Error("path uses a missing arc");
        cost += *w;
    }
    return cost;
}

// Dijkstra from `source` to `target`, skipping `blocked` nodes and the arcs
// source -> blocked_first_hops. Among equal-distance paths the
// lexicographically smallest node sequence wins; positive weights settle every
// tied predecessor before its successor.
inline std::optional<std::vector<int>> dijkstra(const WeightedGraph& g, int source, int target,
                                                const std::vector<std::uint8_t>& blocked,
                                                const std::vector<int>& blocked_first_hops = {}) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(static_cast<std::size_t>(g.nodes()), inf);
    std::vector<int> parent(static_cast<std::size_t>(g.nodes()), -1);
    std::vector<std::uint8_t> done(static_cast<std::size_t>(g.nodes()), 0);
    using Entry = std::pair<double, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
    auto trace = [&](int v) {
        std::vector<int> p;
        for (int at = v; at >= 0; at = parent[at]) p.push_back(at);
        std::reverse(p.begin(), p.end());
        return p;
    };
    dist[source] = 0.0;
    open.emplace(0.0, source);
    while (!open.empty()) {
        const auto [d, u] = open.top();
        open.pop();
        if (done[u]) continue;
        done[u] = 1;
        if (u == target) break;
        const auto ts = g.targets(u);
        const auto ws = g.weights(u);
        for (std::size_t k = 0; k < ts.size(); ++k) {
            const int v = ts[k];
            if (blocked[v] || done[v]) continue;
            if (u == source && std::find(blocked_first_hops.begin(), blocked_first_hops.end(), v) !=
                                   blocked_first_hops.end())
                continue;
            const double cand = d + ws[k];
            if (cand < dist[v]) {
                dist[v] = cand;
                parent[v] = u;
                open.emplace(cand, v);
            } else if (cand == dist[v] && u != parent[v]) {
                auto via_u = trace(u);
                via_u.push_back(v);
                if (via_u < trace(v)) parent[v] = u;
            }
        }
    }
    if (!done[target]) return std::nullopt;
    std::vector<int> path;
    for (int at = target; at >= 0; at = parent[at]) path.push_back(at);
    std::reverse(path.begin(), path.end());
    return path;
}

// Yen's algorithm: up to K loopless source-target paths in ascending cost,
// ties ordered lexicographically by node sequence. A disconnected pair yields
// an empty result.
inline std::vector<GraphPath> k_shortest_paths(const WeightedGraph& g, int source, int target, int K) {
    if (K < 1) throw Error("K must be at least 1");
    if (source == target) throw Error("source and target must differ");
    if (source < 0 || target < 0 || source >= g.nodes() || target >= g.nodes())
        throw Error("source/target out of range");
    std::vector<std::uint8_t> blocked(static_cast<std::size_t>(g.nodes()), 0);
    auto first = dijkstra(g, source, target, blocked);
    if (!first) return {};
    std::vector<GraphPath> accepted{GraphPath{*first, path_cost(g, *first)}};
    std::set<std::pair<double, std::vector<int>>> candidates;

    for (int k = 1; k < K; ++k) {
        const std::vector<int> prev = accepted.back().nodes;
        for (std::size_t i = 0; i + 1 < prev.size(); ++i) {
            const int spur = prev[i];
            std::vector<int> hops;
            for (const auto& p : accepted)
                if (p.nodes.size() > i + 1 && std::equal(prev.begin(), prev.begin() + i + 1, p.nodes.begin()))
                    hops.push_back(p.nodes[i + 1]);
            for (std::size_t r = 0; r < i; ++r) blocked[prev[r]] = 1;
            auto spur_path = dijkstra(g, spur, target, blocked, hops);
            for (std::size_t r = 0; r < i; ++r) blocked[prev[r]] = 0;
            if (!spur_path) continue;
            std::vector<int> total(prev.begin(), prev.begin() + i);
            total.insert(total.end(), spur_path->begin(), spur_path->end());
            const bool known = std::any_of(accepted.begin(), accepted.end(),
                                           [&](const GraphPath& p) { return p.nodes == total; });
            if (!known) candidates.emplace(path_cost(g, total), std::move(total));
        }
        if (candidates.empty()) break;
        auto best = candidates.begin();
        accepted.push_back(GraphPath{best->second, best->first});
        candidates.erase(best);
    }
    return accepted;
}

// Free cells as nodes, 8-connected arcs without corner cutting, weight
// 0.5 * [c(a) + c(b)] * |a - b| with c = -log(F + delta) floored at
// kMinCellCost.
struct EnergyGraph {
    WeightedGraph graph;
    std::vector<int> node_of_cell;  // -1 for occupied cells
    std::vector<Cell> cell_of_node;
    double delta = 0.0;

    int node(const Cell& c, const OccupancyGrid& g) const {
        return node_of_cell[g.index(c)];
    }
};

inline EnergyGraph build_energy_graph(const SuccessField& field, const OccupancyGrid& grid, double delta) {
    if (!(delta > 0.0)) throw Error("energy floor delta must be positive");
    if (field.width() != grid.width() || field.height() != grid.height())
        throw Error("field and grid dimensions differ");
    EnergyGraph eg;
    eg.delta = delta;
    eg.node_of_cell.assign(grid.size(), -1);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const Cell c = grid.cell(k);
        if (grid.occupied(c)) continue;
        eg.node_of_cell[k] = static_cast<int>(eg.cell_of_node.size());
        eg.cell_of_node.push_back(c);
    }
    if (eg.cell_of_node.empty()) throw Error("energy graph needs at least one free cell");
    std::vector<WeightedGraph::Arc> arcs;
    const double res = grid.resolution();
    for (std::size_t n = 0; n < eg.cell_of_node.size(); ++n) {
        const Cell c = eg.cell_of_node[n];
        const double ca = traversal_cost(field.clamped(c.i, c.j), delta);
        for (const auto& [di, dj] : detail::kMoves) {
            if (!detail::move_allowed(grid, c, di, dj)) continue;
            const Cell m{c.i + di, c.j + dj};
            const double cb = traversal_cost(field.clamped(m.i, m.j), delta);
            const double len = (di != 0 && dj != 0 ? std::sqrt(2.0) : 1.0) * res;
            arcs.push_back({static_cast<int>(n), eg.node_of_cell[grid.index(m)], 0.5 * (ca + cb) * len});
        }
    }
    eg.graph = WeightedGraph(static_cast<int>(eg.cell_of_node.size()), std::move(arcs));
    return eg;
}

inline Trajectory to_trajectory(const EnergyGraph& eg, const OccupancyGrid& grid, const GraphPath& path) {
    std::vector<Cell> cells;
    cells.reserve(path.nodes.size());
    for (int n : path.nodes) cells.push_back(eg.cell_of_node[static_cast<std::size_t>(n)]);
    return cells_to_trajectory(grid, cells);
}

// ---------------------------------------------------------------------------
// Diversity, scoring, mixture

// Greedy max-min Hausdorff selection. Seeds with the lowest-energy candidate
// (first index among ties), then repeatedly adds the candidate farthest from
// the chosen set. Zero-distance duplicates are never added.
inline std::vector<std::size_t> select_diverse(const std::vector<Trajectory>& candidates,
                                               const std::vector<double>& energies, std::size_t M) {
    if (M < 1) throw Error("M must be at least 1");
    if (candidates.empty()) throw Error("select_diverse needs candidates");
    if (energies.size() != candidates.size()) throw Error("one energy per candidate required");
    const std::size_t n = candidates.size();
    std::vector<std::size_t> chosen{static_cast<std::size_t>(
        std::min_element(energies.begin(), energies.end()) - energies.begin())};
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::vector<std::uint8_t> taken(n, 0);
    taken[chosen[0]] = 1;
    while (chosen.size() < M) {
        const std::size_t last = chosen.back();
        for (std::size_t c = 0; c < n; ++c)
            if (!taken[c]) nearest[c] = std::min(nearest[c], hausdorff(candidates[c], candidates[last]));
        std::size_t pick = n;
        double best = 0.0;
        for (std::size_t c = 0; c < n; ++c)
            if (!taken[c] && nearest[c] > best) best = nearest[c], pick = c;
        if (pick == n || best <= 1e-12) break;
        taken[pick] = 1;
        chosen.push_back(pick);
    }
    return chosen;
}

struct ScoreWeights {
    double alpha = 1.0;   // mean success probability
    double beta = 0.1;    // per meter of length
    double gamma = 0.05;  // squared curvature
};

// Discrete curvature: turning angle at each interior waypoint divided by the
// mean of its two adjacent segment lengths. Degenerate segments contribute 0.
inline double curvature_penalty(const Trajectory& tau) {
    double sum = 0.0;
    for (std::size_t k = 1; k + 1 < tau.size(); ++k) {
        const Point a = tau[k] - tau[k - 1], b = tau[k + 1] - tau[k];
        const double la = a.norm(), lb = b.norm();
        if (la <= 0.0 || lb <= 0.0) continue;
        const double angle = std::atan2(a.x() * b.y() - a.y() * b.x(), a.dot(b));
        const double kappa = angle / (0.5 * (la + lb));
        sum += kappa * kappa;
    }
    return sum;
}

inline double score_candidate(const Trajectory& tau, const SuccessField& field, const ScoreWeights& w = {}) {
    double mean_f = 0.0;
    for (const auto& p : tau.waypoints()) mean_f += field::query_field(field, p);
    mean_f /= static_cast<double>(tau.size());
    return w.alpha * mean_f - w.beta * tau.length() - w.gamma * curvature_penalty(tau);
}

inline Eigen::VectorXd softmax(const std::vector<double>& scores, double temperature) {
    if (!(temperature > 0.0)) throw Error("temperature must be positive");
    const double top = *std::max_element(scores.begin(), scores.end());
    Eigen::VectorXd w(static_cast<Eigen::Index>(scores.size()));
    for (std::size_t m = 0; m < scores.size(); ++m)
        w(static_cast<Eigen::Index>(m)) = std::exp((scores[m] - top) / temperature);
    return w / w.sum();
}

class MixturePrior {
public:
    MixturePrior(std::vector<Trajectory> candidates, std::vector<double> scores, double temperature)
        : candidates_(std::move(candidates)), scores_(std::move(scores)), temperature_(temperature) {
        if (candidates_.empty()) throw Error("mixture needs at least one component");
        if (scores_.size() != candidates_.size()) throw Error("one score per component required");
        const Eigen::VectorXd w = softmax(scores_, temperature_);
        weights_.assign(w.data(), w.data() + w.size());
    }

    std::size_t size() const noexcept { return candidates_.size(); }
    const std::vector<Trajectory>& candidates() const noexcept { return candidates_; }
    const std::vector<double>& weights() const noexcept { return weights_; }
    const std::vector<double>& scores() const noexcept { return scores_; }
    double temperature() const noexcept { return temperature_; }

private:
    std::vector<Trajectory> candidates_;
    std::vector<double> scores_;
    std::vector<double> weights_;
    double temperature_;
};

struct PriorConfig {
    int k_paths = 8;
    std::size_t mixture_size = 3;
    double temperature = 0.5;
    double delta = 1e-3;
    std::size_t waypoints = 16;
    ScoreWeights score;
};

// Resamples every path to `waypoints` points, keeps a diverse subset of at
// most M and weights it by softmax(S / T).
inline MixturePrior build_mixture(const std::vector<Trajectory>& paths, const std::vector<double>& energies,
                                  const SuccessField& field, double temperature, std::size_t M,
                                  std::size_t waypoints = 16, const ScoreWeights& weights = {}) {
    if (paths.empty()) throw Error("cannot build a mixture from an empty path set");
    std::vector<Trajectory> resampled;
    resampled.reserve(paths.size());
    for (const auto& p : paths) resampled.push_back(resample(p, waypoints));
    const auto chosen = select_diverse(resampled, energies, M);
    std::vector<Trajectory> comps;
    std::vector<double> scores;
    for (auto idx : chosen) {
        comps.push_back(resampled[idx]);
        scores.push_back(score_candidate(resampled[idx], field, weights));
    }
    return MixturePrior(std::move(comps), std::move(scores), temperature);
}

// Categorical draw over the mixture weights; returns an independent copy.
inline Trajectory sample_prior(const MixturePrior& prior, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t m = 0; m < prior.size(); ++m) {
        acc += prior.weights()[m];
        if (u < acc) return prior.candidates()[m];
    }
    return prior.candidates().back();
}

inline Trajectory sample_prior(const MixturePrior& prior, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x5A3);
    return sample_prior(prior, rng);
}

struct ExtractedPriors {
    std::vector<GraphPath> paths;        // raw graph paths in cost order
    std::vector<Trajectory> trajectories;  // cell-center polylines of `paths`
    std::vector<double> energies;
    MixturePrior mixture;
};

inline ExtractedPriors extract_priors(const SuccessField& field, const OccupancyGrid& grid,
                                      const Point& start, const Point& goal, const PriorConfig& cfg) {
    const auto eg = build_energy_graph(field, grid, cfg.delta);
    const int s = eg.node(grid.cell_of(start), grid);
    const int t = eg.node(grid.cell_of(goal), grid);
    if (s < 0 || t < 0) throw Error("start or goal is not a free cell");
    auto paths = k_shortest_paths(eg.graph, s, t, cfg.k_paths);
    if (paths.empty()) throw Error("start and goal are disconnected in the energy graph");
    std::vector<Trajectory> trajs;
    std::vector<double> energies;
    for (const auto& p : paths) {
        trajs.push_back(to_trajectory(eg, grid, p));
        energies.push_back(p.cost);
    }
    auto mixture = build_mixture(trajs, energies, field, cfg.temperature, cfg.mixture_size, cfg.waypoints,
                                 cfg.score);
    return ExtractedPriors{std::move(paths), std::move(trajs), std::move(energies), std::move(mixture)};
}

// ---------------------------------------------------------------------------
// Ablation initializations

// Local maxima of the clamped field at or above `threshold` (one per plateau),
// ordered by projection on the start-goal chord and joined by straight
// segments between the endpoints. Single-component mixture.
inline MixturePrior peaks_prior(const SuccessField& field, const OccupancyGrid& grid, const Point& start,
                                const Point& goal, std::size_t waypoints, double threshold = 0.8,
                                double temperature = 0.5, const ScoreWeights& weights = {}) {
    const Point chord = goal - start;
    const double chord2 = std::max(chord.squaredNorm(), 1e-12);
    std::vector<std::pair<double, Point>> peaks;
    for (int j = 0; j < field.height(); ++j)
        for (int i = 0; i < field.width(); ++i) {
            if (grid.occupied(i, j)) continue;
            const double f = field.clamped(i, j);
            if (f < threshold) continue;
            bool peak = true;
            for (const auto& [di, dj] : detail::kMoves) {
                const int ii = i + di, jj = j + dj;
                if (!grid.in_bounds(ii, jj)) continue;
                const double g = field.clamped(ii, jj);
                // plateau ties resolve to the lowest cell index
                if (g > f || (g == f && grid.index({ii, jj}) < grid.index({i, j}))) {
                    peak = false;
                    break;
                }
            }
            if (!peak) continue;
            const Point p = grid.center({i, j});
            const double s = (p - start).dot(chord) / chord2;
            if (s > 0.0 && s < 1.0) peaks.emplace_back(s, p);
        }
    std::sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) {
        return std::tie(a.first, a.second.x(), a.second.y()) < std::tie(b.first, b.second.x(), b.second.y());
    });
    std::vector<Point> pts{start};
    for (const auto& [s, p] : peaks) pts.push_back(p);
    pts.push_back(goal);
    Trajectory tau = resample(Trajectory(std::move(pts)), waypoints);
    const double score = score_candidate(tau, field, weights);
    return MixturePrior({std::move(tau)}, {score}, temperature);
}

// Straight start-goal line with isotropic normal noise on interior waypoints,
// endpoints pinned, waypoints clamped into the world bounds.
inline Trajectory gaussian_trajectory(const Point& start, const Point& goal, std::size_t waypoints,
                                      double sigma, const OccupancyGrid& grid, Rng& rng) {
    if (waypoints < 2) throw Error("gaussian trajectory needs at least two waypoints");
    std::normal_distribution<double> gauss(0.0, sigma);
    std::vector<Point> pts(waypoints);
    for (std::size_t k = 0; k < waypoints; ++k) {
        const double s = static_cast<double>(k) / static_cast<double>(waypoints - 1);
        pts[k] = start + s * (goal - start);
        if (k == 0 || k + 1 == waypoints) continue;
        pts[k] += Point(gauss(rng), gauss(rng));
        pts[k].x() = std::clamp(pts[k].x(), 0.0, grid.extent_x());
        pts[k].y() = std::clamp(pts[k].y(), 0.0, grid.extent_y());
    }
    pts.front() = start;
    pts.back() = goal;
    return Trajectory(std::move(pts));
}

}  // namespace stepnav::prior
