#pragma once

// Independent reference implementations used as test oracles.

#include "stepnav/env.hpp"
#include "stepnav/trajectory.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <random>
#include <utility>
#include <vector>

namespace stepnav::oracle {

// O(n^2) distance from every cell center to the nearest occupied center.
inline Grid2D<double> brute_distance(const OccupancyGrid& g) {
    Grid2D<double> d(g.width(), g.height(), std::numeric_limits<double>::infinity());
    for (int j = 0; j < g.height(); ++j)
        for (int i = 0; i < g.width(); ++i)
            for (int jj = 0; jj < g.height(); ++jj)
                for (int ii = 0; ii < g.width(); ++ii)
                    if (g.occupied(ii, jj))
                        d(i, j) = std::min(d(i, j), std::hypot(i - ii, j - jj) * g.resolution());
    return d;
}

inline OccupancyGrid random_grid(int w, int h, double density, std::mt19937_64& rng, double res = 0.1) {
    std::bernoulli_distribution occ(density);
    std::vector<std::uint8_t> cells(static_cast<std::size_t>(w * h));
    for (auto& c : cells) c = occ(rng) ? 1 : 0;
    return OccupancyGrid(w, h, res, std::move(cells));
}

// Dense 4-neighbor graph Laplacian with free boundary, built cell by cell.
inline Eigen::MatrixXd dense_laplacian(int w, int h) {
    const int n = w * h;
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    auto id = [w](int i, int j) { return j * w + i; };
    for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i) {
            const int neighbors[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
            for (const auto& nb : neighbors) {
                if (nb[0] < 0 || nb[1] < 0 || nb[0] >= w || nb[1] >= h) continue;
                L(id(i, j), id(i, j)) += 1.0;
                L(id(i, j), id(nb[0], nb[1])) -= 1.0;
            }
        }
    return L;
}

// Minimizer of |F - y|^2 + mu |grad F|^2 + nu |L F|^2 with occupied cells held at
// zero, by a dense solve of the reduced normal equations.
inline Eigen::VectorXd dense_field(const OccupancyGrid& g, const Eigen::VectorXd& y, double mu, double nu) {
    const int n = g.width() * g.height();
    const Eigen::MatrixXd L = dense_laplacian(g.width(), g.height());
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) + mu * L + nu * L.transpose() * L;
    std::vector<int> free;
    for (int k = 0; k < n; ++k)
        if (!g.occupied(k % g.width(), k / g.width())) free.push_back(k);
    const auto m = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd Af(m, m);
    Eigen::VectorXd bf(m);
    for (Eigen::Index r = 0; r < m; ++r) {
        bf(r) = y(free[r]);
        for (Eigen::Index c = 0; c < m; ++c) Af(r, c) = A(free[r], free[c]);
    }
    const Eigen::VectorXd xf = Af.fullPivLu().solve(bf);
    Eigen::VectorXd F = Eigen::VectorXd::Zero(n);
    for (Eigen::Index r = 0; r < m; ++r) F(free[r]) = xf(r);
    return F;
}

// Plain gradient descent on |X - Z|^2 + |D X|^2 + |X - 1 zc^T|^2, D the
// second-difference operator with one-sided ends.
inline Eigen::MatrixXd difp_descent(const Eigen::MatrixXd& Z, const Eigen::VectorXd& zc, int max_iter = 200000) {
    const Eigen::Index T = Z.rows();
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(T, T);
    for (Eigen::Index t = 0; t < T; ++t) {
        if (t > 0) D(t, t) += 1, D(t, t - 1) -= 1;
        if (t + 1 < T) D(t, t) += 1, D(t, t + 1) -= 1;
    }
    const Eigen::MatrixXd anchor = Eigen::VectorXd::Ones(T) * zc.transpose();
    const double lip = 2.0 * (2.0 + std::pow(D.operatorNorm(), 2));
    const double step = 1.0 / lip;
    Eigen::MatrixXd X = Z;
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::MatrixXd grad = 2.0 * (X - Z) + 2.0 * D.transpose() * D * X + 2.0 * (X - anchor);
        X -= step * grad;
        if (grad.cwiseAbs().maxCoeff() < 1e-13) break;
    }
    return X;
}

struct SimplePath {
    std::vector<int> nodes;
    double cost;
};

// Every simple s-t path of a dense weight matrix (NaN for no arc), ordered by
// (cost, node sequence).
inline std::vector<SimplePath> enumerate_paths(const std::vector<std::vector<double>>& w, int s, int t) {
    const int n = static_cast<int>(w.size());
    std::vector<SimplePath> out;
    std::vector<int> stack{s};
    std::vector<bool> on(static_cast<std::size_t>(n), false);
    on[static_cast<std::size_t>(s)] = true;
    std::function<void(double)> dfs = [&](double cost) {
        const int u = stack.back();
        if (u == t) {
            out.push_back({stack, cost});
            return;
        }
        for (int v = 0; v < n; ++v) {
            if (std::isnan(w[u][v]) || on[static_cast<std::size_t>(v)]) continue;
            on[static_cast<std::size_t>(v)] = true;
            stack.push_back(v);
            dfs(cost + w[u][v]);
            stack.pop_back();
            on[static_cast<std::size_t>(v)] = false;
        }
    };
    dfs(0.0);
    std::sort(out.begin(), out.end(), [](const SimplePath& a, const SimplePath& b) {
        return std::tie(a.cost, a.nodes) < std::tie(b.cost, b.nodes);
    });
    return out;
}

inline double brute_hausdorff(const Trajectory& a, const Trajectory& b) {
    auto directed = [](const Trajectory& p, const Trajectory& q) {
        double worst = 0.0;
        for (const auto& x : p.waypoints()) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& y : q.waypoints()) best = std::min(best, (x - y).norm());
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

// Occupied components that do not touch the grid border, each as a list of cells.
inline std::vector<std::vector<Cell>> interior_obstacles(const OccupancyGrid& g) {
    std::vector<int> label(g.size(), -1);
    std::vector<std::vector<Cell>> comps;
    std::vector<bool> touches;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const Cell c0 = g.cell(k);
        if (!g.occupied(c0) || label[k] >= 0) continue;
        const int id = static_cast<int>(comps.size());
        comps.emplace_back();
        touches.push_back(false);
        std::queue<Cell> q;
        q.push(c0);
        label[k] = id;
        while (!q.empty()) {
            const Cell c = q.front();
            q.pop();
            comps.back().push_back(c);
            if (c.i == 0 || c.j == 0 || c.i == g.width() - 1 || c.j == g.height() - 1) touches.back() = true;
            for (int dj = -1; dj <= 1; ++dj)
                for (int di = -1; di <= 1; ++di) {
                    const Cell m{c.i + di, c.j + dj};
                    if (!g.in_bounds(m.i, m.j) || !g.occupied(m)) continue;
                    auto& l = label[g.index(m)];
                    if (l < 0) l = id, q.push(m);
                }
        }
    }
    std::vector<std::vector<Cell>> inner;
    for (std::size_t c = 0; c < comps.size(); ++c)
        if (!touches[c]) inner.push_back(std::move(comps[c]));
    return inner;
}

// Side (-1 left, +1 right, 0 undetermined) on which a cell path passes the
// largest interior obstacle.
inline int passing_side(const OccupancyGrid& g, const std::vector<Cell>& path) {
    auto islands = interior_obstacles(g);
    if (islands.empty()) return 0;
    const auto& island = *std::max_element(islands.begin(), islands.end(),
                                           [](const auto& a, const auto& b) { return a.size() < b.size(); });
    int jmin = g.height(), jmax = -1, imin = g.width(), imax = -1;
    for (const auto& c : island) {
        jmin = std::min(jmin, c.j), jmax = std::max(jmax, c.j);
        imin = std::min(imin, c.i), imax = std::max(imax, c.i);
    }
    bool left = false, right = false;
    for (const auto& c : path) {
        if (c.j < jmin || c.j > jmax) continue;
        left |= c.i < imin;
        right |= c.i > imax;
    }
    if (left == right) return 0;
    return left ? -1 : 1;
}

// Central finite difference of f along every coordinate of x.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-6) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd y = x;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        y(k) = x(k) + h;
        const double fp = f(y);
        y(k) = x(k) - h;
        const double fm = f(y);
        y(k) = x(k);
        g(k) = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double scale = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / scale;
}

}  // namespace stepnav::oracle
