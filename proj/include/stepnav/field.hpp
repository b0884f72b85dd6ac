#pragma once

// Success-probability field as the minimizer of the discrete energy
//
//   E[F] = sum_cells (F - y)^2 + mu * sum_edges (F_a - F_b)^2 + nu * sum_cells (L F)^2
//
// where L is the 5-point graph Laplacian with Neumann (in-grid neighbors
// only) boundaries, in cell units, positive semidefinite. Occupied cells are
// pinned to F = 0. Stationarity over the free cells reads
//
//   (I + mu L + nu L^2)_ff F_f = y_f.

#include "stepnav/core.hpp"
#include "stepnav/env.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string_view>
#include <vector>

namespace stepnav::field {

enum class Solver { ConjugateGradient, Direct };

inline Solver parse_solver(std::string_view s) {
    if (s == "cg") return Solver::ConjugateGradient;
    if (s == "direct") return Solver::Direct;
    throw Error("unknown field solver: " + std::string(s));
}

struct FieldParams {
    double mu = 1.0;
    double nu = 0.05;
    Solver solver = Solver::ConjugateGradient;
    double tol = 1e-8;   // max-norm residual
    int max_iterations = 0;  // 0: 10 x unknowns
};

class SolverError : public Error {
public:
    SolverError(const std::string& what, double residual, int iterations)
        : Error(what), residual_(residual), iterations_(iterations) {}
    double residual() const noexcept { return residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    double residual_;
    int iterations_;
};

class SuccessField {
public:
    SuccessField(Grid2D<double> values, double mu, double nu, double resolution)
        : values_(std::move(values)), mu_(mu), nu_(nu), resolution_(resolution) {
        if (mu < 0.0 || nu < 0.0) throw Error("field weights must be non-negative");
        for (double v : values_.data())
            if (!std::isfinite(v)) throw Error("field values must be finite");
    }

    int width() const noexcept { return values_.width(); }
    int height() const noexcept { return values_.height(); }
    double mu() const noexcept { return mu_; }
    double nu() const noexcept { return nu_; }
    double resolution() const noexcept { return resolution_; }
    double raw(int i, int j) const { return values_(i, j); }
    double clamped(int i, int j) const { return std::clamp(values_(i, j), 0.0, 1.0); }
    const Grid2D<double>& raw_values() const noexcept { return values_; }

    Grid2D<double> clamped_values() const {
        Grid2D<double> out = values_;
        for (auto& v : out.data()) v = std::clamp(v, 0.0, 1.0);
        return out;
    }

private:
    Grid2D<double> values_;
    double mu_;
    double nu_;
    double resolution_;
};

struct SolveReport {
    int iterations = 0;
    double residual = 0.0;
};

// (L F)_c = sum over in-grid 4-neighbors n of (F_c - F_n).
inline void apply_laplacian(const Grid2D<double>& in, Grid2D<double>& out) {
    const int w = in.width(), h = in.height();
    for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i) {
            const double c = in(i, j);
            double acc = 0.0;
            if (i > 0) acc += c - in(i - 1, j);
            if (i + 1 < w) acc += c - in(i + 1, j);
            if (j > 0) acc += c - in(i, j - 1);
            if (j + 1 < h) acc += c - in(i, j + 1);
            out(i, j) = acc;
        }
}

// out = (I + mu L + nu L^2) in, over the whole grid.
inline void apply_stationarity(const Grid2D<double>& in, double mu, double nu, Grid2D<double>& out,
                               Grid2D<double>& scratch) {
    apply_laplacian(in, scratch);
    apply_laplacian(scratch, out);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = in[k] + mu * scratch[k] + nu * out[k];
}

namespace detail {

inline int degree(int i, int j, int w, int h) {
    return (i > 0) + (i + 1 < w) + (j > 0) + (j + 1 < h);
}

inline double free_residual(const Grid2D<double>& F, const LabelField& y, const OccupancyGrid& g,
                            double mu, double nu) {
    Grid2D<double> AF(F.width(), F.height()), scratch(F.width(), F.height());
    apply_stationarity(F, mu, nu, AF, scratch);
    double worst = 0.0;
    for (std::size_t k = 0; k < F.size(); ++k) {
        const Cell c = F.cell(k);
        if (g.occupied(c)) continue;
        worst = std::max(worst, std::abs(AF[k] - y(c.i, c.j)));
    }
    return worst;
}

}  // namespace detail

// Sparse (I + mu L + nu L^2) restricted to the free cells, in the order of
// `free_index` (cell index -> unknown index, -1 for occupied).
inline Eigen::SparseMatrix<double> assemble_free_system(const OccupancyGrid& g, double mu, double nu,
                                                        std::vector<int>& free_index) {
    const int w = g.width(), h = g.height();
    const auto n = static_cast<Eigen::Index>(g.size());
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(g.size() * 5);
    for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i) {
            const auto r = static_cast<Eigen::Index>(g.index({i, j}));
            trips.emplace_back(r, r, static_cast<double>(detail::degree(i, j, w, h)));
            auto link = [&](int ii, int jj) {
                trips.emplace_back(r, static_cast<Eigen::Index>(g.index({ii, jj})), -1.0);
            };
            if (i > 0) link(i - 1, j);
            if (i + 1 < w) link(i + 1, j);
            if (j > 0) link(i, j - 1);
            if (j + 1 < h) link(i, j + 1);
        }
    Eigen::SparseMatrix<double> L(n, n);
    L.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseMatrix<double> I(n, n);
    I.setIdentity();
    Eigen::SparseMatrix<double> A = I + mu * L + nu * (L * L);

    free_index.assign(g.size(), -1);
    std::vector<Eigen::Index> free_cells;
    for (std::size_t k = 0; k < g.size(); ++k)
        if (!g.occupied(g.cell(k))) {
            free_index[k] = static_cast<int>(free_cells.size());
            free_cells.push_back(static_cast<Eigen::Index>(k));
        }
    const auto m = static_cast<Eigen::Index>(free_cells.size());
    std::vector<Eigen::Triplet<double>> reduced;
    for (Eigen::Index col = 0; col < A.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(A, col); it; ++it) {
            const int r = free_index[static_cast<std::size_t>(it.row())];
            const int c = free_index[static_cast<std::size_t>(it.col())];
            if (r >= 0 && c >= 0) reduced.emplace_back(r, c, it.value());
        }
    Eigen::SparseMatrix<double> Aff(m, m);
    Aff.setFromTriplets(reduced.begin(), reduced.end());
    return Aff;
}

namespace detail {

inline Grid2D<double> solve_cg(const LabelField& y, const OccupancyGrid& g, const FieldParams& p,
                               SolveReport& report) {
    const int w = g.width(), h = g.height();
    const std::size_t n = g.size();
    std::vector<std::uint8_t> free_mask(n);
    std::size_t unknowns = 0;
    for (std::size_t k = 0; k < n; ++k) {
        free_mask[k] = g.occupied(g.cell(k)) ? 0 : 1;
        unknowns += free_mask[k];
    }
    Grid2D<double> x(w, h, 0.0), r(w, h, 0.0), z(w, h, 0.0), d(w, h, 0.0), Ad(w, h, 0.0),
        scratch(w, h, 0.0);
    Grid2D<double> diag(w, h, 1.0);
    for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i) {
            const double deg = degree(i, j, w, h);
            diag(i, j) = 1.0 + p.mu * deg + p.nu * (deg * deg + deg);
        }
    for (std::size_t k = 0; k < n; ++k) r[k] = free_mask[k] ? y.values()[k] : 0.0;
    auto masked_dot = [&](const Grid2D<double>& a, const Grid2D<double>& b) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (free_mask[k]) s += a[k] * b[k];
        return s;
    };
    auto max_abs = [&](const Grid2D<double>& a) {
        double m = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (free_mask[k]) m = std::max(m, std::abs(a[k]));
        return m;
    };
    for (std::size_t k = 0; k < n; ++k) z[k] = free_mask[k] ? r[k] / diag[k] : 0.0;
    d = z;
    double rz = masked_dot(r, z);
    const int cap = p.max_iterations > 0 ? p.max_iterations : static_cast<int>(10 * unknowns + 10);
    int it = 0;
    // Iterate slightly past the target so the recomputed true residual clears it.
    const double target = 0.1 * p.tol;
    while (max_abs(r) > target && it < cap) {
        apply_stationarity(d, p.mu, p.nu, Ad, scratch);
        for (std::size_t k = 0; k < n; ++k)
            if (!free_mask[k]) Ad[k] = 0.0;
        const double dAd = masked_dot(d, Ad);
        if (!(dAd > 0.0)) break;
        const double alpha = rz / dAd;
        for (std::size_t k = 0; k < n; ++k) {
            x[k] += alpha * d[k];
            r[k] -= alpha * Ad[k];
            z[k] = free_mask[k] ? r[k] / diag[k] : 0.0;
        }
        const double rz_next = masked_dot(r, z);
        const double beta = rz_next / rz;
        rz = rz_next;
        for (std::size_t k = 0; k < n; ++k) d[k] = z[k] + beta * d[k];
        ++it;
    }
    report.iterations = it;
    report.residual = free_residual(x, y, g, p.mu, p.nu);
    return x;
}

inline Grid2D<double> solve_direct(const LabelField& y, const OccupancyGrid& g, const FieldParams& p,
                                   SolveReport& report) {
    std::vector<int> free_index;
    const auto A = assemble_free_system(g, p.mu, p.nu, free_index);
    Eigen::VectorXd rhs(A.rows());
    for (std::size_t k = 0; k < g.size(); ++k)
        if (free_index[k] >= 0) rhs(free_index[k]) = y.values()[k];
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
    if (ldlt.info() != Eigen::Success) throw SolverError("sparse factorization failed", -1.0, 0);
    const Eigen::VectorXd sol = ldlt.solve(rhs);
    Grid2D<double> x(g.width(), g.height(), 0.0);
    for (std::size_t k = 0; k < g.size(); ++k)
        if (free_index[k] >= 0) x[k] = sol(free_index[k]);
    report.iterations = 1;
    report.residual = free_residual(x, y, g, p.mu, p.nu);
    return x;
}

}  // namespace detail

inline SuccessField solve_field(const LabelField& labels, const OccupancyGrid& grid,
                                const FieldParams& params, SolveReport* report = nullptr) {
    if (params.mu < 0.0 || params.nu < 0.0) throw Error("field weights must be non-negative");
    if (labels.width() != grid.width() || labels.height() != grid.height())
        throw Error("label field and grid dimensions differ");
    SolveReport local;
    Grid2D<double> values = params.solver == Solver::Direct
                                ? detail::solve_direct(labels, grid, params, local)
                                : detail::solve_cg(labels, grid, params, local);
    if (!(local.residual <= params.tol)) {
        std::ostringstream msg;
        msg << "field solver did not converge: residual " << local.residual << " after "
            << local.iterations << " iterations";
        throw SolverError(msg.str(), local.residual, local.iterations);
    }
    if (report) *report = local;
    return SuccessField(std::move(values), params.mu, params.nu, grid.resolution());
}

inline SuccessField solve_field(const LabelField& labels, const OccupancyGrid& grid, double mu,
                                double nu) {
    FieldParams p;
    p.mu = mu;
    p.nu = nu;
    return solve_field(labels, grid, p);
}

// Bilinear interpolation of the clamped cell-center values.
inline double query_field(const SuccessField& field, const Point& p) {
    const double ex = field.width() * field.resolution(), ey = field.height() * field.resolution();
    if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= ex && p.y() <= ey))
        throw Error("field query outside grid bounds");
    // Clamping per cell keeps the interpolant inside [0, 1].
    const double u = std::clamp(p.x() / field.resolution() - 0.5, 0.0, field.width() - 1.0);
    const double v = std::clamp(p.y() / field.resolution() - 0.5, 0.0, field.height() - 1.0);
    const int i0 = std::min(static_cast<int>(u), std::max(field.width() - 2, 0));
    const int j0 = std::min(static_cast<int>(v), std::max(field.height() - 2, 0));
    const int i1 = std::min(i0 + 1, field.width() - 1), j1 = std::min(j0 + 1, field.height() - 1);
    const double fx = u - i0, fy = v - j0;
    return (1 - fx) * (1 - fy) * field.clamped(i0, j0) + fx * (1 - fy) * field.clamped(i1, j0) +
           (1 - fx) * fy * field.clamped(i0, j1) + fx * fy * field.clamped(i1, j1);
}

inline double field_energy(const Grid2D<double>& F, const LabelField& labels, double mu, double nu) {
    if (F.width() != labels.width() || F.height() != labels.height())
        throw Error("field and label dimensions differ");
    const int w = F.width(), h = F.height();
    double fit = 0.0, grad = 0.0, curv = 0.0;
    for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i) {
            const double e = F(i, j) - labels(i, j);
            fit += e * e;
            if (i + 1 < w) grad += (F(i + 1, j) - F(i, j)) * (F(i + 1, j) - F(i, j));
            if (j + 1 < h) grad += (F(i, j + 1) - F(i, j)) * (F(i, j + 1) - F(i, j));
        }
    if (nu != 0.0) {
        Grid2D<double> LF(w, h);
        apply_laplacian(F, LF);
        for (double v : LF.data()) curv += v * v;
    }
    return fit + mu * grad + nu * curv;
}

inline double field_energy(const SuccessField& field, const LabelField& labels) {
    return field_energy(field.raw_values(), labels, field.mu(), field.nu());
}

// Total variation over 4-neighbor edges.
inline double total_variation(const Grid2D<double>& F) {
    double tv = 0.0;
    for (int j = 0; j < F.height(); ++j)
        for (int i = 0; i < F.width(); ++i) {
            if (i + 1 < F.width()) tv += std::abs(F(i + 1, j) - F(i, j));
            if (j + 1 < F.height()) tv += std::abs(F(i, j + 1) - F(i, j));
        }
    return tv;
}

// Optional per-cell linear head y(x) ~ a_x . [z_c; 1] fitted by ridge
// regression across scenes that share a grid shape. Exercises the feature
// conditioning path; the variational solve remains the normative field.
class FeatureHead {
public:
    static FeatureHead fit(const std::vector<Eigen::VectorXd>& contexts,
                           const std::vector<const LabelField*>& labels, double ridge = 1e-6) {
        if (contexts.empty() || contexts.size() != labels.size())
            throw Error("feature head needs matching, nonempty training sets");
        const auto D = contexts.front().size();
        const auto S = static_cast<Eigen::Index>(contexts.size());
        const int w = labels.front()->width(), h = labels.front()->height();
        Eigen::MatrixXd X(S, D + 1);
        Eigen::MatrixXd Y(S, static_cast<Eigen::Index>(w) * h);
        for (Eigen::Index s = 0; s < S; ++s) {
            if (contexts[s].size() != D) throw Error("feature head context dimension mismatch");
            if (labels[s]->width() != w || labels[s]->height() != h)
                throw Error("feature head label shapes differ");
            X.row(s) << contexts[s].transpose(), 1.0;
            for (std::size_t k = 0; k < labels[s]->values().size(); ++k)
                Y(s, static_cast<Eigen::Index>(k)) = labels[s]->values()[k];
        }
        const Eigen::MatrixXd gram =
            X.transpose() * X + ridge * Eigen::MatrixXd::Identity(D + 1, D + 1);
        FeatureHead head;
        head.width_ = w;
        head.height_ = h;
        head.coef_ = gram.ldlt().solve(X.transpose() * Y);
        return head;
    }

    LabelField predict(const Eigen::VectorXd& zc) const {
        if (zc.size() + 1 != coef_.rows()) throw Error("feature head context dimension mismatch");
        Eigen::VectorXd x(zc.size() + 1);
        x << zc, 1.0;
        const Eigen::VectorXd y = coef_.transpose() * x;
        return LabelField(Grid2D<double>(width_, height_, std::vector<double>(y.data(), y.data() + y.size())));
    }

    const Eigen::MatrixXd& coefficients() const noexcept { return coef_; }

private:
    int width_ = 0;
    int height_ = 0;
    Eigen::MatrixXd coef_;
};

}  // namespace stepnav::field
