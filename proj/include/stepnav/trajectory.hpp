#pragma once

#include "stepnav/core.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace stepnav {

// Ordered waypoints in the plane (meters). At least two waypoints, all finite.
// Endpoint agreement with a scenario's start/goal is checked by the consumer.
class Trajectory {
public:
    explicit Trajectory(std::vector<Point> waypoints) : waypoints_(std::move(waypoints)) {
        if (waypoints_.size() < 2) throw Error("trajectory needs at least two waypoints");
        for (const auto& p : waypoints_)
            if (!p.allFinite()) throw Error("trajectory waypoint is not finite");
    }

    // Interleaved (x0, y0, x1, y1, ...) layout.
    static Trajectory from_flat(const Eigen::VectorXd& flat) {
        if (flat.size() % 2 != 0) throw Error("flat trajectory must have even length");
        std::vector<Point> pts(static_cast<std::size_t>(flat.size() / 2));
        for (std::size_t k = 0; k < pts.size(); ++k)
            pts[k] = Point(flat(2 * static_cast<Eigen::Index>(k)),
                           flat(2 * static_cast<Eigen::Index>(k) + 1));
        return Trajectory(std::move(pts));
    }

    Eigen::VectorXd flat() const {
        Eigen::VectorXd out(2 * static_cast<Eigen::Index>(waypoints_.size()));
        for (std::size_t k = 0; k < waypoints_.size(); ++k) {
            out(2 * static_cast<Eigen::Index>(k)) = waypoints_[k].x();
            out(2 * static_cast<Eigen::Index>(k) + 1) = waypoints_[k].y();
        }
        return out;
    }

    std::size_t size() const noexcept { return waypoints_.size(); }
    const Point& operator[](std::size_t k) const { return waypoints_[k]; }
    const Point& front() const { return waypoints_.front(); }
    const Point& back() const { return waypoints_.back(); }
    const std::vector<Point>& waypoints() const noexcept { return waypoints_; }

    double length() const {
        double total = 0.0;
        for (std::size_t k = 0; k + 1 < waypoints_.size(); ++k)
            total += (waypoints_[k + 1] - waypoints_[k]).norm();
        return total;
    }

    bool endpoints_match(const Point& start, const Point& goal, double tol = 1e-9) const {
        return (front() - start).norm() <= tol && (back() - goal).norm() <= tol;
    }

    friend bool operator==(const Trajectory& a, const Trajectory& b) {
        return a.waypoints_ == b.waypoints_;
    }

private:
    std::vector<Point> waypoints_;
};

// Point at arc length s along the polyline (clamped to [0, length]).
inline Point point_at_arclength(const Trajectory& tau, double s) {
    if (s <= 0.0) return tau.front();
    for (std::size_t k = 0; k + 1 < tau.size(); ++k) {
        const double seg = (tau[k + 1] - tau[k]).norm();
        if (s <= seg && seg > 0.0) return tau[k] + (s / seg) * (tau[k + 1] - tau[k]);
        s -= seg;
    }
    return tau.back();
}

// Arc-length resampling to `count` equally spaced points; endpoints preserved
// exactly.
inline Trajectory resample(const Trajectory& tau, std::size_t count) {
    if (count < 2) throw Error("resample needs at least two points");
    std::vector<double> cum(tau.size(), 0.0);
    for (std::size_t k = 1; k < tau.size(); ++k) cum[k] = cum[k - 1] + (tau[k] - tau[k - 1]).norm();
    const double total = cum.back();
    std::vector<Point> out(count);
    out.front() = tau.front();
    out.back() = tau.back();
    std::size_t seg = 0;
    for (std::size_t m = 1; m + 1 < count; ++m) {
        const double s = total * static_cast<double>(m) / static_cast<double>(count - 1);
        while (seg + 2 < tau.size() && cum[seg + 1] < s) ++seg;
        const double len = cum[seg + 1] - cum[seg];
        const double f = len > 0.0 ? std::clamp((s - cum[seg]) / len, 0.0, 1.0) : 0.0;
        out[m] = tau[seg] + f * (tau[seg + 1] - tau[seg]);
    }
    return Trajectory(std::move(out));
}

// Symmetric discrete Hausdorff distance between the two waypoint sets.
inline double hausdorff(const Trajectory& a, const Trajectory& b) {
    auto directed = [](const Trajectory& p, const Trajectory& q) {
        double worst = 0.0;
        for (const auto& x : p.waypoints()) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& y : q.waypoints()) best = std::min(best, (x - y).squaredNorm());
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::sqrt(std::max(directed(a, b), directed(b, a)));
}

}  // namespace stepnav
