#pragma once

// Temporal feature refinement by closed-form projection.
//
// A T x D feature history Z (one row per frame) is pulled toward a smooth
// sequence and toward a motion-weighted context vector z_c by minimizing
//
//   |Z' - Z|^2 + |L Z'|^2 + |Z' - 1 z_c^T|^2
//
// whose stationarity condition is (2I + L^T L) Z' = Z + 1 z_c^T. z_c is
// computed from the raw input before the solve.

#include "stepnav/core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <optional>

namespace stepnav::difp {

class FeatureSequence {
public:
    explicit FeatureSequence(Eigen::MatrixXd frames) : frames_(std::move(frames)) {
        if (frames_.rows() < 1 || frames_.cols() < 1)
            throw Error("feature sequence needs T >= 1 frames and D >= 1 features");
        if (!frames_.allFinite()) throw Error("feature sequence contains non-finite entries");
    }

    Eigen::Index frames() const noexcept { return frames_.rows(); }
    Eigen::Index dim() const noexcept { return frames_.cols(); }
    const Eigen::MatrixXd& matrix() const noexcept { return frames_; }

private:
    Eigen::MatrixXd frames_;
};

// How per-frame saliency v_t is derived before the softmax.
enum class Saliency {
    FeatureVelocity,  // v_t = |z_t - z_{t-1}|, v_1 = 0
    Uniform,          // v_t = 0
};

struct Context {
    Eigen::VectorXd zc;       // D
    Eigen::VectorXd weights;  // T, positive, sums to one
};

struct RefinedFeatures {
    Eigen::MatrixXd refined;  // T x D
    Eigen::VectorXd zc;
    Eigen::VectorXd weights;  // T entries, or T + 1 when a goal frame was appended
};

struct RefineOptions {
    Saliency saliency = Saliency::FeatureVelocity;
    // When set, appended as an extra frame for the context computation only.
    std::optional<Eigen::VectorXd> goal_feature;
};

// Second-difference operator with one-sided (Neumann) end rows; L * 1 = 0.
inline Eigen::MatrixXd temporal_laplacian(Eigen::Index frames) {
    if (frames < 1) throw Error("temporal laplacian needs T >= 1");
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(frames, frames);
    if (frames == 1) return L;
    for (Eigen::Index t = 0; t < frames; ++t) {
        if (t > 0) {
            L(t, t - 1) -= 1.0;
            L(t, t) += 1.0;
        }
        if (t + 1 < frames) {
            L(t, t + 1) -= 1.0;
            L(t, t) += 1.0;
        }
    }
    return L;
}

inline Context context_vector(const Eigen::MatrixXd& Z, Saliency saliency = Saliency::FeatureVelocity) {
    const Eigen::Index T = Z.rows();
    if (T < 1) throw Error("context vector needs T >= 1");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(T);
    if (saliency == Saliency::FeatureVelocity)
        for (Eigen::Index t = 1; t < T; ++t) v(t) = (Z.row(t) - Z.row(t - 1)).norm();
    const double vmax = v.maxCoeff();
    Eigen::VectorXd w = (v.array() - vmax).exp();
    w /= w.sum();
    // Weighted offsets from the first frame, so a constant sequence gives z_1 exactly.
    const Eigen::MatrixXd offsets = Z.rowwise() - Z.row(0);
    return Context{Z.row(0).transpose() + offsets.transpose() * w, std::move(w)};
}

inline Context context_vector(const FeatureSequence& Z, Saliency saliency = Saliency::FeatureVelocity) {
    return context_vector(Z.matrix(), saliency);
}

inline double projection_objective(const Eigen::MatrixXd& candidate, const Eigen::MatrixXd& Z,
                                   const Eigen::VectorXd& zc) {
    const Eigen::MatrixXd L = temporal_laplacian(Z.rows());
    const Eigen::MatrixXd anchor = Eigen::VectorXd::Ones(Z.rows()) * zc.transpose();
    return (candidate - Z).squaredNorm() + (L * candidate).squaredNorm() +
           (candidate - anchor).squaredNorm();
}

inline RefinedFeatures refine(const FeatureSequence& Z, const RefineOptions& options = {}) {
    const Eigen::Index T = Z.frames();
    Context ctx;
    if (options.goal_feature) {
        if (options.goal_feature->size() != Z.dim()) throw Error("goal feature dimension mismatch");
        if (!options.goal_feature->allFinite()) throw Error("goal feature is not finite");
        Eigen::MatrixXd with_goal(T + 1, Z.dim());
        with_goal << Z.matrix(), options.goal_feature->transpose();
        ctx = context_vector(with_goal, options.saliency);
    } else {
        ctx = context_vector(Z.matrix(), options.saliency);
    }
    const Eigen::MatrixXd L = temporal_laplacian(T);
    const Eigen::MatrixXd system = 2.0 * Eigen::MatrixXd::Identity(T, T) + L.transpose() * L;
    // The anchor row solves the system for rhs 2 z_c, so only the offset Z - z_c is solved for.
    const Eigen::MatrixXd anchor = Eigen::VectorXd::Ones(T) * ctx.zc.transpose();
    Eigen::MatrixXd refined = anchor + system.ldlt().solve(Z.matrix() - anchor);
    if (!refined.allFinite()) throw Error("feature refinement produced non-finite values");
    return RefinedFeatures{std::move(refined), std::move(ctx.zc), std::move(ctx.weights)};
}

}  // namespace stepnav::difp
