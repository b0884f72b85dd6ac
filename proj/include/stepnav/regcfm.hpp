#pragma once

// Regularized conditional flow matching over fixed-length waypoint
// trajectories: a small tanh MLP velocity field, the FM + jerk + barrier
// loss with analytic gradients, Adam training and Euler refinement.

#include "stepnav/core.hpp"
#include "stepnav/env.hpp"
#include "stepnav/field.hpp"
#include "stepnav/trajectory.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace stepnav::regcfm {

// ---------------------------------------------------------------------------
// Clearance map used by the barrier

class DistanceMap {
public:
    DistanceMap(Grid2D<double> meters, double resolution)
        : values_(std::move(meters)), resolution_(resolution) {
        if (!(resolution_ > 0.0)) throw Error("distance map resolution must be positive");
        const double cap = std::hypot(values_.width(), values_.height()) * resolution_;
        for (auto& v : values_.data()) {
            if (std::isnan(v) || v < 0.0) throw Error("distance map values must be non-negative");
            v = std::min(v, cap);
        }
    }

    // Euclidean distance transform of the grid (meters).
    static DistanceMap from_grid(const OccupancyGrid& g) {
        return DistanceMap(distance_transform(g), g.resolution());
    }

    // 1 - F variant, read literally as a distance.
    static DistanceMap from_field(const field::SuccessField& f) {
        Grid2D<double> d(f.width(), f.height(), 0.0);
        for (int j = 0; j < f.height(); ++j)
            for (int i = 0; i < f.width(); ++i) d(i, j) = 1.0 - f.clamped(i, j);
        return DistanceMap(std::move(d), f.resolution());
    }

    double query(const Point& p, Point* grad = nullptr) const { return bilinear(values_, resolution_, p, grad); }
    const Grid2D<double>& values() const noexcept { return values_; }
    double resolution() const noexcept { return resolution_; }

private:
    Grid2D<double> values_;
    double resolution_;
};

// ---------------------------------------------------------------------------
// Regularizers on flat (x0, y0, x1, y1, ...) trajectories

// sum_k |x_{k+3} - 3 x_{k+2} + 3 x_{k+1} - x_k|^2
inline double smooth_loss(const Eigen::VectorXd& flat, Eigen::VectorXd* grad = nullptr) {
    const Eigen::Index K = flat.size() / 2;
    if (K < 4) throw Error("smooth loss needs at least four waypoints");
    static constexpr std::array<double, 4> c{-1.0, 3.0, -3.0, 1.0};
    if (grad) grad->setZero(flat.size());
    double sum = 0.0;
    for (Eigen::Index k = 0; k + 3 < K; ++k)
        for (Eigen::Index a = 0; a < 2; ++a) {
            double r = 0.0;
            for (Eigen::Index m = 0; m < 4; ++m) r += c[m] * flat(2 * (k + m) + a);
            sum += r * r;
            if (grad)
                for (Eigen::Index m = 0; m < 4; ++m) (*grad)(2 * (k + m) + a) += 2.0 * r * c[m];
        }
    return sum;
}

inline double smooth_loss(const Trajectory& tau) { return smooth_loss(tau.flat()); }

inline constexpr double kDefaultDistanceFloor = 1e-4;

// -sum_k log(max(d(x_k) - eps, d_floor)); clamped terms carry no gradient.
inline double safe_loss(const Eigen::VectorXd& flat, const DistanceMap& dist, double epsilon,
                        double d_floor = kDefaultDistanceFloor, Eigen::VectorXd* grad = nullptr) {
    if (epsilon < 0.0) throw Error("safety margin must be non-negative");
    if (!(d_floor > 0.0)) throw Error("distance floor must be positive");
    if (grad) grad->setZero(flat.size());
    double sum = 0.0;
    for (Eigen::Index k = 0; k < flat.size() / 2; ++k) {
        Point g;
        const double gap = dist.query(Point(flat(2 * k), flat(2 * k + 1)), grad ? &g : nullptr) - epsilon;
        if (gap > d_floor) {
            sum -= std::log(gap);
            if (grad) {
                (*grad)(2 * k) -= g.x() / gap;
                (*grad)(2 * k + 1) -= g.y() / gap;
            }
        } else {
            sum -= std::log(d_floor);
        }
    }
    return sum;
}

inline double safe_loss(const Trajectory& tau, const DistanceMap& dist, double epsilon,
                        double d_floor = kDefaultDistanceFloor) {
    return safe_loss(tau.flat(), dist, epsilon, d_floor);
}

struct Interpolant {
    Trajectory tau_t;
    Eigen::VectorXd velocity;  // flat, constant in t
};

inline Interpolant interpolant(const Trajectory& tau0, const Trajectory& tau1, double t) {
    if (tau0.size() != tau1.size()) throw Error("interpolant endpoints need equal waypoint counts");
    const Eigen::VectorXd a = tau0.flat(), b = tau1.flat();
    return Interpolant{Trajectory::from_flat((1.0 - t) * a + t * b), b - a};
}

// ---------------------------------------------------------------------------
// Velocity network

struct FlowArchitecture {
    int waypoints = 16;
    int context_dim = 8;
    std::vector<int> hidden{64, 64, 64};
    int frequencies = 4;  // sin/cos pairs of the time embedding

    int state_dim() const { return 2 * waypoints; }
    int input_dim() const { return state_dim() + 2 * frequencies + context_dim; }

    void validate() const {
        if (waypoints < 2) throw Error("flow model needs at least two waypoints");
        if (context_dim < 0 || frequencies < 0) throw Error("negative architecture dimension");
        if (hidden.empty()) throw Error("flow model needs at least one hidden layer");
        for (int w : hidden)
            if (w < 1) throw Error("hidden widths must be positive");
    }

    friend bool operator==(const FlowArchitecture&, const FlowArchitecture&) = default;
};

struct DenseLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;
};

// v = scale * MLP([(tau - offset) / scale, sin/cos(w_k t), z_c]) with the
// endpoint coordinates forced to zero.
class FlowModel {
public:
    struct Tape {
        std::vector<Eigen::MatrixXd> activations;  // [input, hidden_1, ..., hidden_n]
    };

    FlowModel(FlowArchitecture arch, std::uint64_t seed, double scale = 1.0, Point offset = Point::Zero())
        : arch_(std::move(arch)), scale_(scale), offset_(offset) {
        arch_.validate();
        if (!(scale_ > 0.0) || !std::isfinite(scale_)) throw Error("flow model scale must be positive");
        Rng rng = make_rng(seed, 0xF10);
        std::vector<int> dims{arch_.input_dim()};
        dims.insert(dims.end(), arch_.hidden.begin(), arch_.hidden.end());
        dims.push_back(arch_.state_dim());
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const double bound = std::sqrt(6.0 / (dims[l] + dims[l + 1]));
            DenseLayer layer{Eigen::MatrixXd(dims[l + 1], dims[l]), Eigen::VectorXd::Zero(dims[l + 1])};
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
                for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
                    layer.weight(r, c) = bound * (2.0 * uniform01(rng) - 1.0);
            layers_.push_back(std::move(layer));
        }
    }

    FlowModel(FlowArchitecture arch, std::vector<DenseLayer> layers, double scale, Point offset)
        : arch_(std::move(arch)), layers_(std::move(layers)), scale_(scale), offset_(offset) {
        arch_.validate();
        if (layers_.size() != arch_.hidden.size() + 1) throw Error("layer count does not match architecture");
        Eigen::Index in = arch_.input_dim();
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const Eigen::Index out = l + 1 < layers_.size() ? arch_.hidden[l] : arch_.state_dim();
            if (layers_[l].weight.rows() != out || layers_[l].weight.cols() != in || layers_[l].bias.size() != out)
                throw Error("layer shape does not match architecture");
            in = out;
        }
    }

    const FlowArchitecture& architecture() const noexcept { return arch_; }
    const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
    double scale() const noexcept { return scale_; }
    const Point& offset() const noexcept { return offset_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    // Layer by layer: weights (column-major) then bias.
    Eigen::VectorXd parameters() const {
        Eigen::VectorXd p(static_cast<Eigen::Index>(parameter_count()));
        Eigen::Index at = 0;
        for (const auto& l : layers_) {
            p.segment(at, l.weight.size()) = l.weight.reshaped();
            at += l.weight.size();
            p.segment(at, l.bias.size()) = l.bias;
            at += l.bias.size();
        }
        return p;
    }

    void set_parameters(const Eigen::VectorXd& p) {
        if (p.size() != static_cast<Eigen::Index>(parameter_count())) throw Error("parameter vector size mismatch");
        Eigen::Index at = 0;
        for (auto& l : layers_) {
            l.weight.reshaped() = p.segment(at, l.weight.size());
            at += l.weight.size();
            l.bias = p.segment(at, l.bias.size());
            at += l.bias.size();
        }
    }

    void encode(const Eigen::VectorXd& flat, double t, const Eigen::VectorXd& zc, Eigen::Ref<Eigen::VectorXd> col) const {
        const int S = arch_.state_dim();
        if (flat.size() != S) throw Error("trajectory size does not match the model");
        if (zc.size() != arch_.context_dim) throw Error("context size does not match the model");
        for (int k = 0; k < arch_.waypoints; ++k) {
            col(2 * k) = (flat(2 * k) - offset_.x()) / scale_;
            col(2 * k + 1) = (flat(2 * k + 1) - offset_.y()) / scale_;
        }
        for (int f = 0; f < arch_.frequencies; ++f) {
            const double w = 0.5 * std::numbers::pi * std::ldexp(1.0, f);
            col(S + 2 * f) = std::sin(w * t);
            col(S + 2 * f + 1) = std::cos(w * t);
        }
        col.tail(arch_.context_dim) = zc;
    }

    // Inputs column-wise (input_dim x B); returns velocities (state_dim x B).
    Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, Tape* tape = nullptr) const {
        Eigen::MatrixXd h = inputs;
        if (tape) tape->activations.assign(1, inputs);
        for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
            h = ((layers_[l].weight * h).colwise() + layers_[l].bias).array().tanh().matrix();
            if (tape) tape->activations.push_back(h);
        }
        Eigen::MatrixXd out = scale_ * ((layers_.back().weight * h).colwise() + layers_.back().bias);
        mask_endpoints(out);
        return out;
    }

    Eigen::VectorXd velocity(const Eigen::VectorXd& flat, double t, const Eigen::VectorXd& zc) const {
        Eigen::MatrixXd in(arch_.input_dim(), 1);
        encode(flat, t, zc, in.col(0));
        return forward(in).col(0);
    }

    // Gradient of a scalar loss w.r.t. parameters, given dL/d(velocity).
    Eigen::VectorXd backward(const Tape& tape, Eigen::MatrixXd d_out) const {
        mask_endpoints(d_out);
        Eigen::MatrixXd delta = scale_ * d_out;
        std::vector<DenseLayer> grads(layers_.size());
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const Eigen::MatrixXd& a = tape.activations[l];
            grads[l].weight = delta * a.transpose();
            grads[l].bias = delta.rowwise().sum();
            if (l == 0) break;
            delta = ((layers_[l].weight.transpose() * delta).array() * (1.0 - a.array().square())).matrix();
        }
        Eigen::VectorXd g(static_cast<Eigen::Index>(parameter_count()));
        Eigen::Index at = 0;
        for (const auto& l : grads) {
            g.segment(at, l.weight.size()) = l.weight.reshaped();
            at += l.weight.size();
            g.segment(at, l.bias.size()) = l.bias;
            at += l.bias.size();
        }
        return g;
    }

    friend bool operator==(const FlowModel& a, const FlowModel& b) {
        if (!(a.arch_ == b.arch_) || a.scale_ != b.scale_ || a.offset_ != b.offset_) return false;
        for (std::size_t l = 0; l < a.layers_.size(); ++l)
            if (a.layers_[l].weight != b.layers_[l].weight || a.layers_[l].bias != b.layers_[l].bias) return false;
        return true;
    }

private:
    void mask_endpoints(Eigen::MatrixXd& m) const {
        const Eigen::Index S = arch_.state_dim();
        m.row(0).setZero();
        m.row(1).setZero();
        m.row(S - 2).setZero();
        m.row(S - 1).setZero();
    }

    FlowArchitecture arch_;
    std::vector<DenseLayer> layers_;
    double scale_;
    Point offset_;
};

// ---------------------------------------------------------------------------
// Loss

enum class RegTarget {
    Prediction,   // one-step endpoint estimate tau_t + (1 - t) v
    Interpolant,  // tau_t itself (no parameter gradient)
};

struct TrainConfig {
    double rho = 0.1;
    double kappa = 0.01;
    double epsilon = 0.15;
    double d_floor = kDefaultDistanceFloor;
    double learning_rate = 1e-3;
    int batch_size = 64;
    int steps = 5000;
    std::uint64_t seed = 0;
    RegTarget reg_target = RegTarget::Prediction;

    void validate() const {
        if (rho < 0.0 || kappa < 0.0) throw Error("rho and kappa must be non-negative");
        if (epsilon < 0.0) throw Error("epsilon must be non-negative");
        if (!(d_floor > 0.0)) throw Error("d_floor must be positive");
        if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
        if (batch_size < 1 || steps < 0) throw Error("invalid batch size or step count");
    }
};

// One training triple; `distances` may be null when the loss call supplies a
// shared map.
struct FlowPair {
    Trajectory tau0;
    Trajectory tau1;
    Eigen::VectorXd zc;
    const DistanceMap* distances = nullptr;
};

struct BatchEntry {
    const FlowPair* pair;
    double t;
};

struct LossBreakdown {
    double fm = 0.0;
    double smooth = 0.0;
    double safe = 0.0;
    double total = 0.0;
};

struct TermGradients {
    Eigen::VectorXd fm;
    Eigen::VectorXd smooth;
    Eigen::VectorXd safe;
};

namespace detail {

struct BatchEval {
    LossBreakdown loss;
    FlowModel::Tape tape;
    Eigen::MatrixXd d_fm, d_smooth, d_safe;  // dL_term / d(velocity), state_dim x B
};

inline BatchEval evaluate_batch(const FlowModel& model, std::span<const BatchEntry> batch,
                                const DistanceMap* shared, const TrainConfig& cfg, bool want_grad) {
    if (batch.empty()) throw Error("loss needs a non-empty batch");
    const auto& arch = model.architecture();
    const Eigen::Index S = arch.state_dim();
    const auto B = static_cast<Eigen::Index>(batch.size());
    Eigen::MatrixXd inputs(arch.input_dim(), B);
    Eigen::MatrixXd states(S, B), targets(S, B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& e = batch[static_cast<std::size_t>(b)];
        const auto& p = *e.pair;
        if (static_cast<int>(p.tau0.size()) != arch.waypoints || static_cast<int>(p.tau1.size()) != arch.waypoints)
            throw Error("batch trajectory size does not match the model");
        const Eigen::VectorXd a = p.tau0.flat(), c = p.tau1.flat();
        states.col(b) = (1.0 - e.t) * a + e.t * c;
        targets.col(b) = c - a;
        model.encode(states.col(b), e.t, p.zc, inputs.col(b));
    }
    BatchEval ev;
    const Eigen::MatrixXd v = model.forward(inputs, want_grad ? &ev.tape : nullptr);
    if (!v.allFinite()) throw Error("flow model produced non-finite output");
    const double inv_b = 1.0 / static_cast<double>(B);
    const Eigen::MatrixXd diff = v - targets;
    ev.loss.fm = diff.colwise().squaredNorm().sum() * inv_b;
    if (want_grad) {
        ev.d_fm = 2.0 * inv_b * diff;
        ev.d_smooth = Eigen::MatrixXd::Zero(S, B);
        ev.d_safe = Eigen::MatrixXd::Zero(S, B);
    }
    const bool predict = cfg.reg_target == RegTarget::Prediction;
    Eigen::VectorXd g_smooth(S), g_safe(S);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& e = batch[static_cast<std::size_t>(b)];
        const DistanceMap* dist = e.pair->distances ? e.pair->distances : shared;
        if (!dist) throw Error("no distance map for batch entry");
        const double lever = 1.0 - e.t;
        const Eigen::VectorXd x = predict ? Eigen::VectorXd(states.col(b) + lever * v.col(b))
                                          : Eigen::VectorXd(states.col(b));
        ev.loss.smooth += smooth_loss(x, want_grad ? &g_smooth : nullptr) * inv_b;
        ev.loss.safe += safe_loss(x, *dist, cfg.epsilon, cfg.d_floor, want_grad ? &g_safe : nullptr) * inv_b;
        if (want_grad && predict) {
            ev.d_smooth.col(b) = inv_b * lever * g_smooth;
            ev.d_safe.col(b) = inv_b * lever * g_safe;
        }
    }
    ev.loss.total = ev.loss.fm + cfg.rho * ev.loss.smooth + cfg.kappa * ev.loss.safe;
    return ev;
}

}  // namespace detail

// L = mean_b |v(tau_t, t, z_c) - (tau1 - tau0)|^2 + rho * L_smooth + kappa * L_safe,
// regularizers averaged over the batch and evaluated per cfg.reg_target.
inline LossBreakdown regcfm_loss(const FlowModel& model, std::span<const BatchEntry> batch,
                                 const DistanceMap* distances, const TrainConfig& cfg,
                                 TermGradients* grads = nullptr) {
    auto ev = detail::evaluate_batch(model, batch, distances, cfg, grads != nullptr);
    if (grads) {
        grads->fm = model.backward(ev.tape, ev.d_fm);
        grads->smooth = model.backward(ev.tape, ev.d_smooth);
        grads->safe = model.backward(ev.tape, ev.d_safe);
    }
    return ev.loss;
}

// Gradient of the weighted total in a single backward pass.
inline LossBreakdown regcfm_loss_gradient(const FlowModel& model, std::span<const BatchEntry> batch,
                                          const DistanceMap* distances, const TrainConfig& cfg,
                                          Eigen::VectorXd& grad) {
    auto ev = detail::evaluate_batch(model, batch, distances, cfg, true);
    grad = model.backward(ev.tape, ev.d_fm + cfg.rho * ev.d_smooth + cfg.kappa * ev.d_safe);
    return ev.loss;
}

// ---------------------------------------------------------------------------
// Training

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::vector<double> trace)
        : Error(what), trace_(std::move(trace)) {}
    const std::vector<double>& trace() const noexcept { return trace_; }

private:
    std::vector<double> trace_;
};

struct TrainResult {
    std::vector<double> trace;  // batch total loss per step
};

// Adam on minibatches drawn uniformly with replacement, t ~ U[0, 1).
inline TrainResult train(FlowModel& model, const std::vector<FlowPair>& data, const DistanceMap* distances,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw Error("training needs a non-empty dataset");
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Rng rng = make_rng(cfg.seed, 0x7A1);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    Eigen::VectorXd theta = model.parameters();
    Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size()), v = m, grad;
    std::vector<BatchEntry> batch(static_cast<std::size_t>(cfg.batch_size));
    TrainResult result;
    result.trace.reserve(static_cast<std::size_t>(cfg.steps));
    double b1t = 1.0, b2t = 1.0;
    for (int step = 0; step < cfg.steps; ++step) {
        for (auto& e : batch) {
            e.pair = &data[pick(rng)];
            e.t = uniform01(rng);
        }
        LossBreakdown loss;
        try {
            loss = regcfm_loss_gradient(model, batch, distances, cfg, grad);
        } catch (const Error& e) {
            throw TrainingError(std::string("training diverged: ") + e.what(), result.trace);
        }
        result.trace.push_back(loss.total);
        if (!std::isfinite(loss.total) || !grad.allFinite())
            throw TrainingError("training diverged: non-finite loss at step " + std::to_string(step), result.trace);
        b1t *= beta1;
        b2t *= beta2;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
        const double lr = cfg.learning_rate * std::sqrt(1.0 - b2t) / (1.0 - b1t);
        theta.array() -= lr * m.array() / (v.array().sqrt() + eps);
        model.set_parameters(theta);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Euler integration

// N explicit Euler steps of `velocity(flat, t)` from tau0 with dt = 1/N;
// first and last waypoints are re-pinned after every step.
template <class Velocity>
Trajectory euler_refine(const Trajectory& tau0, int steps, Velocity&& velocity) {
    if (steps < 1) throw Error("refinement needs at least one step");
    Eigen::VectorXd x = tau0.flat();
    const Eigen::Index S = x.size();
    const Point a = tau0.front(), b = tau0.back();
    const double dt = 1.0 / steps;
    for (int n = 0; n < steps; ++n) {
        const Eigen::VectorXd v = velocity(static_cast<const Eigen::VectorXd&>(x), n * dt);
        if (v.size() != S) throw Error("velocity size does not match the trajectory");
        x += dt * v;
        x(0) = a.x();
        x(1) = a.y();
        x(S - 2) = b.x();
        x(S - 1) = b.y();
        if (!x.allFinite()) throw Error("refinement produced a non-finite state");
    }
    return Trajectory::from_flat(x);
}

inline Trajectory refine(const FlowModel& model, const Trajectory& tau0, const Eigen::VectorXd& zc, int steps) {
    return euler_refine(tau0, steps, [&](const Eigen::VectorXd& x, double t) { return model.velocity(x, t, zc); });
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary layout, all integers u32 and all reals f64, little-endian:
//   "SNFM" | version=1 | waypoints | context_dim | frequencies | n_hidden |
//   hidden widths... | scale | offset_x | offset_y |
//   per layer: weight (row-major, out x in), bias (out)

inline constexpr std::array<char, 4> kCheckpointMagic{'S', 'N', 'F', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t k = 0; k < sizeof(U); ++k) os.put(static_cast<char>((bits >> (8 * k)) & 0xFF));
}

template <class T>
T get_le(std::istream& is) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    U bits = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k) {
        const int c = is.get();
        if (c == std::char_traits<char>::eof()) throw Error("truncated checkpoint");
        bits |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * k);
    }
    return std::bit_cast<T>(bits);
}

}  // namespace detail

inline void save_checkpoint(const FlowModel& model, std::ostream& os) {
    const auto& a = model.architecture();
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::put_le<std::uint32_t>(os, kCheckpointVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.waypoints));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.context_dim));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.frequencies));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.hidden.size()));
    for (int w : a.hidden) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
    detail::put_le<double>(os, model.scale());
    detail::put_le<double>(os, model.offset().x());
    detail::put_le<double>(os, model.offset().y());
    for (const auto& l : model.layers()) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) detail::put_le<double>(os, l.weight(r, c));
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) detail::put_le<double>(os, l.bias(r));
    }
    if (!os) throw Error("failed to write checkpoint");
}

namespace detail {

inline FlowModel assemble_model(const FlowArchitecture& arch, double scale, const Point& offset,
                                const std::function<double()>& next) {
    arch.validate();
    std::vector<DenseLayer> layers;
    Eigen::Index in = arch.input_dim();
    for (std::size_t l = 0; l <= arch.hidden.size(); ++l) {
        const Eigen::Index out = l < arch.hidden.size() ? arch.hidden[l] : arch.state_dim();
        DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
        for (Eigen::Index r = 0; r < out; ++r)
            for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = next();
        for (Eigen::Index r = 0; r < out; ++r) layer.bias(r) = next();
        layers.push_back(std::move(layer));
        in = out;
    }
    return FlowModel(arch, std::move(layers), scale, offset);
}

}  // namespace detail

inline FlowModel load_checkpoint(std::istream& is) {
    std::array<char, 4> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kCheckpointMagic) throw Error("not a flow model checkpoint");
    if (detail::get_le<std::uint32_t>(is) != kCheckpointVersion) throw Error("unsupported checkpoint version");
    FlowArchitecture arch;
    arch.waypoints = static_cast<int>(detail::get_le<std::uint32_t>(is));
    arch.context_dim = static_cast<int>(detail::get_le<std::uint32_t>(is));
    arch.frequencies = static_cast<int>(detail::get_le<std::uint32_t>(is));
    const auto n_hidden = detail::get_le<std::uint32_t>(is);
    if (n_hidden > 64) throw Error("implausible checkpoint layer count");
    arch.hidden.assign(n_hidden, 0);
    for (auto& w : arch.hidden) w = static_cast<int>(detail::get_le<std::uint32_t>(is));
    const double scale = detail::get_le<double>(is);
    const double ox = detail::get_le<double>(is), oy = detail::get_le<double>(is);
    return detail::assemble_model(arch, scale, Point(ox, oy), [&] { return detail::get_le<double>(is); });
}

// Text fallback: `key,value` header lines (waypoints, context_dim,
// frequencies, hidden as `hidden,64,64,64`, scale, offset), then one
// `param,<value>` line per parameter in the binary order.
inline void save_checkpoint_csv(const FlowModel& model, std::ostream& os) {
    const auto& a = model.architecture();
    std::ostringstream out;
    out.precision(17);
    out << "format,stepnav-flow-model\nversion," << kCheckpointVersion << "\nwaypoints," << a.waypoints
        << "\ncontext_dim," << a.context_dim << "\nfrequencies," << a.frequencies << "\nhidden";
    for (int w : a.hidden) out << ',' << w;
    out << "\nscale," << model.scale() << "\noffset," << model.offset().x() << ',' << model.offset().y() << '\n';
    for (const auto& l : model.layers()) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out << "param," << l.weight(r, c) << '\n';
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) out << "param," << l.bias(r) << '\n';
    }
    os << out.str();
    if (!os) throw Error("failed to write checkpoint");
}

inline FlowModel load_checkpoint_csv(std::istream& is) {
    auto fields = [](const std::string& line) {
        std::vector<std::string> out;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
        return out;
    };
    FlowArchitecture arch;
    double scale = 1.0;
    Point offset = Point::Zero();
    std::vector<double> params;
    for (std::string line; std::getline(is, line);) {
        if (line.empty()) continue;
        const auto f = fields(line);
        try {
            if (f[0] == "param") params.push_back(std::stod(f.at(1)));
            else if (f[0] == "format" && f.at(1) != "stepnav-flow-model") throw Error("not a flow model checkpoint");
            else if (f[0] == "version" && std::stoul(f.at(1)) != kCheckpointVersion)
                throw Error("unsupported checkpoint version");
            else if (f[0] == "waypoints") arch.waypoints = std::stoi(f.at(1));
            else if (f[0] == "context_dim") arch.context_dim = std::stoi(f.at(1));
            else if (f[0] == "frequencies") arch.frequencies = std::stoi(f.at(1));
            else if (f[0] == "hidden") {
                arch.hidden.clear();
                for (std::size_t k = 1; k < f.size(); ++k) arch.hidden.push_back(std::stoi(f[k]));
            } else if (f[0] == "scale") scale = std::stod(f.at(1));
            else if (f[0] == "offset") offset = Point(std::stod(f.at(1)), std::stod(f.at(2)));
        } catch (const std::logic_error&) {
            throw Error("malformed checkpoint line: " + line);
        }
    }
    std::size_t at = 0;
    auto model = detail::assemble_model(arch, scale, offset, [&] {
        if (at >= params.size()) throw Error("checkpoint has too few parameters");
        return params[at++];
    });
    if (at != params.size()) throw Error("checkpoint has too many parameters");
    return model;
}

}  // namespace stepnav::regcfm
