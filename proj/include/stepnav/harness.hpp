#pragma once

// End-to-end pipeline: scenario -> demonstrations -> synthetic features ->
// context projection -> success field -> prior -> flow refinement ->
// episode metrics, plus the benchmark driver used for ablations and step
// sweeps.

#include "stepnav/core.hpp"
#include "stepnav/difp.hpp"
#include "stepnav/env.hpp"
#include "stepnav/field.hpp"
#include "stepnav/metrics.hpp"
#include "stepnav/prior.hpp"
#include "stepnav/regcfm.hpp"
#include "stepnav/trajectory.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace stepnav::harness {

using nlohmann::json;

enum class Mode { Full, GaussianPrior, PeaksPrior, NoSmooth, NoSafe, NoRegularizers };

inline constexpr std::array<Mode, 6> kAllModes{Mode::Full,   Mode::GaussianPrior, Mode::PeaksPrior,
                                               Mode::NoSmooth, Mode::NoSafe,      Mode::NoRegularizers};

inline std::string_view to_string(Mode m) {
    switch (m) {
        case Mode::Full: return "full";
        case Mode::GaussianPrior: return "gaussian";
        case Mode::PeaksPrior: return "peaks";
        case Mode::NoSmooth: return "no-smooth";
        case Mode::NoSafe: return "no-safe";
        case Mode::NoRegularizers: return "no-reg";
    }
    return "?";
}

inline Mode parse_mode(std::string_view s) {
    for (Mode m : kAllModes)
        if (to_string(m) == s) return m;
    throw Error("unknown mode: " + std::string(s));
}

enum class PriorSource { Mixture, Gaussian, Peaks };

inline PriorSource prior_source(Mode m) {
    if (m == Mode::GaussianPrior) return PriorSource::Gaussian;
    if (m == Mode::PeaksPrior) return PriorSource::Peaks;
    return PriorSource::Mixture;
}

enum class TrainSplit {
    HeldOut,  // separate training scenes drawn from a disjoint seed stream
    Seen,     // train on the benchmark scenes themselves
};

struct PipelineConfig {
    // world
    int width = 48;
    int height = 48;
    double resolution = kDefaultResolution;
    std::vector<ScenarioKind> kinds{ScenarioKind::TJunction, ScenarioKind::Corridor, ScenarioKind::Clutter};
    int episodes_per_kind = 40;
    int training_scenes_per_kind = 40;
    TrainSplit split = TrainSplit::HeldOut;
    std::uint64_t seed = 0;

    // demonstrations and features
    int n_demos = 20;
    double demo_noise = 1.0;
    DemoConfig demo;
    int feature_frames = 8;
    int feature_dim = 8;
    double feature_noise = 0.02;
    bool goal_frame = false;

    field::FieldParams field;
    prior::PriorConfig prior;
    double gaussian_sigma = 0.5;
    int gaussian_train_samples = 8;
    double peaks_threshold = 0.8;

    std::vector<int> hidden{64, 64, 64};
    int time_frequencies = 4;
    regcfm::TrainConfig train;
    bool safe_from_field = false;  // 1 - F as the barrier distance
    int refine_steps = 5;

    metrics::EpisodeConfig episode;
    bool ms_successes_only = false;

    Mode mode = Mode::Full;
    int threads = 0;  // 0: hardware concurrency

    int episodes() const { return episodes_per_kind * static_cast<int>(kinds.size()); }

    void validate() const {
        if (width < 8 || height < 8 || width > 512 || height > 512) throw Error("world size must be within [8,512]");
        if (!(resolution > 0.0)) throw Error("resolution must be positive");
        if (kinds.empty() || episodes_per_kind < 1) throw Error("benchmark needs at least one episode");
        if (training_scenes_per_kind < 1) throw Error("training needs at least one scene per kind");
        if (n_demos < 1 || demo_noise < 0.0) throw Error("invalid demonstration settings");
        if (feature_frames < 1 || feature_dim < 1) throw Error("invalid feature shape");
        if (prior.k_paths < 1 || prior.mixture_size < 1 || prior.waypoints < 5) throw Error("invalid prior settings");
        if (!(prior.temperature > 0.0) || !(prior.delta > 0.0)) throw Error("invalid prior settings");
        if (!(gaussian_sigma >= 0.0) || gaussian_train_samples < 1) throw Error("invalid gaussian prior settings");
        if (refine_steps < 1) throw Error("refine steps must be at least 1");
        train.validate();
    }
};

// ---------------------------------------------------------------------------
// Config serialization

inline json to_json(const PipelineConfig& c) {
    json kinds = json::array();
    for (auto k : c.kinds) kinds.push_back(std::string(to_string(k)));
    return json{
        {"world", {{"width", c.width}, {"height", c.height}, {"resolution", c.resolution}}},
        {"benchmark",
         {{"kinds", kinds},
          {"episodes_per_kind", c.episodes_per_kind},
          {"training_scenes_per_kind", c.training_scenes_per_kind},
          {"split", c.split == TrainSplit::HeldOut ? "held-out" : "seen"}}},
        {"seed", c.seed},
        {"demos",
         {{"count", c.n_demos},
          {"noise", c.demo_noise},
          {"dilation", c.demo.dilation},
          {"clearance_radius", c.demo.clearance_radius},
          {"clearance_weight", c.demo.clearance_weight},
          {"via_clearance", c.demo.via_clearance}}},
        {"features",
         {{"frames", c.feature_frames}, {"dim", c.feature_dim}, {"noise", c.feature_noise}, {"goal_frame", c.goal_frame}}},
        {"field",
         {{"mu", c.field.mu},
          {"nu", c.field.nu},
          {"solver", c.field.solver == field::Solver::Direct ? "direct" : "cg"},
          {"tol", c.field.tol},
          {"max_iterations", c.field.max_iterations}}},
        {"prior",
         {{"k", c.prior.k_paths},
          {"m", c.prior.mixture_size},
          {"temperature", c.prior.temperature},
          {"delta", c.prior.delta},
          {"waypoints", c.prior.waypoints},
          {"alpha", c.prior.score.alpha},
          {"beta", c.prior.score.beta},
          {"gamma", c.prior.score.gamma},
          {"gaussian_sigma", c.gaussian_sigma},
          {"gaussian_train_samples", c.gaussian_train_samples},
          {"peaks_threshold", c.peaks_threshold}}},
        {"flow",
         {{"hidden", c.hidden},
          {"time_frequencies", c.time_frequencies},
          {"rho", c.train.rho},
          {"kappa", c.train.kappa},
          {"epsilon", c.train.epsilon},
          {"d_floor", c.train.d_floor},
          {"learning_rate", c.train.learning_rate},
          {"batch_size", c.train.batch_size},
          {"steps", c.train.steps},
          {"seed", c.train.seed},
          {"reg_target", c.train.reg_target == regcfm::RegTarget::Prediction ? "prediction" : "interpolant"},
          {"safe_from_field", c.safe_from_field},
          {"refine_steps", c.refine_steps}}},
        {"metrics",
         {{"step_length", c.episode.step_length},
          {"max_steps", c.episode.max_steps},
          {"goal_tolerance", c.episode.goal_tolerance},
          {"nominal_speed", c.episode.nominal_speed},
          {"ms_successes_only", c.ms_successes_only}}},
        {"mode", std::string(to_string(c.mode))},
    };
}

namespace detail {

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

// Missing keys keep their defaults; unknown sections are ignored.
inline PipelineConfig config_from_json(const json& j, PipelineConfig c = {}) {
    using detail::read;
    try {
        if (j.contains("world")) {
            const auto& w = j["world"];
            read(w, "width", c.width);
            read(w, "height", c.height);
            read(w, "resolution", c.resolution);
        }
        if (j.contains("benchmark")) {
            const auto& b = j["benchmark"];
            if (b.contains("kinds")) {
                c.kinds.clear();
                for (const auto& k : b["kinds"]) c.kinds.push_back(parse_scenario_kind(k.get<std::string>()));
            }
            read(b, "episodes_per_kind", c.episodes_per_kind);
            read(b, "training_scenes_per_kind", c.training_scenes_per_kind);
            if (b.contains("split")) {
                const auto s = b["split"].get<std::string>();
                if (s != "held-out" && s != "seen") throw Error("unknown split: " + s);
                c.split = s == "seen" ? TrainSplit::Seen : TrainSplit::HeldOut;
            }
        }
        read(j, "seed", c.seed);
        if (j.contains("demos")) {
            const auto& d = j["demos"];
            read(d, "count", c.n_demos);
            read(d, "noise", c.demo_noise);
            read(d, "dilation", c.demo.dilation);
            read(d, "clearance_radius", c.demo.clearance_radius);
            read(d, "clearance_weight", c.demo.clearance_weight);
            read(d, "via_clearance", c.demo.via_clearance);
        }
        if (j.contains("features")) {
            const auto& f = j["features"];
            read(f, "frames", c.feature_frames);
            read(f, "dim", c.feature_dim);
            read(f, "noise", c.feature_noise);
            read(f, "goal_frame", c.goal_frame);
        }
        if (j.contains("field")) {
            const auto& f = j["field"];
            read(f, "mu", c.field.mu);
            read(f, "nu", c.field.nu);
            if (f.contains("solver")) c.field.solver = field::parse_solver(f["solver"].get<std::string>());
            read(f, "tol", c.field.tol);
            read(f, "max_iterations", c.field.max_iterations);
        }
        if (j.contains("prior")) {
            const auto& p = j["prior"];
            read(p, "k", c.prior.k_paths);
            read(p, "m", c.prior.mixture_size);
            read(p, "temperature", c.prior.temperature);
            read(p, "delta", c.prior.delta);
            read(p, "waypoints", c.prior.waypoints);
            read(p, "alpha", c.prior.score.alpha);
            read(p, "beta", c.prior.score.beta);
            read(p, "gamma", c.prior.score.gamma);
            read(p, "gaussian_sigma", c.gaussian_sigma);
            read(p, "gaussian_train_samples", c.gaussian_train_samples);
            read(p, "peaks_threshold", c.peaks_threshold);
        }
        if (j.contains("flow")) {
            const auto& f = j["flow"];
            read(f, "hidden", c.hidden);
            read(f, "time_frequencies", c.time_frequencies);
            read(f, "rho", c.train.rho);
            read(f, "kappa", c.train.kappa);
            read(f, "epsilon", c.train.epsilon);
            read(f, "d_floor", c.train.d_floor);
            read(f, "learning_rate", c.train.learning_rate);
            read(f, "batch_size", c.train.batch_size);
            read(f, "steps", c.train.steps);
            read(f, "seed", c.train.seed);
            if (f.contains("reg_target")) {
                const auto s = f["reg_target"].get<std::string>();
                if (s != "prediction" && s != "interpolant") throw Error("unknown reg_target: " + s);
                c.train.reg_target = s == "prediction" ? regcfm::RegTarget::Prediction : regcfm::RegTarget::Interpolant;
            }
            read(f, "safe_from_field", c.safe_from_field);
            read(f, "refine_steps", c.refine_steps);
        }
        if (j.contains("metrics")) {
            const auto& m = j["metrics"];
            read(m, "step_length", c.episode.step_length);
            read(m, "max_steps", c.episode.max_steps);
            read(m, "goal_tolerance", c.episode.goal_tolerance);
            read(m, "nominal_speed", c.episode.nominal_speed);
            read(m, "ms_successes_only", c.ms_successes_only);
        }
        if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
    } catch (const json::exception& e) {
        throw Error(std::string("invalid config: ") + e.what());
    }
    c.validate();
    return c;
}

// FNV-1a over the canonical (key-sorted, compact) JSON text.
inline std::uint64_t config_hash(const PipelineConfig& c) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : to_json(c).dump()) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int k = 15; k >= 0; --k, v >>= 4) s[static_cast<std::size_t>(k)] = digits[v & 0xF];
    return s;
}

// ---------------------------------------------------------------------------
// Stages

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

// Feature history standing in for a visual encoder: for T frames on a short
// approach to the start, normalized free-space ray lengths in D directions
// plus Gaussian noise.
inline Eigen::MatrixXd synthetic_features(const Scenario& sc, int frames, int dim, double noise) {
    if (frames < 1 || dim < 1) throw Error("feature shape must be positive");
    const auto& g = sc.grid;
    const double max_range = 2.0;
    const double step = 0.5 * g.resolution();
    Point heading = sc.goal - sc.start;
    heading = heading.norm() > 0.0 ? Point(heading / heading.norm()) : Point(1.0, 0.0);
    Rng rng = make_rng(sc.seed, 0xFEA7 + static_cast<std::uint64_t>(sc.kind));
    std::normal_distribution<double> gauss(0.0, noise);
    Eigen::MatrixXd Z(frames, dim);
    for (int t = 0; t < frames; ++t) {
        Point p = sc.start - 0.05 * (frames - 1 - t) * heading;
        if (!g.in_bounds(p) || g.occupied(g.cell_of(p))) p = sc.start;
        for (int d = 0; d < dim; ++d) {
            const double a = 2.0 * std::numbers::pi * d / dim;
            const Point dir(std::cos(a), std::sin(a));
            double r = 0.0;
            while (r < max_range) {
                const Point q = p + (r + step) * dir;
                if (!g.in_bounds(q) || g.occupied(g.cell_of(q))) break;
                r += step;
            }
            Z(t, d) = std::min(r, max_range) / max_range + (noise > 0.0 ? gauss(rng) : 0.0);
        }
    }
    return Z;
}

// Everything derived from one scenario that does not depend on the model.
struct ScenarioContext {
    Scenario scenario;
    Demonstrations demos;
    regcfm::DistanceMap distances;
    difp::RefinedFeatures features;
    field::SuccessField field;
    prior::MixturePrior mixture;
    prior::MixturePrior peaks;
    std::vector<Trajectory> experts;
    double shortest_length;
};

inline bool collision_free(const OccupancyGrid& g, const Trajectory& tau) {
    for (std::size_t k = 0; k + 1 < tau.size(); ++k)
        if (first_blocked(g, tau[k], tau[k + 1])) return false;
    return true;
}

inline std::size_t nearest_by_hausdorff(const std::vector<Trajectory>& pool, const Trajectory& tau) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < pool.size(); ++k) {
        const double d = hausdorff(pool[k], tau);
        if (d < best_d) best_d = d, best = k;
    }
    return best;
}

inline ScenarioContext build_context(Scenario sc, const PipelineConfig& cfg) {
    stage("env", [&] { sc.validate(); return 0; });
    auto demos = stage("env", [&] { return synthesize_demonstrations(sc, cfg.n_demos, cfg.demo_noise, cfg.demo); });
    auto features = stage("difp", [&] {
        difp::FeatureSequence Z(synthetic_features(sc, cfg.feature_frames, cfg.feature_dim, cfg.feature_noise));
        difp::RefineOptions opt;
        if (cfg.goal_frame) {
            Eigen::VectorXd goal(cfg.feature_dim);
            for (int d = 0; d < cfg.feature_dim; ++d)
                goal(d) = d % 2 == 0 ? sc.goal.x() / sc.grid.extent_x() : sc.goal.y() / sc.grid.extent_y();
            opt.goal_feature = goal;
        }
        return difp::refine(Z, opt);
    });
    auto F = stage("field", [&] { return field::solve_field(demos.labels, sc.grid, cfg.field); });
    auto mixture = stage("prior", [&] {
        return prior::extract_priors(F, sc.grid, sc.start, sc.goal, cfg.prior).mixture;
    });
    auto peaks = stage("prior", [&] {
        return prior::peaks_prior(F, sc.grid, sc.start, sc.goal, cfg.prior.waypoints, cfg.peaks_threshold,
                                  cfg.prior.temperature, cfg.prior.score);
    });
    auto distances = stage("regcfm", [&] {
        return cfg.safe_from_field ? regcfm::DistanceMap::from_field(F) : regcfm::DistanceMap::from_grid(sc.grid);
    });
    std::vector<Trajectory> experts, clean;
    for (const auto& p : demos.paths) {
        experts.push_back(resample(cells_to_trajectory(sc.grid, p), cfg.prior.waypoints));
        if (collision_free(sc.grid, experts.back())) clean.push_back(experts.back());
    }
    if (!clean.empty()) experts = std::move(clean);
    const double L = stage("metrics", [&] { return metrics::shortest_path_length(sc); });
    return ScenarioContext{std::move(sc),       std::move(demos),   std::move(distances),
                           std::move(features), std::move(F),       std::move(mixture),
                           std::move(peaks),    std::move(experts), L};
}

// Seeds of the benchmark scenes and of the disjoint training scenes.
inline std::uint64_t scenario_seed(std::uint64_t master, ScenarioKind kind, int index, bool training) {
    return mix_seed(master, (training ? 0x100000ULL : 0ULL) + 0x1000ULL * static_cast<std::uint64_t>(kind) +
                                static_cast<std::uint64_t>(index));
}

inline std::uint64_t episode_seed(std::uint64_t master, int episode) {
    return mix_seed(master, 0xE000000ULL + static_cast<std::uint64_t>(episode));
}

inline regcfm::TrainConfig train_config(const PipelineConfig& cfg, Mode mode) {
    auto t = cfg.train;
    if (mode == Mode::NoSmooth || mode == Mode::NoRegularizers) t.rho = 0.0;
    if (mode == Mode::NoSafe || mode == Mode::NoRegularizers) t.kappa = 0.0;
    return t;
}

// Initial trajectory for one episode under the mode's prior.
inline Trajectory initial_trajectory(const ScenarioContext& ctx, const PipelineConfig& cfg, Mode mode, Rng& rng) {
    switch (prior_source(mode)) {
        case PriorSource::Gaussian:
            return prior::gaussian_trajectory(ctx.scenario.start, ctx.scenario.goal, cfg.prior.waypoints,
                                              cfg.gaussian_sigma, ctx.scenario.grid, rng);
        case PriorSource::Peaks: return prior::sample_prior(ctx.peaks, rng);
        case PriorSource::Mixture: break;
    }
    return prior::sample_prior(ctx.mixture, rng);
}

// Structured priors pair each component with its nearest expert; the
// Gaussian prior pairs independent noise draws with uniformly drawn experts.
inline void append_training_pairs(const ScenarioContext& ctx, const PipelineConfig& cfg, Mode mode,
                                  std::vector<regcfm::FlowPair>& out) {
    auto add = [&](const Trajectory& tau0, const Trajectory& tau1) {
        out.push_back(regcfm::FlowPair{tau0, tau1, ctx.features.zc, &ctx.distances});
    };
    switch (prior_source(mode)) {
        case PriorSource::Gaussian: {
            Rng rng = make_rng(ctx.scenario.seed, 0x6A55);
            std::uniform_int_distribution<std::size_t> pick(0, ctx.experts.size() - 1);
            for (int s = 0; s < cfg.gaussian_train_samples; ++s) {
                auto tau0 = prior::gaussian_trajectory(ctx.scenario.start, ctx.scenario.goal, cfg.prior.waypoints,
                                                       cfg.gaussian_sigma, ctx.scenario.grid, rng);
                add(tau0, ctx.experts[pick(rng)]);
            }
            break;
        }
        case PriorSource::Peaks:
            for (const auto& c : ctx.peaks.candidates()) add(c, ctx.experts[nearest_by_hausdorff(ctx.experts, c)]);
            break;
        case PriorSource::Mixture:
            for (const auto& c : ctx.mixture.candidates()) add(c, ctx.experts[nearest_by_hausdorff(ctx.experts, c)]);
            break;
    }
}

inline regcfm::FlowModel make_model(const PipelineConfig& cfg) {
    regcfm::FlowArchitecture arch;
    arch.waypoints = static_cast<int>(cfg.prior.waypoints);
    arch.context_dim = cfg.feature_dim;
    arch.hidden = cfg.hidden;
    arch.frequencies = cfg.time_frequencies;
    const double ex = cfg.width * cfg.resolution, ey = cfg.height * cfg.resolution;
    return regcfm::FlowModel(arch, cfg.train.seed, 0.5 * std::max(ex, ey), Point(0.5 * ex, 0.5 * ey));
}

// ---------------------------------------------------------------------------
// Work pool

// Runs fn(i) for i in [0, n) on up to `threads` workers; results land at
// their index so output order never depends on scheduling. The first error
// (lowest index) is rethrown.
template <class T, class F>
std::vector<T> parallel_map(std::size_t n, int threads, F&& fn) {
    std::vector<std::optional<T>> slots(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                slots[i].emplace(fn(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t count = std::min<std::size_t>(n, threads > 0 ? static_cast<std::size_t>(threads) : hw);
    if (count <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < count; ++w) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<T> out;
    out.reserve(n);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

struct EpisodeRecord {
    int episode = 0;
    ScenarioKind kind = ScenarioKind::Open;
    std::uint64_t scenario_seed = 0;
    Mode mode = Mode::Full;
    int refine_steps = 0;
    metrics::EpisodeResult result;
    double refine_seconds = 0.0;  // wall clock, never written to reproducible outputs
};

inline EpisodeRecord run_episode(const ScenarioContext& ctx, const regcfm::FlowModel& model,
                                 const PipelineConfig& cfg, Mode mode, int steps, std::uint64_t seed) {
    if (steps < 1) throw StageError("regcfm", "refine steps must be at least 1");
    Rng rng = make_rng(seed, 0x9A1);
    auto tau0 = stage("prior", [&] { return initial_trajectory(ctx, cfg, mode, rng); });
    const auto t0 = std::chrono::steady_clock::now();
    auto tau = stage("regcfm", [&] { return regcfm::refine(model, tau0, ctx.features.zc, steps); });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto result = stage("metrics", [&] {
        return metrics::evaluate_episode(ctx.scenario, tau, cfg.episode, ctx.shortest_length);
    });
    return EpisodeRecord{0, ctx.scenario.kind, ctx.scenario.seed, mode, steps, std::move(result), secs};
}

// Single scenario through every stage with the config's mode and step count.
inline metrics::EpisodeResult run_pipeline(const PipelineConfig& cfg, const Scenario& sc,
                                           const regcfm::FlowModel& model, std::uint64_t seed) {
    const auto ctx = build_context(sc, cfg);
    return run_episode(ctx, model, cfg, cfg.mode, cfg.refine_steps, seed).result;
}

struct ModeReport {
    Mode mode;
    int refine_steps;
    metrics::MetricsReport report;
    std::vector<EpisodeRecord> episodes;
    double mean_refine_seconds = 0.0;
};

struct SweepRow {
    int steps;
    double sr;
    double collision_rate;
    double mean_refine_seconds;
};

// Benchmark scenes, training scenes and one trained model per mode, built
// lazily and cached.
class Benchmark {
public:
    explicit Benchmark(PipelineConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const PipelineConfig& config() const noexcept { return cfg_; }

    const std::vector<ScenarioContext>& scenes() {
        if (!scenes_) scenes_ = build_scenes(false, cfg_.episodes_per_kind);
        return *scenes_;
    }

    const std::vector<ScenarioContext>& training_scenes() {
        if (cfg_.split == TrainSplit::Seen) return scenes();
        if (!training_) training_ = build_scenes(true, cfg_.training_scenes_per_kind);
        return *training_;
    }

    std::vector<regcfm::FlowPair> training_set(Mode mode) {
        std::vector<regcfm::FlowPair> pairs;
        for (const auto& ctx : training_scenes()) append_training_pairs(ctx, cfg_, mode, pairs);
        return pairs;
    }

    // Models are keyed by what they are trained on, so modes that differ only
    // at evaluation time share one.
    const regcfm::FlowModel& model(Mode mode) {
        const auto key = model_key(mode);
        if (auto it = models_.find(key); it != models_.end()) return it->second;
        auto m = make_model(cfg_);
        const auto pairs = training_set(mode);
        const auto result = stage("regcfm", [&] { return regcfm::train(m, pairs, nullptr, train_config(cfg_, mode)); });
        traces_[key] = result.trace;
        return models_.emplace(key, std::move(m)).first->second;
    }

    const std::vector<double>& trace(Mode mode) {
        model(mode);
        return traces_.at(model_key(mode));
    }

    void set_model(Mode mode, regcfm::FlowModel m) {
        models_.insert_or_assign(model_key(mode), std::move(m));
    }

    ModeReport evaluate(Mode mode, int steps) {
        if (steps < 1) throw Error("refine steps must be at least 1");
        const auto& ctxs = scenes();
        const auto& m = model(mode);
        auto records = parallel_map<EpisodeRecord>(ctxs.size(), cfg_.threads, [&](std::size_t i) {
            auto r = run_episode(ctxs[i], m, cfg_, mode, steps, episode_seed(cfg_.seed, static_cast<int>(i)));
            r.episode = static_cast<int>(i);
            return r;
        });
        std::vector<metrics::EpisodeResult> results;
        double secs = 0.0;
        for (const auto& r : records) {
            results.push_back(r.result);
            secs += r.refine_seconds;
        }
        metrics::AggregateOptions opt{cfg_.ms_successes_only};
        return ModeReport{mode, steps, metrics::aggregate(std::move(results), opt), std::move(records),
                          secs / static_cast<double>(ctxs.size())};
    }

    std::vector<ModeReport> ablation_suite(const std::vector<Mode>& modes) {
        if (modes.empty()) throw Error("ablation needs at least one mode");
        std::vector<ModeReport> out;
        for (Mode m : modes) out.push_back(evaluate(m, cfg_.refine_steps));
        return out;
    }

    std::vector<SweepRow> steps_sweep(Mode mode, const std::vector<int>& steps) {
        if (steps.empty()) throw Error("steps sweep needs at least one step count");
        for (int n : steps)
            if (n < 1) throw Error("refine steps must be at least 1");
        std::vector<SweepRow> rows;
        for (int n : steps) {
            const auto r = evaluate(mode, n);
            rows.push_back({n, r.report.sr.mean, r.report.collision_rate.mean, r.mean_refine_seconds});
        }
        return rows;
    }

private:
    int model_key(Mode mode) const {
        const auto t = train_config(cfg_, mode);
        const int regs = (t.rho > 0.0 ? 1 : 0) | (t.kappa > 0.0 ? 2 : 0);
        return static_cast<int>(prior_source(mode)) * 4 + regs;
    }

    std::vector<ScenarioContext> build_scenes(bool training, int per_kind) {
        const int n = per_kind * static_cast<int>(cfg_.kinds.size());
        return parallel_map<ScenarioContext>(static_cast<std::size_t>(n), cfg_.threads, [&](std::size_t i) {
            const auto kind = cfg_.kinds[i / static_cast<std::size_t>(per_kind)];
            const int idx = static_cast<int>(i % static_cast<std::size_t>(per_kind));
            const auto seed = scenario_seed(cfg_.seed, kind, idx, training);
            auto sc = stage("env", [&] { return generate_scenario(kind, seed, cfg_.width, cfg_.height, cfg_.resolution); });
            return build_context(std::move(sc), cfg_);
        });
    }

    PipelineConfig cfg_;
    std::optional<std::vector<ScenarioContext>> scenes_;
    std::optional<std::vector<ScenarioContext>> training_;
    std::map<int, regcfm::FlowModel> models_;
    std::map<int, std::vector<double>> traces_;
};

}  // namespace stepnav::harness
