// stepnav: command-line front end for scenario generation, field solving,
// prior extraction, flow training, refinement and benchmark runs.

#include "stepnav/harness.hpp"
#include "stepnav/io.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace stepnav;
namespace fs = std::filesystem;
namespace h = stepnav::harness;

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    int threads = 0;
};

h::PipelineConfig load_config(const Globals& g) {
    h::PipelineConfig cfg;
    if (!g.config.empty()) {
        try {
            cfg = h::config_from_json(nlohmann::json::parse(io::read_file(g.config)));
        } catch (const nlohmann::json::exception& e) {
            throw Error("cannot parse config " + g.config + ": " + e.what());
        }
    }
    if (g.seed) {
        cfg.seed = *g.seed;
        cfg.train.seed = *g.seed;
    }
    if (g.threads > 0) cfg.threads = g.threads;
    cfg.validate();
    return cfg;
}

io::RunStamp stamp(const h::PipelineConfig& cfg) { return {h::config_hash(cfg), cfg.seed}; }

regcfm::FlowModel load_model(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path.string());
    return path.extension() == ".csv" ? regcfm::load_checkpoint_csv(is) : regcfm::load_checkpoint(is);
}

void save_model(const regcfm::FlowModel& m, const fs::path& dir) {
    fs::create_directories(dir);
    std::ostringstream bin, csv;
    regcfm::save_checkpoint(m, bin);
    regcfm::save_checkpoint_csv(m, csv);
    io::write_file(dir / "model.bin", bin.str());
    io::write_file(dir / "model.csv", csv.str());
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    for (const auto& f : io::detail::split(s)) out.push_back(static_cast<int>(io::detail::to_long(f)));
    if (out.empty()) throw Error("empty list: " + s);
    return out;
}

void write_config_snapshot(const h::PipelineConfig& cfg, const fs::path& dir) {
    io::write_file(dir / "config.json", h::to_json(cfg).dump(2) + '\n');
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stepnav: structured priors and flow refinement for grid navigation"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "JSON pipeline config")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "master seed");
    app.add_option("--out-dir", g.out_dir, "output directory");
    app.add_option("--threads", g.threads, "worker threads (0: all cores)");

    // gen-scenarios
    auto* gen = app.add_subcommand("gen-scenarios", "write benchmark scenario descriptors and grids");
    std::string gen_kind = "all";
    std::optional<int> gen_count, gen_size;
    gen->add_option("--kind", gen_kind, "tjunction|corridor|clutter|open|all");
    gen->add_option("--count", gen_count, "scenarios per kind");
    gen->add_option("--size", gen_size, "square world size in cells");

    // solve-field
    auto* solve = app.add_subcommand("solve-field", "synthesize demonstrations and solve the success field");
    std::string solve_scenario, solve_solver;
    std::optional<double> mu, nu, tol, noise;
    std::optional<int> n_demos;
    solve->add_option("--scenario", solve_scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
    solve->add_option("--mu", mu, "gradient weight");
    solve->add_option("--nu", nu, "biharmonic weight");
    solve->add_option("--solver", solve_solver, "cg|direct");
    solve->add_option("--tol", tol, "max-norm residual tolerance");
    solve->add_option("--n-demos", n_demos, "number of demonstrations");
    solve->add_option("--noise", noise, "demonstration via-point noise (m)");

    // extract-priors
    auto* extract = app.add_subcommand("extract-priors", "K shortest corridor paths and the mixture prior");
    std::string ex_scenario, ex_field;
    std::optional<int> ex_k, ex_m;
    std::optional<double> ex_temp;
    extract->add_option("--scenario", ex_scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
    extract->add_option("--field", ex_field, "field CSV (solved from demonstrations when omitted)")
        ->check(CLI::ExistingFile);
    extract->add_option("--k", ex_k, "raw shortest paths");
    extract->add_option("--m", ex_m, "mixture size");
    extract->add_option("--temp", ex_temp, "softmax temperature");

    // train-flow
    auto* trainc = app.add_subcommand("train-flow", "train the velocity field on the training scenes");
    std::optional<double> rho, kappa, eps, lr;
    std::optional<int> steps, batch;
    std::string train_mode = "full";
    trainc->add_option("--rho", rho, "jerk weight");
    trainc->add_option("--kappa", kappa, "barrier weight");
    trainc->add_option("--eps", eps, "safety margin (m)");
    trainc->add_option("--steps", steps, "optimizer steps");
    trainc->add_option("--lr", lr, "learning rate");
    trainc->add_option("--batch", batch, "batch size");
    trainc->add_option("--mode", train_mode, "ablation mode whose prior and regularizers are used");

    // refine
    auto* refinec = app.add_subcommand("refine", "refine a prior sample with a trained model");
    std::string rf_model, rf_scenario, rf_prior, rf_mode = "full";
    std::optional<int> rf_steps;
    refinec->add_option("--model", rf_model, "checkpoint (.bin or .csv)")->required()->check(CLI::ExistingFile);
    refinec->add_option("--scenario", rf_scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
    refinec->add_option("--prior", rf_prior, "mixture CSV (built from the scenario when omitted)")
        ->check(CLI::ExistingFile);
    refinec->add_option("--n-steps", rf_steps, "Euler steps");
    refinec->add_option("--mode", rf_mode, "prior source when no mixture file is given");

    // evaluate
    auto* evalc = app.add_subcommand("evaluate", "score one trajectory or run the benchmark for a mode");
    std::string ev_scenario, ev_traj, ev_model, ev_mode = "full";
    std::optional<int> ev_steps;
    evalc->add_option("--scenario", ev_scenario, "scenario JSON (single-trajectory mode)")->check(CLI::ExistingFile);
    evalc->add_option("--trajectory", ev_traj, "trajectory CSV (single-trajectory mode)")->check(CLI::ExistingFile);
    evalc->add_option("--model", ev_model, "checkpoint; trained from the config when omitted")
        ->check(CLI::ExistingFile);
    evalc->add_option("--mode", ev_mode, "ablation mode");
    evalc->add_option("--n-steps", ev_steps, "Euler steps");

    // sweep-steps
    auto* sweep = app.add_subcommand("sweep-steps", "SR and collision rate versus refinement steps");
    std::string sw_mode = "full", sw_list = "1,2,5,10", sw_timing;
    sweep->add_option("--mode", sw_mode, "ablation mode");
    sweep->add_option("--steps-list", sw_list, "comma-separated step counts");
    sweep->add_option("--timing-file", sw_timing, "also write wall-clock per refine call here");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "paired comparison across ablation modes");
    std::string ab_modes = "full,gaussian,peaks,no-smooth,no-safe,no-reg";
    ablate->add_option("--modes", ab_modes, "comma-separated modes");

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = load_config(g);
        const fs::path out = g.out_dir;
        fs::create_directories(out);

        if (*gen) {
            std::vector<ScenarioKind> kinds = cfg.kinds;
            if (gen_kind != "all") kinds = {parse_scenario_kind(gen_kind)};
            const int count = gen_count.value_or(cfg.episodes_per_kind);
            const int size_w = gen_size.value_or(cfg.width), size_h = gen_size.value_or(cfg.height);
            if (count < 1) throw Error("--count must be at least 1");
            std::string index = "file,kind,seed\n";
            for (auto kind : kinds)
                for (int i = 0; i < count; ++i) {
                    const auto seed = h::scenario_seed(cfg.seed, kind, i, false);
                    auto sc = h::stage("env", [&] { return generate_scenario(kind, seed, size_w, size_h, cfg.resolution); });
                    const std::string name = std::string(to_string(kind)) + '_' + std::to_string(i);
                    io::write_file(out / "scenarios" / (name + ".json"), io::scenario_json(sc).dump(2) + '\n');
                    io::write_file(out / "scenarios" / (name + ".pgm"), io::encode_pgm(io::grid_image(sc.grid), true));
                    index += "scenarios/" + name + ".json," + std::string(to_string(kind)) + ',' + std::to_string(seed) + '\n';
                }
            io::write_file(out / "scenarios.csv", index);
        } else if (*solve) {
            if (mu) cfg.field.mu = *mu;
            if (nu) cfg.field.nu = *nu;
            if (!solve_solver.empty()) cfg.field.solver = field::parse_solver(solve_solver);
            if (tol) cfg.field.tol = *tol;
            if (n_demos) cfg.n_demos = *n_demos;
            if (noise) cfg.demo_noise = *noise;
            cfg.validate();
            const auto sc = h::stage("env", [&] { return io::load_scenario(solve_scenario); });
            const auto demos = h::stage("env", [&] {
                return synthesize_demonstrations(sc, cfg.n_demos, cfg.demo_noise, cfg.demo);
            });
            const auto Z = h::stage("difp", [&] {
                return h::synthetic_features(sc, cfg.feature_frames, cfg.feature_dim, cfg.feature_noise);
            });
            const auto refined = h::stage("difp", [&] { return difp::refine(difp::FeatureSequence(Z)); });
            field::SolveReport rep;
            const auto F = h::stage("field", [&] { return field::solve_field(demos.labels, sc.grid, cfg.field, &rep); });
            io::write_file(out / "grid.pgm", io::encode_pgm(io::grid_image(sc.grid), true));
            io::write_file(out / "grid.csv", io::grid_csv(sc.grid));
            io::write_file(out / "labels.pgm", io::encode_pgm(io::label_image(demos.labels), true));
            io::write_file(out / "features.csv", io::features_csv(Z));
            io::write_file(out / "features_refined.csv", io::features_csv(refined.refined));
            io::write_file(out / "field.csv", io::field_csv(F));
            io::write_file(out / "field.pgm", io::encode_pgm(io::field_image(F), true));
            const nlohmann::json report{{"mu", cfg.field.mu},
                                        {"nu", cfg.field.nu},
                                        {"solver", cfg.field.solver == field::Solver::Direct ? "direct" : "cg"},
                                        {"iterations", rep.iterations},
                                        {"residual", rep.residual},
                                        {"config_hash", h::hex64(h::config_hash(cfg))},
                                        {"master_seed", cfg.seed}};
            io::write_file(out / "field.json", report.dump(2) + '\n');
        } else if (*extract) {
            if (ex_k) cfg.prior.k_paths = *ex_k;
            if (ex_m) cfg.prior.mixture_size = static_cast<std::size_t>(std::max(*ex_m, 0));
            if (ex_temp) cfg.prior.temperature = *ex_temp;
            cfg.validate();
            const auto sc = h::stage("env", [&] { return io::load_scenario(ex_scenario); });
            const auto F = h::stage("field", [&] {
                if (!ex_field.empty()) {
                    auto f = io::read_field_csv(io::read_file(ex_field), cfg.field.mu, cfg.field.nu);
                    if (f.width() != sc.grid.width() || f.height() != sc.grid.height())
                        throw Error("field does not match the scenario grid");
                    return f;
                }
                const auto demos = synthesize_demonstrations(sc, cfg.n_demos, cfg.demo_noise, cfg.demo);
                return field::solve_field(demos.labels, sc.grid, cfg.field);
            });
            const auto ex = h::stage("prior", [&] { return prior::extract_priors(F, sc.grid, sc.start, sc.goal, cfg.prior); });
            std::string paths = "path,cost\n";
            for (std::size_t p = 0; p < ex.paths.size(); ++p) paths += std::to_string(p) + ',' + io::num(ex.energies[p]) + '\n';
            paths += "\npath,k,x,y\n";
            for (std::size_t p = 0; p < ex.trajectories.size(); ++p)
                for (std::size_t k = 0; k < ex.trajectories[p].size(); ++k)
                    paths += std::to_string(p) + ',' + std::to_string(k) + ',' + io::num(ex.trajectories[p][k].x()) +
                             ',' + io::num(ex.trajectories[p][k].y()) + '\n';
            io::write_file(out / "paths.csv", paths);
            io::write_file(out / "mixture.csv", io::mixture_csv(ex.mixture));
            const auto peaks = h::stage("prior", [&] {
                return prior::peaks_prior(F, sc.grid, sc.start, sc.goal, cfg.prior.waypoints, cfg.peaks_threshold,
                                          cfg.prior.temperature, cfg.prior.score);
            });
            io::write_file(out / "peaks.csv", io::mixture_csv(peaks));
        } else if (*trainc) {
            if (rho) cfg.train.rho = *rho;
            if (kappa) cfg.train.kappa = *kappa;
            if (eps) cfg.train.epsilon = *eps;
            if (steps) cfg.train.steps = *steps;
            if (lr) cfg.train.learning_rate = *lr;
            if (batch) cfg.train.batch_size = *batch;
            cfg.mode = h::parse_mode(train_mode);
            cfg.validate();
            h::Benchmark bench(cfg);
            const auto& model = bench.model(cfg.mode);
            save_model(model, out);
            io::write_file(out / "loss.csv", io::loss_csv(bench.trace(cfg.mode)));
            write_config_snapshot(cfg, out);
        } else if (*refinec) {
            const int n = rf_steps.value_or(cfg.refine_steps);
            if (n < 1) throw StageError("regcfm", "--n-steps must be at least 1");
            const auto model = h::stage("regcfm", [&] { return load_model(rf_model); });
            const auto sc = h::stage("env", [&] { return io::load_scenario(rf_scenario); });
            const auto ctx = h::build_context(sc, cfg);
            Rng rng = make_rng(h::episode_seed(cfg.seed, 0), 0x9A1);
            const auto tau0 = h::stage("prior", [&] {
                if (!rf_prior.empty()) return prior::sample_prior(io::read_mixture_csv(io::read_file(rf_prior)), rng);
                return h::initial_trajectory(ctx, cfg, h::parse_mode(rf_mode), rng);
            });
            const auto tau = h::stage("regcfm", [&] { return regcfm::refine(model, tau0, ctx.features.zc, n); });
            io::write_file(out / "prior_sample.csv", io::trajectory_csv(tau0));
            io::write_file(out / "trajectory.csv", io::trajectory_csv(tau));
        } else if (*evalc) {
            const auto st = stamp(cfg);
            if (!ev_traj.empty() || !ev_scenario.empty()) {
                if (ev_traj.empty() || ev_scenario.empty())
                    throw Error("single-trajectory evaluation needs both --scenario and --trajectory");
                const auto sc = h::stage("env", [&] { return io::load_scenario(ev_scenario); });
                const auto tau = h::stage("metrics", [&] { return io::read_trajectory_csv(io::read_file(ev_traj)); });
                auto res = h::stage("metrics", [&] { return metrics::evaluate_episode(sc, tau, cfg.episode); });
                h::EpisodeRecord rec{0, sc.kind, sc.seed, cfg.mode, 0, res, 0.0};
                h::ModeReport rep{cfg.mode, 0, metrics::aggregate({res}), {rec}, 0.0};
                io::write_file(out / "episodes.jsonl", io::episodes_jsonl(rep.episodes, st));
                io::write_file(out / "summary.csv", io::summary_header() + io::summary_row(rep, st));
            } else {
                const auto mode = h::parse_mode(ev_mode);
                h::Benchmark bench(cfg);
                if (!ev_model.empty()) bench.set_model(mode, h::stage("regcfm", [&] { return load_model(ev_model); }));
                const auto rep = bench.evaluate(mode, ev_steps.value_or(cfg.refine_steps));
                io::write_file(out / "episodes.jsonl", io::episodes_jsonl(rep.episodes, st));
                io::write_file(out / "summary.csv", io::summary_header() + io::summary_row(rep, st));
                write_config_snapshot(cfg, out);
            }
        } else if (*sweep) {
            const auto mode = h::parse_mode(sw_mode);
            const auto list = parse_int_list(sw_list);
            h::Benchmark bench(cfg);
            const auto rows = bench.steps_sweep(mode, list);
            const auto st = stamp(cfg);
            io::write_file(out / ("sweep_" + std::string(h::to_string(mode)) + ".csv"), io::sweep_csv(rows, st));
            if (!sw_timing.empty()) io::write_file(sw_timing, io::timing_csv(rows));
            for (const auto& r : rows)
                std::cout << "N=" << r.steps << " SR=" << r.sr << " coll=" << r.collision_rate
                          << " refine_ms=" << 1e3 * r.mean_refine_seconds << '\n';
            write_config_snapshot(cfg, out);
        } else if (*ablate) {
            std::vector<h::Mode> modes;
            for (const auto& m : io::detail::split(ab_modes)) modes.push_back(h::parse_mode(m));
            h::Benchmark bench(cfg);
            const auto reports = bench.ablation_suite(modes);
            const auto st = stamp(cfg);
            std::string table = io::summary_header();
            for (const auto& r : reports) {
                table += io::summary_row(r, st);
                io::write_file(out / ("episodes_" + std::string(h::to_string(r.mode)) + ".jsonl"),
                               io::episodes_jsonl(r.episodes, st));
            }
            io::write_file(out / "ablation.csv", table);
            write_config_snapshot(cfg, out);
            std::cout << table;
        }
    } catch (const StageError& e) {
        std::cerr << "stepnav: " << e.what() << " (stage " << e.stage() << ")" << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "stepnav: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
