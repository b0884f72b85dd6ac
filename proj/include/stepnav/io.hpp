#pragma once

// File formats: PGM images (P2/P5, 8 or 16 bit), comma-separated grids,
// fields, features, trajectories and mixtures, scenario descriptors (JSON),
// and benchmark reports (JSONL records, CSV summaries).
//
// Image rows run top to bottom, i.e. image row r holds grid row
// j = height - 1 - r. CSV grids list row j = 0 first.

#include "stepnav/core.hpp"
#include "stepnav/difp.hpp"
#include "stepnav/env.hpp"
#include "stepnav/field.hpp"
#include "stepnav/harness.hpp"
#include "stepnav/metrics.hpp"
#include "stepnav/prior.hpp"
#include "stepnav/trajectory.hpp"

#include "json.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace stepnav::io {

using nlohmann::json;
namespace fs = std::filesystem;

// Shortest round-trip decimal form.
inline std::string num(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw Error("cannot write " + path.string());
}

inline std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, sep);) out.push_back(f);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

inline double to_double(const std::string& s) {
    double v = 0.0;
    const auto* b = s.data();
    const auto r = std::from_chars(b, b + s.size(), v);
    if (r.ec != std::errc() || r.ptr != b + s.size()) throw Error("not a number: '" + s + "'");
    return v;
}

inline long to_long(const std::string& s) {
    long v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw Error("not an integer: '" + s + "'");
    return v;
}

inline std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string l; std::getline(ss, l);) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
        out.push_back(l);
    }
    return out;
}

inline void expect_header(const std::string& got, const std::string& want) {
    if (got != want) throw Error("expected header '" + want + "', got '" + got + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PGM

struct Image {
    int width = 0;
    int height = 0;
    int maxval = 255;
    std::vector<int> pixels;  // row-major, top row first
};

inline std::string encode_pgm(const Image& img, bool binary) {
    if (img.maxval < 1 || img.maxval > 65535) throw Error("PGM maxval must be in [1,65535]");
    if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) throw Error("PGM size mismatch");
    std::string out = (binary ? "P5\n" : "P2\n") + std::to_string(img.width) + ' ' + std::to_string(img.height) +
                      '\n' + std::to_string(img.maxval) + '\n';
    for (std::size_t k = 0; k < img.pixels.size(); ++k) {
        const int v = img.pixels[k];
        if (v < 0 || v > img.maxval) throw Error("PGM pixel out of range");
        if (binary) {
            if (img.maxval > 255) out.push_back(static_cast<char>(v >> 8));
            out.push_back(static_cast<char>(v & 0xFF));
        } else {
            out += std::to_string(v);
            out.push_back((k + 1) % static_cast<std::size_t>(img.width) == 0 ? '\n' : ' ');
        }
    }
    return out;
}

inline Image decode_pgm(const std::string& data) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
        if (start == pos) throw Error("truncated PGM");
        return data.substr(start, pos - start);
    };
    const auto magic = token();
    if (magic != "P2" && magic != "P5") throw Error("not a PGM image");
    Image img;
    img.width = static_cast<int>(detail::to_long(token()));
    img.height = static_cast<int>(detail::to_long(token()));
    img.maxval = static_cast<int>(detail::to_long(token()));
    if (img.width < 1 || img.height < 1 || img.maxval < 1 || img.maxval > 65535) throw Error("invalid PGM header");
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    img.pixels.resize(n);
    if (magic == "P2") {
        for (auto& p : img.pixels) p = static_cast<int>(detail::to_long(token()));
    } else {
        ++pos;  // single whitespace after maxval
        const std::size_t bpp = img.maxval > 255 ? 2 : 1;
        if (data.size() < pos + n * bpp) throw Error("truncated PGM");
        for (std::size_t k = 0; k < n; ++k) {
            const auto hi = static_cast<unsigned char>(data[pos + k * bpp]);
            img.pixels[k] = bpp == 2 ? (hi << 8) | static_cast<unsigned char>(data[pos + k * bpp + 1]) : hi;
        }
    }
    for (int p : img.pixels)
        if (p < 0 || p > img.maxval) throw Error("PGM pixel out of range");
    return img;
}

// Free cells white (255), occupied black (0).
inline Image grid_image(const OccupancyGrid& g) {
    Image img{g.width(), g.height(), 255, std::vector<int>(g.size())};
    for (int r = 0; r < g.height(); ++r)
        for (int i = 0; i < g.width(); ++i)
            img.pixels[static_cast<std::size_t>(r) * g.width() + i] = g.occupied(i, g.height() - 1 - r) ? 0 : 255;
    return img;
}

// Pixels below half of maxval are occupied.
inline OccupancyGrid grid_from_image(const Image& img, double resolution) {
    std::vector<std::uint8_t> cells(img.pixels.size());
    for (int r = 0; r < img.height; ++r)
        for (int i = 0; i < img.width; ++i)
            cells[static_cast<std::size_t>(img.height - 1 - r) * img.width + i] =
                img.pixels[static_cast<std::size_t>(r) * img.width + i] * 2 < img.maxval ? 1 : 0;
    return OccupancyGrid(img.width, img.height, resolution, std::move(cells));
}

// Clamped field scaled to 16 bit.
inline Image field_image(const field::SuccessField& f) {
    Image img{f.width(), f.height(), 65535, std::vector<int>(static_cast<std::size_t>(f.width()) * f.height())};
    for (int r = 0; r < f.height(); ++r)
        for (int i = 0; i < f.width(); ++i)
            img.pixels[static_cast<std::size_t>(r) * f.width() + i] =
                static_cast<int>(std::lround(f.clamped(i, f.height() - 1 - r) * 65535.0));
    return img;
}

inline Image label_image(const LabelField& y) {
    Image img{y.width(), y.height(), 255, std::vector<int>(static_cast<std::size_t>(y.width()) * y.height())};
    for (int r = 0; r < y.height(); ++r)
        for (int i = 0; i < y.width(); ++i)
            img.pixels[static_cast<std::size_t>(r) * y.width() + i] =
                static_cast<int>(std::lround(y(i, y.height() - 1 - r) * 255.0));
    return img;
}

// ---------------------------------------------------------------------------
// CSV tables

inline std::string grid_csv(const OccupancyGrid& g) {
    std::string out = "width,height,resolution\n" + std::to_string(g.width()) + ',' + std::to_string(g.height()) +
                      ',' + num(g.resolution()) + '\n';
    for (int j = 0; j < g.height(); ++j)
        for (int i = 0; i < g.width(); ++i) {
            out.push_back(g.occupied(i, j) ? '1' : '0');
            out.push_back(i + 1 == g.width() ? '\n' : ',');
        }
    return out;
}

namespace detail {

struct Table {
    int width;
    int height;
    double resolution;
    std::vector<std::vector<double>> rows;
};

inline Table read_table(const std::string& text) {
    const auto ls = lines(text);
    if (ls.size() < 2) throw Error("table is missing its header");
    expect_header(ls[0], "width,height,resolution");
    const auto h = split(ls[1]);
    if (h.size() != 3) throw Error("malformed table header values");
    Table t{static_cast<int>(to_long(h[0])), static_cast<int>(to_long(h[1])), to_double(h[2]), {}};
    if (t.width < 1 || t.height < 1) throw Error("table dimensions must be positive");
    for (std::size_t k = 2; k < ls.size(); ++k) {
        if (ls[k].empty()) continue;
        std::vector<double> row;
        for (const auto& f : split(ls[k])) row.push_back(to_double(f));
        if (static_cast<int>(row.size()) != t.width) throw Error("table row has the wrong width");
        t.rows.push_back(std::move(row));
    }
    if (static_cast<int>(t.rows.size()) != t.height) throw Error("table has the wrong number of rows");
    return t;
}

}  // namespace detail

inline OccupancyGrid read_grid_csv(const std::string& text) {
    const auto t = detail::read_table(text);
    std::vector<std::uint8_t> cells;
    for (const auto& row : t.rows)
        for (double v : row) {
            if (v != 0.0 && v != 1.0) throw Error("grid cells must be 0 or 1");
            cells.push_back(v != 0.0);
        }
    return OccupancyGrid(t.width, t.height, t.resolution, std::move(cells));
}

// Raw (unclamped) field values. mu and nu are not stored; the reader takes
// them from the caller.
inline std::string field_csv(const field::SuccessField& f) {
    std::string out = "width,height,resolution\n" + std::to_string(f.width()) + ',' + std::to_string(f.height()) +
                      ',' + num(f.resolution()) + '\n';
    for (int j = 0; j < f.height(); ++j)
        for (int i = 0; i < f.width(); ++i) {
            out += num(f.raw(i, j));
            out.push_back(i + 1 == f.width() ? '\n' : ',');
        }
    return out;
}

inline field::SuccessField read_field_csv(const std::string& text, double mu, double nu) {
    const auto t = detail::read_table(text);
    Grid2D<double> values(t.width, t.height, 0.0);
    for (int j = 0; j < t.height; ++j)
        for (int i = 0; i < t.width; ++i) values(i, j) = t.rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
    return field::SuccessField(std::move(values), mu, nu, t.resolution);
}

inline std::string features_csv(const Eigen::MatrixXd& Z) {
    std::string out = "T,D\n" + std::to_string(Z.rows()) + ',' + std::to_string(Z.cols()) + '\n';
    for (Eigen::Index t = 0; t < Z.rows(); ++t)
        for (Eigen::Index d = 0; d < Z.cols(); ++d) {
            out += num(Z(t, d));
            out.push_back(d + 1 == Z.cols() ? '\n' : ',');
        }
    return out;
}

inline difp::FeatureSequence read_features_csv(const std::string& text) {
    const auto ls = detail::lines(text);
    if (ls.size() < 2) throw Error("feature file is missing its header");
    detail::expect_header(ls[0], "T,D");
    const auto h = detail::split(ls[1]);
    if (h.size() != 2) throw Error("malformed feature header values");
    const long T = detail::to_long(h[0]), D = detail::to_long(h[1]);
    if (T < 1 || D < 1) throw Error("feature dimensions must be positive");
    Eigen::MatrixXd Z(T, D);
    long t = 0;
    for (std::size_t k = 2; k < ls.size(); ++k) {
        if (ls[k].empty()) continue;
        const auto f = detail::split(ls[k]);
        if (t >= T || static_cast<long>(f.size()) != D) throw Error("feature table shape mismatch");
        for (long d = 0; d < D; ++d) Z(t, d) = detail::to_double(f[static_cast<std::size_t>(d)]);
        ++t;
    }
    if (t != T) throw Error("feature table shape mismatch");
    return difp::FeatureSequence(std::move(Z));
}

inline std::string trajectory_csv(const Trajectory& tau) {
    std::string out = "k,x,y\n";
    for (std::size_t k = 0; k < tau.size(); ++k)
        out += std::to_string(k) + ',' + num(tau[k].x()) + ',' + num(tau[k].y()) + '\n';
    return out;
}

inline Trajectory read_trajectory_csv(const std::string& text) {
    const auto ls = detail::lines(text);
    if (ls.empty()) throw Error("trajectory file is empty");
    detail::expect_header(ls[0], "k,x,y");
    std::vector<Point> pts;
    for (std::size_t k = 1; k < ls.size(); ++k) {
        if (ls[k].empty()) continue;
        const auto f = detail::split(ls[k]);
        if (f.size() != 3 || detail::to_long(f[0]) != static_cast<long>(pts.size()))
            throw Error("malformed trajectory row: " + ls[k]);
        pts.emplace_back(detail::to_double(f[1]), detail::to_double(f[2]));
    }
    return Trajectory(std::move(pts));
}

// Preamble of per-component weights, a blank line, then the waypoints.
inline std::string mixture_csv(const prior::MixturePrior& m) {
    std::string out = "component,weight,score,temperature\n";
    for (std::size_t c = 0; c < m.size(); ++c)
        out += std::to_string(c) + ',' + num(m.weights()[c]) + ',' + num(m.scores()[c]) + ',' + num(m.temperature()) +
               '\n';
    out += "\ncomponent,k,x,y\n";
    for (std::size_t c = 0; c < m.size(); ++c) {
        const auto& tau = m.candidates()[c];
        for (std::size_t k = 0; k < tau.size(); ++k)
            out += std::to_string(c) + ',' + std::to_string(k) + ',' + num(tau[k].x()) + ',' + num(tau[k].y()) + '\n';
    }
    return out;
}

// Rebuilt from scores and temperature; the stored weights must agree.
inline prior::MixturePrior read_mixture_csv(const std::string& text) {
    const auto ls = detail::lines(text);
    std::size_t k = 0;
    if (ls.empty()) throw Error("mixture file is empty");
    detail::expect_header(ls[k++], "component,weight,score,temperature");
    std::vector<double> weights, scores;
    double temperature = 0.0;
    for (; k < ls.size() && !ls[k].empty(); ++k) {
        const auto f = detail::split(ls[k]);
        if (f.size() != 4 || detail::to_long(f[0]) != static_cast<long>(scores.size()))
            throw Error("malformed mixture row: " + ls[k]);
        weights.push_back(detail::to_double(f[1]));
        scores.push_back(detail::to_double(f[2]));
        temperature = detail::to_double(f[3]);
    }
    while (k < ls.size() && ls[k].empty()) ++k;
    if (k >= ls.size()) throw Error("mixture file has no waypoint table");
    detail::expect_header(ls[k++], "component,k,x,y");
    std::vector<std::vector<Point>> comps(scores.size());
    for (; k < ls.size(); ++k) {
        if (ls[k].empty()) continue;
        const auto f = detail::split(ls[k]);
        if (f.size() != 4) throw Error("malformed mixture waypoint: " + ls[k]);
        const long c = detail::to_long(f[0]);
        if (c < 0 || c >= static_cast<long>(comps.size()) ||
            detail::to_long(f[1]) != static_cast<long>(comps[static_cast<std::size_t>(c)].size()))
            throw Error("mixture waypoint out of order: " + ls[k]);
        comps[static_cast<std::size_t>(c)].emplace_back(detail::to_double(f[2]), detail::to_double(f[3]));
    }
    std::vector<Trajectory> cands;
    for (auto& pts : comps) cands.emplace_back(std::move(pts));
    prior::MixturePrior m(std::move(cands), scores, temperature);
    for (std::size_t c = 0; c < weights.size(); ++c)
        if (std::abs(m.weights()[c] - weights[c]) > 1e-12) throw Error("mixture weights disagree with scores");
    return m;
}

// ---------------------------------------------------------------------------
// Scenario descriptors

inline json scenario_json(const Scenario& sc) {
    return json{{"kind", std::string(to_string(sc.kind))},
                {"seed", sc.seed},
                {"width", sc.grid.width()},
                {"height", sc.grid.height()},
                {"resolution", sc.grid.resolution()},
                {"start", {sc.start.x(), sc.start.y()}},
                {"goal", {sc.goal.x(), sc.goal.y()}}};
}

// Regenerates the scenario from (kind, seed, size) and checks that the
// stored endpoints agree.
inline Scenario scenario_from_json(const json& j) {
    try {
        const auto kind = parse_scenario_kind(j.at("kind").get<std::string>());
        auto sc = generate_scenario(kind, j.at("seed").get<std::uint64_t>(), j.at("width").get<int>(),
                                    j.at("height").get<int>(), j.value("resolution", kDefaultResolution));
        const Point s(j.at("start").at(0).get<double>(), j.at("start").at(1).get<double>());
        const Point g(j.at("goal").at(0).get<double>(), j.at("goal").at(1).get<double>());
        if ((s - sc.start).norm() > 1e-9 || (g - sc.goal).norm() > 1e-9)
            throw Error("scenario endpoints do not match its generator");
        return sc;
    } catch (const json::exception& e) {
        throw Error(std::string("invalid scenario file: ") + e.what());
    }
}

inline Scenario load_scenario(const fs::path& path) {
    try {
        return scenario_from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw Error("invalid scenario file " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Reports

struct RunStamp {
    std::uint64_t config_hash;
    std::uint64_t master_seed;
};

inline json episode_json(const harness::EpisodeRecord& r, const RunStamp& stamp) {
    const auto& e = r.result;
    return json{{"episode", r.episode},
                {"kind", std::string(to_string(r.kind))},
                {"scenario_seed", r.scenario_seed},
                {"mode", std::string(harness::to_string(r.mode))},
                {"refine_steps", r.refine_steps},
                {"success", e.success},
                {"collided", e.collided},
                {"spl", e.spl()},
                {"executed_length", e.executed_length},
                {"shortest_length", e.shortest_length},
                {"steps", e.steps},
                {"terminal_distance", e.terminal_distance},
                {"ms", e.ms},
                {"config_hash", harness::hex64(stamp.config_hash)},
                {"master_seed", stamp.master_seed}};
}

inline std::string episodes_jsonl(const std::vector<harness::EpisodeRecord>& records, const RunStamp& stamp) {
    std::string out;
    for (const auto& r : records) out += episode_json(r, stamp).dump() + '\n';
    return out;
}

inline std::string summary_header() {
    return "mode,N,episodes,SR,SR_std,SPL,SPL_std,Coll.,Coll._std,MS,MS_std,config_hash,master_seed\n";
}

inline std::string summary_row(const harness::ModeReport& r, const RunStamp& stamp) {
    const auto& m = r.report;
    return std::string(harness::to_string(r.mode)) + ',' + std::to_string(r.refine_steps) + ',' +
           std::to_string(m.episodes) + ',' + num(m.sr.mean) + ',' + num(m.sr.std) + ',' + num(m.spl.mean) + ',' +
           num(m.spl.std) + ',' + num(m.collision_rate.mean) + ',' + num(m.collision_rate.std) + ',' +
           num(m.ms.mean) + ',' + num(m.ms.std) + ',' + harness::hex64(stamp.config_hash) + ',' +
           std::to_string(stamp.master_seed) + '\n';
}

inline std::string sweep_csv(const std::vector<harness::SweepRow>& rows, const RunStamp& stamp) {
    std::string out = "N,SR,coll,config_hash,master_seed\n";
    for (const auto& r : rows)
        out += std::to_string(r.steps) + ',' + num(r.sr) + ',' + num(r.collision_rate) + ',' +
               harness::hex64(stamp.config_hash) + ',' + std::to_string(stamp.master_seed) + '\n';
    return out;
}

inline std::string timing_csv(const std::vector<harness::SweepRow>& rows) {
    std::string out = "N,mean_refine_seconds\n";
    for (const auto& r : rows) out += std::to_string(r.steps) + ',' + num(r.mean_refine_seconds) + '\n';
    return out;
}

inline std::string loss_csv(const std::vector<double>& trace) {
    std::string out = "step,loss\n";
    for (std::size_t k = 0; k < trace.size(); ++k) out += std::to_string(k) + ',' + num(trace[k]) + '\n';
    return out;
}

}  // namespace stepnav::io
