#pragma once

// Shared vocabulary: points, errors, seeded randomness and a small 2-D
// cell-centered grid container used by every stage of the pipeline.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stepnav {

using Point = Eigen::Vector2d;
using Rng = std::mt19937_64;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised by pipeline orchestration; carries the name of the failing stage.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

// splitmix64 finalizer; derives independent child seeds from a parent seed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t salt = 0) {
    return Rng(mix_seed(seed, salt));
}

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

struct Cell {
    int i = 0;  // column (x)
    int j = 0;  // row (y)

    friend bool operator==(const Cell&, const Cell&) = default;
    friend auto operator<=>(const Cell&, const Cell&) = default;
};

// Row-major W x H array of cell values. Cell (i, j) is centered at
// ((i + 0.5) * res, (j + 0.5) * res) in world coordinates.
template <class T>
class Grid2D {
public:
    Grid2D() = default;
    Grid2D(int width, int height, T fill = T{})
        : width_(width), height_(height),
          data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
        if (width <= 0 || height <= 0) throw Error("grid dimensions must be positive");
    }
    Grid2D(int width, int height, std::vector<T> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (width <= 0 || height <= 0) throw Error("grid dimensions must be positive");
        if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
            throw Error("grid data size does not match dimensions");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }

    bool in_bounds(int i, int j) const noexcept {
        return i >= 0 && j >= 0 && i < width_ && j < height_;
    }
    std::size_t index(int i, int j) const noexcept {
        return static_cast<std::size_t>(j) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(i);
    }
    Cell cell(std::size_t idx) const noexcept {
        return {static_cast<int>(idx % static_cast<std::size_t>(width_)),
                static_cast<int>(idx / static_cast<std::size_t>(width_))};
    }

    T& operator()(int i, int j) { return data_[index(i, j)]; }
    const T& operator()(int i, int j) const { return data_[index(i, j)]; }
    T& operator[](std::size_t idx) { return data_[idx]; }
    const T& operator[](std::size_t idx) const { return data_[idx]; }

    const std::vector<T>& data() const noexcept { return data_; }
    std::vector<T>& data() noexcept { return data_; }

    template <class U>
    bool same_shape(const Grid2D<U>& other) const noexcept {
        return width_ == other.width() && height_ == other.height();
    }

    friend bool operator==(const Grid2D&, const Grid2D&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

// Bilinear interpolation of cell-centered samples. Points within half a cell
// of the outer boundary are clamped onto the outermost centers. When `grad`
// is given it receives the spatial gradient (per meter); clamped directions
// have zero gradient.
inline double bilinear(const Grid2D<double>& g, double resolution, const Point& p,
                       Point* grad = nullptr) {
    const double u_raw = p.x() / resolution - 0.5;
    const double v_raw = p.y() / resolution - 0.5;
    const double u = std::clamp(u_raw, 0.0, static_cast<double>(g.width() - 1));
    const double v = std::clamp(v_raw, 0.0, static_cast<double>(g.height() - 1));
    int i0 = std::min(static_cast<int>(std::floor(u)), std::max(g.width() - 2, 0));
    int j0 = std::min(static_cast<int>(std::floor(v)), std::max(g.height() - 2, 0));
    const int i1 = std::min(i0 + 1, g.width() - 1);
    const int j1 = std::min(j0 + 1, g.height() - 1);
    const double fx = u - i0;
    const double fy = v - j0;
    const double f00 = g(i0, j0), f10 = g(i1, j0), f01 = g(i0, j1), f11 = g(i1, j1);
    const double value = (1 - fx) * (1 - fy) * f00 + fx * (1 - fy) * f10 +
                         (1 - fx) * fy * f01 + fx * fy * f11;
    if (grad) {
        const bool x_free = u_raw > 0.0 && u_raw < g.width() - 1 && i1 != i0;
        const bool y_free = v_raw > 0.0 && v_raw < g.height() - 1 && j1 != j0;
        const double dx = (1 - fy) * (f10 - f00) + fy * (f11 - f01);
        const double dy = (1 - fx) * (f01 - f00) + fx * (f11 - f10);
        grad->x() = x_free ? dx / resolution : 0.0;
        grad->y() = y_free ? dy / resolution : 0.0;
    }
    return value;
}

}  // namespace stepnav
