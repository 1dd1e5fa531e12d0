#ifndef SAP_GRID_HPP
#define SAP_GRID_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "sap/dynamics.hpp"

namespace sap {

/// Uniform rectilinear grid over (p_x_r, v_r, p_y_R, p_y_H) with multilinear
/// interpolation. Queries outside the bounds are clamped.
struct Grid4 {
    std::array<double, 4> lo{};
    std::array<double, 4> hi{};
    std::array<std::size_t, 4> n{};

    Grid4() = default;
    Grid4(std::array<double, 4> lo_, std::array<double, 4> hi_, std::array<std::size_t, 4> n_)
        : lo(lo_), hi(hi_), n(n_) {
        for (int d = 0; d < 4; ++d) {
            if (n[d] < 3) throw std::invalid_argument("Grid4: need >= 3 points per dimension");
            if (!(lo[d] < hi[d])) throw std::invalid_argument("Grid4: bounds not increasing");
        }
    }

    std::size_t size() const { return n[0] * n[1] * n[2] * n[3]; }

    double step(int d) const { return (hi[d] - lo[d]) / static_cast<double>(n[d] - 1); }

    double coord(int d, std::size_t i) const { return lo[d] + step(d) * static_cast<double>(i); }

    std::size_t flat(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) const {
        return ((i0 * n[1] + i1) * n[2] + i2) * n[3] + i3;
    }

    std::array<std::size_t, 4> unflat(std::size_t idx) const {
        std::array<std::size_t, 4> i{};
        i[3] = idx % n[3];
        idx /= n[3];
        i[2] = idx % n[2];
        idx /= n[2];
        i[1] = idx % n[1];
        i[0] = idx / n[1];
        return i;
    }

    Vec4 point(std::size_t idx) const {
        auto i = unflat(idx);
        return Vec4(coord(0, i[0]), coord(1, i[1]), coord(2, i[2]), coord(3, i[3]));
    }

    bool inside(const Vec4& x, double tol = 0.0) const {
        for (int d = 0; d < 4; ++d)
            if (x(d) < lo[d] - tol || x(d) > hi[d] + tol) return false;
        return true;
    }

    double max_cell_diagonal() const {
        double s = 0.0;
        for (int d = 0; d < 4; ++d) s += step(d) * step(d);
        return std::sqrt(s);
    }

    /// Multilinear interpolation of a row-major value array; out-of-bounds
    /// coordinates are clamped to the boundary.
    double interpolate(const std::vector<double>& values, const Vec4& x) const {
        std::array<std::size_t, 4> i0{};
        std::array<double, 4> w{};
        locate(x, i0, w);
        double acc = 0.0;
        for (int c = 0; c < 16; ++c) {
            double cw = 1.0;
            std::array<std::size_t, 4> idx{};
            for (int d = 0; d < 4; ++d) {
                if (c & (1 << d)) {
                    idx[d] = i0[d] + 1;
                    cw *= w[d];
                } else {
                    idx[d] = i0[d];
                    cw *= 1.0 - w[d];
                }
            }
            if (cw != 0.0) acc += cw * values[flat(idx[0], idx[1], idx[2], idx[3])];
        }
        return acc;
    }

    /// Lower corner and fractional weights of the cell containing x (clamped).
    void locate(const Vec4& x, std::array<std::size_t, 4>& i0, std::array<double, 4>& w) const {
        for (int d = 0; d < 4; ++d) {
            double t = (x(d) - lo[d]) / step(d);
            if (t <= 0.0) {
                i0[d] = 0;
                w[d] = 0.0;
            } else if (t >= static_cast<double>(n[d] - 1)) {
                i0[d] = n[d] - 2;
                w[d] = 1.0;
            } else {
                i0[d] = static_cast<std::size_t>(t);
                if (i0[d] > n[d] - 2) i0[d] = n[d] - 2;
                w[d] = t - static_cast<double>(i0[d]);
            }
        }
    }
};

}  // namespace sap

#endif
